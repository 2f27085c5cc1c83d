use super::{CameraIntrinsics, Pixel, Point3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// 3D points with an optional parallel map to their source pixels
/// (an organized depth-image cloud).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    points: Vec<Point3<T>>,
    pixel_map: Option<Vec<Pixel<T>>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::domain(format!("point {i} is not finite")));
        }
        Ok(Self { points, pixel_map: None })
    }

    pub fn with_pixels(points: Vec<Point3<T>>, pixels: Vec<Pixel<T>>) -> Result<Self> {
        if points.len() != pixels.len() {
            return Err(Error::domain(format!(
                "pixel map has {} entries for {} points",
                pixels.len(),
                points.len()
            )));
        }
        let mut cloud = Self::new(points)?;
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::domain(format!("pixel {i} is not finite")));
        }
        cloud.pixel_map = Some(pixels);
        Ok(cloud)
    }

    /// Checks every mapped pixel against the image bounds.
    pub fn validate_bounds(&self, k: &CameraIntrinsics<T>) -> Result<()> {
        if let Some(map) = &self.pixel_map {
            if let Some(i) = map.iter().position(|p| !k.contains(p)) {
                return Err(Error::domain(format!("pixel of point {i} lies outside the image")));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn pixel_map(&self) -> Option<&[Pixel<T>]> {
        self.pixel_map.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            pixel_map: self.pixel_map.as_ref().map(|m| indices.iter().map(|&i| m[i]).collect()),
        }
    }

    pub fn into_parts(self) -> (Vec<Point3<T>>, Option<Vec<Pixel<T>>>) {
        (self.points, self.pixel_map)
    }
}

/// Deterministic point layout on a sphere surface.
///
/// Golden-angle (Fibonacci) spiral over the upper hemisphere with every
/// point mirrored through the center, so the layout is antipodally
/// symmetric and its centroid coincides with `center`. Odd counts place
/// three extra points on the equator at 120 degree spacing.
pub fn sphere_virtual_cloud<T: Real>(center: Point3<T>, radius: T, n: usize) -> Result<PointCloud<T>> {
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(Error::domain(format!("sphere radius must be positive, got {radius}")));
    }
    if n < 4 {
        return Err(Error::domain(format!("need at least 4 sphere points, got {n}")));
    }
    let extra = if n % 2 == 1 { 3 } else { 0 };
    let pairs = (n - extra) / 2;
    let golden = T::PI() * (T::lit(3.0) - T::lit(5.0).sqrt());
    let nt = T::from_usize_lossy(n);
    let two = T::lit(2.0);

    let mut unit = Vec::with_capacity(n);
    for k in 0..pairs {
        let y = T::one() - two * (T::from_usize_lossy(k) + T::lit(0.5)) / nt;
        let r = (T::one() - y * y).max(T::zero()).sqrt();
        let phi = golden * T::from_usize_lossy(k);
        let p = Point3::new(r * phi.cos(), y, r * phi.sin());
        unit.push(p);
        unit.push(-p);
    }
    for j in 0..extra {
        let phi = two * T::PI() * T::from_usize_lossy(j) / T::lit(3.0);
        unit.push(Point3::new(phi.cos(), T::zero(), phi.sin()));
    }
    PointCloud::new(unit.into_iter().map(|u| center + u * radius).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::centroid;

    #[test]
    fn sphere_points_on_surface() {
        let c = Point3::<f64>::new(0.0, 0.0, 1.0);
        let cloud = sphere_virtual_cloud(c, 0.02, 100).unwrap();
        assert_eq!(cloud.len(), 100);
        assert!(cloud.pixel_map().is_none());
        for p in cloud.points() {
            assert!((p.distance(&c) - 0.02).abs() < 1e-9);
        }
    }

    #[test]
    fn four_points_distinct() {
        let cloud = sphere_virtual_cloud(Point3::new(1.0, 2.0, 3.0), 0.5, 4).unwrap();
        let pts = cloud.points();
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(pts[i].distance(&pts[j]) > 1e-3);
            }
        }
    }

    #[test]
    fn centroid_matches_center() {
        let c = Point3::new(0.1, -0.2, 0.9);
        for n in [100usize, 101, 150, 333, 1000] {
            let cloud = sphere_virtual_cloud(c, 0.02, n).unwrap();
            let m = centroid(cloud.points()).unwrap();
            assert!(m.distance(&c) < 1e-6, "n={n}");
        }
    }

    #[test]
    fn odd_counts_distinct() {
        let cloud = sphere_virtual_cloud(Point3::zero(), 1.0, 7).unwrap();
        let pts = cloud.points();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert!(pts[i].distance(&pts[j]) > 1e-6);
            }
        }
    }

    #[test]
    fn invalid_sphere() {
        assert!(sphere_virtual_cloud(Point3::<f64>::zero(), 0.0, 10).is_err());
        assert!(sphere_virtual_cloud(Point3::<f64>::zero(), 1.0, 3).is_err());
    }

    #[test]
    fn pixel_map_length_checked() {
        let pts = vec![Point3::new(0.0, 0.0, 1.0); 2];
        assert!(PointCloud::with_pixels(pts, vec![Pixel::new(0.0, 0.0)]).is_err());
    }
}
