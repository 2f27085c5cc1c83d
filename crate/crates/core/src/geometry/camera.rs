use serde::{Deserialize, Serialize};

use super::{Pixel, Point3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pinhole intrinsics of the depth camera. No distortion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::domain("focal lengths must be positive and finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("image size must be non-zero"));
        }
        if !self.contains(&Pixel::new(self.cx, self.cy)) {
            return Err(Error::domain("principal point must lie inside the image"));
        }
        Ok(())
    }

    /// Mean focal length `(fx + fy) / 2`.
    pub fn mean_focal(&self) -> T {
        (self.fx + self.fy) / T::lit(2.0)
    }

    pub fn width_t(&self) -> T {
        T::from_u32(self.width).unwrap()
    }

    pub fn height_t(&self) -> T {
        T::from_u32(self.height).unwrap()
    }

    /// `0 <= u < width` and `0 <= v < height`.
    pub fn contains(&self, p: &Pixel<T>) -> bool {
        p.is_finite() && p.u >= T::zero() && p.v >= T::zero() && p.u < self.width_t() && p.v < self.height_t()
    }
}

/// Lifts a pixel at metric depth into the camera frame.
pub fn backproject<T: Real>(pixel: Pixel<T>, depth: T, k: &CameraIntrinsics<T>) -> Result<Point3<T>> {
    if !(depth > T::zero()) || !depth.is_finite() {
        return Err(Error::domain(format!("depth must be positive, got {depth}")));
    }
    if !k.contains(&pixel) {
        return Err(Error::domain(format!("pixel ({}, {}) outside image", pixel.u, pixel.v)));
    }
    Ok(Point3::new(
        (pixel.u - k.cx) * depth / k.fx,
        (pixel.v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Projects a camera-frame point to the image plane. The result may lie
/// outside the image; callers that need bounds check with
/// [`CameraIntrinsics::contains`].
pub fn project<T: Real>(p: Point3<T>, k: &CameraIntrinsics<T>) -> Result<Pixel<T>> {
    if !(p.z > T::zero()) || !p.is_finite() {
        return Err(Error::domain(format!("cannot project point with z = {}", p.z)));
    }
    Ok(Pixel::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Converts an image-space length at a given depth to meters using the
/// mean focal length.
pub fn pixel_radius_to_metric<T: Real>(r_px: T, depth: T, k: &CameraIntrinsics<T>) -> Result<T> {
    if !(r_px > T::zero()) || !r_px.is_finite() {
        return Err(Error::domain(format!("pixel radius must be positive, got {r_px}")));
    }
    if !(depth > T::zero()) || !depth.is_finite() {
        return Err(Error::domain(format!("depth must be positive, got {depth}")));
    }
    Ok(r_px * depth / k.mean_focal())
}
