use super::Point3;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Arc-length table resolution per cubic segment.
pub const SAMPLES_PER_SEGMENT: usize = 64;

const STRAIGHT_CURVATURE: f64 = 1e-6;

/// One cubic piece in power form: `p(s) = ((a s + b) s + c) s + d`, `s` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cubic<T> {
    a: Point3<T>,
    b: Point3<T>,
    c: Point3<T>,
    d: Point3<T>,
}

impl<T: Real> Cubic<T> {
    /// Centripetal Catmull-Rom piece between `p1` and `p2`, built from the
    /// Hermite tangents of the Barry-Goldman pyramid. A zero-length outer
    /// span (duplicated endpoint) takes its limit, which is a zero tangent.
    fn centripetal(p0: Point3<T>, p1: Point3<T>, p2: Point3<T>, p3: Point3<T>) -> Self {
        let half = T::lit(0.5);
        let t01 = p0.distance(&p1).powf(half);
        let t12 = p1.distance(&p2).powf(half);
        let t23 = p2.distance(&p3).powf(half);

        let chord = p2 - p1;
        let m1 = if t01 > T::zero() {
            chord + ((p1 - p0) / t01 - (p2 - p0) / (t01 + t12)) * t12
        } else {
            Point3::zero()
        };
        let m2 = if t23 > T::zero() {
            chord + ((p3 - p2) / t23 - (p3 - p1) / (t12 + t23)) * t12
        } else {
            Point3::zero()
        };

        let two = T::lit(2.0);
        let three = T::lit(3.0);
        Cubic {
            a: (p1 - p2) * two + m1 + m2,
            b: (p1 - p2) * (-three) - m1 * two - m2,
            c: m1,
            d: p1,
        }
    }

    fn at(&self, s: T) -> Point3<T> {
        ((self.a * s + self.b) * s + self.c) * s + self.d
    }

    fn d1(&self, s: T) -> Point3<T> {
        (self.a * (T::lit(3.0) * s) + self.b * T::lit(2.0)) * s + self.c
    }

    fn d2(&self, s: T) -> Point3<T> {
        self.a * (T::lit(6.0) * s) + self.b * T::lit(2.0)
    }
}

/// Interpolating piecewise-cubic space curve, parameterized by normalized
/// arc length `t` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricCurve<T> {
    control_points: Vec<Point3<T>>,
    pieces: Vec<Cubic<T>>,
    /// `(raw parameter, cumulative length)`; raw parameter `i + s` addresses piece `i`.
    table: Vec<(T, T)>,
}

/// Fits a centripetal Catmull-Rom spline through `points` (endpoints
/// duplicated) and builds its arc-length table.
pub fn fit_curve<T: Real>(points: &[Point3<T>]) -> Result<ParametricCurve<T>> {
    if points.len() < 2 {
        return Err(Error::domain(format!("curve needs at least 2 points, got {}", points.len())));
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::domain(format!("curve point {i} is not finite")));
    }
    for (i, w) in points.windows(2).enumerate() {
        if w[0].distance(&w[1]) <= T::epsilon() {
            return Err(Error::domain(format!("curve points {i} and {} coincide", i + 1)));
        }
    }

    let n = points.len();
    let at = |i: isize| points[i.clamp(0, n as isize - 1) as usize];
    let pieces: Vec<Cubic<T>> = (0..n as isize - 1)
        .map(|i| Cubic::centripetal(at(i - 1), at(i), at(i + 1), at(i + 2)))
        .collect();

    let steps = T::from_usize_lossy(SAMPLES_PER_SEGMENT);
    let mut table = Vec::with_capacity(pieces.len() * SAMPLES_PER_SEGMENT + 1);
    table.push((T::zero(), T::zero()));
    let mut total = T::zero();
    for (i, piece) in pieces.iter().enumerate() {
        let base = T::from_usize_lossy(i);
        let mut prev = piece.at(T::zero());
        for k in 1..=SAMPLES_PER_SEGMENT {
            let s = T::from_usize_lossy(k) / steps;
            let p = if k == SAMPLES_PER_SEGMENT { points[i + 1] } else { piece.at(s) };
            total = total + p.distance(&prev);
            table.push((base + s, total));
            prev = p;
        }
    }

    Ok(ParametricCurve { control_points: points.to_vec(), pieces, table })
}

impl<T: Real> ParametricCurve<T> {
    pub fn control_points(&self) -> &[Point3<T>] {
        &self.control_points
    }

    /// Total arc length in meters.
    pub fn length(&self) -> T {
        self.table.last().map(|e| e.1).unwrap_or_else(T::zero)
    }

    /// Arc-length parameter of every control point.
    pub fn control_parameters(&self) -> Vec<T> {
        let len = self.length();
        (0..self.control_points.len())
            .map(|i| self.table[i * SAMPLES_PER_SEGMENT].1 / len)
            .collect()
    }

    fn check_t(t: T) -> Result<()> {
        if t.is_finite() && t >= T::zero() && t <= T::one() {
            Ok(())
        } else {
            Err(Error::domain(format!("curve parameter {t} outside [0, 1]")))
        }
    }

    /// Maps normalized arc length to the raw piece parameter.
    fn raw_param(&self, t: T) -> T {
        let target = t * self.length();
        let idx = self.table.partition_point(|e| e.1 < target);
        if idx == 0 {
            return T::zero();
        }
        if idx >= self.table.len() {
            return self.table.last().unwrap().0;
        }
        let (u0, l0) = self.table[idx - 1];
        let (u1, l1) = self.table[idx];
        if l1 > l0 {
            u0 + (u1 - u0) * (target - l0) / (l1 - l0)
        } else {
            u0
        }
    }

    fn split(&self, u: T) -> (&Cubic<T>, T) {
        let last = self.pieces.len() - 1;
        let i = u.floor().to_usize().unwrap_or(0).min(last);
        (&self.pieces[i], u - T::from_usize_lossy(i))
    }

    fn raw_at(&self, u: T) -> Point3<T> {
        let (piece, s) = self.split(u);
        piece.at(s)
    }

    /// Point at normalized arc length `t`.
    pub fn evaluate(&self, t: T) -> Result<Point3<T>> {
        Self::check_t(t)?;
        if t == T::zero() {
            return Ok(self.control_points[0]);
        }
        if t == T::one() {
            return Ok(*self.control_points.last().unwrap());
        }
        Ok(self.raw_at(self.raw_param(t)))
    }

    /// First and second derivatives with respect to the raw parameter.
    /// Endpoints are nudged inward because duplicated endpoints give the
    /// spline zero speed there.
    fn derivatives(&self, t: T) -> (Point3<T>, Point3<T>) {
        let nudge = T::lit(1e-4);
        let max_u = T::from_usize_lossy(self.pieces.len());
        let u = self.raw_param(t).max(nudge).min(max_u - nudge);
        let (piece, s) = self.split(u);
        (piece.d1(s), piece.d2(s))
    }

    /// Unit tangent in the direction of increasing `t`.
    pub fn tangent(&self, t: T) -> Result<Point3<T>> {
        Self::check_t(t)?;
        let (d1, d2) = self.derivatives(t);
        Ok(d1.normalized().or_else(|| d2.normalized()).unwrap_or_else(|| {
            let first = self.control_points[0];
            (*self.control_points.last().unwrap() - first)
                .normalized()
                .unwrap_or(Point3::new(T::one(), T::zero(), T::zero()))
        }))
    }

    /// Geometric curvature in 1/m.
    pub fn curvature(&self, t: T) -> Result<T> {
        Self::check_t(t)?;
        let (d1, d2) = self.derivatives(t);
        let speed = d1.norm();
        if speed <= T::epsilon() {
            return Ok(T::zero());
        }
        Ok(d1.cross(&d2).norm() / (speed * speed * speed))
    }

    /// Parameter of the curve point closest to `p`.
    pub fn closest_parameter(&self, p: &Point3<T>) -> T {
        let len = self.length();
        let mut best = (T::infinity(), 0usize);
        for (k, &(u, _)) in self.table.iter().enumerate() {
            let d = self.raw_at(u).distance_squared(p);
            if d < best.0 {
                best = (d, k);
            }
        }
        let k = best.1;
        let mut lo = self.table[k.saturating_sub(1)].1 / len;
        let mut hi = self.table[(k + 1).min(self.table.len() - 1)].1 / len;
        let dist = |t: T| self.raw_at(self.raw_param(t)).distance_squared(p);
        let ratio = T::lit(0.618_033_988_749_895);
        for _ in 0..60 {
            let m1 = hi - (hi - lo) * ratio;
            let m2 = lo + (hi - lo) * ratio;
            if dist(m1) < dist(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        ((lo + hi) / T::lit(2.0)).max(T::zero()).min(T::one())
    }

    /// `n >= 2` points at evenly spaced arc-length parameters, endpoints included.
    pub fn sample(&self, n: usize) -> Vec<(T, Point3<T>)> {
        let n = n.max(2);
        let last = T::from_usize_lossy(n - 1);
        (0..n)
            .map(|i| {
                let t = T::from_usize_lossy(i) / last;
                (t, self.evaluate(t).expect("t within [0, 1]"))
            })
            .collect()
    }
}

/// Unit principal normal of the curve at `t`.
///
/// On locally straight stretches (curvature below `1e-6` 1/m) the normal is
/// taken perpendicular to the tangent inside the plane spanned by the tangent
/// and world-down; for a vertical tangent it is `+x` made perpendicular.
pub fn curve_normal<T: Real>(curve: &ParametricCurve<T>, t: T) -> Result<Point3<T>> {
    ParametricCurve::<T>::check_t(t)?;
    let tangent = curve.tangent(t)?;
    let (d1, d2) = curve.derivatives(t);
    let speed = d1.norm();
    let bent = d2 - tangent * d2.dot(&tangent);
    let curvature = if speed > T::epsilon() {
        d1.cross(&d2).norm() / (speed * speed * speed)
    } else {
        T::zero()
    };
    let relative_bend = if d2.norm() > T::zero() { bent.norm() / d2.norm() } else { T::zero() };

    if curvature >= T::lit(STRAIGHT_CURVATURE) && relative_bend > T::lit(1e-9) {
        if let Some(n) = bent.normalized() {
            return Ok(orthonormalize(n, tangent));
        }
    }
    let down = Point3::down();
    let in_plane = down - tangent * down.dot(&tangent);
    if in_plane.norm() > T::lit(1e-6) {
        return Ok(orthonormalize(in_plane, tangent));
    }
    let x = Point3::new(T::one(), T::zero(), T::zero());
    Ok(orthonormalize(x - tangent * x.dot(&tangent), tangent))
}

/// One Gram-Schmidt pass against the tangent, then normalize.
fn orthonormalize<T: Real>(v: Point3<T>, tangent: Point3<T>) -> Point3<T> {
    let v = v - tangent * v.dot(&tangent);
    v.normalized().unwrap_or(v)
}
