//! Shared geometric substrate.
//!
//! Frame convention used throughout the crate: camera frame with `z`
//! pointing forward along the optical axis, `x` to the right and `y`
//! down. "Height" is therefore `-y`, and world-down is `(0, 1, 0)`.

mod camera;
mod cloud;
mod curve;

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub use camera::{backproject, pixel_radius_to_metric, project, CameraIntrinsics};
pub use cloud::{sphere_virtual_cloud, PointCloud};
pub use curve::{curve_normal, fit_curve, ParametricCurve, SAMPLES_PER_SEGMENT};

/// A point or vector in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    /// World-down in the camera frame.
    pub fn down() -> Self {
        Self::new(T::zero(), T::one(), T::zero())
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, o: &Self) -> T {
        (*self - *o).norm()
    }

    pub fn distance_squared(&self, o: &Self) -> T {
        (*self - *o).norm_squared()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n > T::epsilon() * T::lit(16.0) && n.is_finite() {
            Some(*self / n)
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Horizontal component (the `x`/`z` plane).
    pub fn horizontal(&self) -> Self {
        Self::new(self.x, T::zero(), self.z)
    }

    pub fn lerp(&self, o: &Self, t: T) -> Self {
        *self + (*o - *self) * t
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl<T: Real> Add for Point3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Point3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Point3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Point3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Div<T> for Point3<T> {
    type Output = Self;
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<T: Real> Neg for Point3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Image coordinate in pixels; may be fractional.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel<T> {
    pub u: T,
    pub v: T,
}

impl<T: Real> Pixel<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn distance_squared(&self, o: &Self) -> T {
        let du = self.u - o.u;
        let dv = self.v - o.v;
        du * du + dv * dv
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// Integer pixel containing this coordinate (nearest pixel center).
    pub fn rounded(&self) -> (i64, i64) {
        (
            self.u.round().to_i64().unwrap_or(i64::MIN),
            self.v.round().to_i64().unwrap_or(i64::MIN),
        )
    }
}

/// Mean of a non-empty point set.
pub fn centroid<T: Real>(points: &[Point3<T>]) -> Option<Point3<T>> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Point3::zero(), |acc, p| acc + *p);
    Some(sum / T::from_usize_lossy(points.len()))
}
