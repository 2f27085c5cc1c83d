//! Post-detection pipeline for a truss-tomato harvesting robot.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod phenotyping;
pub mod planning;
pub mod pose;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Point3 = geometry::Point3<f64>;
pub type Pixel = geometry::Pixel<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
pub type PointCloud = geometry::PointCloud<f64>;
pub type ParametricCurve = geometry::ParametricCurve<f64>;
pub type BBox = clustering::BBox<f64>;
pub type ClusterParams = clustering::ClusterParams<f64>;
pub type Detection = phenotyping::Detection<f64>;
pub type FruitSphere = phenotyping::FruitSphere<f64>;
pub type TrussPhenotype = phenotyping::TrussPhenotype<f64>;
pub type PedicelKeypoints2 = pose::PedicelKeypoints2<f64>;
pub type PedicelKeypoints3 = pose::PedicelKeypoints3<f64>;
pub type SigmaVector = pose::SigmaVector<f64>;
pub type EffectorModel = planning::EffectorModel<f64>;
pub type Workspace = planning::Workspace<f64>;
pub type Trajectory = planning::Trajectory<f64>;
pub type Waypoint = planning::Waypoint<f64>;
