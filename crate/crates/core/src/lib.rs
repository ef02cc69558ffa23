//! Relative 6DoF pose estimation between two partially overlapping point
//! clouds of the same object.

pub mod bench;
pub mod descriptor;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod matching;
pub mod pipeline;
pub mod segmatch;
pub mod spatial;

pub use error::{Error, Result};
pub use geometry::{FrameTransform, Point3, PointCloud, RigidTransform};
