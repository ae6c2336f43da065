pub mod cluster;
pub mod coherency;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod icp;
pub mod mesh_io;
pub mod optimize;
pub mod phantom;
pub mod pipeline;
pub mod pose;
pub mod projection;
pub mod similarity;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{RigidTransform, TransformParams, TriMesh, Vec3};
pub use volume::{CtVolume, Image2D};
