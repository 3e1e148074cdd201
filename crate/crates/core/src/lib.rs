pub mod channel;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod planner;
pub mod predict;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::Vec2;
