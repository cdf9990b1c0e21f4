pub mod dataset;
pub mod error;
pub mod geom;
pub mod global_reg;
pub mod layout;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod planes;
pub mod pose_graph;
pub mod registration;
pub mod spatial;

pub use error::{Error, ErrorCategory, Result};
pub use geom::*;
pub use spatial::{Neighbor, SpatialIndex};
