//! Eulerian-Lagrangian transport with the modified method of
//! characteristics on block-structured simplex meshes.

pub mod bench;
pub mod diffusion;
pub mod error;
pub mod fem;
pub mod geom;
pub mod mesh;
pub mod partition;
pub mod scheme;
pub mod stokes;
pub mod transport;

pub use error::{Error, Result};
pub use geom::Point;
