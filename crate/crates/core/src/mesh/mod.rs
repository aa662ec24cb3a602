//! Coarse meshes, blending maps and the refined mesh hierarchy.

pub mod blending;
pub mod coarse;
pub mod hierarchy;

pub use blending::{BlendingMap, Direction};
pub use coarse::{BoundaryFacet, BoundaryTag, CoarseMesh};
pub use hierarchy::{Location, LocateFlags, MacroPrimitive, MeshHierarchy, MicroElement, NodeSet, PrimitiveKind};
