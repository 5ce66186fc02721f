//! Loop candidates from stacked keyframe descriptors, verification over the
//! rig's cyclic camera shifts, and pose-graph correction of the keyframe
//! trajectory.

mod candidates;
mod closer;
mod graph;
mod verify;

pub use candidates::*;
pub use closer::*;
pub use graph::*;
pub use verify::*;
