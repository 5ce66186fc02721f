mod ba;
mod matching;
mod ransac;
mod residual;
mod tracker;
mod triangulate;
pub use ba::*;
pub use matching::*;
pub use ransac::*;
pub use residual::*;
pub use tracker::*;
pub use triangulate::*;
