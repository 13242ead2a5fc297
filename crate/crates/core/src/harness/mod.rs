mod engine;
mod experiment;
mod fit;
pub mod io;

pub use engine::*;
pub use experiment::*;
pub use fit::*;
