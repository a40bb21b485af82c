pub mod bench;
pub mod dense;
pub mod error;
pub mod eval;
pub mod instrument;
pub mod interp;
pub mod problems;
pub mod sketch;
pub mod solver;
pub mod trace;
pub mod trs;

pub use error::{Error, Result};
