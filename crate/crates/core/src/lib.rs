//! Functional simulator of an RRAM-crossbar softmax engine for attention
//! models, with a parameterized area/power/latency model.

pub mod attention;
pub mod costmodel;
pub mod crossbar;
pub mod engine;
pub mod error;
pub mod fxp;

pub use error::{Error, Result};
