pub mod chaos;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gpc;
pub mod grid;
pub mod oracle;
pub mod soliton;
pub mod solver;

pub use error::{Error, Result};
