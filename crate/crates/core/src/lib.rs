pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod models;
pub mod optim;
pub mod trainer;

pub use error::{Error, Result};
