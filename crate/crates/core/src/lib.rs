pub mod adaptivity;
pub mod element;
pub mod error;
pub mod estimator;
pub mod forms;
pub mod geometry;
pub mod goals;
pub mod linalg;
pub mod reference;
pub mod report;
pub mod space;

pub use error::{Error, Result};
