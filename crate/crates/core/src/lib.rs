pub mod autograd;
pub mod domain;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod training;

pub use domain::{DomainCode, DomainPair};
pub use error::{Error, Result};
