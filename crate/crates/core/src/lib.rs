pub mod aecm;
pub mod bfa;
pub mod datagen;
pub mod error;
pub mod family;
pub mod gig;
pub mod io;
pub mod matvar;
pub mod metrics;
pub mod model;
pub mod sample;
pub mod selection;
pub mod specfun;

pub use error::{Error, Result};
pub use family::{Family, Theta};
pub use model::MixtureModel;
pub use sample::MatrixSample;
