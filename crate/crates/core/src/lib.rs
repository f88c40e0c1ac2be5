pub mod dataset;
pub mod error;
pub mod filter_selection;
pub mod gabor;
pub mod image;
pub mod linalg;
pub mod preprocess;
pub mod recognizer;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result, Stage};
