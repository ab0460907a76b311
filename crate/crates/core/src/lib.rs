pub mod asr_model;
pub mod autodiff;
pub mod cnn;
pub mod datasim;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod se_model;
pub mod trainer;

pub use error::{Error, Result};
