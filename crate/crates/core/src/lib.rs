//! Learning-rate policies, adversarial attacks and training loops for
//! small dense networks, plus the experiment harness around them.

pub mod accelat;
pub mod attacks;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod lr_finder;
pub mod matrix;
pub mod nn;
pub mod optim;
pub mod plot;
pub mod runlog;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
