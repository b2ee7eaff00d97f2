//! File formats, parallel drivers and the `lossdev` command line for the
//! hidden Markov loss development model in [`lossdev_core`].

pub mod cli;
pub mod error;
pub mod io;
pub mod run;
pub mod stats;

pub use error::{Error, Result};
