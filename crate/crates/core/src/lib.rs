pub mod affinity;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod provenance;
pub mod real;
pub mod rng;
pub mod signal;
pub mod spectral;

pub use error::{Error, Result};
pub use real::{Precision, Real};
pub use signal::{MinMaxScaler, Normalization, SignalMatrix};
