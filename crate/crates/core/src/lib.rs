//! Vector-scaling (VS) losses, cost- and group-sensitive max-margin
//! classifiers, and the sharp high-dimensional asymptotics of those
//! classifiers under Gaussian-mixture data.

pub mod asymptotics;
pub mod error;
pub mod linear;
pub mod losses;
pub mod maxmargin;
pub mod model_data;
pub mod numerics;
pub mod optim;
pub mod risk_eval;
pub mod tuning;

pub use error::{Error, Result};
pub use linear::{LinearModel, MultiModel};
