//! Throughput and regret of rate adaptation over a binary erasure channel
//! whose erasure probability is unknown and can only be learned through a few
//! empirical-erasure-rate queries.
//!
//! - [`numerics`]: Q function, binomial law in the log domain, root finding.
//! - [`fbl`]: finite-blocklength error bounds and the oracle benchmark.
//! - [`ett`]: Estimate-then-Transmit evaluators and optimizers.
//! - [`windowing`]: re-estimating block schedules.
//! - [`mc`]: seeded Monte Carlo counterparts of the exact evaluators.
//! - [`sweep`]: parameter sweeps and slope fits.
//!
//! ```
//! use erasure_regret::{ett, fbl::Channel};
//!
//! let ch = Channel::new(0.5).unwrap();
//! assert_eq!(ett::opt_te(ch, 10_000, 0.5).unwrap(), 256);
//! ```

pub mod error;
pub mod ett;
pub mod fbl;
pub mod mc;
pub mod numerics;
pub mod par;
pub mod sweep;
pub mod windowing;

pub use error::{Error, Result};
pub use ett::{ErrorModel, EttConfig, EttReport};
pub use fbl::{BoundPair, Channel, CodePoint};
pub use mc::{SimConfig, SimReport};
pub use par::Exec;
pub use windowing::{Schedule, WindowReport};
