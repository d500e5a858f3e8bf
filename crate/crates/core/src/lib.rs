//! Rate and loss limits for stabilizing uncertain autoregressive plants over
//! a quantized packet-erasure channel.
//!
//! The plant `y_{k+1} = sum_i a_{i,k} y_{k-i+1} + u_k` has coefficients known
//! only to lie in boxes `[a_i* - eps_i, a_i* + eps_i]`. Its output is
//! quantized to `N` levels and sent over a channel that drops packets
//! independently with probability `p`.
//!
//! * [`limits`]: closed-form necessary rate and loss bounds.
//! * [`mjls`]: the spectral-radius sufficiency test.
//! * [`codec`]: the synchronized encoder/decoder loop.
//! * [`timeshare`]: cycle-based time sharing for scalar plants.
//! * [`montecarlo`], [`sweep`]: empirical verdicts and parameter grids.

pub mod channel;
pub mod cli;
pub mod codec;
pub mod error;
pub mod interval;
pub mod limits;
pub mod mjls;
pub mod montecarlo;
pub mod plant;
pub mod sweep;
pub mod timeshare;

pub use error::{Error, Result};
pub use interval::Interval;
pub use plant::UncertainPlant;
