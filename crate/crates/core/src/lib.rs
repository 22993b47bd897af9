//! Link-level simulator for a two-stage IRS-aided D2D URLLC downlink.
//!
//! An access point broadcasts one short packet to `K` single-antenna
//! actuators with help from an intelligent reflecting surface (stage I);
//! actuators that decoded it relay the packet over D2D links to the rest
//! (stage II), which combine both receptions with MRC. Reliability is judged
//! under the finite-blocklength normal approximation.
//!
//! Modules, bottom-up:
//!
//! * [`fbl`]: Q-function, channel dispersion, decoding error probability and
//!   SNR thresholds.
//! * [`channel`]: geometry, path loss, Rayleigh/Ricean fading, cascaded and
//!   stacked effective channels, norm-bounded CSI errors.
//! * [`protocol`]: stage-I/II SNRs, decode indicators and the Monte Carlo
//!   probability-of-reliable-communication (PRC) driver.
//! * [`conic`]: a small LP/SOCP/SDP modelling layer over complex Hermitian
//!   data, solved with Clarabel.
//! * [`optim_perfect`]: AltMin, penalty-based SCA and the rank-relaxed
//!   upper bound for perfect CSI.
//! * [`optim_robust`]: S-procedure LMIs, SDR-based BCD and Gaussian
//!   randomization for bounded CSI errors.
//! * [`harness`]: experiment configuration, scheme registry, sweeps, CSV and
//!   SVG output.

pub mod channel;
pub mod conic;
mod error;
pub mod fbl;
pub mod harness;
pub mod linalg;
pub mod optim_perfect;
#[cfg(feature = "sdp")]
pub mod optim_robust;
pub mod protocol;

pub use error::{Error, Result};
