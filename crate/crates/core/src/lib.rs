//! Differentially private linear-model training over additively secret-shared
//! data.
//!
//! The crate is layered bottom-up: [`numeric`] (prime field and fixed point),
//! [`transport`] (metered party-to-party messaging), [`dealer`] (offline
//! correlated randomness), [`mpc`] (online primitives), [`invsqrt`] (one-sided
//! inverse square root), [`dp`] (noise and accounting) and [`train`]
//! (plaintext and secure DPSGD plus initialization). [`oracle`] holds the
//! plaintext references used by tests.

pub mod dealer;
pub mod dp;
pub mod invsqrt;
pub mod mpc;
pub mod numeric;
pub mod oracle;
pub mod train;
pub mod transport;

pub use numeric::{FieldElement, FixedPoint, FixedPointParams, Modulus};
pub use transport::{ChannelMetrics, PartyId, Transport};
