//! Spin-locking and Rabi dynamics in the RWA rotating frame.

pub mod propagator;
pub mod rabi;
pub mod rk45;
pub mod sequence;

pub use rabi::{default_rabi_duration, dominant_frequency, simulate_rabi, simulate_rabi_sampled, RabiTrace};
pub use sequence::{
    simulate_sequence, simulate_sequence_with, DecayTrace, Integrator, SequenceSpec, TraceMetadata,
};
