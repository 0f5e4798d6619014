//! Deep Memory Update (DMU) — a recurrent module whose memory state is
//! transformed by an arbitrary feedforward subnetwork, gated between the
//! previous state and a candidate update, with an adaptive scalar that
//! scales the lagged memory to keep backward-in-time gradient norms flat.
//!
//! The crate bundles:
//! - a minimal tape-based reverse-mode autodiff engine ([`autodiff`]),
//! - the DMU cell plus ordinary RNN / LSTM / GRU baselines ([`cells`]),
//! - the memory-scaling controller ([`scaling`]),
//! - seeded generators for the Adding / TempOrd / NoiseSeq benchmarks
//!   ([`tasks`]),
//! - a BPTT training loop with Adam/SGD and threshold-based early
//!   stopping ([`training`]),
//! - a multi-seed experiment runner with CSV/JSON reports ([`experiment`]).

pub mod autodiff;
pub mod cells;
pub mod experiment;
pub mod scaling;
pub mod seed;
pub mod tasks;
pub mod training;
