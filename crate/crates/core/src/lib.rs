//! Beamforming for multi-user MIMO interference networks.
//!
//! The crate implements two solvers for the weighted sum-rate power
//! allocation problem and the tooling around them:
//!
//! * [`wmmse`]: the classical WMMSE block-coordinate solver with per-node
//!   bisection on the power multiplier, used as the reference baseline.
//! * [`unfolded`]: a learned solver that unrolls a small number of WMMSE
//!   iterations and inserts a graph-convolutional correction between the
//!   receiver and transmitter updates. Its parameters are shared across
//!   layers and are independent of the network size.
//! * [`autodiff`]: a reverse-mode tape over complex matrices, used to train
//!   the unfolded solver directly on the negative sum-rate.
//! * [`channel`]: geometric channel generation (Rayleigh / Rician fading
//!   over random node placements), CSI distortion, and dataset files.
//! * [`train`] / [`eval`]: the training loop with early stopping, and the
//!   experiment harnesses (baseline comparison, generalization sweeps,
//!   convergence prediction, robustness, timing, equivariance).
//!
//! All numerics are `f64`; complex values are [`num_complex::Complex64`].
//! Everything is deterministic given a seed (see [`seed`]).

pub mod autodiff;
pub mod channel;
pub mod eval;
pub mod linalg;
pub mod seed;
pub mod train;
pub mod unfolded;
pub mod wmmse;
