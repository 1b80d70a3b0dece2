//! Collision-model simulation of a dissipative quantum perceptron.
//!
//! A probe qubit repeatedly collides with fresh units drawn from one or more
//! information reservoirs. Each unit is a spin-J coherent state pointing in
//! direction `(theta, phi)`; the probe couples to it through the
//! excitation-exchange Hamiltonian `g (σ⁺ ⊗ J⁻ + σ⁻ ⊗ J⁺)` for a time `tau`,
//! after which the unit is traced out. The probe's steady-state
//! magnetization `<σ_z>` is the neuron output.
//!
//! Basis conventions: the probe basis is `{|e>, |g>}` (index 0 is excited,
//! `<σ_z> = +1`), and spin-J bases are ordered by descending `m`, so
//! `theta = 0` is the fully polarized `m = +J` state.

mod collision;
mod spin;
mod state;

pub use collision::{
    collide_once, collision_unitary, evolve_collisions, steady_state_closed_form, transfer_curve,
    CollisionChannel, CollisionParams, Evolution, PropagatorMode, Schedule, SteadyStateResult,
    TransferConfig, TransferCurve, TransferPoint,
};
pub use spin::{spin_ladder, Spin, SpinOperators};
pub use state::{reservoir_unit_state, DensityMatrix, ReservoirSpec};
