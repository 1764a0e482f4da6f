//! anderson-lab: a numerical laboratory for alloy-type random Schrödinger
//! operators on the cubic lattice `Z³`.
//!
//! The model is `H = -Δ/2 + λ V_ω` where `V_ω(x) = Σ_i ω_i u(x-i)` is an
//! alloy-type random potential built from a (possibly sign-indefinite)
//! single-site profile `u` and i.i.d. couplings `ω_i`. Everything here runs
//! at desk scale and is organized around *certified* numerics: exact
//! algebraic identities are checked to float noise, fixed points carry
//! residual and bound certificates, and Monte Carlo estimates carry
//! standard errors.
//!
//! The main subsystems:
//!
//! - [`lattice`]: sites, cubes, torus momenta and deterministic torus
//!   quadrature with a refinement ladder.
//! - [`potential`]: single-site potentials (overlapping / non-overlapping /
//!   dipole), disorder densities and reproducible counter-seeded sampling.
//! - [`green`]: free and renormalized lattice Green functions, decay
//!   envelopes and exponential fits.
//! - [`selfenergy`]: the three self-consistent self-energy solvers with
//!   contraction diagnostics.
//! - [`hamiltonian`]: finite-volume random Hamiltonians, resolvents,
//!   eigenvalue counting, and the dipole wall ground state.
//! - [`expansion`]: the stopping-rule resolvent expansion, even-block
//!   partition combinatorics, cumulants and tadpole cancellation.
//! - [`wegner`]: the Weyl interval lemma, Lipschitz density approximation
//!   and Monte Carlo eigenvalue-count linearity.
//! - [`experiments`]: reproducible experiment configs, run ledgers and
//!   CSV/JSON emission used by the `anderson-lab` binary.
//!
//! Each major capability also ships as a runnable example; see `examples/`.

pub mod error;
pub mod expansion;
pub mod experiments;
pub mod green;
pub mod hamiltonian;
pub mod lattice;
pub mod linalg;
pub mod potential;
pub mod rng;
pub mod selfenergy;
pub mod wegner;

pub use error::{Error, Result};
