//! Quasi-Monte Carlo particle systems for McKean–Vlasov equations.
//!
//! Particles are driven by randomly shifted rank-1 lattice points: one
//! coordinate per particle feeds the initial condition and a block of
//! coordinates feeds a Brownian-bridge path. On top of the coupled system
//! sit a single-level estimator, an i.i.d. baseline and an antithetic
//! multilevel estimator.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod lowdisc;
pub mod mlqmc;
pub mod models;
pub mod particle;
pub mod seeding;

pub use error::{Error, Result};
pub use exec::{with_threads, Execution};
pub use experiments::{fit_rate, run_sweep, RateFit, SweepSpec, Table};
pub use lowdisc::{
    cut_coordinates, korobov_vector, lattice_points, shift_points, split_even_odd,
    star_discrepancy_1d, sup_shifted_discrepancy_1d, BridgeOrdering, CoordinateLayout,
    GeneratingVector, PointSet, Shift,
};
pub use mlqmc::{
    level_points, level_variance_study, mlqmc_estimator, phi_level, psi_level, LevelConfig,
    LevelStats,
};
pub use models::{BuiltinModel, Model, ModelSpec, Observable};
pub use particle::{
    euler_maruyama_system, iid_mc_system, richardson_in_p, single_level_estimator, Cost,
    EstimateResult, KernelMode, Mode, SystemConfig,
};
