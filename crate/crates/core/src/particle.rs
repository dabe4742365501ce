//! Euler–Maruyama particle systems driven by coupled (shifted-lattice) or
//! i.i.d. noise, and the single-level estimator built on them.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{fill_bridge, inv_norm_cdf_unchecked, CLAMP};
use crate::error::{ensure_power_of_two, Error, Result};
use crate::exec::Execution;
use crate::lowdisc::{
    lattice_points, shift_points, BridgeOrdering, CoordinateLayout, PointSet, Shift,
    DEFAULT_KOROBOV_BASE,
};
use crate::models::{Model, Observable};
use crate::seeding::{stream_rng, Purpose};

/// Below this particle count the kernel sums of one step run on one thread.
const INNER_PARALLEL_MIN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    QmcCoupled,
    IidMc,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qmc" | "qmc-coupled" => Ok(Mode::QmcCoupled),
            "iid" | "iid-mc" | "mc" => Ok(Mode::IidMc),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// How kernel averages are evaluated. Both are exact; `Separable` rewrites
/// `(1/P) sum_j kappa(x, x_j)` through averaged features when the model
/// provides them, and falls back to `Direct` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    Direct,
    #[default]
    Separable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub particles: usize,
    pub steps: usize,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
    pub mode: Mode,
    /// `None` selects the model's default observable.
    pub observable: Option<Observable>,
    pub kernel: KernelMode,
    pub korobov_base: u64,
    pub ordering: BridgeOrdering,
    /// Draws a fresh Korobov base for every shift (diagnostics only).
    pub fresh_lattice_per_shift: bool,
    pub execution: Execution,
}

impl SystemConfig {
    pub fn new(particles: usize, steps: usize, horizon: f64, samples: usize, seed: u64) -> Self {
        Self {
            particles,
            steps,
            horizon,
            samples,
            seed,
            mode: Mode::QmcCoupled,
            observable: None,
            kernel: KernelMode::default(),
            korobov_base: DEFAULT_KOROBOV_BASE,
            ordering: BridgeOrdering::default(),
            fresh_lattice_per_shift: false,
            execution: Execution::default(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_observable(mut self, g: Observable) -> Self {
        self.observable = Some(g);
        self
    }

    pub fn with_kernel(mut self, k: KernelMode) -> Self {
        self.kernel = k;
        self
    }

    pub fn with_execution(mut self, e: Execution) -> Self {
        self.execution = e;
        self
    }

    pub fn with_ordering(mut self, o: BridgeOrdering) -> Self {
        self.ordering = o;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.steps == 0 || self.samples == 0 {
            return Err(Error::Config("P, N and M must all be at least 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("final time must be positive, got {}", self.horizon)));
        }
        if self.mode == Mode::QmcCoupled {
            ensure_power_of_two("particle count", self.particles)?;
            ensure_power_of_two("step count", self.steps)?;
        }
        Ok(())
    }
}

/// Evaluation counters of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Cost {
    /// Pair interactions `kappa1(x_p, x_j)` entering the drift averages.
    pub kernel_evals: u64,
    /// Pair interactions `kappa2(x_p, x_j)` entering the diffusion averages.
    pub diffusion_kernel_evals: u64,
    pub drift_evals: u64,
}

impl Cost {
    pub fn total_kernel_evals(&self) -> u64 {
        self.kernel_evals + self.diffusion_kernel_evals
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, o: Cost) -> Cost {
        Cost {
            kernel_evals: self.kernel_evals + o.kernel_evals,
            diffusion_kernel_evals: self.diffusion_kernel_evals + o.diffusion_kernel_evals,
            drift_evals: self.drift_evals + o.drift_evals,
        }
    }
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Cost) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), |a, b| a + b)
    }
}

/// Cost of one system of `particles` particles over `steps` steps.
pub fn system_cost<M: Model + ?Sized>(model: &M, particles: usize, steps: usize) -> Cost {
    let pairs = (steps * particles * particles) as u64;
    Cost {
        kernel_evals: pairs,
        diffusion_kernel_evals: if model.uses_diffusion_kernel() { pairs } else { 0 },
        drift_evals: (steps * particles) as u64,
    }
}

/// Sample mean and unbiased sample variance (`None` for fewer than two
/// values), both accumulated in index order.
pub fn mean_and_variance(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], Some(0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, Some(ss / (n - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub per_shift: Vec<f64>,
    pub mean: f64,
    /// Unbiased variance over shifts; absent when only one shift ran.
    pub sample_variance: Option<f64>,
    /// Summed over all shifts.
    pub cost: Cost,
    pub cost_per_shift: Cost,
    pub wall_time: f64,
}

impl EstimateResult {
    fn from_values(per_shift: Vec<f64>, cost_per_shift: Cost, wall_time: f64) -> Self {
        let (mean, sample_variance) = mean_and_variance(&per_shift);
        let m = per_shift.len() as u64;
        Self {
            cost: Cost {
                kernel_evals: cost_per_shift.kernel_evals * m,
                diffusion_kernel_evals: cost_per_shift.diffusion_kernel_evals * m,
                drift_evals: cost_per_shift.drift_evals * m,
            },
            per_shift,
            mean,
            sample_variance,
            cost_per_shift,
            wall_time,
        }
    }

    pub fn samples(&self) -> usize {
        self.per_shift.len()
    }

    /// `sqrt(variance / M)`.
    pub fn standard_error(&self) -> Option<f64> {
        self.sample_variance
            .map(|v| (v / self.per_shift.len() as f64).sqrt())
    }
}

/// Initial states, auxiliary values and Wiener increments of one system.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleInputs {
    pub particles: usize,
    pub steps: usize,
    pub horizon: f64,
    pub aux_arity: usize,
    pub initial: Vec<f64>,
    /// Row `p` holds the auxiliary values of particle `p`.
    pub aux: Vec<f64>,
    /// Step-major: `increments[n * P + p]`. Empty for noiseless models.
    pub increments: Vec<f64>,
}

impl ParticleInputs {
    /// Reads the inputs off already shifted points laid out as
    /// `[aux | xi | bridge block]` with a bridge block of length `steps`.
    pub fn from_points<M: Model + ?Sized>(
        model: &M,
        points: &PointSet,
        horizon: f64,
        ordering: BridgeOrdering,
    ) -> Result<Self> {
        let k = model.aux_arity();
        let steps = points
            .dim()
            .checked_sub(k + 1)
            .filter(|&n| n > 0)
            .ok_or(Error::DimensionMismatch {
                expected: k + 2,
                found: points.dim(),
            })?;
        ensure_power_of_two("bridge block length", steps)?;
        let layout = CoordinateLayout::new(k, steps);
        let p_count = points.len();
        let mut initial = Vec::with_capacity(p_count);
        let mut aux = Vec::with_capacity(p_count * k);
        let noise = model.has_noise();
        let mut increments = if noise { vec![0.0; steps * p_count] } else { Vec::new() };
        let mut nodes = vec![0.0; steps + 1];
        for (p, x) in points.points().enumerate() {
            aux.extend(x[..k].iter().map(|&u| model.aux_value(u)));
            initial.push(model.initial(x[layout.xi_index()]));
            if noise {
                let block = &x[layout.bridge_range()];
                fill_bridge(
                    steps,
                    horizon,
                    |r| block[ordering.position_of_rank(r, steps)],
                    &mut nodes,
                )?;
                for (n, w) in nodes.windows(2).enumerate() {
                    increments[n * p_count + p] = w[1] - w[0];
                }
            }
        }
        Ok(Self {
            particles: p_count,
            steps,
            horizon,
            aux_arity: k,
            initial,
            aux,
            increments,
        })
    }

    /// Independent inputs: `xi_p = H(u)`, `aux = aux_value(u)` and Gaussian
    /// increments `sqrt(dt) phi^{-1}(u)` from one random stream.
    pub fn iid<M: Model + ?Sized, R: Rng>(
        model: &M,
        particles: usize,
        steps: usize,
        horizon: f64,
        rng: &mut R,
    ) -> Self {
        let k = model.aux_arity();
        let mut uniform = || rng.random::<f64>().clamp(CLAMP, 1.0 - CLAMP);
        let mut initial = Vec::with_capacity(particles);
        let mut aux = Vec::with_capacity(particles * k);
        for _ in 0..particles {
            for _ in 0..k {
                aux.push(model.aux_value(uniform()));
            }
            initial.push(model.initial(uniform()));
        }
        let increments = if model.has_noise() {
            let sd = (horizon / steps as f64).sqrt();
            (0..steps * particles)
                .map(|_| sd * inv_norm_cdf_unchecked(uniform()))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            particles,
            steps,
            horizon,
            aux_arity: k,
            initial,
            aux,
            increments,
        }
    }
}

/// Kernel averages `out[p] = (1/P) sum_j kappa(x_p, x_j)` summed in `j` order.
fn direct_averages(
    states: &[f64],
    kernel: impl Fn(f64, f64) -> f64 + Sync,
    out: &mut [f64],
    execution: Execution,
) {
    let inv = 1.0 / states.len() as f64;
    let row = |p: usize| {
        let x = states[p];
        states.iter().map(|&y| kernel(x, y)).sum::<f64>() * inv
    };
    if states.len() >= INNER_PARALLEL_MIN {
        execution.fill(out, row);
    } else {
        Execution::Sequential.fill(out, row);
    }
}

fn separable_averages<M: Model + ?Sized>(model: &M, states: &[f64], out: &mut [f64]) {
    let r = model.separable_rank();
    let mut mean = vec![0.0; r];
    let mut buf = vec![0.0; r];
    for &y in states {
        model.kernel_features(y, &mut buf);
        for (m, b) in mean.iter_mut().zip(&buf) {
            *m += b;
        }
    }
    let inv = 1.0 / states.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    for (o, &x) in out.iter_mut().zip(states) {
        *o = model.kernel_from_features(x, &mean);
    }
}

/// Runs the Euler–Maruyama recursion and returns the final states.
///
/// `tracers` are extra particles advanced under the same empirical measure
/// without contributing to it; they receive no auxiliary values and no noise.
pub fn evolve<M: Model + ?Sized>(
    model: &M,
    inputs: &ParticleInputs,
    kernel: KernelMode,
    execution: Execution,
    tracers: Option<&mut [f64]>,
) -> Result<Vec<f64>> {
    let p_count = inputs.particles;
    let steps = inputs.steps;
    let k = inputs.aux_arity;
    let dt = inputs.horizon / steps as f64;
    let noise = !inputs.increments.is_empty();
    let separable = kernel == KernelMode::Separable && model.separable_rank() > 0;
    let diffusion_kernel = model.uses_diffusion_kernel();

    let mut x = inputs.initial.clone();
    let mut next = vec![0.0; p_count];
    let mut m1 = vec![0.0; p_count];
    let mut m2 = vec![0.0; if diffusion_kernel { p_count } else { 0 }];
    let mut tracers = tracers;
    let mut tracer_m = Vec::new();

    for n in 0..steps {
        if separable {
            separable_averages(model, &x, &mut m1);
        } else {
            direct_averages(&x, |a, b| model.drift_kernel(a, b), &mut m1, execution);
        }
        if diffusion_kernel {
            direct_averages(&x, |a, b| model.diffusion_kernel(a, b), &mut m2, execution);
        }
        if let Some(t) = tracers.as_deref_mut() {
            tracer_m.resize(t.len(), 0.0);
            let inv = 1.0 / p_count as f64;
            for (tm, &tx) in tracer_m.iter_mut().zip(t.iter()) {
                *tm = x.iter().map(|&y| model.drift_kernel(tx, y)).sum::<f64>() * inv;
            }
            for (tx, &tm) in t.iter_mut().zip(&tracer_m) {
                *tx += model.drift(*tx, tm, &[]) * dt;
            }
        }
        let dw = if noise { &inputs.increments[n * p_count..(n + 1) * p_count] } else { &[][..] };
        for p in 0..p_count {
            let xp = x[p];
            let aux = &inputs.aux[p * k..(p + 1) * k];
            let mut v = xp + model.drift(xp, m1[p], aux) * dt;
            if noise {
                let s = model.diffusion(xp, if diffusion_kernel { m2[p] } else { 0.0 });
                v += s * dw[p];
            }
            if !v.is_finite() {
                return Err(Error::NonFinite { particle: p, step: n });
            }
            next[p] = v;
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(x)
}

/// Final states of the coupled system on `points` under `shift`.
pub fn euler_maruyama_system<M: Model + ?Sized>(
    model: &M,
    points: &PointSet,
    shift: &Shift,
    cfg: &SystemConfig,
) -> Result<Vec<f64>> {
    let expected = CoordinateLayout::new(model.aux_arity(), cfg.steps).dim();
    if points.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: points.dim(),
        });
    }
    let shifted = shift_points(points, shift)?;
    let inputs = ParticleInputs::from_points(model, &shifted, cfg.horizon, cfg.ordering)?;
    evolve(model, &inputs, cfg.kernel, cfg.execution, None)
}

/// The lattice used by the coupled estimator for `cfg`.
pub fn system_points<M: Model + ?Sized>(model: &M, cfg: &SystemConfig, base: u64) -> Result<PointSet> {
    let layout = CoordinateLayout::new(model.aux_arity(), cfg.steps);
    let z = layout.korobov(base, cfg.ordering)?;
    lattice_points(&z, cfg.particles)
}

/// Odd Korobov base drawn for shift `index` when fresh lattices are requested.
fn fresh_base(seed: u64, index: u64) -> u64 {
    let mut rng = stream_rng(seed, Purpose::LatticeBase, 0, index);
    rng.random_range(1u64..1 << 30) * 2 + 1
}

/// Randomly shifted lattice estimator (or its i.i.d. counterpart when
/// `cfg.mode` is [`Mode::IidMc`]).
pub fn single_level_estimator<M: Model + ?Sized>(model: &M, cfg: &SystemConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    if cfg.mode == Mode::IidMc {
        return iid_mc_system(model, cfg);
    }
    let start = Instant::now();
    let g = cfg.observable.unwrap_or_else(|| model.default_observable());
    let points = system_points(model, cfg, cfg.korobov_base)?;
    let per_shift = cfg.execution.try_map(cfg.samples, |i| -> Result<f64> {
        let fresh;
        let pts = if cfg.fresh_lattice_per_shift {
            fresh = system_points(model, cfg, fresh_base(cfg.seed, i as u64))?;
            &fresh
        } else {
            &points
        };
        let shift = Shift::draw(cfg.seed, Purpose::SingleLevelShift, 0, i as u64, pts.dim());
        let states = euler_maruyama_system(model, pts, &shift, cfg)?;
        Ok(g.mean(&states))
    })?;
    Ok(EstimateResult::from_values(
        per_shift,
        system_cost(model, cfg.particles, cfg.steps),
        start.elapsed().as_secs_f64(),
    ))
}

/// Standard particle system with independent initial conditions and noise.
pub fn iid_mc_system<M: Model + ?Sized>(model: &M, cfg: &SystemConfig) -> Result<EstimateResult> {
    let cfg = SystemConfig {
        mode: Mode::IidMc,
        ..cfg.clone()
    };
    cfg.validate()?;
    let start = Instant::now();
    let g = cfg.observable.unwrap_or_else(|| model.default_observable());
    let per_shift = cfg.execution.try_map(cfg.samples, |i| -> Result<f64> {
        let mut rng = stream_rng(cfg.seed, Purpose::IidSample, 0, i as u64);
        let inputs = ParticleInputs::iid(model, cfg.particles, cfg.steps, cfg.horizon, &mut rng);
        let states = evolve(model, &inputs, cfg.kernel, cfg.execution, None)?;
        Ok(g.mean(&states))
    })?;
    Ok(EstimateResult::from_values(
        per_shift,
        system_cost(model, cfg.particles, cfg.steps),
        start.elapsed().as_secs_f64(),
    ))
}

/// `2 I_{2P} - I_P`.
#[inline]
pub fn richardson_in_p(i_p: f64, i_2p: f64) -> f64 {
    2.0 * i_2p - i_p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ou_model, ModelSpec, OuParams};

    fn small(p: usize, n: usize, m: usize) -> SystemConfig {
        SystemConfig::new(p, n, 1.0, m, 11)
    }

    #[test]
    fn frozen_model_returns_initial_states() {
        let model = ModelSpec::new("frozen").with_initial(|u| 3.0 * u - 1.0);
        let cfg = small(8, 4, 1);
        let pts = system_points(&model, &cfg, DEFAULT_KOROBOV_BASE).unwrap();
        let shift = Shift::draw(1, Purpose::Test, 0, 0, pts.dim());
        let out = euler_maruyama_system(&model, &pts, &shift, &cfg).unwrap();
        let shifted = shift_points(&pts, &shift).unwrap();
        for (x, p) in out.iter().zip(shifted.points()) {
            assert_eq!(*x, 3.0 * p[0] - 1.0);
        }
    }

    #[test]
    fn noiseless_ou_conserves_the_empirical_mean() {
        let model = ou_model(OuParams {
            sigma: 0.0,
            ..OuParams::default()
        })
        .unwrap();
        for kernel in [KernelMode::Direct, KernelMode::Separable] {
            let cfg = small(64, 16, 1).with_kernel(kernel);
            let pts = system_points(&model, &cfg, DEFAULT_KOROBOV_BASE).unwrap();
            let shift = Shift::draw(2, Purpose::Test, 0, 0, pts.dim());
            let shifted = shift_points(&pts, &shift).unwrap();
            let inputs = ParticleInputs::from_points(&model, &shifted, 1.0, cfg.ordering).unwrap();
            let m0 = inputs.initial.iter().sum::<f64>() / 64.0;
            let out = evolve(&model, &inputs, kernel, Execution::Sequential, None).unwrap();
            let m1 = out.iter().sum::<f64>() / 64.0;
            assert!((m0 - m1).abs() < 1e-12);
        }
    }

    #[test]
    fn single_ou_particle_is_initial_plus_scaled_endpoint() {
        let model = ou_model(OuParams::default()).unwrap();
        let cfg = small(1, 8, 1);
        let pts = system_points(&model, &cfg, DEFAULT_KOROBOV_BASE).unwrap();
        let shift = Shift::draw(3, Purpose::Test, 0, 0, pts.dim());
        let shifted = shift_points(&pts, &shift).unwrap();
        let inputs = ParticleInputs::from_points(&model, &shifted, 1.0, cfg.ordering).unwrap();
        let w_t: f64 = inputs.increments.iter().sum();
        let out = euler_maruyama_system(&model, &pts, &shift, &cfg).unwrap();
        assert!((out[0] - (inputs.initial[0] + 0.5 * w_t)).abs() < 1e-13);
    }

    #[test]
    fn direct_and_separable_kernels_agree() {
        let model = ou_model(OuParams::default()).unwrap();
        let a = single_level_estimator(&model, &small(32, 8, 4).with_kernel(KernelMode::Direct)).unwrap();
        let b = single_level_estimator(&model, &small(32, 8, 4)).unwrap();
        for (x, y) in a.per_shift.iter().zip(&b.per_shift) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_observable_has_zero_variance() {
        let model = ou_model(OuParams::default()).unwrap();
        let cfg = small(16, 4, 5).with_observable(Observable::Constant(2.5));
        let r = single_level_estimator(&model, &cfg).unwrap();
        assert_eq!(r.mean, 2.5);
        assert_eq!(r.sample_variance, Some(0.0));
        let one = single_level_estimator(&model, &small(16, 4, 1)).unwrap();
        assert_eq!(one.sample_variance, None);
        assert_eq!(one.standard_error(), None);
    }

    #[test]
    fn sequential_and_parallel_runs_are_bit_identical() {
        let model = ou_model(OuParams::default()).unwrap();
        for mode in [Mode::QmcCoupled, Mode::IidMc] {
            let base = small(16, 8, 6).with_mode(mode);
            let s = single_level_estimator(&model, &base.clone().with_execution(Execution::Sequential)).unwrap();
            let p = single_level_estimator(&model, &base.with_execution(Execution::Parallel)).unwrap();
            assert_eq!(s.per_shift, p.per_shift);
        }
    }

    #[test]
    fn iid_runs_accept_any_particle_count() {
        let model = ou_model(OuParams::default()).unwrap();
        let cfg = small(7, 5, 3).with_mode(Mode::IidMc);
        let a = iid_mc_system(&model, &cfg).unwrap();
        let b = iid_mc_system(&model, &cfg).unwrap();
        assert_eq!(a.per_shift, b.per_shift);
        assert!(single_level_estimator(&model, &small(7, 4, 1)).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let model = ModelSpec::new("explode")
            .with_initial(|u| u + 1.0)
            .with_drift(|x, _, _| x * x * 1e10);
        let r = single_level_estimator(&model, &small(4, 16, 1));
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn cost_counts_pair_interactions() {
        let model = ou_model(OuParams::default()).unwrap();
        let r = single_level_estimator(&model, &small(16, 8, 3)).unwrap();
        assert_eq!(r.cost_per_shift.kernel_evals, 8 * 16 * 16);
        assert_eq!(r.cost.kernel_evals, 3 * 8 * 16 * 16);
    }

    #[test]
    fn richardson_examples() {
        assert_eq!(richardson_in_p(0.7, 0.7), 0.7);
        let (c, k, p) = (0.25, 3.0, 64.0);
        assert!((richardson_in_p(c + k / p, c + k / (2.0 * p)) - c).abs() < 1e-15);
        assert!((richardson_in_p(1.5, 1.2) - 0.9).abs() < 1e-15);
    }
}
