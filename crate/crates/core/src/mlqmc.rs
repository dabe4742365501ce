//! Antithetic multilevel QMC with Richardson extrapolation in time.
//!
//! Level `l` uses `P_l = 2^(p0+l)` particles and `N_l = 2^(n0+l)` steps. Its
//! points live in dimension `k_aux + 1 + 2 N_l`; cutting them once gives the
//! `N_l`-step inputs, and the even/odd halves of the cut set are two
//! `P_(l-1)`-point lattices.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lowdisc::{
    lattice_points, shift_points, split_even_odd, BridgeOrdering, CoordinateLayout,
    GeneratingVector, PointSet, Shift, DEFAULT_KOROBOV_BASE,
};
use crate::models::{Model, Observable};
use crate::particle::{evolve, mean_and_variance, system_cost, Cost, KernelMode, ParticleInputs};
use crate::seeding::Purpose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    /// Top level `L`.
    pub levels: usize,
    pub n0: u32,
    pub p0: u32,
    /// `M_l` for `l = 0..=L`.
    pub samples: Vec<usize>,
    pub horizon: f64,
    pub seed: u64,
    pub observable: Option<Observable>,
    pub korobov_base: u64,
    pub ordering: BridgeOrdering,
    pub kernel: KernelMode,
    pub execution: Execution,
}

impl LevelConfig {
    pub fn new(levels: usize, n0: u32, p0: u32, samples: Vec<usize>, horizon: f64, seed: u64) -> Self {
        Self {
            levels,
            n0,
            p0,
            samples,
            horizon,
            seed,
            observable: None,
            korobov_base: DEFAULT_KOROBOV_BASE,
            ordering: BridgeOrdering::default(),
            kernel: KernelMode::default(),
            execution: Execution::default(),
        }
    }

    pub fn with_observable(mut self, g: Observable) -> Self {
        self.observable = Some(g);
        self
    }

    pub fn with_ordering(mut self, o: BridgeOrdering) -> Self {
        self.ordering = o;
        self
    }

    pub fn with_execution(mut self, e: Execution) -> Self {
        self.execution = e;
        self
    }

    pub fn with_kernel(mut self, k: KernelMode) -> Self {
        self.kernel = k;
        self
    }

    pub fn steps(&self, level: usize) -> usize {
        1 << (self.n0 as usize + level)
    }

    pub fn particles(&self, level: usize) -> usize {
        1 << (self.p0 as usize + level)
    }

    /// Layout of the level-`l` points (bridge block `2 N_l`).
    pub fn layout<M: Model + ?Sized>(&self, model: &M, level: usize) -> CoordinateLayout {
        CoordinateLayout::new(model.aux_arity(), 2 * self.steps(level))
    }

    /// Generating vector of the top level.
    pub fn top_vector<M: Model + ?Sized>(&self, model: &M) -> Result<GeneratingVector> {
        self.layout(model, self.levels).korobov(self.korobov_base, self.ordering)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 < 1 || self.p0 < 1 {
            return Err(Error::Config("n0 and p0 must be at least 1".into()));
        }
        if self.n0 as usize + self.levels + 1 >= 40 || self.p0 as usize + self.levels >= 40 {
            return Err(Error::Config("level hierarchy too deep".into()));
        }
        if self.samples.len() != self.levels + 1 {
            return Err(Error::Config(format!(
                "expected {} per-level sample counts, got {}",
                self.levels + 1,
                self.samples.len()
            )));
        }
        if self.samples.contains(&0) {
            return Err(Error::Config("every level needs at least one sample".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("final time must be positive".into()));
        }
        Ok(())
    }
}

/// Per-level statistics of `Phi^l - Psi^l` (`Phi^0` at level 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub mean: f64,
    pub variance: Option<f64>,
    pub phi_mean: f64,
    pub phi_variance: Option<f64>,
    /// Absent at level 0.
    pub psi_mean: Option<f64>,
    pub psi_variance: Option<f64>,
    /// Kernel evaluations of one sample.
    pub cost: Cost,
    pub samples: usize,
}

impl LevelStats {
    pub fn standard_error(&self) -> Option<f64> {
        self.variance.map(|v| (v / self.samples as f64).sqrt())
    }
}

/// Kernel evaluations of one level-`l` sample: `Phi^l` runs `(P_l, 2N_l)`
/// and `(P_l, N_l)` systems, `Psi^l` two `(P_l/2, N_l)` and two
/// `(P_l/2, N_l/2)` systems.
pub fn level_sample_cost<M: Model + ?Sized>(model: &M, cfg: &LevelConfig, level: usize) -> Cost {
    let (p, n) = (cfg.particles(level), cfg.steps(level));
    let mut c = system_cost(model, p, 2 * n) + system_cost(model, p, n);
    if level > 0 {
        let half = system_cost(model, p / 2, n) + system_cost(model, p / 2, n / 2);
        c += half + half;
    }
    c
}

/// Lattice of level `l`: the top vector cut `L - l` times, with `P_l` points.
pub fn level_points<M: Model + ?Sized>(model: &M, cfg: &LevelConfig, level: usize) -> Result<PointSet> {
    if level > cfg.levels {
        return Err(Error::Config(format!("level {level} above top level {}", cfg.levels)));
    }
    let mut z = cfg.top_vector(model)?;
    for l in (level + 1..=cfg.levels).rev() {
        z = z.cut(&cfg.layout(model, l))?;
    }
    let expected = cfg.layout(model, level).dim();
    if z.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: z.dim(),
        });
    }
    lattice_points(&z, cfg.particles(level))
}

fn system_average<M: Model + ?Sized>(
    model: &M,
    cfg: &LevelConfig,
    g: Observable,
    shifted: &PointSet,
) -> Result<f64> {
    let inputs = ParticleInputs::from_points(model, shifted, cfg.horizon, cfg.ordering)?;
    let states = evolve(model, &inputs, cfg.kernel, Execution::Sequential, None)?;
    Ok(g.mean(&states))
}

fn observable<M: Model + ?Sized>(model: &M, cfg: &LevelConfig) -> Observable {
    cfg.observable.unwrap_or_else(|| model.default_observable())
}

fn check_shift(points: &PointSet, shift: &Shift) -> Result<()> {
    if points.dim() != shift.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            found: shift.dim(),
        });
    }
    Ok(())
}

/// `2 avg g(X^{P_l, 2N_l}(zeta, U)) - avg g(X^{P_l, N_l}(zeta_:2, U_:2))`.
pub fn phi_level<M: Model + ?Sized>(
    model: &M,
    cfg: &LevelConfig,
    level: usize,
    shift: &Shift,
) -> Result<f64> {
    let points = level_points(model, cfg, level)?;
    check_shift(&points, shift)?;
    let shifted = shift_points(&points, shift)?;
    phi_from_shifted(model, cfg, level, &shifted)
}

fn phi_from_shifted<M: Model + ?Sized>(
    model: &M,
    cfg: &LevelConfig,
    level: usize,
    shifted: &PointSet,
) -> Result<f64> {
    let g = observable(model, cfg);
    let fine = system_average(model, cfg, g, shifted)?;
    let coarse = system_average(model, cfg, g, &shifted.cut(&cfg.layout(model, level))?)?;
    Ok(2.0 * fine - coarse)
}

/// Average over the halves `h` of the once-cut points of
/// `2 avg g(X^{P_(l-1), N_l}(half h)) - avg g(X^{P_(l-1), N_(l-1)}(half h cut))`.
pub fn psi_level<M: Model + ?Sized>(
    model: &M,
    cfg: &LevelConfig,
    level: usize,
    shift: &Shift,
) -> Result<f64> {
    let points = level_points(model, cfg, level)?;
    check_shift(&points, shift)?;
    let shifted = shift_points(&points, shift)?;
    psi_from_shifted(model, cfg, level, &shifted)
}

fn psi_from_shifted<M: Model + ?Sized>(
    model: &M,
    cfg: &LevelConfig,
    level: usize,
    shifted: &PointSet,
) -> Result<f64> {
    if level == 0 {
        return Err(Error::Config("Psi is undefined on level 0".into()));
    }
    let g = observable(model, cfg);
    let once_layout = cfg.layout(model, level).halved()?;
    let once = shifted.cut(&cfg.layout(model, level))?;
    let (even, odd) = split_even_odd(&once)?;
    let mut total = 0.0;
    for half in [&even, &odd] {
        let fine = system_average(model, cfg, g, half)?;
        let coarse = system_average(model, cfg, g, &half.cut(&once_layout)?)?;
        total += 2.0 * fine - coarse;
    }
    Ok(0.5 * total)
}

/// `(Phi^l, Psi^l)` of one level sample; `Psi` is absent on level 0.
pub type LevelSample = (f64, Option<f64>);

/// `(Phi^l, Psi^l)` for sample `index`, both on the same shift.
pub fn level_sample<M: Model + ?Sized>(
    model: &M,
    cfg: &LevelConfig,
    level: usize,
    points: &PointSet,
    index: usize,
) -> Result<LevelSample> {
    let shift = Shift::draw(cfg.seed, Purpose::MlqmcShift, level as u64, index as u64, points.dim());
    let shifted = shift_points(points, &shift)?;
    let phi = phi_from_shifted(model, cfg, level, &shifted)?;
    let psi = if level > 0 {
        Some(psi_from_shifted(model, cfg, level, &shifted)?)
    } else {
        None
    };
    Ok((phi, psi))
}

/// Runs `samples` samples of level `l` and summarizes them.
pub fn run_level<M: Model + ?Sized>(
    model: &M,
    cfg: &LevelConfig,
    level: usize,
    samples: usize,
) -> Result<(LevelStats, Vec<LevelSample>)> {
    let points = level_points(model, cfg, level)?;
    let raw = cfg
        .execution
        .try_map(samples, |j| level_sample(model, cfg, level, &points, j))?;
    let phi: Vec<f64> = raw.iter().map(|s| s.0).collect();
    let (phi_mean, phi_variance) = mean_and_variance(&phi);
    let (mean, variance, psi_mean, psi_variance) = if level == 0 {
        (phi_mean, phi_variance, None, None)
    } else {
        let psi: Vec<f64> = raw.iter().map(|s| s.1.unwrap_or(f64::NAN)).collect();
        let diff: Vec<f64> = phi.iter().zip(&psi).map(|(a, b)| a - b).collect();
        let (dm, dv) = mean_and_variance(&diff);
        let (pm, pv) = mean_and_variance(&psi);
        (dm, dv, Some(pm), pv)
    };
    Ok((
        LevelStats {
            level,
            mean,
            variance,
            phi_mean,
            phi_variance,
            psi_mean,
            psi_variance,
            cost: level_sample_cost(model, cfg, level),
            samples,
        },
        raw,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlqmcResult {
    pub value: f64,
    /// `sqrt(sum_l V_l / M_l)`, absent if some level had a single sample.
    pub standard_error: Option<f64>,
    pub levels: Vec<LevelStats>,
    pub total_cost: Cost,
    pub wall_time: f64,
}

/// `mean Phi^0 + sum_{l >= 1} mean(Phi^l - Psi^l)`.
pub fn mlqmc_estimator<M: Model + ?Sized>(model: &M, cfg: &LevelConfig) -> Result<MlqmcResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut levels = Vec::with_capacity(cfg.levels + 1);
    for l in 0..=cfg.levels {
        levels.push(run_level(model, cfg, l, cfg.samples[l])?.0);
    }
    let value = levels.iter().map(|s| s.mean).sum();
    let standard_error = levels
        .iter()
        .map(|s| s.variance.map(|v| v / s.samples as f64))
        .sum::<Option<f64>>()
        .map(f64::sqrt);
    let total_cost = levels
        .iter()
        .map(|s| {
            let m = s.samples as u64;
            Cost {
                kernel_evals: s.cost.kernel_evals * m,
                diffusion_kernel_evals: s.cost.diffusion_kernel_evals * m,
                drift_evals: s.cost.drift_evals * m,
            }
        })
        .sum();
    Ok(MlqmcResult {
        value,
        standard_error,
        levels,
        total_cost,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Estimates the per-level variances from `probe` samples on every level.
pub fn level_variance_study<M: Model + ?Sized>(
    model: &M,
    cfg: &LevelConfig,
    probe: usize,
) -> Result<Vec<LevelStats>> {
    if probe < 2 {
        return Err(Error::Config("a variance probe needs at least two samples".into()));
    }
    let cfg = LevelConfig {
        samples: vec![probe; cfg.levels + 1],
        ..cfg.clone()
    };
    cfg.validate()?;
    (0..=cfg.levels)
        .map(|l| run_level(model, &cfg, l, probe).map(|r| r.0))
        .collect()
}

/// Standard MLMC allocation `M_l = ceil(eps^-2 sqrt(V_l / C_l) sum_k sqrt(V_k C_k))`
/// for a target standard error `eps`.
pub fn allocate_samples(stats: &[LevelStats], target_se: f64) -> Result<Vec<usize>> {
    if !(target_se > 0.0) {
        return Err(Error::Config("target standard error must be positive".into()));
    }
    let vc: Vec<(f64, f64)> = stats
        .iter()
        .map(|s| {
            let v = s.variance.ok_or_else(|| {
                Error::Config(format!("level {} has no variance estimate", s.level))
            })?;
            Ok((v.max(0.0), s.cost.total_kernel_evals().max(1) as f64))
        })
        .collect::<Result<_>>()?;
    let sum: f64 = vc.iter().map(|(v, c)| (v * c).sqrt()).sum();
    Ok(vc
        .iter()
        .map(|(v, c)| ((sum * (v / c).sqrt()) / (target_se * target_se)).ceil().max(1.0) as usize)
        .collect())
}
