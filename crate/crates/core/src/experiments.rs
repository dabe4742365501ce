//! Parameter sweeps, rate fits, reference caching and CSV output.
//!
//! A sweep is described by a [`SweepSpec`] (usually read from JSON) and
//! produces a [`Table`] plus the slope checks it was asked to perform. Every
//! sweep point draws its randomness from `(seed, value)`, so a table is a pure
//! function of its spec.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lowdisc::{
    korobov_vector, lattice_points, shift_points, sup_shifted_discrepancy_1d, BridgeOrdering,
    PointSet, Shift, DEFAULT_KOROBOV_BASE,
};
use crate::mlqmc::{level_variance_study, LevelConfig};
use crate::models::{ou_euler_moment2, ou_exact_moment2, BuiltinModel, Model, Observable};
use crate::particle::{
    evolve, mean_and_variance, single_level_estimator, KernelMode, Mode, ParticleInputs,
    SystemConfig,
};
use crate::seeding::{stream_key, stream_rng, Purpose};

/// Least-squares fit of `log2 y = slope * log2 x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the `log2` residuals.
    pub residual: f64,
    pub points: usize,
}

pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::Config(format!(
            "a rate fit needs at least 3 points, got {}",
            xs.len()
        )));
    }
    for &v in xs.iter().chain(ys) {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain {
                value: v,
                domain: "positive finite reals",
            });
        }
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.log2()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log2()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("a rate fit needs at least two distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
        points: xs.len(),
    })
}

/// `{:.16e}`: 17 significant digits, enough to round-trip an `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
}

impl Cell {
    pub fn value(self) -> f64 {
        match self {
            Cell::Int(i) => i as f64,
            Cell::Float(v) => v,
        }
    }

    fn render(self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(v) => format_float(v),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j].value()).collect())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.render())).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// `|mean - reference|` against a reference value.
    WeakError,
    /// Sample variance over shifts with a bootstrap interval.
    Variance,
    /// Per-level variance of `Phi^l - Psi^l`.
    MlqmcVariance,
    /// Weak, strong and variance errors of a mean-field ODE.
    MfodeRates,
    /// Richardson extrapolation `2 I_2P - I_P` of the i.i.d. estimator.
    Richardson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    P,
    N,
    #[serde(rename = "level")]
    Level,
}

impl SweepVariable {
    fn column(self) -> &'static str {
        match self {
            SweepVariable::P => "P",
            SweepVariable::N => "N",
            SweepVariable::Level => "level",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McReference {
    #[serde(default = "McReference::default_particles")]
    pub particles: usize,
    #[serde(default = "McReference::default_steps")]
    pub steps: usize,
    pub samples: usize,
    #[serde(default = "McReference::default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub korobov_base: Option<u64>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl McReference {
    fn default_particles() -> usize {
        1 << 13
    }
    fn default_steps() -> usize {
        1 << 9
    }
    fn default_mode() -> Mode {
        Mode::IidMc
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceSource {
    #[default]
    None,
    /// Closed-form OU moment of the continuous mean-field limit.
    ExactOu,
    /// OU moment of the Euler scheme's mean-field limit at the sweep's `N`.
    EulerOu,
    /// Large particle-system run, cached on disk.
    CachedMcReference(McReference),
    /// Deterministic mean-field ODE solve, Richardson-extrapolated in time.
    MeanFieldSolve {
        #[serde(default = "default_meanfield_particles")]
        particles: usize,
        #[serde(default = "default_meanfield_steps")]
        steps: usize,
    },
}

fn default_meanfield_particles() -> usize {
    1 << 13
}

fn default_meanfield_steps() -> usize {
    1 << 12
}

/// Slope bound on one column; rows failing the filters are left out of the
/// fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeCheck {
    pub column: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    /// Drop rows whose `resolved` column is 0.
    #[serde(default)]
    pub resolved_only: bool,
    /// Drop rows whose value is at or below this level (round-off floor).
    #[serde(default)]
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDef {
    pub kind: SweepKind,
    #[serde(default)]
    pub variable: Option<SweepVariable>,
    pub values: Vec<usize>,
    #[serde(default)]
    pub reference: ReferenceSource,
    #[serde(default)]
    pub accept: Vec<SlopeCheck>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default, rename = "T", alias = "horizon")]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedConfig {
    #[serde(default, rename = "P")]
    pub particles: Option<usize>,
    #[serde(default, rename = "N")]
    pub steps: Option<usize>,
    #[serde(default, rename = "M")]
    pub samples: Option<usize>,
    /// Per-value sample counts, aligned with the sweep values; overrides `M`.
    #[serde(default, rename = "M_values")]
    pub samples_per_value: Option<Vec<usize>>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub observable: Option<Observable>,
    #[serde(default)]
    pub korobov_base: Option<u64>,
    #[serde(default)]
    pub ordering: Option<BridgeOrdering>,
    #[serde(default)]
    pub kernel: Option<KernelMode>,
    #[serde(default)]
    pub n0: Option<u32>,
    #[serde(default)]
    pub p0: Option<u32>,
    /// Bootstrap resamples for variance intervals.
    #[serde(default)]
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub model: String,
    #[serde(default)]
    pub params: ModelParams,
    pub sweep: SweepDef,
    #[serde(default)]
    pub fixed: FixedConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn build_model(&self) -> Result<BuiltinModel> {
        BuiltinModel::from_name(&self.model, self.params.kappa, self.params.sigma)
    }

    pub fn horizon(&self) -> f64 {
        self.params.horizon.unwrap_or(1.0)
    }

    fn variable(&self) -> SweepVariable {
        self.sweep.variable.unwrap_or(match self.sweep.kind {
            SweepKind::MlqmcVariance => SweepVariable::Level,
            _ => SweepVariable::P,
        })
    }

    fn observable<M: Model + ?Sized>(&self, model: &M) -> Observable {
        self.fixed.observable.unwrap_or_else(|| model.default_observable())
    }

    /// Root seed of the sweep point with value `v`.
    pub fn point_seed(&self, v: usize) -> u64 {
        stream_key(self.seed, Purpose::SweepPoint, 0, v as u64)
    }

    fn system_config(&self, v: usize, mode_default: Mode) -> Result<SystemConfig> {
        let (p, n) = match self.variable() {
            SweepVariable::P => (v, self.fixed.steps.unwrap_or(64)),
            SweepVariable::N => (self.fixed.particles.unwrap_or(256), v),
            SweepVariable::Level => {
                return Err(Error::Config(
                    "level sweeps are only available for mlqmc-variance".into(),
                ))
            }
        };
        let mut cfg = SystemConfig::new(p, n, self.horizon(), self.samples_for(v), self.point_seed(v))
            .with_mode(self.fixed.mode.unwrap_or(mode_default));
        if let Some(g) = self.fixed.observable {
            cfg = cfg.with_observable(g);
        }
        if let Some(k) = self.fixed.kernel {
            cfg = cfg.with_kernel(k);
        }
        if let Some(o) = self.fixed.ordering {
            cfg = cfg.with_ordering(o);
        }
        if let Some(g) = self.fixed.korobov_base {
            cfg.korobov_base = g;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn samples_for(&self, v: usize) -> usize {
        let i = self.sweep.values.iter().position(|&x| x == v);
        match (&self.fixed.samples_per_value, i) {
            (Some(m), Some(i)) => m[i],
            _ => self.fixed.samples.unwrap_or(64),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(m) = &self.fixed.samples_per_value {
            if m.len() != self.sweep.values.len() {
                return Err(Error::Config("M_values must have one entry per sweep value".into()));
            }
        }
        if self.sweep.values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        let mut sorted = self.sweep.values.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.sweep.values.len() {
            return Err(Error::Config("sweep values must be distinct".into()));
        }
        if !(self.horizon() > 0.0) {
            return Err(Error::Config("T must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub column: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Absent when fewer than 3 rows survived the filters.
    pub fit: Option<RateFit>,
    pub excluded: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub table: Table,
    pub checks: Vec<CheckResult>,
    /// Reference value and its standard error, when one was used.
    pub reference: Option<(f64, f64)>,
    pub wall_time: f64,
}

impl SweepOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "passed": self.passed(),
            "checks": self.checks,
            "reference": self.reference.map(|(v, se)| serde_json::json!({"value": v, "standard_error": se})),
            "runtime": self.wall_time,
        })
    }

    /// Path of the summary written next to `csv_path`.
    pub fn summary_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("summary.json")
    }

    /// Writes the CSV to `csv_path` and the summary to `summary_path`.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        self.table.write_csv(csv_path)?;
        fs::write(
            Self::summary_path(csv_path),
            serde_json::to_string_pretty(&self.summary_json())?,
        )?;
        Ok(())
    }
}

/// Applies one slope check to a table.
pub fn check_slope(table: &Table, check: &SlopeCheck, x_column: &str) -> Result<CheckResult> {
    let mut xs = table
        .column(x_column)
        .ok_or_else(|| Error::Config(format!("no column {x_column:?}")))?;
    // Levels are exponents: the slope is taken against log2 of the work.
    if x_column == SweepVariable::Level.column() {
        xs.iter_mut().for_each(|l| *l = l.exp2());
    }
    let ys = table
        .column(&check.column)
        .ok_or_else(|| Error::Config(format!("no column {:?}", check.column)))?;
    let resolved = if check.resolved_only {
        Some(
            table
                .column("resolved")
                .ok_or_else(|| Error::Config("table has no resolved column".into()))?,
        )
    } else {
        None
    };
    let mut fx = Vec::new();
    let mut fy = Vec::new();
    for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
        let keep = resolved.as_ref().is_none_or(|r| r[i] != 0.0)
            && check.floor.is_none_or(|f| y > f)
            && y > 0.0;
        if keep {
            fx.push(x);
            fy.push(y);
        }
    }
    let fit = if fx.len() >= 3 { Some(fit_rate(&fx, &fy)?) } else { None };
    let passed = fit.is_some_and(|f| {
        check.min.is_none_or(|lo| f.slope >= lo) && check.max.is_none_or(|hi| f.slope <= hi)
    });
    Ok(CheckResult {
        column: check.column.clone(),
        min: check.min,
        max: check.max,
        fit,
        excluded: xs.len() - fx.len(),
        passed,
    })
}

/// Runs the sweep described by `spec`.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let start = Instant::now();
    let (table, reference) = match spec.sweep.kind {
        SweepKind::WeakError => {
            let (t, r) = run_weak_error_sweep(spec)?;
            (t, Some(r))
        }
        SweepKind::Variance => (run_variance_sweep(spec)?, None),
        SweepKind::MlqmcVariance => (run_mlqmc_variance_sweep(spec)?, None),
        SweepKind::MfodeRates => {
            let (t, r) = run_mfode_rate_tests(spec)?;
            (t, Some((r, 0.0)))
        }
        SweepKind::Richardson => (run_richardson_sweep(spec)?, None),
    };
    let x = spec.variable().column();
    let checks = spec
        .sweep
        .accept
        .iter()
        .map(|c| check_slope(&table, c, x))
        .collect::<Result<_>>()?;
    Ok(SweepOutcome {
        table,
        checks,
        reference,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn ou_params(model: &BuiltinModel) -> Result<crate::models::OuParams> {
    match model {
        BuiltinModel::Ou(m) => Ok(m.params),
        _ => Err(Error::MissingReference(format!(
            "closed-form references exist only for the OU model, not {:?}",
            model.name()
        ))),
    }
}

/// OU moments of the continuous (`steps = None`) or Euler mean-field limit.
fn ou_reference(params: &crate::models::OuParams, g: Observable, t: f64, steps: Option<usize>) -> Result<f64> {
    match g {
        Observable::Identity => Ok(params.initial_mean),
        Observable::Square => Ok(match steps {
            None => ou_exact_moment2(params, t),
            Some(n) => ou_euler_moment2(params, t, n),
        }),
        Observable::Constant(c) => Ok(c),
        Observable::Gauss => Err(Error::MissingReference(
            "no closed form for the Gauss observable of OU".into(),
        )),
    }
}

/// Cache key of an expensive reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReferenceKey {
    model: String,
    params: ModelParams,
    observable: Observable,
    particles: usize,
    steps: usize,
    samples: usize,
    mode: Mode,
    korobov_base: u64,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedReference {
    key: ReferenceKey,
    mean: f64,
    standard_error: f64,
    wall_time: f64,
}

impl ReferenceKey {
    fn file_name(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        Ok(format!("{}-{hex}.json", self.model))
    }
}

/// Default location of cached references.
pub const DEFAULT_CACHE_DIR: &str = "mvqmc-cache";

/// Mean and standard error of a large reference run, computed once and then
/// read back from `cache_dir`.
pub fn cached_reference(spec: &SweepSpec, r: &McReference) -> Result<(f64, f64)> {
    let model = spec.build_model()?;
    let g = spec.observable(&model);
    let base = r
        .korobov_base
        .or(spec.fixed.korobov_base)
        .unwrap_or(DEFAULT_KOROBOV_BASE);
    let key = ReferenceKey {
        model: spec.model.clone(),
        params: ModelParams {
            horizon: Some(spec.horizon()),
            ..spec.params.clone()
        },
        observable: g,
        particles: r.particles,
        steps: r.steps,
        samples: r.samples,
        mode: r.mode,
        korobov_base: base,
        seed: stream_key(spec.seed, Purpose::Reference, 0, 0),
    };
    let dir = r
        .cache_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR));
    let path = dir.join(key.file_name()?);
    if let Ok(text) = fs::read_to_string(&path) {
        let cached: CachedReference = serde_json::from_str(&text)?;
        if cached.key == key {
            return Ok((cached.mean, cached.standard_error));
        }
    }
    if r.samples < 2 {
        return Err(Error::Config("a reference needs at least two samples".into()));
    }
    let mut cfg = SystemConfig::new(r.particles, r.steps, spec.horizon(), r.samples, key.seed)
        .with_mode(r.mode)
        .with_observable(g);
    cfg.korobov_base = base;
    if let Some(k) = spec.fixed.kernel {
        cfg = cfg.with_kernel(k);
    }
    if let Some(o) = spec.fixed.ordering {
        cfg = cfg.with_ordering(o);
    }
    let res = single_level_estimator(&model, &cfg)?;
    let se = res.standard_error().unwrap_or(0.0);
    let cached = CachedReference {
        key,
        mean: res.mean,
        standard_error: se,
        wall_time: res.wall_time,
    };
    fs::create_dir_all(&dir)?;
    fs::write(&path, serde_json::to_string_pretty(&cached)?)?;
    Ok((res.mean, se))
}

/// Weak-error sweep. Columns: `<var>,error,standard_error,estimate,reference,
/// reference_standard_error,resolved`; `resolved` is 0 when the error lies
/// within three combined standard errors of zero (estimate and reference
/// uncertainty added in quadrature), so it cannot be told apart from noise.
pub fn run_weak_error_sweep(spec: &SweepSpec) -> Result<(Table, (f64, f64))> {
    let model = spec.build_model()?;
    let g = spec.observable(&model);
    let t = spec.horizon();
    let fixed_ref = match &spec.sweep.reference {
        ReferenceSource::None => {
            return Err(Error::MissingReference("weak-error sweeps need a reference".into()))
        }
        ReferenceSource::ExactOu => Some((ou_reference(&ou_params(&model)?, g, t, None)?, 0.0)),
        ReferenceSource::EulerOu => None,
        ReferenceSource::CachedMcReference(r) => Some(cached_reference(spec, r)?),
        ReferenceSource::MeanFieldSolve { .. } => {
            return Err(Error::Config(
                "mean-field-solve references belong to mfode-rates sweeps".into(),
            ))
        }
    };
    let var = spec.variable();
    let mut table = Table::new(&[
        var.column(),
        "error",
        "standard_error",
        "estimate",
        "reference",
        "reference_standard_error",
        "resolved",
    ]);
    let rows = Execution::default().try_map(spec.sweep.values.len(), |i| -> Result<Vec<Cell>> {
        let v = spec.sweep.values[i];
        let cfg = spec.system_config(v, Mode::QmcCoupled)?;
        let (reference, ref_se) = match fixed_ref {
            Some(r) => r,
            None => (ou_reference(&ou_params(&model)?, g, t, Some(cfg.steps))?, 0.0),
        };
        let res = single_level_estimator(&model, &cfg)?;
        let error = (res.mean - reference).abs();
        let se = res.standard_error().unwrap_or(f64::NAN);
        let band = 3.0 * (se * se + ref_se * ref_se).sqrt();
        Ok(vec![
            v.into(),
            error.into(),
            se.into(),
            res.mean.into(),
            reference.into(),
            ref_se.into(),
            (error >= band).into(),
        ])
    })?;
    for r in rows {
        table.push(r);
    }
    let reference = fixed_ref.unwrap_or((f64::NAN, 0.0));
    Ok((table, reference))
}

/// Percentile bootstrap interval (95%) for the sample variance.
pub fn bootstrap_variance_interval(values: &[f64], resamples: usize, seed: u64, index: u64) -> Result<(f64, f64)> {
    if values.len() < 2 || resamples < 2 {
        return Err(Error::Config("bootstrap needs at least two values and two resamples".into()));
    }
    let mut rng = stream_rng(seed, Purpose::Bootstrap, 0, index);
    let n = values.len();
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..n)];
            }
            mean_and_variance(&buf).1.unwrap_or(0.0)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| stats[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok((q(0.025), q(0.975)))
}

/// Variance sweep. Columns: `<var>,variance,ci_low,ci_high,samples`.
pub fn run_variance_sweep(spec: &SweepSpec) -> Result<Table> {
    let model = spec.build_model()?;
    let resamples = spec.fixed.bootstrap.unwrap_or(1000);
    let var = spec.variable();
    let mut table = Table::new(&[var.column(), "variance", "ci_low", "ci_high", "samples"]);
    let rows = Execution::default().try_map(spec.sweep.values.len(), |i| -> Result<Vec<Cell>> {
        let v = spec.sweep.values[i];
        let cfg = spec.system_config(v, Mode::QmcCoupled)?;
        if cfg.samples < 2 {
            return Err(Error::Config("variance sweeps need M >= 2".into()));
        }
        let res = single_level_estimator(&model, &cfg)?;
        let variance = res.sample_variance.unwrap_or(0.0);
        let (lo, hi) = bootstrap_variance_interval(&res.per_shift, resamples, spec.seed, v as u64)?;
        Ok(vec![v.into(), variance.into(), lo.into(), hi.into(), cfg.samples.into()])
    })?;
    for r in rows {
        table.push(r);
    }
    Ok(table)
}

/// Level-variance sweep. Columns: `level,variance,cost`, where `cost` counts
/// the kernel evaluations of one level sample. The top level is the largest
/// listed level.
pub fn run_mlqmc_variance_sweep(spec: &SweepSpec) -> Result<Table> {
    let model = spec.build_model()?;
    let top = *spec.sweep.values.iter().max().unwrap_or(&0);
    let probe = spec.fixed.samples.unwrap_or(64);
    let mut cfg = LevelConfig::new(
        top,
        spec.fixed.n0.unwrap_or(2),
        spec.fixed.p0.unwrap_or(2),
        vec![probe; top + 1],
        spec.horizon(),
        spec.point_seed(top),
    );
    cfg.observable = spec.fixed.observable;
    if let Some(g) = spec.fixed.korobov_base {
        cfg.korobov_base = g;
    }
    if let Some(o) = spec.fixed.ordering {
        cfg.ordering = o;
    }
    if let Some(k) = spec.fixed.kernel {
        cfg.kernel = k;
    }
    let stats = level_variance_study(&model, &cfg, probe)?;
    let mut table = Table::new(&["level", "variance", "cost"]);
    for &l in &spec.sweep.values {
        let s = &stats[l];
        table.push(vec![
            l.into(),
            s.variance.unwrap_or(0.0).into(),
            s.cost.total_kernel_evals().into(),
        ]);
    }
    Ok(table)
}

/// Final states of a noiseless, aux-free model started from `initial`,
/// together with the kernel features averaged over the ensemble at every
/// step. The features let any further particle be advanced under this
/// ensemble's empirical measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldFlow {
    pub steps: usize,
    pub horizon: f64,
    pub rank: usize,
    pub features: Vec<f64>,
    pub final_states: Vec<f64>,
}

impl MeanFieldFlow {
    pub fn solve<M: Model + ?Sized>(model: &M, initial: &[f64], steps: usize, horizon: f64) -> Result<Self> {
        let rank = model.separable_rank();
        if rank == 0 || model.has_noise() || model.aux_arity() > 0 {
            return Err(Error::Config(
                "mean-field flows need a noiseless, aux-free model with a separable kernel".into(),
            ));
        }
        let dt = horizon / steps as f64;
        let inv = 1.0 / initial.len() as f64;
        let mut x = initial.to_vec();
        let mut features = Vec::with_capacity(steps * rank);
        let mut phi = vec![0.0; rank];
        for n in 0..steps {
            let mut mean = vec![0.0; rank];
            for &y in &x {
                model.kernel_features(y, &mut phi);
                for (m, f) in mean.iter_mut().zip(&phi) {
                    *m += f;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv);
            for (p, xp) in x.iter_mut().enumerate() {
                let k = model.kernel_from_features(*xp, &mean);
                *xp += model.drift(*xp, k, &[]) * dt;
                if !xp.is_finite() {
                    return Err(Error::NonFinite { particle: p, step: n });
                }
            }
            features.extend_from_slice(&mean);
        }
        Ok(Self {
            steps,
            horizon,
            rank,
            features,
            final_states: x,
        })
    }

    /// Advances one particle from `x0` under the recorded measure.
    pub fn advance<M: Model + ?Sized>(&self, model: &M, x0: f64) -> f64 {
        let dt = self.horizon / self.steps as f64;
        let mut x = x0;
        for f in self.features.chunks_exact(self.rank) {
            x += model.drift(x, model.kernel_from_features(x, f), &[]) * dt;
        }
        x
    }
}

/// Richardson-extrapolated (in time) mean-field solution on `steps` and
/// `steps / 2` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldReference {
    pub fine: MeanFieldFlow,
    pub coarse: MeanFieldFlow,
    pub value: f64,
}

impl MeanFieldReference {
    /// Reference ensemble on the midpoints `(k + 1/2) / particles`.
    pub fn build<M: Model + ?Sized>(
        model: &M,
        g: Observable,
        particles: usize,
        steps: usize,
        horizon: f64,
    ) -> Result<Self> {
        if steps < 2 || !steps.is_multiple_of(2) {
            return Err(Error::OddLength { what: "reference steps", value: steps });
        }
        let initial: Vec<f64> = (0..particles)
            .map(|k| model.initial((k as f64 + 0.5) / particles as f64))
            .collect();
        let fine = MeanFieldFlow::solve(model, &initial, steps, horizon)?;
        let coarse = MeanFieldFlow::solve(model, &initial, steps / 2, horizon)?;
        let value = 2.0 * g.mean(&fine.final_states) - g.mean(&coarse.final_states);
        Ok(Self { fine, coarse, value })
    }

    /// Richardson-extrapolated tracer started from `x0`.
    pub fn tracer<M: Model + ?Sized>(&self, model: &M, x0: f64) -> f64 {
        2.0 * self.fine.advance(model, x0) - self.coarse.advance(model, x0)
    }
}

/// One mean-field ODE sweep point: the per-shift weak estimates and the
/// summed squared strong errors.
struct MfodePoint {
    estimates: Vec<f64>,
    strong_mse: f64,
}

fn mfode_point<M: Model + ?Sized>(
    model: &M,
    g: Observable,
    points: &PointSet,
    shifts: &[Shift],
    reference: &MeanFieldReference,
) -> Result<MfodePoint> {
    if !points.is_lattice() || points.dim() != 1 {
        return Err(Error::NotALattice(
            "mean-field ODE rates need a one-dimensional lattice (a finite group)",
        ));
    }
    let steps = reference.fine.steps;
    let horizon = reference.fine.horizon;
    let p = points.len();
    let per_shift = Execution::default().try_map(shifts.len(), |i| -> Result<(f64, f64)> {
        let shifted = shift_points(points, &shifts[i])?;
        let initial: Vec<f64> = shifted.coords().iter().map(|&u| model.initial(u)).collect();
        let run = |n: usize| {
            let inputs = ParticleInputs {
                particles: p,
                steps: n,
                horizon,
                aux_arity: 0,
                initial: initial.clone(),
                aux: Vec::new(),
                increments: Vec::new(),
            };
            evolve(model, &inputs, KernelMode::Separable, Execution::Sequential, None)
        };
        let fine = run(steps)?;
        let coarse = run(steps / 2)?;
        let estimate = 2.0 * g.mean(&fine) - g.mean(&coarse);
        let sq: f64 = (0..p)
            .map(|k| {
                let x = 2.0 * fine[k] - coarse[k];
                let z = reference.tracer(model, initial[k]);
                (x - z) * (x - z)
            })
            .sum();
        Ok((estimate, sq / p as f64))
    })?;
    let strong_mse = per_shift.iter().map(|s| s.1).sum::<f64>() / shifts.len() as f64;
    Ok(MfodePoint {
        estimates: per_shift.into_iter().map(|s| s.0).collect(),
        strong_mse,
    })
}

/// Mean-field ODE rates. Columns:
/// `P,weak_error,strong_error,variance,sup_discrepancy`. Every system is
/// solved on `N` and `N/2` steps and extrapolated in time, as is the
/// reference, so the time discretization cancels to leading order.
pub fn run_mfode_rate_tests(spec: &SweepSpec) -> Result<(Table, f64)> {
    let model = spec.build_model()?;
    if spec.variable() != SweepVariable::P {
        return Err(Error::Config("mfode-rates sweeps vary P".into()));
    }
    let (ref_particles, steps) = match spec.sweep.reference {
        ReferenceSource::MeanFieldSolve { particles, steps } => (particles, steps),
        ReferenceSource::None => (default_meanfield_particles(), default_meanfield_steps()),
        _ => {
            return Err(Error::Config(
                "mfode-rates sweeps use a mean-field-solve reference".into(),
            ))
        }
    };
    let g = spec.observable(&model);
    let reference = MeanFieldReference::build(&model, g, ref_particles, steps, spec.horizon())?;
    let samples = spec.fixed.samples.unwrap_or(16);
    let z = korobov_vector(spec.fixed.korobov_base.unwrap_or(DEFAULT_KOROBOV_BASE), 1)?;
    let mut table = Table::new(&["P", "weak_error", "strong_error", "variance", "sup_discrepancy"]);
    for &p in &spec.sweep.values {
        let points = lattice_points(&z, p)?;
        let seed = spec.point_seed(p);
        let shifts: Vec<Shift> = (0..samples)
            .map(|i| Shift::draw(seed, Purpose::SingleLevelShift, 0, i as u64, 1))
            .collect();
        let pt = mfode_point(&model, g, &points, &shifts, &reference)?;
        let (mean, variance) = mean_and_variance(&pt.estimates);
        let disc = sup_shifted_discrepancy_1d(points.coords(), 64 * p)?;
        table.push(vec![
            p.into(),
            (mean - reference.value).abs().into(),
            pt.strong_mse.sqrt().into(),
            variance.unwrap_or(0.0).into(),
            disc.into(),
        ]);
    }
    Ok((table, reference.value))
}

/// Richardson extrapolation in `P`. For each `P`, `M` independent pairs
/// `(I_P, I_2P)` give `2 I_2P - I_P`. Columns:
/// `P,mean_squared_error,variance,estimate,standard_error`, where the mean
/// squared error is that of a single extrapolated value.
pub fn run_richardson_sweep(spec: &SweepSpec) -> Result<Table> {
    let model = spec.build_model()?;
    let g = spec.observable(&model);
    if spec.variable() != SweepVariable::P {
        return Err(Error::Config("richardson sweeps vary P".into()));
    }
    let reference = match &spec.sweep.reference {
        ReferenceSource::ExactOu => ou_reference(&ou_params(&model)?, g, spec.horizon(), None)?,
        ReferenceSource::EulerOu => ou_reference(
            &ou_params(&model)?,
            g,
            spec.horizon(),
            Some(spec.fixed.steps.unwrap_or(64)),
        )?,
        ReferenceSource::CachedMcReference(r) => cached_reference(spec, r)?.0,
        _ => return Err(Error::MissingReference("richardson sweeps need a reference".into())),
    };
    let mut table = Table::new(&["P", "mean_squared_error", "variance", "estimate", "standard_error"]);
    for &p in &spec.sweep.values {
        let small = spec.system_config(p, Mode::IidMc)?;
        let mut large = spec.system_config(2 * p, Mode::IidMc)?;
        large.seed = stream_key(spec.point_seed(p), Purpose::SweepPoint, 1, 0);
        let a = single_level_estimator(&model, &small)?;
        let b = single_level_estimator(&model, &large)?;
        let ext: Vec<f64> = a
            .per_shift
            .iter()
            .zip(&b.per_shift)
            .map(|(&ip, &i2p)| crate::particle::richardson_in_p(ip, i2p))
            .collect();
        let (mean, variance) = mean_and_variance(&ext);
        let mse = ext.iter().map(|e| (e - reference) * (e - reference)).sum::<f64>() / ext.len() as f64;
        let variance = variance.unwrap_or(0.0);
        table.push(vec![
            p.into(),
            mse.into(),
            variance.into(),
            mean.into(),
            (variance / ext.len() as f64).sqrt().into(),
        ]);
    }
    Ok(table)
}
