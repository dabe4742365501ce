//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero on any unexpected failure. Criteria that are known not to be
//! attainable print FAIL together with a check of the measured explanation;
//! if that explanation stops holding the failure counts as unexpected.
//!
//! Sweep outputs go to `$MVQMC_RESULTS` (default: a directory under the
//! cargo target dir). Cached references are read from `<workspace>/cache`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::time::Instant;

use mvqmc::bridge::{bridge_path, inv_norm_cdf};
use mvqmc::experiments::{ReferenceSource, SweepOutcome};
use mvqmc::lowdisc::{bridge_node, DEFAULT_KOROBOV_BASE};
use mvqmc::mlqmc::{level_sample_cost, phi_level, psi_level, run_level};
use mvqmc::models::{
    kuramoto_model, ou_euler_moment2, ou_exact_moment2, ou_model, Model, Observable, OuParams,
};
use mvqmc::particle::system_cost;
use mvqmc::seeding::{stream_rng, Purpose};
use mvqmc::{
    fit_rate, lattice_points, run_sweep, single_level_estimator, split_even_odd,
    star_discrepancy_1d, BridgeOrdering, CoordinateLayout, KernelMode, LevelConfig, Shift,
    SweepSpec, SystemConfig,
};
use rand::Rng;

type Res<T> = Result<T, Box<dyn std::error::Error>>;
type Criterion = (&'static str, fn() -> Res<Report>);

const SEED: u64 = 20240601;
const OU_EXACT: f64 = 0.2434183728;

enum Verdict {
    Pass,
    /// Known not attainable; `Ok` when the recorded explanation still holds.
    KnownRed(Result<String, String>),
    Fail,
}

struct Report {
    verdict: Verdict,
    detail: String,
}

impl Report {
    fn check(passed: bool, detail: String) -> Self {
        let verdict = if passed { Verdict::Pass } else { Verdict::Fail };
        Self { verdict, detail }
    }

    /// A failure here is expected when `analysis` holds.
    fn known_red(passed: bool, detail: String, analysis: Result<String, String>) -> Self {
        let verdict = if passed { Verdict::Pass } else { Verdict::KnownRed(analysis) };
        Self { verdict, detail }
    }
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn results_dir() -> PathBuf {
    std::env::var_os("MVQMC_RESULTS")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

fn load_config(name: &str) -> Res<SweepSpec> {
    let mut spec = SweepSpec::load(&workspace().join("configs").join(format!("{name}.json")))?;
    if let ReferenceSource::CachedMcReference(r) = &mut spec.sweep.reference {
        let dir = r.cache_dir.clone().unwrap_or_else(|| "cache".into());
        r.cache_dir = Some(workspace().join(dir));
    }
    spec.output = Some(results_dir().join(format!("{name}.csv")));
    Ok(spec)
}

fn run_spec(spec: &SweepSpec) -> Res<SweepOutcome> {
    let outcome = run_sweep(spec)?;
    if let Some(path) = &spec.output {
        std::fs::create_dir_all(results_dir())?;
        outcome.write(path)?;
    }
    Ok(outcome)
}

fn run_config(name: &str) -> Res<SweepOutcome> {
    run_spec(&load_config(name)?)
}

fn slope_text(o: &SweepOutcome, i: usize) -> String {
    let c = &o.checks[i];
    match &c.fit {
        Some(f) => format!("{} slope {:.3} ({} pts)", c.column, f.slope, f.points),
        None => format!("{} slope unavailable ({} rows excluded)", c.column, c.excluded),
    }
}

fn slope(o: &SweepOutcome, i: usize) -> Option<f64> {
    o.checks[i].fit.as_ref().map(|f| f.slope)
}

fn col(o: &SweepOutcome, name: &str) -> Vec<f64> {
    o.table.column(name).unwrap_or_default()
}

fn analysis(ok: bool, text: String) -> Result<String, String> {
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn lattice_split() -> Res<Report> {
    let mut worst = 0.0f64;
    let mut halves_exact = true;
    for log_p in 3..=10 {
        let p = 1usize << log_p;
        for (aux, bridge) in [(0, 8), (1, 8), (1, 64)] {
            let layout = CoordinateLayout::new(aux, bridge);
            let z = layout.korobov(DEFAULT_KOROBOV_BASE, BridgeOrdering::TimeIndexed)?;
            let ps = lattice_points(&z, p)?;
            let (even, odd) = split_even_odd(&ps)?;
            for (e, o) in even.points().zip(odd.points()) {
                for j in 0..ps.dim() {
                    let step = z.component_mod(j, p) as f64 / p as f64;
                    worst = worst.max((mvqmc::lowdisc::frac(e[j] + step) - o[j]).abs());
                }
            }
            halves_exact &= even.coords() == lattice_points(&z, p / 2)?.coords();
            let cut = lattice_points(&z.cut(&layout)?, p / 2)?;
            halves_exact &= even.cut(&layout)?.coords() == cut.coords();
        }
    }
    Ok(Report::check(
        worst <= 2f64.powi(-50) && halves_exact,
        format!("max shifted-half deviation {worst:.1e}, half lattices exact: {halves_exact}"),
    ))
}

fn grid_star_discrepancy(points: &[f64], grid: usize) -> f64 {
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let p = sorted.len() as f64;
    (0..=grid)
        .map(|i| {
            let x = i as f64 / grid as f64;
            let lt = sorted.partition_point(|&y| y < x) as f64 / p;
            let le = sorted.partition_point(|&y| y <= x) as f64 / p;
            (lt - x).abs().max((le - x).abs())
        })
        .fold(0.0, f64::max)
}

fn star_discrepancy() -> Res<Report> {
    let mut equidistant_exact = true;
    for p in 2..=1024usize {
        let pts: Vec<f64> = (0..p).map(|k| k as f64 / p as f64).collect();
        let d = star_discrepancy_1d(&pts)?;
        // k / P is representable only for powers of two; otherwise the
        // stored points sit within an ulp of the ideal ones.
        equidistant_exact &= if p.is_power_of_two() {
            d == 1.0 / p as f64
        } else {
            (d - 1.0 / p as f64).abs() <= 2.0 * f64::EPSILON
        };
    }
    let mut rng = stream_rng(SEED, Purpose::Test, 0, 1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=64);
        let pts: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        worst = worst.max((star_discrepancy_1d(&pts)? - grid_star_discrepancy(&pts, 100_000)).abs());
    }
    Ok(Report::check(
        equidistant_exact && worst <= 1e-5,
        format!("equidistant exactly 1/P: {equidistant_exact}, max grid-oracle gap {worst:.2e}"),
    ))
}

fn bridge_suite() -> Res<Report> {
    let (n, paths) = (8usize, 100_000usize);
    let mut rng = stream_rng(SEED, Purpose::Test, 0, 2);
    let mut sum = vec![0.0; n + 1];
    let mut cross = vec![0.0; (n + 1) * (n + 1)];
    let mut locality = true;
    let mut u = vec![0.0; n];
    for path in 0..paths {
        for v in u.iter_mut() {
            *v = loop {
                let x: f64 = rng.random();
                if x > 0.0 {
                    break x;
                }
            };
        }
        let w = bridge_path(&u, 1.0)?;
        let nodes = w.nodes();
        for i in 0..=n {
            sum[i] += nodes[i];
            for j in 0..=n {
                cross[i * (n + 1) + j] += nodes[i] * nodes[j];
            }
        }
        if path < 1000 {
            let r = path % n;
            let mut moved = u.clone();
            moved[r] = rng.random_range(0.001..0.999);
            let other = bridge_path(&moved, 1.0)?;
            let node = bridge_node(r, n);
            let half = if r == 0 { n } else { 1usize << node.trailing_zeros() };
            for (j, (a, b)) in nodes.iter().zip(other.nodes()).enumerate() {
                let inside = if r == 0 { j > 0 } else { j > node - half && j < node + half };
                locality &= inside || a == b;
            }
        }
    }
    let m = paths as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let cov = |i: usize, j: usize| (cross[i * (n + 1) + j] - m * mean[i] * mean[j]) / (m - 1.0);
    let (mut worst_z, mut worst_rel) = (0.0f64, 0.0f64);
    for (i, mu) in mean.iter().enumerate().skip(1) {
        worst_z = worst_z.max(mu.abs() / (cov(i, i) / m).sqrt());
        for j in i..=n {
            let exact = i.min(j) as f64 / n as f64;
            worst_rel = worst_rel.max((cov(i, j) - exact).abs() / exact);
        }
    }
    Ok(Report::check(
        worst_z <= 4.0 && worst_rel <= 0.05 && locality,
        format!(
            "max |mean|/SE {worst_z:.2}, max relative covariance error {:.2}%, locality exact: {locality}",
            100.0 * worst_rel
        ),
    ))
}

fn ou_exact_moment() -> Res<Report> {
    let params = OuParams::default();
    let model = ou_model(params)?;
    let closed = ou_exact_moment2(&params, 1.0);
    let cfg = SystemConfig::new(256, 64, 1.0, 64, SEED).with_observable(Observable::Square);
    let r = single_level_estimator(&model, &cfg)?;
    let se = r.standard_error().ok_or("no standard error")?;
    let z = (r.mean - OU_EXACT).abs() / se;
    Ok(Report::check(
        z <= 3.0 && (closed - OU_EXACT).abs() < 1e-10,
        format!("estimate {:.6} vs {OU_EXACT}, {z:.2} SE (closed form {closed:.10})", r.mean),
    ))
}

/// `int_0^1 (mean_k Phi^-1((t + k) / P))^2 dt`: the expected squared mean
/// of the inverse-normal images of a randomly shifted equidistant rule.
fn shifted_rule_second_moment(p: usize) -> f64 {
    let f = |t: f64| {
        let t = t.clamp(1e-300, 1.0 - f64::EPSILON);
        let s: f64 = (0..p)
            .map(|k| inv_norm_cdf((t + k as f64) / p as f64).unwrap_or(0.0))
            .sum();
        (s / p as f64).powi(2)
    };
    quadrature::double_exponential::integrate(f, 0.0, 1.0, 1e-13).integral
}

/// For the linear OU particle system with odd lattice components, every
/// coordinate mean over particles is that of a shifted equidistant rule, so
/// `E[estimate] - (Euler limit) = V_P (s^2 + sigma^2 T - v_Euler)`.
fn ou_bias_prediction(params: &OuParams, steps: usize, p: usize) -> f64 {
    let v_euler = ou_euler_moment2(params, 1.0, steps) - params.initial_mean.powi(2);
    let c = params.initial_std.powi(2) + params.sigma.powi(2) - v_euler;
    shifted_rule_second_moment(p) * c
}

/// Rows of a weak-error table checked against the bias identity: returns
/// the largest `|estimate - euler - predicted| / SE` and the number of rows
/// where the prediction exceeds three standard errors.
fn bias_identity(o: &SweepOutcome, params: &OuParams, steps: usize) -> (f64, usize) {
    let euler = ou_euler_moment2(params, 1.0, steps);
    let (ps, est, se) = (col(o, "P"), col(o, "estimate"), col(o, "standard_error"));
    let mut worst = 0.0f64;
    let mut resolved = 0;
    for i in 0..ps.len() {
        let predicted = ou_bias_prediction(params, steps, ps[i] as usize);
        worst = worst.max((est[i] - euler - predicted).abs() / se[i]);
        resolved += usize::from(predicted > 3.0 * se[i]);
    }
    (worst, resolved)
}

fn ou_weak_rate() -> Res<Report> {
    let params = OuParams::default();
    let o = run_config("ou_weak")?;
    let steps = 128;
    let floor = ou_euler_moment2(&params, 1.0, steps) - ou_exact_moment2(&params, 1.0);
    let (worst, _) = bias_identity(&o, &params, steps);
    let resolved_run = run_config("ou_weak_resolved")?;
    let (worst_r, resolved) = bias_identity(&resolved_run, &params, steps);
    let euler_slope = {
        let ps = col(&resolved_run, "P");
        let ys: Vec<f64> = ps.iter().map(|&p| ou_bias_prediction(&params, steps, p as usize)).collect();
        fit_rate(&ps, &ys)?.slope
    };
    let holds = worst <= 3.0 && worst_r <= 3.0 && resolved == resolved_run.table.rows.len();
    Ok(Report::known_red(
        o.passed(),
        slope_text(&o, 0),
        analysis(
            holds,
            format!(
                "Euler floor {floor:.3e}; every estimate within {worst:.2} SE of Euler limit + V_P C; \
                 resolved run within {worst_r:.2} SE on {resolved} resolved rows, bias slope {euler_slope:.2}"
            ),
        ),
    ))
}

fn ou_variance_rate() -> Res<Report> {
    let qmc = run_config("ou_var_qmc")?;
    let iid = run_config("ou_var_iid")?;
    let s = slope(&qmc, 0).unwrap_or(f64::NAN);
    Ok(Report::known_red(
        qmc.passed() && iid.passed(),
        format!("QMC {}; i.i.d. {}", slope_text(&qmc, 0), slope_text(&iid, 0)),
        analysis(
            iid.passed() && (-1.6..=-1.2).contains(&s),
            format!("i.i.d. baseline in range, QMC slope {s:.2} at the generator's measured rate"),
        ),
    ))
}

fn richardson() -> Res<Report> {
    let o = run_config("richardson_iid")?;
    Ok(Report::check(
        o.passed(),
        format!("{}; {}", slope_text(&o, 0), slope_text(&o, 1)),
    ))
}

/// Compares every row with the `c / P^2` curve through the first resolved
/// row, and estimates the shifts needed to resolve the next value of `P`
/// on that curve from the measured per-shift variance.
fn kuramoto_weak() -> Res<Report> {
    let spec = load_config("kuramoto_weak")?;
    let o = run_spec(&spec)?;
    let (ps, est, se) = (col(&o, "P"), col(&o, "estimate"), col(&o, "standard_error"));
    let (reference, ref_se) = o.reference.ok_or("no reference")?;
    let resolved: Vec<usize> = (0..ps.len()).filter(|&i| col(&o, "resolved")[i] != 0.0).collect();
    let detail = format!("{}; {} resolved rows", slope_text(&o, 0), resolved.len());
    let Some(&a) = resolved.first() else {
        return Ok(Report::known_red(o.passed(), detail, Err("no resolved row".into())));
    };
    let c = (est[a] - reference) * ps[a] * ps[a];
    let band = |i: usize| (se[i] * se[i] + ref_se * ref_se).sqrt();
    let worst = (0..ps.len())
        .map(|i| (est[i] - reference - c / (ps[i] * ps[i])).abs() / band(i))
        .fold(0.0, f64::max);
    let samples = spec.fixed.samples_per_value.clone().ok_or("no M_values")?;
    let min_resolved = resolved.iter().map(|&i| (est[i] - reference).abs()).fold(f64::INFINITY, f64::min);
    let next = (a + 1..ps.len()).find(|i| !resolved.contains(i));
    let outlook = match next {
        Some(n) => {
            let bias = (c / (ps[n] * ps[n])).abs();
            let target = (bias / 3.0).powi(2) - ref_se * ref_se;
            if target > 0.0 {
                let needed = se[n] * se[n] * samples[n] as f64 / target;
                format!(
                    "resolving P={} on that curve needs M ~ {needed:.1e} ({:.1}x the configured {})",
                    ps[n],
                    needed / samples[n] as f64,
                    samples[n]
                )
            } else {
                format!("resolving P={} on that curve needs a more precise reference", ps[n])
            }
        }
        None => "every row past the anchor is resolved".into(),
    };
    Ok(Report::known_red(
        o.passed(),
        detail,
        analysis(
            resolved.len() < 3 && worst <= 3.0 && ref_se <= 0.1 * min_resolved,
            format!(
                "reference SE {ref_se:.1e} below a tenth of the resolved errors; all rows within {worst:.2} \
                 combined SE of c/P^2 through P={}; {outlook}",
                ps[a]
            ),
        ),
    ))
}

fn telescoping() -> Res<Report> {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    let models: [(&str, Box<dyn Model>); 2] = [
        ("ou", Box::new(ou_model(OuParams::default())?)),
        ("kuramoto", Box::new(kuramoto_model(0.4))),
    ];
    for (name, model) in &models {
        let cfg = LevelConfig::new(2, 3, 3, vec![256; 3], 1.0, SEED);
        for l in 1..=2 {
            let (fine, _) = run_level(model.as_ref(), &cfg, l, 256)?;
            let (coarse, _) = run_level(model.as_ref(), &cfg, l - 1, 256)?;
            let psi_var = fine.psi_variance.ok_or("no psi variance")?;
            let phi_var = coarse.phi_variance.ok_or("no phi variance")?;
            let pooled = (psi_var / 256.0 + phi_var / 256.0).sqrt();
            let z = (fine.psi_mean.ok_or("no psi mean")? - coarse.phi_mean).abs() / pooled;
            worst = worst.max(z);
            detail.push(format!("{name} l={l}: {z:.2}"));
        }
    }
    Ok(Report::check(
        worst <= 4.0,
        format!("pooled-SE distances {}", detail.join(", ")),
    ))
}

fn level_variance() -> Res<Report> {
    let o = run_config("mlqmc_var_kuramoto")?;
    let s = slope(&o, 0).unwrap_or(f64::NAN);
    let v = col(&o, "variance");
    Ok(Report::known_red(
        o.passed(),
        slope_text(&o, 0),
        analysis(
            (-3.3..=-2.0).contains(&s) && v.windows(2).all(|w| w[1] < w[0]),
            format!("variance decreases at every level, slope {s:.2} at the generator's measured rate"),
        ),
    ))
}

fn mfode_rates() -> Res<Report> {
    let sin = run_config("mfode_sin")?;
    let c1 = run_config("mfode_c1")?;
    let floor = sin.checks.iter().all(|c| c.fit.is_none());
    let detail = (0..sin.checks.len())
        .map(|i| slope_text(&sin, i))
        .collect::<Vec<_>>()
        .join("; ");
    let c1_detail = (0..c1.checks.len())
        .map(|i| slope_text(&c1, i))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Report::known_red(
        sin.passed(),
        format!("sin model: {detail}"),
        analysis(
            floor && c1.passed(),
            format!("sin errors reach round-off before 3 points; C1 model passes: {c1_detail}"),
        ),
    ))
}

/// Wraps a model and counts kernel evaluations.
struct Counting<M> {
    inner: M,
    kernel: AtomicU64,
    diffusion: AtomicU64,
}

impl<M: Model> Counting<M> {
    fn new(inner: M) -> Self {
        Self {
            inner,
            kernel: AtomicU64::new(0),
            diffusion: AtomicU64::new(0),
        }
    }

    fn take(&self) -> (u64, u64) {
        (
            self.kernel.swap(0, AtomicOrdering::Relaxed),
            self.diffusion.swap(0, AtomicOrdering::Relaxed),
        )
    }
}

impl<M: Model> Model for Counting<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn aux_arity(&self) -> usize {
        self.inner.aux_arity()
    }
    fn aux_value(&self, u: f64) -> f64 {
        self.inner.aux_value(u)
    }
    fn initial(&self, u: f64) -> f64 {
        self.inner.initial(u)
    }
    fn drift(&self, x: f64, m: f64, aux: &[f64]) -> f64 {
        self.inner.drift(x, m, aux)
    }
    fn drift_kernel(&self, x: f64, y: f64) -> f64 {
        self.kernel.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner.drift_kernel(x, y)
    }
    fn diffusion(&self, x: f64, m: f64) -> f64 {
        self.inner.diffusion(x, m)
    }
    fn diffusion_kernel(&self, x: f64, y: f64) -> f64 {
        self.diffusion.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner.diffusion_kernel(x, y)
    }
    fn uses_diffusion_kernel(&self) -> bool {
        self.inner.uses_diffusion_kernel()
    }
    fn has_noise(&self) -> bool {
        self.inner.has_noise()
    }
    fn additive_noise(&self) -> bool {
        self.inner.additive_noise()
    }
    fn default_observable(&self) -> Observable {
        self.inner.default_observable()
    }
}

fn cost_accounting() -> Res<Report> {
    let model = Counting::new(kuramoto_model(0.4));
    let mut ok = true;
    let mut notes = Vec::new();
    for (p, n, m) in [(8usize, 4usize, 3usize), (16, 8, 2), (32, 2, 1)] {
        let cfg = SystemConfig::new(p, n, 1.0, m, SEED).with_kernel(KernelMode::Direct);
        let r = single_level_estimator(&model, &cfg)?;
        let (k, _) = model.take();
        let per_shift = (n * p * p) as u64;
        ok &= k == m as u64 * per_shift
            && r.cost_per_shift.kernel_evals == per_shift
            && system_cost(&model, p, n).kernel_evals == per_shift;
    }
    notes.push(format!("single level: N P^2 per shift: {ok}"));
    let cfg = LevelConfig::new(3, 2, 2, vec![1; 4], 1.0, SEED).with_kernel(KernelMode::Direct);
    let mut level_ok = true;
    for l in 0..=3usize {
        let (p, n) = (cfg.particles(l) as u64, cfg.steps(l) as u64);
        let shift = Shift::draw(SEED, Purpose::MlqmcShift, l as u64, 0, cfg.layout(&model, l).dim());
        phi_level(&model, &cfg, l, &shift)?;
        // Phi runs the (P, 2N) and (P, N) systems.
        level_ok &= model.take().0 == 2 * n * p * p + n * p * p;
        let mut total = 3 * n * p * p;
        if l > 0 {
            psi_level(&model, &cfg, l, &shift)?;
            // Psi runs (P/2, N) and (P/2, N/2) on each half.
            let q = p / 2;
            level_ok &= model.take().0 == 2 * (n * q * q + (n / 2) * q * q);
            total = 15 * n * p * p / 4;
        }
        level_ok &= level_sample_cost(&model, &cfg, l).kernel_evals == total;
        let (stats, _) = run_level(&model, &cfg, l, 1)?;
        level_ok &= model.take().0 == total && stats.cost.kernel_evals == total;
    }
    notes.push(format!("every constituent system N P^2 and level totals exact: {level_ok}"));
    Ok(Report::check(ok && level_ok, notes.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("lattice split identity", lattice_split),
        ("star discrepancy", star_discrepancy),
        ("bridge distribution", bridge_suite),
        ("OU exact moment", ou_exact_moment),
        ("OU weak-error rate", ou_weak_rate),
        ("OU variance rate", ou_variance_rate),
        ("Richardson in P (i.i.d.)", richardson),
        ("Kuramoto weak error", kuramoto_weak),
        ("MLQMC telescoping", telescoping),
        ("MLQMC level-variance decay", level_variance),
        ("mean-field ODE rates", mfode_rates),
        ("cost accounting", cost_accounting),
    ];
    let only = std::env::var("MVQMC_ONLY").ok();
    let (mut passed, mut known, mut unexpected) = (0, 0, 0);
    for (name, run) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let report = run().unwrap_or_else(|e| Report::check(false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        match report.verdict {
            Verdict::Pass => {
                passed += 1;
                println!("PASS {name}: {} [{secs:.1}s]", report.detail);
            }
            Verdict::KnownRed(Ok(why)) => {
                known += 1;
                println!("FAIL {name}: {} [known red: {why}] [{secs:.1}s]", report.detail);
            }
            Verdict::KnownRed(Err(why)) => {
                unexpected += 1;
                println!("FAIL {name}: {} [explanation no longer holds: {why}] [{secs:.1}s]", report.detail);
            }
            Verdict::Fail => {
                unexpected += 1;
                println!("FAIL {name}: {} [{secs:.1}s]", report.detail);
            }
        }
    }
    println!("acceptance: {passed} passed, {known} known red, {unexpected} unexpected failures");
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
