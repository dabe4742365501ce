//! McKean–Vlasov model definitions.
//!
//! A model supplies the drift `a(x, m, aux)`, the diffusion `sigma(x, m2)`,
//! the interaction kernels whose particle averages feed `m` and `m2`, the
//! initial transform `H: [0,1) -> R`, and a default observable.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bridge::{inv_norm_cdf_unchecked, CLAMP};
use crate::error::{Error, Result};

pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    /// Number of auxiliary uniforms consumed per particle.
    fn aux_arity(&self) -> usize {
        0
    }

    /// Maps an auxiliary uniform to the value handed to [`Model::drift`].
    fn aux_value(&self, u: f64) -> f64 {
        u
    }

    /// Initial transform `H`.
    fn initial(&self, u: f64) -> f64;

    fn drift(&self, x: f64, kernel_mean: f64, aux: &[f64]) -> f64;

    fn drift_kernel(&self, x: f64, y: f64) -> f64;

    fn diffusion(&self, x: f64, kernel_mean: f64) -> f64;

    fn diffusion_kernel(&self, _x: f64, _y: f64) -> f64 {
        0.0
    }

    /// Whether `diffusion` reads its kernel average.
    fn uses_diffusion_kernel(&self) -> bool {
        false
    }

    /// `false` for zero-diffusion models; their bridge block is ignored.
    fn has_noise(&self) -> bool {
        true
    }

    /// Additive noise (diffusion independent of state and law); the
    /// convergence results for the coupled estimator only cover this case.
    fn additive_noise(&self) -> bool {
        !self.uses_diffusion_kernel()
    }

    fn default_observable(&self) -> Observable;

    /// Rank `r` of a separable drift kernel
    /// `kappa(x, y) = F(x, phi_1(y), ..., phi_r(y))` with `F` linear in the
    /// `phi`s; 0 when the kernel is not separable.
    fn separable_rank(&self) -> usize {
        0
    }

    /// Writes `phi_1(y), ..., phi_r(y)` into `out`.
    fn kernel_features(&self, _y: f64, _out: &mut [f64]) {}

    /// `F(x, mean_features)`, equal to the particle average of
    /// `drift_kernel(x, y_j)` when `mean_features` averages the features.
    fn kernel_from_features(&self, _x: f64, _mean_features: &[f64]) -> f64 {
        f64::NAN
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn aux_arity(&self) -> usize {
        (**self).aux_arity()
    }
    fn aux_value(&self, u: f64) -> f64 {
        (**self).aux_value(u)
    }
    fn initial(&self, u: f64) -> f64 {
        (**self).initial(u)
    }
    fn drift(&self, x: f64, m: f64, aux: &[f64]) -> f64 {
        (**self).drift(x, m, aux)
    }
    fn drift_kernel(&self, x: f64, y: f64) -> f64 {
        (**self).drift_kernel(x, y)
    }
    fn diffusion(&self, x: f64, m: f64) -> f64 {
        (**self).diffusion(x, m)
    }
    fn diffusion_kernel(&self, x: f64, y: f64) -> f64 {
        (**self).diffusion_kernel(x, y)
    }
    fn uses_diffusion_kernel(&self) -> bool {
        (**self).uses_diffusion_kernel()
    }
    fn has_noise(&self) -> bool {
        (**self).has_noise()
    }
    fn additive_noise(&self) -> bool {
        (**self).additive_noise()
    }
    fn default_observable(&self) -> Observable {
        (**self).default_observable()
    }
    fn separable_rank(&self) -> usize {
        (**self).separable_rank()
    }
    fn kernel_features(&self, y: f64, out: &mut [f64]) {
        (**self).kernel_features(y, out)
    }
    fn kernel_from_features(&self, x: f64, f: &[f64]) -> f64 {
        (**self).kernel_from_features(x, f)
    }
}

/// Observable `g` applied to every final particle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Observable {
    Identity,
    Square,
    /// `exp(-x^2 / 2)`
    Gauss,
    Constant(f64),
}

impl Observable {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Observable::Identity => x,
            Observable::Square => x * x,
            Observable::Gauss => (-0.5 * x * x).exp(),
            Observable::Constant(c) => c,
        }
    }

    /// `(1/P) sum_p g(x_p)`, summed in index order.
    pub fn mean(&self, states: &[f64]) -> f64 {
        states.iter().map(|&x| self.eval(x)).sum::<f64>() / states.len() as f64
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Identity => write!(f, "x"),
            Observable::Square => write!(f, "x2"),
            Observable::Gauss => write!(f, "gauss"),
            Observable::Constant(c) => write!(f, "const:{c}"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "identity" | "moment1" => Ok(Observable::Identity),
            "x2" | "square" | "moment2" => Ok(Observable::Square),
            "gauss" => Ok(Observable::Gauss),
            _ => match s.strip_prefix("const:") {
                Some(c) => c
                    .parse()
                    .map(Observable::Constant)
                    .map_err(|_| Error::Config(format!("bad constant observable {s:?}"))),
                None => Err(Error::Config(format!("unknown observable {s:?}"))),
            },
        }
    }
}

impl TryFrom<String> for Observable {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Observable> for String {
    fn from(g: Observable) -> String {
        g.to_string()
    }
}

/// `mean + std * phi^{-1}(u)` with `u` clamped away from {0, 1}.
#[inline]
fn gaussian_transform(u: f64, mean: f64, std: f64) -> f64 {
    mean + std * inv_norm_cdf_unchecked(u.clamp(CLAMP, 1.0 - CLAMP))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub kappa: f64,
    pub sigma: f64,
    /// Initial law is `N(initial_mean, initial_std^2)`.
    pub initial_mean: f64,
    pub initial_std: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            sigma: 0.5,
            initial_mean: 0.0,
            initial_std: 1.0,
        }
    }
}

impl OuParams {
    pub fn initial_moment2(&self) -> f64 {
        self.initial_mean * self.initial_mean + self.initial_std * self.initial_std
    }

    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.initial_std >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config("invalid OU noise parameters".into()));
        }
        Ok(())
    }
}

/// `dX = kappa (E[X] - X) dt + sigma dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuModel {
    pub params: OuParams,
}

pub fn ou_model(params: OuParams) -> Result<OuModel> {
    params.validate()?;
    Ok(OuModel { params })
}

impl Model for OuModel {
    fn name(&self) -> &str {
        "ou"
    }

    fn initial(&self, u: f64) -> f64 {
        gaussian_transform(u, self.params.initial_mean, self.params.initial_std)
    }

    #[inline]
    fn drift(&self, _x: f64, m: f64, _aux: &[f64]) -> f64 {
        self.params.kappa * m
    }

    #[inline]
    fn drift_kernel(&self, x: f64, y: f64) -> f64 {
        y - x
    }

    #[inline]
    fn diffusion(&self, _x: f64, _m: f64) -> f64 {
        self.params.sigma
    }

    fn has_noise(&self) -> bool {
        self.params.sigma != 0.0
    }

    fn default_observable(&self) -> Observable {
        Observable::Square
    }

    fn separable_rank(&self) -> usize {
        1
    }

    #[inline]
    fn kernel_features(&self, y: f64, out: &mut [f64]) {
        out[0] = y;
    }

    #[inline]
    fn kernel_from_features(&self, x: f64, f: &[f64]) -> f64 {
        f[0] - x
    }
}

/// `E[X(t)^2] = s^2/2k + (E[xi^2] - s^2/2k) exp(-2kt)` for the mean-field
/// OU equation.
pub fn ou_exact_moment2(params: &OuParams, t: f64) -> f64 {
    let stationary = params.sigma * params.sigma / (2.0 * params.kappa);
    stationary + (params.initial_moment2() - stationary) * (-2.0 * params.kappa * t).exp()
}

/// Mean-field limit of the Euler scheme with `steps` uniform steps on
/// `[0, t]`: the mean is conserved and the variance follows
/// `v <- (1 - k dt)^2 v + s^2 dt`.
pub fn ou_euler_moment2(params: &OuParams, t: f64, steps: usize) -> f64 {
    let dt = t / steps as f64;
    let contraction = (1.0 - params.kappa * dt).powi(2);
    let mut var = params.initial_std * params.initial_std;
    for _ in 0..steps {
        var = contraction * var + params.sigma * params.sigma * dt;
    }
    params.initial_mean * params.initial_mean + var
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KuramotoParams {
    pub sigma: f64,
    pub initial_mean: f64,
    pub initial_std: f64,
}

impl Default for KuramotoParams {
    fn default() -> Self {
        Self {
            sigma: 0.4,
            initial_mean: 0.0,
            initial_std: 0.2f64.sqrt(),
        }
    }
}

/// `dZ = (nu + E[sin(Z - z)]) dt + sigma dW` with `nu ~ U[0,1]` per particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KuramotoModel {
    pub params: KuramotoParams,
}

pub fn kuramoto_model(sigma: f64) -> KuramotoModel {
    KuramotoModel {
        params: KuramotoParams {
            sigma,
            ..KuramotoParams::default()
        },
    }
}

impl Model for KuramotoModel {
    fn name(&self) -> &str {
        "kuramoto"
    }

    fn aux_arity(&self) -> usize {
        1
    }

    fn initial(&self, u: f64) -> f64 {
        gaussian_transform(u, self.params.initial_mean, self.params.initial_std)
    }

    #[inline]
    fn drift(&self, _x: f64, m: f64, aux: &[f64]) -> f64 {
        aux[0] + m
    }

    #[inline]
    fn drift_kernel(&self, x: f64, y: f64) -> f64 {
        (x - y).sin()
    }

    #[inline]
    fn diffusion(&self, _x: f64, _m: f64) -> f64 {
        self.params.sigma
    }

    fn has_noise(&self) -> bool {
        self.params.sigma != 0.0
    }

    fn default_observable(&self) -> Observable {
        Observable::Gauss
    }

    fn separable_rank(&self) -> usize {
        2
    }

    #[inline]
    fn kernel_features(&self, y: f64, out: &mut [f64]) {
        let (s, c) = y.sin_cos();
        out[0] = c;
        out[1] = s;
    }

    // sin(x - y) = sin x cos y - cos x sin y
    #[inline]
    fn kernel_from_features(&self, x: f64, f: &[f64]) -> f64 {
        let (s, c) = x.sin_cos();
        s * f[0] - c * f[1]
    }
}

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type DriftFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;
type FeatureFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
type CombineFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// 1-periodic initial map `f: [0,1) -> R` of a periodizable law.
#[derive(Clone)]
pub struct PeriodizableInitial {
    f: Fn1,
}

impl PeriodizableInitial {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    /// `f(u) = sin(2 pi u)`.
    pub fn sine() -> Self {
        Self::new(|u| (2.0 * PI * u).sin())
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.f)(u)
    }

    /// `|f(0) - f(1 - h)|` for a small `h`; small for a periodic `f`.
    pub fn seam_gap(&self, h: f64) -> f64 {
        (self.eval(0.0) - self.eval(1.0 - h)).abs()
    }
}

impl fmt::Debug for PeriodizableInitial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PeriodizableInitial(..)")
    }
}

#[derive(Clone)]
struct Separable {
    rank: usize,
    features: FeatureFn,
    combine: CombineFn,
}

/// Model assembled from closures.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    aux_arity: usize,
    initial: Fn1,
    drift: DriftFn,
    drift_kernel: Fn2,
    diffusion: Fn2,
    diffusion_kernel: Option<Fn2>,
    noise: bool,
    observable: Observable,
    separable: Option<Separable>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("aux_arity", &self.aux_arity)
            .field("noise", &self.noise)
            .field("observable", &self.observable)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// Zero-drift, zero-diffusion model with `H(u) = u` and observable `x`.
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            aux_arity: 0,
            initial: Arc::new(|u| u),
            drift: Arc::new(|_, _, _| 0.0),
            drift_kernel: Arc::new(|_, _| 0.0),
            diffusion: Arc::new(|_, _| 0.0),
            diffusion_kernel: None,
            noise: false,
            observable: Observable::Identity,
            separable: None,
        }
    }

    pub fn with_initial(mut self, h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.initial = Arc::new(h);
        self
    }

    pub fn with_drift(
        mut self,
        a: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.drift = Arc::new(a);
        self
    }

    pub fn with_drift_kernel(mut self, k: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift_kernel = Arc::new(k);
        self.separable = None;
        self
    }

    /// Constant diffusion coefficient.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.diffusion = Arc::new(move |_, _| sigma);
        self.noise = sigma != 0.0;
        self
    }

    /// State- and law-dependent diffusion `sigma(x, (1/P) sum kappa2(x, x_j))`.
    pub fn with_diffusion(
        mut self,
        sigma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Arc::new(sigma);
        self.diffusion_kernel = Some(Arc::new(kernel));
        self.noise = true;
        self
    }

    pub fn with_aux_arity(mut self, k: usize) -> Self {
        self.aux_arity = k;
        self
    }

    pub fn with_observable(mut self, g: Observable) -> Self {
        self.observable = g;
        self
    }

    /// Declares the drift kernel separable (see [`Model::separable_rank`]).
    /// The caller guarantees consistency with the pairwise kernel.
    pub fn with_separable_kernel(
        mut self,
        rank: usize,
        features: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
        combine: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.separable = Some(Separable {
            rank,
            features: Arc::new(features),
            combine: Arc::new(combine),
        });
        self
    }
}

impl Model for ModelSpec {
    fn name(&self) -> &str {
        &self.name
    }
    fn aux_arity(&self) -> usize {
        self.aux_arity
    }
    fn initial(&self, u: f64) -> f64 {
        (self.initial)(u)
    }
    fn drift(&self, x: f64, m: f64, aux: &[f64]) -> f64 {
        (self.drift)(x, m, aux)
    }
    fn drift_kernel(&self, x: f64, y: f64) -> f64 {
        (self.drift_kernel)(x, y)
    }
    fn diffusion(&self, x: f64, m: f64) -> f64 {
        (self.diffusion)(x, m)
    }
    fn diffusion_kernel(&self, x: f64, y: f64) -> f64 {
        self.diffusion_kernel.as_ref().map_or(0.0, |k| k(x, y))
    }
    fn uses_diffusion_kernel(&self) -> bool {
        self.diffusion_kernel.is_some()
    }
    fn has_noise(&self) -> bool {
        self.noise
    }
    fn default_observable(&self) -> Observable {
        self.observable
    }
    fn separable_rank(&self) -> usize {
        self.separable.as_ref().map_or(0, |s| s.rank)
    }
    fn kernel_features(&self, y: f64, out: &mut [f64]) {
        if let Some(s) = &self.separable {
            (s.features)(y, out)
        }
    }
    fn kernel_from_features(&self, x: f64, f: &[f64]) -> f64 {
        self.separable.as_ref().map_or(f64::NAN, |s| (s.combine)(x, f))
    }
}

/// Zero-diffusion mean-field ODE `dZ = a(Z, E[kappa(Z, z)]) dt`, `Z(0) = f(U)`.
pub fn meanfield_ode_model(
    f: PeriodizableInitial,
    drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> ModelSpec {
    ModelSpec::new("mfode")
        .with_initial(move |u| f.eval(u))
        .with_drift(move |x, m, _| drift(x, m))
        .with_drift_kernel(kernel)
        .with_observable(Observable::Gauss)
}

/// Built-in mean-field ODE: `f(u) = sin(2 pi u)`, `kappa(x, y) = sin(x - y)`,
/// `a(x, m) = m`.
pub fn mfode_sin_model() -> ModelSpec {
    let mut m = meanfield_ode_model(PeriodizableInitial::sine(), |_, m| m, |x, y| (x - y).sin())
        .with_separable_kernel(
            2,
            |y, out| {
                let (s, c) = y.sin_cos();
                out[0] = c;
                out[1] = s;
            },
            |x, f| {
                let (s, c) = x.sin_cos();
                s * f[0] - c * f[1]
            },
        );
    m.name = "mfode-sin".into();
    m
}

/// Mean-field ODE with the same drift and kernel as [`mfode_sin_model`] and
/// `f(u) = 8 u^2 (1-u)^2 (1+u)`, which is `C^1` but not `C^2` as a 1-periodic
/// map. Its Fourier coefficients decay like `h^-3`, so lattice errors decay
/// algebraically instead of geometrically.
pub fn mfode_c1_model() -> ModelSpec {
    let mut m = mfode_sin_model();
    m.initial = Arc::new(c1_periodic);
    m.name = "mfode-c1".into();
    m
}

fn c1_periodic(u: f64) -> f64 {
    let v = u * (1.0 - u);
    8.0 * v * v * (1.0 + u)
}

/// Models selectable by name.
#[derive(Debug, Clone)]
pub enum BuiltinModel {
    Ou(OuModel),
    Kuramoto(KuramotoModel),
    MfodeSin(ModelSpec),
    MfodeC1(ModelSpec),
}

impl BuiltinModel {
    pub const NAMES: [&'static str; 4] = ["ou", "kuramoto", "mfode-sin", "mfode-c1"];

    /// Builds a model from its name and optional `kappa` / `sigma` overrides.
    pub fn from_name(name: &str, kappa: Option<f64>, sigma: Option<f64>) -> Result<Self> {
        match name {
            "ou" => {
                let mut p = OuParams::default();
                if let Some(k) = kappa {
                    p.kappa = k;
                }
                if let Some(s) = sigma {
                    p.sigma = s;
                }
                Ok(BuiltinModel::Ou(ou_model(p)?))
            }
            "kuramoto" => Ok(BuiltinModel::Kuramoto(kuramoto_model(
                sigma.unwrap_or(KuramotoParams::default().sigma),
            ))),
            "mfode-sin" => Ok(BuiltinModel::MfodeSin(mfode_sin_model())),
            "mfode-c1" => Ok(BuiltinModel::MfodeC1(mfode_c1_model())),
            other => Err(Error::Config(format!(
                "unknown model {other:?}; expected one of {:?}",
                Self::NAMES
            ))),
        }
    }

    fn inner(&self) -> &dyn Model {
        match self {
            BuiltinModel::Ou(m) => m,
            BuiltinModel::Kuramoto(m) => m,
            BuiltinModel::MfodeSin(m) | BuiltinModel::MfodeC1(m) => m,
        }
    }
}

macro_rules! delegate_builtin {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            BuiltinModel::Ou($m) => $e,
            BuiltinModel::Kuramoto($m) => $e,
            BuiltinModel::MfodeSin($m) | BuiltinModel::MfodeC1($m) => $e,
        }
    };
}

impl Model for BuiltinModel {
    fn name(&self) -> &str {
        self.inner().name()
    }
    fn aux_arity(&self) -> usize {
        delegate_builtin!(self, m => m.aux_arity())
    }
    fn aux_value(&self, u: f64) -> f64 {
        delegate_builtin!(self, m => m.aux_value(u))
    }
    fn initial(&self, u: f64) -> f64 {
        delegate_builtin!(self, m => m.initial(u))
    }
    #[inline]
    fn drift(&self, x: f64, k: f64, aux: &[f64]) -> f64 {
        delegate_builtin!(self, m => m.drift(x, k, aux))
    }
    #[inline]
    fn drift_kernel(&self, x: f64, y: f64) -> f64 {
        delegate_builtin!(self, m => m.drift_kernel(x, y))
    }
    #[inline]
    fn diffusion(&self, x: f64, k: f64) -> f64 {
        delegate_builtin!(self, m => m.diffusion(x, k))
    }
    fn diffusion_kernel(&self, x: f64, y: f64) -> f64 {
        delegate_builtin!(self, m => m.diffusion_kernel(x, y))
    }
    fn uses_diffusion_kernel(&self) -> bool {
        delegate_builtin!(self, m => m.uses_diffusion_kernel())
    }
    fn has_noise(&self) -> bool {
        delegate_builtin!(self, m => m.has_noise())
    }
    fn default_observable(&self) -> Observable {
        delegate_builtin!(self, m => m.default_observable())
    }
    fn separable_rank(&self) -> usize {
        delegate_builtin!(self, m => m.separable_rank())
    }
    #[inline]
    fn kernel_features(&self, y: f64, out: &mut [f64]) {
        delegate_builtin!(self, m => m.kernel_features(y, out))
    }
    #[inline]
    fn kernel_from_features(&self, x: f64, f: &[f64]) -> f64 {
        delegate_builtin!(self, m => m.kernel_from_features(x, f))
    }
}
