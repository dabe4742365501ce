//! Brownian-bridge construction of piecewise-linear Wiener paths from
//! (shifted) quasi-random inputs.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_power_of_two, Error, Result};

/// Inputs are clamped into `[CLAMP, 1 - CLAMP]` before inversion.
pub const CLAMP: f64 = f64::EPSILON;

// Published coefficients, kept verbatim.
#[allow(clippy::excessive_precision)]
const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383_577_518_672_69e2,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
#[allow(clippy::excessive_precision)]
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
#[allow(clippy::excessive_precision)]
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
#[allow(clippy::excessive_precision)]
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const ACKLAM_LOW: f64 = 0.02425;

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

// Rational approximation for p <= 1/2, relative error ~1e-9.
#[inline]
fn acklam_lower(p: f64) -> f64 {
    let (a, b, c, d) = (ACKLAM_A, ACKLAM_B, ACKLAM_C, ACKLAM_D);
    if p < ACKLAM_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    }
}

/// Inverse standard normal CDF.
///
/// Rational first guess refined by one Halley step against `erfc`. The upper
/// half is evaluated as `-f(1 - p)`, which keeps the function antisymmetric.
pub fn inv_norm_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            value: p,
            domain: "(0, 1)",
        });
    }
    Ok(inv_norm_cdf_unchecked(p))
}

#[inline]
pub(crate) fn inv_norm_cdf_unchecked(p: f64) -> f64 {
    if p > 0.5 {
        return -inv_norm_cdf_unchecked(1.0 - p);
    }
    if p == 0.5 {
        return 0.0;
    }
    let x = acklam_lower(p);
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Piecewise-linear path on the uniform dyadic grid `j T / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerPath {
    horizon: f64,
    nodes: Vec<f64>,
}

impl WienerPath {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node_time(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.steps() as f64
    }

    /// Linear interpolation between nodes; `t` is clamped to `[0, T]`.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.steps();
        let s = (t / self.horizon).clamp(0.0, 1.0) * n as f64;
        let j = (s.floor() as usize).min(n - 1);
        let w = s - j as f64;
        self.nodes[j] * (1.0 - w) + self.nodes[j + 1] * w
    }
}

fn clamp_input(v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain {
            value: v,
            domain: "[0, 1]",
        });
    }
    Ok(v.clamp(CLAMP, 1.0 - CLAMP))
}

/// Fills `nodes` (length `n + 1`) with the bridge path driven by the inputs
/// `input(r)`, where `r` is the consumption rank: 0 for the endpoint, then
/// the midpoints level by level in ascending time.
pub(crate) fn fill_bridge(
    n: usize,
    horizon: f64,
    input: impl Fn(usize) -> f64,
    nodes: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(nodes.len(), n + 1);
    nodes[0] = 0.0;
    nodes[n] = horizon.sqrt() * inv_norm_cdf_unchecked(clamp_input(input(0))?);
    let mut intervals = 1;
    while intervals < n {
        let width = n / intervals;
        let half = width / 2;
        let sd = 0.5 * (horizon * width as f64 / n as f64).sqrt();
        for i in 0..intervals {
            let left = i * width;
            let mid = left + half;
            let mean = 0.5 * (nodes[left] + nodes[left + width]);
            let z = inv_norm_cdf_unchecked(clamp_input(input(intervals + i))?);
            nodes[mid] = mean + sd * z;
        }
        intervals *= 2;
    }
    Ok(())
}

/// Brownian-bridge path from `n = 2^d` inputs given in consumption order.
pub fn bridge_path(v: &[f64], horizon: f64) -> Result<WienerPath> {
    ensure_power_of_two("bridge input length", v.len())?;
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("final time must be positive, got {horizon}")));
    }
    let n = v.len();
    let mut nodes = vec![0.0; n + 1];
    fill_bridge(n, horizon, |r| v[r], &mut nodes)?;
    Ok(WienerPath { horizon, nodes })
}

/// Increments of `path` over the uniform grid with `steps` intervals.
pub fn increments(path: &WienerPath, steps: usize) -> Result<Vec<f64>> {
    let n = path.steps();
    if steps == 0 || !n.is_multiple_of(steps) {
        return Err(Error::Config(format!(
            "{steps} steps do not divide the path resolution {n}"
        )));
    }
    let stride = n / steps;
    Ok(path
        .nodes
        .windows(stride + 1)
        .step_by(stride)
        .map(|w| w[stride] - w[0])
        .collect())
}
