//! Rank-1 lattice point sets: generation, random shifts, even/odd splitting,
//! coordinate cutting, and one-dimensional star discrepancy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{stream_rng, Purpose};

/// Default Korobov base.
pub const DEFAULT_KOROBOV_BASE: u64 = 17797;

/// Korobov components are stored reduced modulo this value.
pub const KOROBOV_MODULUS: u64 = 1 << 31;

/// Fractional part, mapped into `[0, 1)` even when rounding produces 1.0.
#[inline]
pub fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

fn pow_mod(base: u64, mut exp: u64, modulus: u64) -> u64 {
    let m = modulus as u128;
    let mut b = base as u128 % m;
    let mut acc = 1u128 % m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        exp >>= 1;
    }
    acc as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratingVector {
    components: Vec<u64>,
    korobov_base: Option<u64>,
}

impl GeneratingVector {
    pub fn new(components: Vec<u64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("generating vector must be non-empty".into()));
        }
        Ok(Self {
            components,
            korobov_base: None,
        })
    }

    /// Korobov vector `(1, g, g^2, ..., g^(d-1))`, components reduced mod 2^31.
    pub fn korobov(g: u64, d: usize) -> Result<Self> {
        if g == 0 || d == 0 {
            return Err(Error::Config(format!(
                "korobov vector needs g >= 1 and d >= 1 (got g={g}, d={d})"
            )));
        }
        let components = (0..d as u64)
            .map(|j| pow_mod(g, j, KOROBOV_MODULUS))
            .collect();
        Ok(Self {
            components,
            korobov_base: Some(g),
        })
    }

    pub fn components(&self) -> &[u64] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn korobov_base(&self) -> Option<u64> {
        self.korobov_base
    }

    /// Component `j` (0-based) reduced modulo `modulus`.
    pub fn component_mod(&self, j: usize, modulus: usize) -> u64 {
        self.components[j] % modulus as u64
    }

    /// Extends a Korobov vector to dimension `d` (a prefix when `d` is smaller).
    pub fn extended(&self, d: usize) -> Result<Self> {
        match self.korobov_base {
            Some(g) => Self::korobov(g, d),
            None if d <= self.dim() => Self::new(self.components[..d].to_vec()),
            None => Err(Error::Config(
                "only Korobov generating vectors can be extended".into(),
            )),
        }
    }

    /// Applies `layout`'s coordinate cut to the components.
    pub fn cut(&self, layout: &CoordinateLayout) -> Result<Self> {
        Ok(Self {
            components: layout.cut(&self.components)?,
            korobov_base: None,
        })
    }
}

/// `korobov_vector(g, d)`.
pub fn korobov_vector(g: u64, d: usize) -> Result<GeneratingVector> {
    GeneratingVector::korobov(g, d)
}

/// Order in which the Brownian-bridge block of a point is stored.
///
/// The bridge consumes its inputs coarse to fine: endpoint first, then the
/// midpoint, then the quarter points, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BridgeOrdering {
    /// Block position `j` (1-based) holds the input of the node at time
    /// `j T / n`. Keeping the even positions therefore keeps exactly the
    /// inputs of the half-resolution path.
    #[default]
    TimeIndexed,
    /// Block position `j` holds the `j`-th input in consumption order.
    Sequential,
}

/// Bridge consumption rank (0 = endpoint) of the node with time index
/// `node` in `1..=n`.
pub fn bridge_rank(node: usize, n: usize) -> usize {
    debug_assert!(n.is_power_of_two() && (1..=n).contains(&node));
    if node == n {
        return 0;
    }
    let tz = node.trailing_zeros();
    let intervals = n >> (tz + 1);
    intervals + ((node >> tz) - 1) / 2
}

/// Inverse of [`bridge_rank`].
pub fn bridge_node(rank: usize, n: usize) -> usize {
    debug_assert!(n.is_power_of_two() && rank < n);
    if rank == 0 {
        return n;
    }
    let intervals = 1usize << (usize::BITS - 1 - rank.leading_zeros());
    let i = rank - intervals;
    (2 * i + 1) * n / (2 * intervals)
}

impl BridgeOrdering {
    /// Block position (0-based) of the input with bridge rank `rank`.
    pub fn position_of_rank(self, rank: usize, n: usize) -> usize {
        match self {
            BridgeOrdering::Sequential => rank,
            BridgeOrdering::TimeIndexed => bridge_node(rank, n) - 1,
        }
    }

    /// Bridge rank of the input stored at block position `pos` (0-based).
    pub fn rank_of_position(self, pos: usize, n: usize) -> usize {
        match self {
            BridgeOrdering::Sequential => pos,
            BridgeOrdering::TimeIndexed => bridge_rank(pos + 1, n),
        }
    }
}

/// Coordinate layout of a simulation point: `[aux | xi | bridge block]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinateLayout {
    pub aux: usize,
    pub bridge: usize,
}

impl CoordinateLayout {
    pub fn new(aux: usize, bridge: usize) -> Self {
        Self { aux, bridge }
    }

    pub fn dim(&self) -> usize {
        self.aux + 1 + self.bridge
    }

    pub fn xi_index(&self) -> usize {
        self.aux
    }

    pub fn bridge_range(&self) -> std::ops::Range<usize> {
        self.aux + 1..self.dim()
    }

    /// Layout after one cut.
    pub fn halved(&self) -> Result<Self> {
        if !self.bridge.is_multiple_of(2) {
            return Err(Error::OddLength {
                what: "bridge block",
                value: self.bridge,
            });
        }
        Ok(Self {
            aux: self.aux,
            bridge: self.bridge / 2,
        })
    }

    /// Keeps the auxiliary and initial-condition coordinates and the bridge
    /// positions 2, 4, ..., N (1-based within the block).
    pub fn cut<T: Copy>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let half = self.halved()?;
        let mut out = Vec::with_capacity(half.dim());
        out.extend_from_slice(&x[..=self.aux]);
        out.extend(x[self.bridge_range()].iter().skip(1).step_by(2).copied());
        Ok(out)
    }

    /// Korobov vector for this layout whose `r`-th power of `g` goes to the
    /// coordinate of importance rank `r`: auxiliary coordinates, then the
    /// initial condition, then the bridge inputs in consumption order.
    pub fn korobov(&self, g: u64, ordering: BridgeOrdering) -> Result<GeneratingVector> {
        let plain = GeneratingVector::korobov(g, self.dim())?;
        if ordering == BridgeOrdering::Sequential {
            return Ok(plain);
        }
        let c = plain.components();
        let mut comps = c.to_vec();
        let head = self.aux + 1;
        for pos in 0..self.bridge {
            let rank = ordering.rank_of_position(pos, self.bridge);
            comps[head + pos] = c[head + rank];
        }
        Ok(GeneratingVector {
            components: comps,
            korobov_base: None,
        })
    }
}

/// `cut_coordinates(point, layout)`.
pub fn cut_coordinates(point: &[f64], layout: &CoordinateLayout) -> Result<Vec<f64>> {
    layout.cut(point)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Lattice {
        z: GeneratingVector,
        modulus: usize,
    },
    Shifted {
        parent: Box<Provenance>,
        shift: Vec<f64>,
    },
    Explicit,
}

impl Provenance {
    fn lattice_parts(&self) -> Option<(&GeneratingVector, usize, Option<&[f64]>)> {
        match self {
            Provenance::Lattice { z, modulus } => Some((z, *modulus, None)),
            Provenance::Shifted { parent, shift } => match parent.as_ref() {
                Provenance::Lattice { z, modulus } => Some((z, *modulus, Some(shift))),
                _ => None,
            },
            Provenance::Explicit => None,
        }
    }

    fn shifted(&self, u: &[f64]) -> Provenance {
        match self {
            Provenance::Explicit => Provenance::Explicit,
            Provenance::Lattice { .. } => Provenance::Shifted {
                parent: Box::new(self.clone()),
                shift: u.to_vec(),
            },
            Provenance::Shifted { parent, shift } => Provenance::Shifted {
                parent: parent.clone(),
                shift: shift.iter().zip(u).map(|(a, b)| frac(a + b)).collect(),
            },
        }
    }

    fn cut(&self, layout: &CoordinateLayout) -> Result<Provenance> {
        Ok(match self {
            Provenance::Explicit => Provenance::Explicit,
            Provenance::Lattice { z, modulus } => Provenance::Lattice {
                z: z.cut(layout)?,
                modulus: *modulus,
            },
            Provenance::Shifted { parent, shift } => Provenance::Shifted {
                parent: Box::new(parent.cut(layout)?),
                shift: layout.cut(shift)?,
            },
        })
    }
}

/// `P` points in `[0,1)^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    count: usize,
    coords: Vec<f64>,
    provenance: Provenance,
}

impl PointSet {
    pub fn explicit(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coords.len(),
            });
        }
        if let Some(&bad) = coords.iter().find(|c| !(0.0..1.0).contains(*c)) {
            return Err(Error::Domain {
                value: bad,
                domain: "[0, 1)",
            });
        }
        Ok(Self {
            dim,
            count: coords.len() / dim,
            coords,
            provenance: Provenance::Explicit,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Whether the set is a (possibly shifted) rank-1 lattice.
    pub fn is_lattice(&self) -> bool {
        self.provenance.lattice_parts().is_some()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    /// Coordinate `j` of every point.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points().map(|p| p[j]).collect()
    }

    /// Applies a coordinate cut to every point.
    pub fn cut(&self, layout: &CoordinateLayout) -> Result<PointSet> {
        if layout.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                found: self.dim,
            });
        }
        let half = layout.halved()?;
        let mut coords = Vec::with_capacity(self.count * half.dim());
        for p in self.points() {
            coords.extend(layout.cut(p)?);
        }
        Ok(PointSet {
            dim: half.dim(),
            count: self.count,
            coords,
            provenance: self.provenance.cut(layout)?,
        })
    }
}

/// Lattice point `k` is `{k z / P}` component-wise; computed in integer
/// arithmetic so that every coordinate is the exact rational `m / P`.
pub fn lattice_points(z: &GeneratingVector, count: usize) -> Result<PointSet> {
    if count == 0 {
        return Err(Error::Config("lattice needs at least one point".into()));
    }
    let d = z.dim();
    let zm: Vec<u128> = (0..d).map(|j| z.component_mod(j, count) as u128).collect();
    let p = count as u128;
    let inv = 1.0 / count as f64;
    let mut coords = Vec::with_capacity(count * d);
    for k in 0..count as u128 {
        coords.extend(zm.iter().map(|&c| ((k * c) % p) as f64 * inv));
    }
    Ok(PointSet {
        dim: d,
        count,
        coords,
        provenance: Provenance::Lattice {
            z: z.clone(),
            modulus: count,
        },
    })
}

/// Random shift vector and the stream it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    u: Vec<f64>,
    origin: Option<ShiftOrigin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftOrigin {
    pub seed: u64,
    pub purpose: Purpose,
    pub level: u64,
    pub index: u64,
}

impl Shift {
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = u.iter().find(|c| !(0.0..1.0).contains(*c)) {
            return Err(Error::Domain {
                value: bad,
                domain: "[0, 1)",
            });
        }
        Ok(Self { u, origin: None })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            u: vec![0.0; dim],
            origin: None,
        }
    }

    /// Draws `dim` i.i.d. uniform coordinates from the addressed stream.
    /// Coordinate `j` is the `j`-th draw, so a prefix of a longer shift from
    /// the same stream is the shorter shift.
    pub fn draw(seed: u64, purpose: Purpose, level: u64, index: u64, dim: usize) -> Self {
        let mut rng = stream_rng(seed, purpose, level, index);
        let u = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self {
            u,
            origin: Some(ShiftOrigin {
                seed,
                purpose,
                level,
                index,
            }),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn origin(&self) -> Option<ShiftOrigin> {
        self.origin
    }

    pub fn cut(&self, layout: &CoordinateLayout) -> Result<Shift> {
        Ok(Shift {
            u: layout.cut(&self.u)?,
            origin: self.origin,
        })
    }
}

/// Adds the shift to every point modulo one.
pub fn shift_points(ps: &PointSet, shift: &Shift) -> Result<PointSet> {
    if shift.dim() != ps.dim {
        return Err(Error::DimensionMismatch {
            expected: ps.dim,
            found: shift.dim(),
        });
    }
    let u = shift.as_slice();
    let coords = ps
        .points()
        .flat_map(|p| p.iter().zip(u).map(|(x, s)| frac(x + s)))
        .collect();
    Ok(PointSet {
        dim: ps.dim,
        count: ps.count,
        coords,
        provenance: ps.provenance.shifted(u),
    })
}

/// Splits a (shifted) lattice into its even- and odd-indexed points.
///
/// The even half of `lattice(z, P)` is `lattice(z, P/2)`; the odd half is
/// that set shifted by `{z / P}`.
pub fn split_even_odd(ps: &PointSet) -> Result<(PointSet, PointSet)> {
    let (z, modulus, shift) = ps
        .provenance
        .lattice_parts()
        .ok_or(Error::NotALattice("only lattice point sets can be split"))?;
    if !ps.count.is_multiple_of(2) {
        return Err(Error::OddLength {
            what: "point count",
            value: ps.count,
        });
    }
    let half = ps.count / 2;
    let mut even = Vec::with_capacity(half * ps.dim);
    let mut odd = Vec::with_capacity(half * ps.dim);
    for (k, p) in ps.points().enumerate() {
        if k % 2 == 0 {
            even.extend_from_slice(p);
        } else {
            odd.extend_from_slice(p);
        }
    }
    let base = Provenance::Lattice {
        z: z.clone(),
        modulus: modulus / 2,
    };
    let step: Vec<f64> = (0..z.dim())
        .map(|j| z.component_mod(j, modulus) as f64 / modulus as f64)
        .collect();
    let (even_prov, odd_shift) = match shift {
        None => (base.clone(), step),
        Some(u) => (
            base.shifted(u),
            u.iter().zip(&step).map(|(a, b)| frac(a + b)).collect(),
        ),
    };
    let odd_prov = base.shifted(&odd_shift);
    Ok((
        PointSet {
            dim: ps.dim,
            count: half,
            coords: even,
            provenance: even_prov,
        },
        PointSet {
            dim: ps.dim,
            count: half,
            coords: odd,
            provenance: odd_prov,
        },
    ))
}

fn validate_unit(points: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Config("star discrepancy of an empty set".into()));
    }
    match points.iter().find(|x| !(0.0..1.0).contains(*x)) {
        Some(&bad) => Err(Error::Domain {
            value: bad,
            domain: "[0, 1)",
        }),
        None => Ok(()),
    }
}

// Works in units of 1/P so that equidistant sets come out exact.
fn sorted_discrepancy(sorted: &[f64]) -> f64 {
    let p = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (i, xp) = (i as f64, x * p);
            (i + 1.0 - xp).max(xp - i)
        })
        .fold(0.0, f64::max)
        / p
}

/// Exact star discrepancy `sup_x |#{x_i <= x}/P - x|` of a one-dimensional set.
pub fn star_discrepancy_1d(points: &[f64]) -> Result<f64> {
    validate_unit(points)?;
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_discrepancy(&sorted))
}

/// Maximum star discrepancy over the shifts `j / grid_size`. This is a lower
/// bound for the supremum over all shifts.
pub fn sup_shifted_discrepancy_1d(points: &[f64], grid_size: usize) -> Result<f64> {
    validate_unit(points)?;
    if grid_size == 0 {
        return Err(Error::Config("grid_size must be at least 1".into()));
    }
    let mut buf = vec![0.0; points.len()];
    let mut best = 0.0f64;
    for j in 0..grid_size {
        let s = j as f64 / grid_size as f64;
        for (b, &x) in buf.iter_mut().zip(points) {
            *b = frac(x + s);
        }
        buf.sort_by(f64::total_cmp);
        best = best.max(sorted_discrepancy(&buf));
    }
    Ok(best)
}
