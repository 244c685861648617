//! Stochastic generators of the four-species processes and their two-lane
//! decompositions.
//!
//! Local states are ordered (−2, −1, +1, +2) = j = 2a + b with a the σ bit
//! and b the τ bit; site 1 is the slowest index.

use serde::{Deserialize, Serialize};

use crate::algebra::{BoundaryRates, Lane};
use crate::error::{Error, Result};
use crate::lintensor::{CMatrix, Interleave, MatVec, SiteIndexing, SparseMatrix};

pub const LABELS: [&str; 4] = ["-2", "-1", "+1", "+2"];

/// Parses a species label (`-2`, `-1`, `+1`, `+2`, `1`, `2`) to its local index.
pub fn parse_label(s: &str) -> Result<usize> {
    match s.trim() {
        "-2" => Ok(0),
        "-1" => Ok(1),
        "+1" | "1" => Ok(2),
        "+2" | "2" => Ok(3),
        other => Err(Error::InvalidParameter(format!("unknown species label '{other}'"))),
    }
}

/// `-2,-1,+1` style label list to a basis index.
pub fn parse_state(s: &str) -> Result<(usize, usize)> {
    let digits = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(parse_label)
        .collect::<Result<Vec<_>>>()?;
    if digits.is_empty() {
        return Err(Error::InvalidParameter("empty state".into()));
    }
    let n = digits.len();
    Ok((n, SiteIndexing::new(n, 4).encode(&digits)))
}

pub fn state_label(idx: usize, n: usize) -> String {
    SiteIndexing::new(n, 4)
        .decode(idx)
        .iter()
        .map(|&j| LABELS[j])
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum Boundary {
    Periodic,
    Twisted,
    Open(BoundaryRates),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    Symmetric,
    Asymmetric { eta1: f64, eta2: f64 },
}

/// Which form of the periodic asymmetric generator: coth rates or q rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    RawM,
    #[default]
    EquivalentMbar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub boundary: Boundary,
    pub symmetry: Symmetry,
    #[serde(default)]
    pub variant: Variant,
}

impl GeneratorSpec {
    pub fn new(n: usize, boundary: Boundary, symmetry: Symmetry) -> Self {
        GeneratorSpec {
            n,
            boundary,
            symmetry,
            variant: Variant::EquivalentMbar,
        }
    }

    pub fn periodic(n: usize) -> Self {
        Self::new(n, Boundary::Periodic, Symmetry::Symmetric)
    }

    pub fn twisted(n: usize) -> Self {
        Self::new(n, Boundary::Twisted, Symmetry::Symmetric)
    }

    pub fn open(n: usize, rates: BoundaryRates) -> Self {
        Self::new(n, Boundary::Open(rates), Symmetry::Symmetric)
    }

    pub fn with_asymmetry(mut self, eta1: f64, eta2: f64) -> Self {
        self.symmetry = Symmetry::Asymmetric { eta1, eta2 };
        self
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    /// q = e^η per lane; (1, 1) when symmetric.
    pub fn q(&self) -> (f64, f64) {
        match self.symmetry {
            Symmetry::Symmetric => (1.0, 1.0),
            Symmetry::Asymmetric { eta1, eta2 } => (eta1.exp(), eta2.exp()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min = match self.boundary {
            Boundary::Open(_) => 1,
            _ => 2,
        };
        if self.n < min {
            return Err(Error::InvalidParameter(format!("N = {} (need N >= {min})", self.n)));
        }
        if let Symmetry::Asymmetric { eta1, eta2 } = self.symmetry {
            if !eta1.is_finite() || !eta2.is_finite() {
                return Err(Error::NonFinite("deformation parameters".into()));
            }
            if matches!(self.boundary, Boundary::Twisted) {
                return Err(Error::InvalidParameter(
                    "twisted boundary is defined for the symmetric process only".into(),
                ));
            }
            if self.variant == Variant::RawM {
                if !matches!(self.boundary, Boundary::Periodic) {
                    return Err(Error::InvalidParameter(
                        "coth-rate variant exists for the periodic chain only".into(),
                    ));
                }
                if eta1 == 0.0 || eta2 == 0.0 {
                    return Err(Error::InvalidParameter("coth rates need eta != 0".into()));
                }
            }
        }
        if let Boundary::Open(r) = self.boundary {
            for v in [r.s1, r.s2, r.t1, r.t2, r.s1p, r.s2p, r.t1p, r.t2p] {
                if !v.is_finite() {
                    return Err(Error::NonFinite("boundary rates".into()));
                }
            }
        }
        Ok(())
    }
}

/// Bulk pattern shared by the asymmetric local generators: `lo` sits where
/// 1/q appears, `hi` where q appears.
fn asym_pattern(lo1: f64, hi1: f64, lo2: f64, hi2: f64) -> CMatrix {
    let mut m = [0.0; 256];
    let mut set = |i: usize, j: usize, v: f64| m[16 * i + j] = v;
    set(1, 1, -lo2);
    set(1, 4, hi2);
    set(2, 2, -lo1);
    set(2, 8, hi1);
    set(3, 3, -lo1 - lo2);
    set(3, 6, hi2);
    set(3, 9, hi1);
    set(4, 1, lo2);
    set(4, 4, -hi2);
    set(6, 3, lo2);
    set(6, 6, -lo1 - hi2);
    set(6, 12, hi1);
    set(7, 7, -lo1);
    set(7, 13, hi1);
    set(8, 2, lo1);
    set(8, 8, -hi1);
    set(9, 3, lo1);
    set(9, 9, -hi1 - lo2);
    set(9, 12, hi2);
    set(11, 11, -lo2);
    set(11, 14, hi2);
    set(12, 6, lo1);
    set(12, 9, lo2);
    set(12, 12, -hi1 - hi2);
    set(13, 7, lo1);
    set(13, 13, -hi1);
    set(14, 11, lo2);
    set(14, 14, -hi2);
    CMatrix::from_real(16, 16, &m)
}

/// Symmetric bulk generator on sites (k, k+1).
#[rustfmt::skip]
pub fn symmetric_local() -> CMatrix {
    CMatrix::from_real(16, 16, &[
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0.,-1., 0., 0.,   1., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0.,-1., 0.,   0., 0., 0., 0.,   1., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0.,-2.,   0., 0., 1., 0.,   0., 1., 0., 0.,   0., 0., 0., 0.,
        0., 1., 0., 0.,  -1., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0., 1.,   0., 0.,-2., 0.,   0., 0., 0., 0.,   1., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0.,-1.,   0., 0., 0., 0.,   0., 1., 0., 0.,
        0., 0., 1., 0.,   0., 0., 0., 0.,  -1., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0., 1.,   0., 0., 0., 0.,   0.,-2., 0., 0.,   1., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0.,-1.,   0., 0., 1., 0.,
        0., 0., 0., 0.,   0., 0., 1., 0.,   0., 1., 0., 0.,  -2., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 1.,   0., 0., 0., 0.,   0.,-1., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 1.,   0., 0.,-1., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
    ])
}

/// Boundary bond (N, 1) of the twisted chain, first leg on site N.
#[rustfmt::skip]
pub fn twisted_local() -> CMatrix {
    CMatrix::from_real(16, 16, &[
       -2., 0., 0., 0.,   0., 1., 0., 0.,   0., 0., 1., 0.,   0., 0., 0., 0.,
        0.,-1., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 1.,   0., 0., 0., 0.,
        0., 0.,-1., 0.,   0., 0., 0., 1.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0., 0.,  -1., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 1., 0.,
        1., 0., 0., 0.,   0.,-2., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 1.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 1., 0.,   0., 0., 0.,-1.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,  -1., 0., 0., 0.,   0., 1., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        1., 0., 0., 0.,   0., 0., 0., 0.,   0., 0.,-2., 0.,   0., 0., 0., 1.,
        0., 1., 0., 0.,   0., 0., 0., 0.,   0., 0., 0.,-1.,   0., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,   0., 0., 0., 0.,
        0., 0., 0., 0.,   0., 0., 0., 0.,   1., 0., 0., 0.,   0.,-1., 0., 0.,
        0., 0., 0., 0.,   1., 0., 0., 0.,   0., 0., 0., 0.,   0., 0.,-1., 0.,
        0., 0., 0., 0.,   0., 1., 0., 0.,   0., 0., 1., 0.,   0., 0., 0.,-2.,
    ])
}

/// Asymmetric bulk generator with q rates (q_i = e^{η_i}).
pub fn mbar_local(q1: f64, q2: f64) -> CMatrix {
    asym_pattern(1.0 / q1, q1, 1.0 / q2, q2)
}

/// Asymmetric bulk generator with coth rates 𝔞 = coth η − 1, 𝔞̄ = coth η + 1.
pub fn raw_local(eta1: f64, eta2: f64) -> CMatrix {
    let (c1, c2) = (1.0 / eta1.tanh(), 1.0 / eta2.tanh());
    asym_pattern(c1 - 1.0, c1 + 1.0, c2 - 1.0, c2 + 1.0)
}

/// The coth-rate bulk matrix exactly as typeset, including the diagonal
/// entries (6,6) = (9,9) = −𝔞₁−𝔞₂ whose columns then fail to sum to zero.
pub fn raw_local_printed(eta1: f64, eta2: f64) -> CMatrix {
    let (c1, c2) = (1.0 / eta1.tanh(), 1.0 / eta2.tanh());
    let mut m = raw_local(eta1, eta2);
    let d = -(c1 - 1.0) - (c2 - 1.0);
    m[(6, 6)] = crate::lintensor::re(d);
    m[(9, 9)] = crate::lintensor::re(d);
    m
}

/// Left boundary term on site 1.
pub fn left_boundary(r: &BoundaryRates) -> CMatrix {
    let (s1, s2, t1, t2) = (r.s1, r.s2, r.t1, r.t2);
    CMatrix::from_real(
        4,
        4,
        &[
            -s1 - t1, t2, s2, 0.0, //
            t1, -s1 - t2, 0.0, s2, //
            s1, 0.0, -s2 - t1, t2, //
            0.0, s1, t1, -s2 - t2,
        ],
    )
}

/// Right boundary term on site N.
pub fn right_boundary(r: &BoundaryRates) -> CMatrix {
    let (s1, s2, t1, t2) = (r.s1p, r.s2p, r.t1p, r.t2p);
    CMatrix::from_real(
        4,
        4,
        &[
            s1 + t1, -t2, -s2, 0.0, //
            -t1, s1 + t2, 0.0, -s2, //
            -s1, 0.0, s2 + t1, -t2, //
            0.0, -s1, -t1, s2 + t2,
        ],
    )
}

/// Lane bulk generator; q = 1 gives the symmetric exclusion bond.
pub fn lane_bulk(q: f64) -> CMatrix {
    CMatrix::from_real(
        4,
        4,
        &[
            0.0, 0.0, 0.0, 0.0, //
            0.0, -1.0 / q, q, 0.0, //
            0.0, 1.0 / q, -q, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ],
    )
}

/// Lane twisted bond ½(xx − yy − zz − 1): |00⟩ ↔ |11⟩ at unit rate.
pub fn lane_twisted() -> CMatrix {
    CMatrix::from_real(
        4,
        4,
        &[
            -1.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, -1.0,
        ],
    )
}

pub fn lane_left(r: &BoundaryRates, lane: Lane) -> CMatrix {
    let l = r.lane(lane);
    CMatrix::from_real(2, 2, &[-l.a1, l.a2, l.a1, -l.a2])
}

pub fn lane_right(r: &BoundaryRates, lane: Lane) -> CMatrix {
    let l = r.lane(lane);
    CMatrix::from_real(2, 2, &[l.a1p, -l.a2p, -l.a1p, l.a2p])
}

/// The bulk local generator selected by `spec`.
pub fn local_generator(spec: &GeneratorSpec) -> CMatrix {
    match spec.symmetry {
        Symmetry::Symmetric => symmetric_local(),
        Symmetry::Asymmetric { eta1, eta2 } => match spec.variant {
            Variant::RawM => raw_local(eta1, eta2),
            Variant::EquivalentMbar => mbar_local(eta1.exp(), eta2.exp()),
        },
    }
}

/// A validated generator on `local_dim^n` states.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Generator {
    pub n: usize,
    pub local_dim: usize,
    pub matrix: SparseMatrix,
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn dense(&self) -> CMatrix {
        self.matrix.to_dense()
    }

    /// Column sums within `tol` of zero and off-diagonals ≥ −tol.
    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for (i, j, v) in self.matrix.triplets() {
            if i != j && v < -tol {
                return Err(Error::Stochasticity { row: i, col: j, value: v });
            }
        }
        for (j, s) in self.matrix.column_sums().into_iter().enumerate() {
            if s.abs() > tol {
                return Err(Error::Stochasticity { row: j, col: j, value: s });
            }
        }
        Ok(())
    }
}

impl MatVec for Generator {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.apply(x, y)
    }
    fn norm1(&self) -> f64 {
        self.matrix.norm1()
    }
}

/// Accumulates embedded local terms as sparse triplets.
struct Assembler {
    ix: SiteIndexing,
    trip: Vec<(usize, usize, f64)>,
}

impl Assembler {
    fn new(n: usize, local_dim: usize) -> Self {
        Assembler {
            ix: SiteIndexing::new(n, local_dim),
            trip: Vec::new(),
        }
    }

    /// Adds `op` acting on 0-based `sites` (first site = slowest leg of op).
    fn add(&mut self, op: &CMatrix, sites: &[usize]) -> Result<()> {
        let d = self.ix.local_dim;
        let ld = d.pow(sites.len() as u32);
        let vals = op.real_parts(1e-14)?;
        let stride: Vec<usize> = sites
            .iter()
            .map(|&s| d.pow((self.ix.n - 1 - s) as u32))
            .collect();
        // nonzeros grouped by local column
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ld];
        for r in 0..ld {
            for c in 0..ld {
                let v = vals[r * ld + c];
                if v != 0.0 {
                    cols[c].push((r, v));
                }
            }
        }
        let offset = |loc: usize| -> usize {
            let mut off = 0;
            let mut rest = loc;
            for k in (0..sites.len()).rev() {
                off += (rest % d) * stride[k];
                rest /= d;
            }
            off
        };
        for g in 0..self.ix.dim() {
            let loc = sites
                .iter()
                .fold(0, |acc, &s| acc * d + self.ix.digit(g, s));
            let base = g - offset(loc);
            for &(r, v) in &cols[loc] {
                self.trip.push((base + offset(r), g, v));
            }
        }
        Ok(())
    }

    fn finish(self, n: usize) -> Result<Generator> {
        let matrix = SparseMatrix::from_triplets(self.ix.dim(), self.trip)?;
        Ok(Generator {
            n,
            local_dim: self.ix.local_dim,
            matrix,
        })
    }
}

const STOCH_TOL: f64 = 1e-12;

/// Sum of embedded local terms for `spec`, validated as a Markov generator.
pub fn build_generator(spec: &GeneratorSpec) -> Result<Generator> {
    let g = build_unchecked(spec)?;
    g.check_stochastic(STOCH_TOL)?;
    Ok(g)
}

/// Same as [`build_generator`] without the sign and column-sum checks.
pub fn build_unchecked(spec: &GeneratorSpec) -> Result<Generator> {
    spec.validate()?;
    let n = spec.n;
    let bulk = local_generator(spec);
    let mut a = Assembler::new(n, 4);
    for k in 0..n.saturating_sub(1) {
        a.add(&bulk, &[k, k + 1])?;
    }
    match spec.boundary {
        Boundary::Periodic => a.add(&bulk, &[n - 1, 0])?,
        Boundary::Twisted => a.add(&twisted_local(), &[n - 1, 0])?,
        Boundary::Open(r) => {
            a.add(&left_boundary(&r), &[0])?;
            a.add(&right_boundary(&r), &[n - 1])?;
        }
    }
    a.finish(n)
}

/// The two lane generators (σ, τ) on 2^N states each. For asymmetric
/// chains these are the q-rate exclusion processes.
pub fn lane_generators(spec: &GeneratorSpec) -> Result<(Generator, Generator)> {
    spec.validate()?;
    let (q1, q2) = spec.q();
    let lane = |l: Lane, q: f64| -> Result<Generator> {
        let n = spec.n;
        let bulk = lane_bulk(q);
        let mut a = Assembler::new(n, 2);
        for k in 0..n.saturating_sub(1) {
            a.add(&bulk, &[k, k + 1])?;
        }
        match spec.boundary {
            Boundary::Periodic => a.add(&bulk, &[n - 1, 0])?,
            Boundary::Twisted => a.add(&lane_twisted(), &[n - 1, 0])?,
            Boundary::Open(r) => {
                a.add(&lane_left(&r, l), &[0])?;
                a.add(&lane_right(&r, l), &[n - 1])?;
            }
        }
        let g = a.finish(n)?;
        g.check_stochastic(STOCH_TOL)?;
        Ok(g)
    };
    Ok((lane(Lane::Sigma, q1)?, lane(Lane::Tau, q2)?))
}

/// Πᵀ (wσ·Mσ ⊗ I + I ⊗ wτ·Mτ) Π, the lane sum mapped back to the site basis.
pub fn lane_sum_in_site_basis(ms: &Generator, mt: &Generator, ws: f64, wt: f64) -> CMatrix {
    let n = ms.n;
    let half = 1usize << n;
    let s = ms.dense().scale(crate::lintensor::re(ws));
    let t = mt.dense().scale(crate::lintensor::re(wt));
    let sum = crate::lintensor::kron(&s, &CMatrix::identity(half))
        .add(&crate::lintensor::kron(&CMatrix::identity(half), &t));
    Interleave::new(n).to_site_basis(&sum)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Charge {
    /// n₊₂ + n₊₁
    Q1,
    /// n₊₂ + n₋₁
    Q2,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChargeOperator {
    pub which: Charge,
    pub n: usize,
    pub values: Vec<u32>,
}

impl ChargeOperator {
    pub fn dense(&self) -> CMatrix {
        let d: Vec<_> = self.values.iter().map(|&v| crate::lintensor::re(v as f64)).collect();
        CMatrix::diag(&d)
    }
}

pub fn charge_operator(which: Charge, n: usize) -> ChargeOperator {
    let ix = SiteIndexing::new(n, 4);
    let bit = |j: usize| match which {
        Charge::Q1 => (j >> 1) as u32,
        Charge::Q2 => (j & 1) as u32,
    };
    let values = (0..ix.dim())
        .map(|g| ix.decode(g).into_iter().map(bit).sum())
        .collect();
    ChargeOperator { which, n, values }
}

/// Number of sites holding local state `j` in basis state `g`.
pub fn occupation(j: usize, g: usize, n: usize) -> usize {
    SiteIndexing::new(n, 4).decode(g).into_iter().filter(|&x| x == j).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_are_column_stochastic() {
        for m in [symmetric_local(), twisted_local(), mbar_local(1.3, 0.6), raw_local(0.3, 0.7)] {
            for s in m.column_sums() {
                assert!(s.norm() < 1e-14);
            }
        }
        let p = raw_local_printed(0.3, 0.7).column_sums();
        assert!(p[6].norm() > 1e-3 && p[9].norm() > 1e-3);
    }

    #[test]
    fn labels_round_trip() {
        let (n, g) = parse_state("-2,-1,+1").unwrap();
        assert_eq!(n, 3);
        assert_eq!(state_label(g, 3), "-2,-1,+1");
        assert!(parse_state("-3").is_err());
    }

    #[test]
    fn asymmetric_twisted_rejected() {
        let s = GeneratorSpec::twisted(3).with_asymmetry(0.2, 0.3);
        assert!(build_generator(&s).is_err());
    }
}
