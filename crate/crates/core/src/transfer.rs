//! Monodromy and transfer matrices, and generators recovered from them by a
//! logarithmic derivative at u = 0.
//!
//! Legs are ordered (auxiliary, site 1, …, site N); the monodromy is the
//! ordered product R₀N(u)⋯R₀₁(u).

use serde::Serialize;

use crate::algebra::{k_matrix, k_matrix_derivative, r_matrix, r_matrix_derivative, twist_g};
use crate::algebra::{BoundaryRates, KKind, Lane, RKind};
use crate::error::{Error, Result};
use crate::lintensor::{apply_left, num_derivative, re, CMatrix, Interleave, C64, ONE};
use crate::markov::{Boundary, Generator, GeneratorSpec, Symmetry, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LaneSel {
    Full,
    Sigma,
    Tau,
}

impl LaneSel {
    pub fn lane(self) -> Option<Lane> {
        match self {
            LaneSel::Full => None,
            LaneSel::Sigma => Some(Lane::Sigma),
            LaneSel::Tau => Some(Lane::Tau),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransferBoundary {
    Periodic,
    Twisted,
    DoubleRow {
        minus: KKind,
        plus: KKind,
        rates: BoundaryRates,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferSpec {
    pub rkind: RKind,
    pub boundary: TransferBoundary,
    pub n: usize,
    pub lane: LaneSel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivative {
    /// Central differences with one Richardson step, h = 1e-4.
    Numeric,
    /// Product rule with the closed-form R′ and K′.
    Analytic,
}

impl TransferSpec {
    /// The transfer matrix whose logarithmic derivative gives the generator
    /// of `g` (or of its `lane` sub-chain).
    pub fn from_generator(g: &GeneratorSpec, lane: LaneSel) -> Result<Self> {
        g.validate()?;
        let rkind = match (g.symmetry, lane.lane()) {
            (Symmetry::Symmetric, None) => RKind::D2Sym,
            (Symmetry::Symmetric, Some(_)) => RKind::SixVertex,
            (Symmetry::Asymmetric { eta1, eta2 }, None) => RKind::d2_asym(re(eta1), re(eta2))?,
            (Symmetry::Asymmetric { eta1, eta2 }, Some(l)) => {
                RKind::deformed(re(if l == Lane::Sigma { eta1 } else { eta2 }))?
            }
        };
        let boundary = match g.boundary {
            Boundary::Periodic => TransferBoundary::Periodic,
            Boundary::Twisted => TransferBoundary::Twisted,
            Boundary::Open(rates) => {
                let (minus, plus) = match (rkind, lane.lane()) {
                    (RKind::D2Sym, _) => (KKind::SymMinus, KKind::SymPlus),
                    (RKind::SixVertex, Some(l)) => (KKind::SymFactorMinus(l), KKind::SymFactorPlus(l)),
                    (RKind::DeformedSixVertex(e), Some(l)) => (KKind::AsymMinus(l, e), KKind::AsymPlus(l, e)),
                    (RKind::D2Asym(a, b), _) => (KKind::AsymFullMinus(a, b), KKind::AsymFullPlus(a, b)),
                    _ => unreachable!(),
                };
                TransferBoundary::DoubleRow { minus, plus, rates }
            }
        };
        let s = TransferSpec {
            rkind,
            boundary,
            n: g.n,
            lane,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("N = 0".into()));
        }
        let d = self.rkind.local_dim();
        if (d == 4) != (self.lane == LaneSel::Full) {
            return Err(Error::Incompatible(format!(
                "{} on lane selection {:?}",
                self.rkind.name(),
                self.lane
            )));
        }
        if let TransferBoundary::DoubleRow { minus, plus, .. } = self.boundary {
            if minus.is_plus() || !plus.is_plus() || minus.r_kind() != self.rkind || plus.r_kind() != self.rkind {
                return Err(Error::Incompatible(format!(
                    "{} / {} with {}",
                    minus.name(),
                    plus.name(),
                    self.rkind.name()
                )));
            }
        }
        if matches!(self.boundary, TransferBoundary::Twisted)
            && !matches!(self.rkind, RKind::D2Sym | RKind::SixVertex)
        {
            return Err(Error::Incompatible("twist needs a symmetric R-matrix".into()));
        }
        Ok(())
    }

    pub fn local_dim(&self) -> usize {
        self.rkind.local_dim()
    }

    fn dims(&self) -> Vec<usize> {
        vec![self.local_dim(); self.n + 1]
    }

    /// Factors in application order (rightmost first): (value, derivative, legs).
    fn factors(&self, u: C64) -> Vec<(CMatrix, Option<CMatrix>, Vec<usize>)> {
        let r = |legs: Vec<usize>| (r_matrix(self.rkind, u), Some(r_matrix_derivative(self.rkind, u)), legs);
        let mut f = Vec::new();
        match self.boundary {
            TransferBoundary::Periodic => {
                f.extend((1..=self.n).map(|j| r(vec![0, j])));
            }
            TransferBoundary::Twisted => {
                f.extend((1..=self.n).map(|j| r(vec![0, j])));
                f.push((twist_g(self.local_dim()), None, vec![0]));
            }
            TransferBoundary::DoubleRow { minus, plus, rates } => {
                f.extend((1..=self.n).rev().map(|j| r(vec![j, 0])));
                f.push((
                    k_matrix(minus, &rates, u),
                    Some(k_matrix_derivative(minus, &rates, u)),
                    vec![0],
                ));
                f.extend((1..=self.n).map(|j| r(vec![0, j])));
                f.push((
                    k_matrix(plus, &rates, u),
                    Some(k_matrix_derivative(plus, &rates, u)),
                    vec![0],
                ));
            }
        }
        f
    }

    /// Scale α in M = α ∂ ln t − shift.
    pub fn log_scale(&self) -> f64 {
        let base = match self.rkind {
            RKind::DeformedSixVertex(e) => e.re.sinh(),
            _ => 1.0,
        };
        match self.boundary {
            TransferBoundary::DoubleRow { .. } => 0.5 * base,
            _ => base,
        }
    }

    /// The identity shift printed alongside the extraction, when there is one.
    pub fn printed_shift(&self) -> Option<f64> {
        let n = self.n as f64;
        if let TransferBoundary::DoubleRow { .. } = self.boundary {
            return None;
        }
        Some(match self.rkind {
            RKind::D2Sym => 2.0 * n,
            RKind::SixVertex => n,
            RKind::DeformedSixVertex(e) => n * e.re.cosh(),
            RKind::D2Asym(a, b) => n * (1.0 / a.re.tanh() + 1.0 / b.re.tanh()),
        })
    }
}

/// Σ_a ⟨a| F_k ⋯ F_1 |a⟩ over the auxiliary leg, with factor `swap` (if any)
/// replaced by its derivative.
fn trace_chain(
    spec: &TransferSpec,
    factors: &[(CMatrix, Option<CMatrix>, Vec<usize>)],
    swap: Option<usize>,
) -> Result<CMatrix> {
    let d = spec.local_dim();
    let dims = spec.dims();
    let p = d.pow(spec.n as u32);
    let blocks = crate::par::par_map((0..d).collect(), |a| -> Result<CMatrix> {
        let mut m = CMatrix::zeros(d * p, p);
        for i in 0..p {
            m[(a * p + i, i)] = ONE;
        }
        for (k, (val, der, legs)) in factors.iter().enumerate() {
            let op = if swap == Some(k) { der.as_ref().unwrap() } else { val };
            m = apply_left(op, legs, &dims, &m)?;
        }
        Ok(CMatrix::from_fn(p, p, |i, j| m[(a * p + i, j)]))
    });
    let mut out = CMatrix::zeros(p, p);
    for b in blocks {
        out = out.add(&b?);
    }
    Ok(out)
}

/// Full monodromy on (auxiliary ⊗ physical); the double-row case returns
/// K⁺ T K⁻ T̂ before the trace.
pub fn monodromy(spec: &TransferSpec, u: C64) -> Result<CMatrix> {
    spec.validate()?;
    let dims = spec.dims();
    let total: usize = dims.iter().product();
    let mut m = CMatrix::identity(total);
    for (val, _, legs) in spec.factors(u) {
        if matches!(spec.boundary, TransferBoundary::Twisted) && legs == [0] {
            continue;
        }
        m = apply_left(&val, &legs, &dims, &m)?;
    }
    Ok(m)
}

/// Double-row monodromy T K⁻ T̂ without K⁺; its auxiliary blocks are the
/// operators used to build open-chain Bethe vectors.
pub fn double_row(spec: &TransferSpec, u: C64) -> Result<CMatrix> {
    spec.validate()?;
    if !matches!(spec.boundary, TransferBoundary::DoubleRow { .. }) {
        return Err(Error::Incompatible("double row needs open boundaries".into()));
    }
    let dims = spec.dims();
    let mut m = CMatrix::identity(dims.iter().product());
    let f = spec.factors(u);
    for (val, _, legs) in &f[..f.len() - 1] {
        m = apply_left(val, legs, &dims, &m)?;
    }
    Ok(m)
}

pub fn transfer(spec: &TransferSpec, u: C64) -> Result<CMatrix> {
    spec.validate()?;
    trace_chain(spec, &spec.factors(u), None)
}

pub fn transfer_derivative(spec: &TransferSpec, u: C64, mode: Derivative) -> Result<CMatrix> {
    spec.validate()?;
    match mode {
        Derivative::Numeric => num_derivative(|x| transfer(spec, x), u, 1e-4),
        Derivative::Analytic => {
            let f = spec.factors(u);
            let mut out = CMatrix::zeros(spec.local_dim().pow(spec.n as u32), spec.local_dim().pow(spec.n as u32));
            for k in 0..f.len() {
                if f[k].1.is_some() {
                    out = out.add(&trace_chain(spec, &f, Some(k))?);
                }
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractionReport {
    pub scale: f64,
    /// Identity shift fixed by requiring zero column sums.
    pub shift: f64,
    /// max − min of the column sums before the shift.
    pub spread: f64,
    pub printed_shift: Option<f64>,
    /// Largest imaginary part discarded.
    pub imag: f64,
}

const SPREAD_TOL: f64 = 1e-7;

/// α t′(0) t(0)⁻¹ − shift·I with the shift fixed by zero column sums.
pub fn extract_from_transfer(spec: &TransferSpec, mode: Derivative) -> Result<(CMatrix, ExtractionReport)> {
    let zero = re(0.0);
    let t0 = transfer(spec, zero)?;
    let dt = transfer_derivative(spec, zero, mode)?;
    let alpha = spec.log_scale();
    let h = dt.matmul(&t0.inverse()?).scale(re(alpha));
    let sums = h.column_sums();
    let (lo, hi) = sums
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.re), b.max(s.re)));
    let scale = 1.0 + h.max_abs();
    let spread = hi - lo;
    if spread > SPREAD_TOL * scale || sums.iter().any(|s| s.im.abs() > SPREAD_TOL * scale) {
        return Err(Error::NonConstantShift { spread });
    }
    let shift = sums.iter().map(|s| s.re).sum::<f64>() / sums.len() as f64;
    let m = h.add_scaled_identity(re(-shift));
    let imag = m.data().iter().fold(0.0f64, |a, z| a.max(z.im.abs()));
    let m = CMatrix::from_fn(m.rows(), m.cols(), |i, j| re(m[(i, j)].re));
    Ok((
        m,
        ExtractionReport {
            scale: alpha,
            shift,
            spread,
            printed_shift: spec.printed_shift(),
            imag,
        },
    ))
}

/// Reports for each transfer matrix that went into an extracted generator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Extracted {
    pub matrix: CMatrix,
    pub reports: Vec<(LaneSel, ExtractionReport)>,
}

/// The generator of `g` recovered from transfer matrices. Asymmetric chains
/// in the q-rate form are assembled from their two lane extractions; all
/// other cases use the full transfer matrix.
pub fn extract_generator(g: &GeneratorSpec, mode: Derivative) -> Result<Extracted> {
    g.validate()?;
    let via_lanes = matches!(g.symmetry, Symmetry::Asymmetric { .. })
        && !(g.variant == Variant::RawM && matches!(g.boundary, Boundary::Periodic));
    if !via_lanes {
        let spec = TransferSpec::from_generator(g, LaneSel::Full)?;
        let (matrix, rep) = extract_from_transfer(&spec, mode)?;
        return Ok(Extracted {
            matrix,
            reports: vec![(LaneSel::Full, rep)],
        });
    }
    let (ms, rs) = extract_from_transfer(&TransferSpec::from_generator(g, LaneSel::Sigma)?, mode)?;
    let (mt, rt) = extract_from_transfer(&TransferSpec::from_generator(g, LaneSel::Tau)?, mode)?;
    let half = 1usize << g.n;
    let id = CMatrix::identity(half);
    let sum = crate::lintensor::kron(&ms, &id).add(&crate::lintensor::kron(&id, &mt));
    Ok(Extracted {
        matrix: Interleave::new(g.n).to_site_basis(&sum),
        reports: vec![(LaneSel::Sigma, rs), (LaneSel::Tau, rt)],
    })
}

/// Extracted matrix as a sparse generator, dropping entries below `chop`.
pub fn to_generator(m: &CMatrix, n: usize, local_dim: usize, chop: f64) -> Result<Generator> {
    let p = m.rows();
    let mut trip = Vec::new();
    for i in 0..p {
        for j in 0..p {
            let v = m[(i, j)].re;
            if v.abs() > chop {
                trip.push((i, j, v));
            }
        }
    }
    Ok(Generator {
        n,
        local_dim,
        matrix: crate::lintensor::SparseMatrix::from_triplets(p, trip)?,
    })
}

/// ‖[t(u), t(v)]‖∞ / (‖t(u)‖‖t(v)‖) over the samples.
pub fn commutativity_residual(spec: &TransferSpec, samples: &[(C64, C64)]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &(u, v) in samples {
        let (a, b) = (transfer(spec, u)?, transfer(spec, v)?);
        let c = crate::lintensor::commutator(&a, &b).max_abs();
        worst = worst.max(c / (a.max_abs() * b.max_abs()).max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// max ‖Π t(u) Πᵀ − tσ(u) ⊗ tτ(u)‖∞ relative to ‖t(u)‖.
pub fn factorization_residual(g: &GeneratorSpec, us: &[C64]) -> Result<f64> {
    let full = TransferSpec::from_generator(g, LaneSel::Full)?;
    let sig = TransferSpec::from_generator(g, LaneSel::Sigma)?;
    let tau = TransferSpec::from_generator(g, LaneSel::Tau)?;
    let pi = Interleave::new(g.n);
    let mut worst = 0.0f64;
    for &u in us {
        let t = transfer(&full, u)?;
        let prod = crate::lintensor::kron(&transfer(&sig, u)?, &transfer(&tau, u)?);
        worst = worst.max(pi.to_lane_basis(&t).dist(&prod) / t.max_abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}
