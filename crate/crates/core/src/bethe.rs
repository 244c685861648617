//! T–Q relations, Bethe equations, energies, a multistart Newton solver and
//! reconciliation of Bethe spectra with exact diagonalization.
//!
//! Every case is written in the common form
//! Λ(u) = a(u) Q(u−δ)/Q(u) + d(u) Q(u+δ)/Q(u),
//! so one residual, one solver and one pole check serve all of them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::algebra::{Lane, LaneRates};
use crate::error::{Error, Result};
use crate::lintensor::{c, eigenvalues, re, CMatrix, C64, ONE, ZERO};
use crate::markov::{lane_generators, Boundary, GeneratorSpec, Symmetry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// One lane of a solved model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case")]
pub enum TqCase {
    PeriodicSym { n: usize },
    TwistedSym { n: usize },
    OpenSym { n: usize, branch: Branch, w1: f64, w2: f64 },
    /// The sector exponent m is the total root count of the set (finite plus
    /// infinite); see [`RootSet::m`].
    PeriodicAsym { n: usize, eta: f64 },
    OpenAsym { n: usize, eta: f64, rates: LaneRates },
    /// Steady-state branch of the open asymmetric lane (no roots).
    OpenAsymSteady { n: usize, eta: f64, rates: LaneRates },
}

impl TqCase {
    pub fn n(&self) -> usize {
        match *self {
            TqCase::PeriodicSym { n }
            | TqCase::TwistedSym { n }
            | TqCase::OpenSym { n, .. }
            | TqCase::PeriodicAsym { n, .. }
            | TqCase::OpenAsym { n, .. }
            | TqCase::OpenAsymSteady { n, .. } => n,
        }
    }

    pub fn name(&self) -> String {
        match self {
            TqCase::PeriodicSym { .. } => "PeriodicSym".into(),
            TqCase::TwistedSym { .. } => "TwistedSym".into(),
            TqCase::OpenSym { branch, .. } => format!("OpenSym({})", if *branch == Branch::Plus { "+" } else { "-" }),
            TqCase::PeriodicAsym { .. } => "PeriodicAsym".into(),
            TqCase::OpenAsym { .. } => "OpenAsym".into(),
            TqCase::OpenAsymSteady { .. } => "OpenAsymSteady".into(),
        }
    }

    pub fn is_asymmetric(&self) -> bool {
        matches!(self, TqCase::PeriodicAsym { .. } | TqCase::OpenAsym { .. } | TqCase::OpenAsymSteady { .. })
    }

    fn delta(&self) -> f64 {
        match *self {
            TqCase::PeriodicAsym { eta, .. } | TqCase::OpenAsym { eta, .. } | TqCase::OpenAsymSteady { eta, .. } => eta,
            _ => 1.0,
        }
    }

    /// Shift of the paired root μ ↔ −μ−s for open chains.
    fn pair_shift(&self) -> Option<f64> {
        match *self {
            TqCase::OpenSym { .. } => Some(1.0),
            TqCase::OpenAsym { eta, .. } | TqCase::OpenAsymSteady { eta, .. } => Some(eta),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let periodic = matches!(self, TqCase::PeriodicSym { .. } | TqCase::TwistedSym { .. } | TqCase::PeriodicAsym { .. });
        if n == 0 || (periodic && n < 2) {
            return Err(Error::InvalidParameter(format!("N = {n} for {}", self.name())));
        }
        if self.is_asymmetric() {
            let eta = self.delta();
            if !eta.is_finite() || eta.abs() < 1e-12 {
                return Err(Error::InvalidParameter(format!("eta = {eta}")));
            }
        }
        if let TqCase::OpenSym { w1, w2, .. } = self {
            if !w1.is_finite() || !w2.is_finite() {
                return Err(Error::NonFinite("boundary weights".into()));
            }
        }
        Ok(())
    }
}

/// Solved (or candidate) Bethe roots for one lane eigenstate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RootSet {
    pub case: TqCase,
    pub finite: Vec<C64>,
    pub inf_count: usize,
    /// The {−1, 0} pair, whose energy is not given by the root sum.
    pub singular: bool,
    pub residual: f64,
}

impl RootSet {
    pub fn new(case: TqCase, finite: Vec<C64>, inf_count: usize) -> Self {
        let singular = is_singular_pair(&case, &finite);
        let mut s = RootSet {
            case,
            finite,
            inf_count,
            singular,
            residual: 0.0,
        };
        s.residual = bae_residual(&s).unwrap_or(f64::NAN);
        s
    }

    /// Intended root count M.
    pub fn m(&self) -> usize {
        self.finite.len() + self.inf_count
    }
}

fn is_singular_pair(case: &TqCase, roots: &[C64]) -> bool {
    if !matches!(case, TqCase::PeriodicSym { .. } | TqCase::TwistedSym { .. }) {
        return false;
    }
    let near = |t: f64| roots.iter().any(|z| (z - t).norm() < 1e-8);
    near(0.0) && near(-1.0)
}

fn sinh(z: C64) -> C64 {
    z.sinh()
}

fn open_asym_f(n: usize, eta: f64, r: &LaneRates, u: C64, steady: bool) -> C64 {
    let e = re(eta);
    let su = sinh(u);
    let sg = if steady { -1.0 } else { 1.0 };
    let left = -sinh(e) + sg * (r.a1 * (-u).exp() * su + r.a2 * u.exp() * su);
    let right = -sinh(e) - sg * (r.a2p * (-u).exp() * su + r.a1p * u.exp() * su);
    sinh(2.0 * u + 2.0 * e) / sinh(2.0 * u + e) * left * right * sinh(u + e).powi(2 * n as i32)
}

/// Q(u) for the roots of a set (infinite roots excluded).
pub fn q_eval(case: &TqCase, roots: &[C64], u: C64) -> C64 {
    let mut q = ONE;
    for &m in roots {
        q *= match *case {
            TqCase::PeriodicSym { .. } | TqCase::TwistedSym { .. } => u - m,
            TqCase::OpenSym { .. } => (u - m) * (u + m + 1.0),
            TqCase::PeriodicAsym { .. } => sinh(u - m),
            TqCase::OpenAsym { eta, .. } | TqCase::OpenAsymSteady { eta, .. } => sinh(u - m) * sinh(u + m + eta),
        };
    }
    q
}

/// The dressing functions (a(u), d(u)) for a set of `k` finite and `j` infinite roots.
fn coeffs(case: &TqCase, k: usize, j: usize, u: C64) -> (C64, C64) {
    match *case {
        TqCase::PeriodicSym { n } => ((u + 1.0).powi(n as i32), u.powi(n as i32)),
        TqCase::TwistedSym { n } => ((u + 1.0).powi(n as i32), -u.powi(n as i32)),
        TqCase::OpenSym { n, branch, w1, w2 } => {
            let e = branch.sign();
            let a = (2.0 * u + 2.0) / (2.0 * u + 1.0) * (1.0 + e * w1 * u) * (1.0 - e * w2 * u) * (u + 1.0).powi(2 * n as i32);
            let d = 2.0 * u / (2.0 * u + 1.0) * (1.0 - e * w1 * (u + 1.0)) * (1.0 + e * w2 * (u + 1.0)) * u.powi(2 * n as i32);
            (a, d)
        }
        TqCase::PeriodicAsym { n, eta } => {
            let m = (k + j) as f64;
            let j = j as f64;
            let e = re(eta);
            let a = (-m * eta + j * eta).exp() * sinh(u + e).powi(n as i32);
            let d = ((n as f64 - m) * eta - j * eta).exp() * sinh(u).powi(n as i32);
            (a, d)
        }
        TqCase::OpenAsym { n, eta, rates } => (
            open_asym_f(n, eta, &rates, u, false),
            open_asym_f(n, eta, &rates, -u - eta, false),
        ),
        TqCase::OpenAsymSteady { n, eta, rates } => (
            open_asym_f(n, eta, &rates, u, true),
            open_asym_f(n, eta, &rates, -u - eta, true),
        ),
    }
}

/// Λ(u) from the T–Q relation. Infinite roots contribute a Q-ratio of 1.
pub fn tq_lambda(set: &RootSet, u: C64) -> Result<C64> {
    let case = &set.case;
    let q = q_eval(case, &set.finite, u);
    let scale: f64 = set.finite.iter().map(|m| 1.0 + m.norm()).product();
    if q.norm() <= 1e-14 * scale.max(1.0) {
        return Err(Error::Singular(format!("u = {u} is a zero of Q")));
    }
    let dl = case.delta();
    let (a, d) = coeffs(case, set.finite.len(), set.inf_count, u);
    let v = (a * q_eval(case, &set.finite, u - dl) + d * q_eval(case, &set.finite, u + dl)) / q;
    if !v.re.is_finite() || !v.im.is_finite() {
        return Err(Error::Singular(format!("u = {u}")));
    }
    Ok(v)
}

/// r_k = a Q(μ_k−δ) / (−d Q(μ_k+δ)); the Bethe equations say r_k = 1.
fn bae_ratios(case: &TqCase, roots: &[C64], inf: usize) -> Vec<C64> {
    let dl = case.delta();
    roots
        .iter()
        .map(|&m| {
            let (a, d) = coeffs(case, roots.len(), inf, m);
            a * q_eval(case, roots, m - dl) / (-d * q_eval(case, roots, m + dl))
        })
        .collect()
}

fn log_residuals(case: &TqCase, roots: &[C64], inf: usize) -> Vec<C64> {
    bae_ratios(case, roots, inf).into_iter().map(|r| r.ln()).collect()
}

/// Largest per-root residual of the Bethe equations: |Log r_k| for the
/// product forms, a scaled polynomial for the open asymmetric lane.
pub fn bae_residual(set: &RootSet) -> Result<f64> {
    if set.singular {
        return Err(Error::Singular("singular root pair {-1, 0}".into()));
    }
    let case = &set.case;
    if matches!(case, TqCase::OpenAsymSteady { .. }) {
        return if set.finite.is_empty() {
            Ok(0.0)
        } else {
            Err(Error::InvalidParameter("steady branch carries no roots".into()))
        };
    }
    let dl = case.delta();
    let mut worst = 0.0f64;
    for &m in &set.finite {
        let (a, d) = coeffs(case, set.finite.len(), set.inf_count, m);
        let lhs = a * q_eval(case, &set.finite, m - dl);
        let rhs = d * q_eval(case, &set.finite, m + dl);
        let r = if matches!(case, TqCase::OpenAsym { .. }) {
            (lhs + rhs).norm() / lhs.norm().max(rhs.norm())
        } else {
            (lhs / -rhs).ln().norm()
        };
        if !r.is_finite() {
            return Err(Error::Singular(format!("root {m} sits on a pole of the Bethe equations")));
        }
        worst = worst.max(r);
    }
    Ok(worst)
}

/// Eigenvalue of the lane generator from the root sum.
pub fn energy(set: &RootSet) -> Result<C64> {
    if set.singular {
        return Err(Error::Singular("energy of the {-1, 0} pair".into()));
    }
    let mut e = ZERO;
    match set.case {
        TqCase::PeriodicSym { .. } | TqCase::TwistedSym { .. } => {
            for &m in &set.finite {
                e += 1.0 / (m * (m + 1.0));
            }
        }
        TqCase::OpenSym { branch, w1, w2, .. } => {
            for &m in &set.finite {
                e += 1.0 / (m * (m + 1.0));
            }
            e += 0.5 * branch.sign() * (w1 - w2) - 0.5 * w1 + 0.5 * w2;
        }
        TqCase::PeriodicAsym { eta, .. } | TqCase::OpenAsym { eta, .. } => {
            let s2 = eta.sinh().powi(2);
            for &m in &set.finite {
                e += s2 / (sinh(m) * sinh(m + eta));
            }
            if let TqCase::OpenAsym { rates, .. } = set.case {
                e += -rates.w1() + rates.w2();
            }
        }
        TqCase::OpenAsymSteady { .. } => {}
    }
    if !e.re.is_finite() || !e.im.is_finite() {
        return Err(Error::Singular("root on a pole of the energy".into()));
    }
    Ok(e)
}

/// The same eigenvalue from the logarithmic derivative of Λ at u = 0, with
/// the scale and shift of the lane generator. Finite for the singular pair.
pub fn lambda_energy(set: &RootSet) -> Result<C64> {
    let n = set.case.n() as f64;
    let h = 1e-4;
    let lam = |u: f64| tq_lambda(set, re(u));
    let l0 = lam(0.0)?;
    let d1 = (lam(h)? - lam(-h)?) / (2.0 * h);
    let d2 = (lam(2.0 * h)? - lam(-2.0 * h)?) / (4.0 * h);
    let dl = (4.0 * d1 - d2) / 3.0 / l0;
    Ok(match set.case {
        TqCase::PeriodicSym { .. } | TqCase::TwistedSym { .. } => dl - n,
        TqCase::OpenSym { w1, w2, .. } => 0.5 * (dl - 2.0 * n + 1.0 - w1 + w2),
        TqCase::PeriodicAsym { eta, .. } => eta.sinh() * dl - n * eta.cosh(),
        TqCase::OpenAsym { eta, rates, .. } | TqCase::OpenAsymSteady { eta, rates, .. } => {
            // Λ(0) is a constant times the constant of the lane identity shift.
            0.5 * eta.sinh() * dl - open_asym_shift(set.case.n(), eta, &rates)
        }
    })
}

/// Constant of the open asymmetric lane extraction, fixed by the steady branch (E = 0).
fn open_asym_shift(n: usize, eta: f64, r: &LaneRates) -> f64 {
    let h = 1e-4;
    let g = |u: f64| {
        let u = re(u);
        open_asym_f(n, eta, r, u, true) + open_asym_f(n, eta, r, -u - eta, true)
    };
    let d1 = (g(h) - g(-h)) / (2.0 * h);
    let d2 = (g(2.0 * h) - g(-2.0 * h)) / (4.0 * h);
    (0.5 * eta.sinh() * (4.0 * d1 - d2) / 3.0 / g(0.0)).re
}

/// Largest residue of Λ at the zeros of Q, from a small contour around each
/// root. Zero (to rounding) when the Bethe equations hold.
pub fn pole_residue(set: &RootSet) -> f64 {
    let radius = 1e-3;
    let pts = 64;
    let mut worst = 0.0f64;
    for &m in &set.finite {
        let mut acc = ZERO;
        for p in 0..pts {
            let w = C64::from_polar(radius, 2.0 * PI * p as f64 / pts as f64);
            match tq_lambda(set, m + w) {
                Ok(v) => acc += v * w,
                Err(_) => return f64::INFINITY,
            }
        }
        let scale = tq_lambda(set, m + c(0.0, 0.5)).map(|v| v.norm()).unwrap_or(1.0).max(1.0);
        worst = worst.max((acc / pts as f64).norm() / scale);
    }
    worst
}

// --- canonical forms -------------------------------------------------------

fn wrap_imag(z: C64) -> C64 {
    let mut im = (z.im + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if (im + FRAC_PI_2).abs() < 1e-12 {
        im = FRAC_PI_2;
    }
    c(z.re, im)
}

/// Representative of a root under the symmetries of its Q-function.
pub fn canonical_root(case: &TqCase, z: C64) -> C64 {
    let z = if case.is_asymmetric() { wrap_imag(z) } else { z };
    let Some(s) = case.pair_shift() else { return z };
    let mid = -0.5 * s;
    let flip = z.re < mid - 1e-9 || ((z.re - mid).abs() <= 1e-9 && z.im < 0.0);
    let z = if flip { -z - s } else { z };
    if case.is_asymmetric() {
        wrap_imag(z)
    } else {
        z
    }
}

fn root_close(case: &TqCase, a: C64, b: C64, tol: f64) -> bool {
    let (a, b) = (canonical_root(case, a), canonical_root(case, b));
    let d = a - b;
    if case.is_asymmetric() {
        // identify Im modulo π
        let di = d.im - PI * (d.im / PI).round();
        (d.re * d.re + di * di).sqrt() < tol
    } else {
        d.norm() < tol
    }
}

/// Multiset equality up to the root symmetries of the case.
pub fn same_roots(case: &TqCase, a: &[C64], b: &[C64], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    'outer: for &x in a {
        for (i, &y) in b.iter().enumerate() {
            if !used[i] && root_close(case, x, y, tol) {
                used[i] = true;
                continue 'outer;
            }
        }
        return false;
    }
    true
}

fn canonicalize(case: &TqCase, roots: &mut Vec<C64>) {
    for z in roots.iter_mut() {
        *z = canonical_root(case, *z);
    }
    // real parts quantized so near-string pairs sort by imaginary part
    let key = |z: &C64| ((z.re * 1e9).round(), z.im);
    roots.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
}

/// Snap components that are zero or on a symmetry line to within 1e-9, when
/// that does not make the residual worse.
fn snap(case: &TqCase, roots: &mut [C64], inf: usize) {
    let before = max_abs(&log_residuals(case, roots, inf));
    let mut trial = roots.to_vec();
    let lines: Vec<f64> = match case.pair_shift() {
        Some(s) => vec![0.0, -0.5 * s],
        None => vec![0.0, -0.5],
    };
    for z in trial.iter_mut() {
        if z.im.abs() < 1e-9 {
            z.im = 0.0;
        }
        for &l in &lines {
            if (z.re - l).abs() < 1e-9 {
                z.re = l;
            }
        }
    }
    let after = max_abs(&log_residuals(case, &trial, inf));
    if after.is_finite() && after <= before.max(1e-15) {
        roots.copy_from_slice(&trial);
    }
}

/// Rounding floor of the log residual: each Q factor evaluated in the
/// equations loses about eps·(scale / |argument|) digits, which matters for
/// near-string pairs.
pub fn residual_floor(case: &TqCase, roots: &[C64]) -> f64 {
    let dl = case.delta();
    let shift = case.pair_shift();
    let mut worst = 0.0f64;
    for &m in roots {
        let mut acc = 0.0;
        for u in [m - dl, m + dl] {
            for &l in roots {
                let scale = 1.0 + u.norm() + l.norm();
                acc += scale / (u - l).norm().max(1e-300);
                if let Some(s) = shift {
                    acc += scale / (u + l + s).norm().max(1e-300);
                }
            }
        }
        worst = worst.max(acc);
    }
    8.0 * f64::EPSILON * worst
}

fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

/// Roots that solve the equations trivially or sit on a pole.
fn spurious(case: &TqCase, roots: &[C64]) -> bool {
    let eps = 1e-6;
    for (i, &a) in roots.iter().enumerate() {
        if !a.re.is_finite() || !a.im.is_finite() || a.norm() > 1e4 {
            return true;
        }
        for &b in &roots[i + 1..] {
            if root_close(case, a, b, eps) {
                return true;
            }
        }
        let bad: Vec<C64> = match *case {
            TqCase::PeriodicSym { .. } | TqCase::TwistedSym { .. } => vec![re(0.0), re(-1.0)],
            TqCase::OpenSym { .. } => vec![re(0.0), re(-1.0), re(-0.5)],
            TqCase::PeriodicAsym { eta, .. } => vec![re(0.0), re(-eta)],
            TqCase::OpenAsym { eta, .. } | TqCase::OpenAsymSteady { eta, .. } => {
                vec![re(0.0), re(-eta), re(-0.5 * eta), c(-0.5 * eta, FRAC_PI_2)]
            }
        };
        if bad.iter().any(|&p| root_close(case, a, p, eps)) {
            return true;
        }
        if case.is_asymmetric() {
            // drifting towards infinity: negligible contribution to the energy
            let eta = case.delta();
            if (sinh(a) * sinh(a + eta)).norm() > 1e6 * eta.sinh().powi(2) {
                return true;
            }
        }
    }
    false
}

// --- Newton multistart -----------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub seed: u64,
    pub tol: f64,
    pub seeds_per_root: usize,
    pub max_rounds: usize,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Initial guesses tried before the random seeds.
    #[serde(skip)]
    pub warm: Vec<Vec<C64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            seed: 20240601,
            tol: 1e-12,
            seeds_per_root: 64,
            max_rounds: 8,
            max_iter: 200,
            max_halvings: 40,
            warm: Vec::new(),
        }
    }
}

/// Deflation factor Π_s (1 + 1/‖z − s‖²) against already found sets.
fn deflation(case: &TqCase, z: &[C64], found: &[Vec<C64>]) -> f64 {
    let mut f = 1.0;
    for s in found {
        let mut cz = z.to_vec();
        canonicalize(case, &mut cz);
        let d2: f64 = cz.iter().zip(s).map(|(a, b)| (a - b).norm_sqr()).sum();
        f *= 1.0 + 1.0 / d2.max(1e-300);
    }
    f
}

fn newton(case: &TqCase, z0: &[C64], inf: usize, found: &[Vec<C64>], opt: &SolveOptions, accept: f64) -> Option<Vec<C64>> {
    let k = z0.len();
    let eval = |z: &[C64], defl: bool| -> Option<Vec<C64>> {
        let mut g = log_residuals(case, z, inf);
        if g.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return None;
        }
        if defl && !found.is_empty() {
            let f = deflation(case, z, found);
            for v in g.iter_mut() {
                *v *= f;
            }
        }
        Some(g)
    };
    let norm = |g: &[C64]| g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let mut z = z0.to_vec();
    // deflated phase, then a short undeflated polish
    for (defl, iters) in [(true, opt.max_iter), (false, 20)] {
        let mut g = eval(&z, defl)?;
        let mut gn = norm(&g);
        for _ in 0..iters {
            if !defl && max_abs(&g) < 0.1 * opt.tol {
                break;
            }
            let mut jac = DMatrix::<C64>::zeros(k, k);
            for l in 0..k {
                let h = 1e-7 * (1.0 + z[l].norm());
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[l] += h;
                zm[l] -= h;
                let (gp, gm) = (eval(&zp, defl)?, eval(&zm, defl)?);
                for r in 0..k {
                    jac[(r, l)] = (gp[r] - gm[r]) / (2.0 * h);
                }
            }
            let rhs = DVector::from_iterator(k, g.iter().map(|v| -v));
            let step = jac.lu().solve(&rhs)?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=opt.max_halvings {
                let trial: Vec<C64> = z.iter().zip(step.iter()).map(|(a, s)| a + s * t).collect();
                if let Some(gt) = eval(&trial, defl) {
                    let tn = norm(&gt);
                    if tn < gn || (!defl && tn <= gn * 1.0000001) {
                        z = trial;
                        g = gt;
                        gn = tn;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            if defl && max_abs(&log_residuals(case, &z, inf)) < 1e-10 {
                break;
            }
        }
    }
    if max_abs(&log_residuals(case, &z, inf)) < accept.max(residual_floor(case, &z)) && !spurious(case, &z) {
        Some(z)
    } else {
        None
    }
}

/// Seeds mix generic points with points on the real axis, on the symmetry
/// line Re = −δ/2, and conjugate pairs, where most roots of these chains sit.
fn random_guess(case: &TqCase, k: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let (lo, hi, ih) = if case.is_asymmetric() { (-2.0, 2.0, FRAC_PI_2) } else { (-3.0, 2.0, 3.0) };
    let mid = -0.5 * case.delta();
    let mut out = Vec::with_capacity(k);
    let kinds = if case.pair_shift().is_some() { 4 } else { 3 };
    while out.len() < k {
        let z = match rng.gen_range(0..kinds) {
            0 => c(rng.gen_range(lo..hi), rng.gen_range(-ih..ih)),
            1 => c(rng.gen_range(lo..hi), 0.0),
            2 => c(mid, rng.gen_range(-ih..ih)),
            // open chains also have tight pairs hugging Re = 0
            _ => {
                let off = 10f64.powf(rng.gen_range(-6.0..-3.0)) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let z = c(off, rng.gen_range(0.05..ih));
                if out.len() + 1 < k {
                    out.push(z);
                    out.push(z.conj());
                    continue;
                }
                z
            }
        };
        out.push(z);
        if out.len() < k && z.im != 0.0 && rng.gen_bool(0.5) {
            out.push(z.conj());
        }
    }
    out
}

/// Root sets with `k` finite roots (and `inf` at infinity). Every returned
/// set has residual below `opt.tol`; the search stops early once
/// `expected` sets are known.
pub fn solve_bae(case: &TqCase, k: usize, inf: usize, expected: Option<usize>, opt: &SolveOptions) -> Result<Vec<RootSet>> {
    case.validate()?;
    if opt.tol <= 0.0 {
        return Err(Error::InvalidParameter(format!("tol = {}", opt.tol)));
    }
    if matches!(case, TqCase::OpenAsymSteady { .. }) {
        return Ok(if k == 0 { vec![RootSet::new(*case, vec![], inf)] } else { vec![] });
    }
    if k == 0 {
        return Ok(vec![RootSet::new(*case, vec![], inf)]);
    }
    let mut found: Vec<Vec<C64>> = Vec::new();
    // candidates are accepted loosely, then re-polished in canonical order so
    // the reported residual is the one the iteration converged on
    let loose = 1e3 * opt.tol;
    let add = |z: Vec<C64>, found: &mut Vec<Vec<C64>>| {
        let mut z = z;
        canonicalize(case, &mut z);
        snap(case, &mut z, inf);
        canonicalize(case, &mut z);
        let Some(z) = newton(case, &z, inf, &[], opt, opt.tol) else { return };
        if !found.iter().any(|s| same_roots(case, s, &z, 1e-6)) {
            found.push(z);
        }
    };
    let warm: Vec<Vec<C64>> = opt.warm.iter().filter(|w| w.len() == k).cloned().collect();
    let start: Vec<Option<Vec<C64>>> = crate::par::par_map(warm, |w| newton(case, &w, inf, &[], opt, loose));
    for z in start.into_iter().flatten() {
        add(z, &mut found);
    }
    // parameters are real, so conjugate sets solve the same equations
    let mirror = |found: &mut Vec<Vec<C64>>| {
        let conj: Vec<Vec<C64>> = found
            .iter()
            .map(|s| s.iter().map(|z| z.conj()).collect::<Vec<C64>>())
            .filter(|s| !found.iter().any(|f| same_roots(case, f, s, 1e-6)))
            .collect();
        for z in crate::par::par_map(conj, |w| newton(case, &w, inf, &[], opt, loose)).into_iter().flatten() {
            add(z, found);
        }
    };
    mirror(&mut found);
    for round in 0..opt.max_rounds {
        if expected.is_some_and(|e| found.len() >= e) {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed ^ ((k as u64) << 32) ^ ((inf as u64) << 40) ^ round as u64);
        let count = opt.seeds_per_root * k * (round + 1);
        let guesses: Vec<Vec<C64>> = (0..count).map(|_| random_guess(case, k, &mut rng)).collect();
        let known = found.clone();
        let out = crate::par::par_map(guesses, |g| newton(case, &g, inf, &known, opt, loose));
        for z in out.into_iter().flatten() {
            add(z, &mut found);
        }
        mirror(&mut found);
    }
    let mut sets: Vec<RootSet> = found.into_iter().map(|z| RootSet::new(*case, z, inf)).collect();
    sets.sort_by(|a, b| {
        let ka: Vec<(f64, f64)> = a.finite.iter().map(|z| (z.re, z.im)).collect();
        let kb: Vec<(f64, f64)> = b.finite.iter().map(|z| (z.re, z.im)).collect();
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(sets)
}

// --- level enumeration -----------------------------------------------------

pub(crate) fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of distinct finite root sets with `k` roots for a lane of the case.
pub fn expected_sets(case: &TqCase, k: usize) -> usize {
    let n = case.n();
    match case {
        TqCase::PeriodicSym { .. } => {
            if 2 * k > n {
                0
            } else {
                binom(n, k) - if k > 0 { binom(n, k - 1) } else { 0 }
            }
        }
        TqCase::TwistedSym { .. } => {
            if 2 * k > n {
                0
            } else {
                binom(n, k)
            }
        }
        TqCase::OpenSym { .. } => binom(n, k),
        TqCase::PeriodicAsym { .. } => {
            if k == 0 || k >= n {
                0
            } else {
                binom(n, k) - 1
            }
        }
        TqCase::OpenAsym { .. } => {
            if k + 1 == n {
                (1 << n) - 1
            } else {
                0
            }
        }
        TqCase::OpenAsymSteady { .. } => usize::from(k == 0),
    }
}

/// One lane eigenvalue (or a block of degenerate ones) described by roots.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Level {
    pub roots: RootSet,
    /// None for the singular pair, whose value comes from reconciliation.
    pub energy: Option<C64>,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LaneSolution {
    pub case: TqCase,
    pub levels: Vec<Level>,
    /// Sectors where fewer sets were found than expected: (k, found, expected).
    pub shortfall: Vec<(usize, usize, usize)>,
    pub seed: u64,
}

impl LaneSolution {
    pub fn state_count(&self) -> usize {
        self.levels.iter().map(|l| l.multiplicity).sum()
    }
}

fn level(set: RootSet, multiplicity: usize) -> Level {
    let energy = if set.singular { None } else { energy(&set).ok() };
    Level {
        roots: set,
        energy,
        multiplicity,
    }
}

/// The finite-root sets with k roots, including the flagged singular pair
/// {−1, 0} where it belongs to the sector.
pub fn solve_sector(case: &TqCase, k: usize, inf: usize, opt: &SolveOptions) -> Result<Vec<RootSet>> {
    case.validate()?;
    let n = case.n();
    let mut sets = solve_bae(case, k, inf, Some(expected_sets(case, k)), opt)?;
    if k == 2 && n % 2 == 0 && n >= 4 && matches!(case, TqCase::PeriodicSym { .. } | TqCase::TwistedSym { .. }) {
        sets.push(RootSet::new(*case, vec![re(-1.0), re(0.0)], inf));
    }
    Ok(sets)
}

/// All lane eigenstates described by Bethe roots:
/// - periodic: one level per (finite set, number of roots at infinity);
/// - twisted: finite sets with k ≤ N/2, doubled by the spin flip when 2k < N;
/// - open: C(N, k) sets per k on the chosen branch;
/// - periodic asymmetric: per sector m the all-infinite steady state plus the finite sets;
/// - open asymmetric: the N−1-root sets plus the steady branch.
pub fn solve_lane(case: &TqCase, opt: &SolveOptions) -> Result<LaneSolution> {
    case.validate()?;
    let n = case.n();
    let mut levels = Vec::new();
    let mut shortfall = Vec::new();
    let mut sector = |k: usize, levels: &mut Vec<Level>, mult: &dyn Fn(&RootSet) -> Vec<(usize, usize)>| -> Result<()> {
        let want = expected_sets(case, k);
        if want == 0 && k > 0 {
            return Ok(());
        }
        let sets = solve_sector(case, k, 0, opt)?;
        if sets.len() < want {
            shortfall.push((k, sets.len(), want));
        }
        for s in sets {
            for (inf, m) in mult(&s) {
                let mut s = s.clone();
                s.inf_count = inf;
                if !s.singular {
                    s.residual = bae_residual(&s).unwrap_or(f64::NAN);
                }
                levels.push(level(s, m));
            }
        }
        Ok(())
    };
    match case {
        TqCase::PeriodicSym { .. } => {
            for k in 0..=n / 2 {
                sector(k, &mut levels, &|s| (0..=n - 2 * s.finite.len()).map(|j| (j, 1)).collect())?;
            }
        }
        TqCase::TwistedSym { .. } => {
            for k in 0..=n / 2 {
                sector(k, &mut levels, &|s| vec![(0, if 2 * s.finite.len() < n { 2 } else { 1 })])?;
            }
        }
        TqCase::OpenSym { .. } => {
            for k in 0..=n {
                sector(k, &mut levels, &|_| vec![(0, 1)])?;
            }
        }
        TqCase::PeriodicAsym { .. } => {
            for m in 0..=n {
                levels.push(level(RootSet::new(*case, vec![], m), 1));
            }
            for k in 1..n {
                sector(k, &mut levels, &|_| vec![(0, 1)])?;
            }
        }
        TqCase::OpenAsym { n, eta, rates } => {
            sector(n - 1, &mut levels, &|_| vec![(0, 1)])?;
            let steady = TqCase::OpenAsymSteady { n: *n, eta: *eta, rates: *rates };
            levels.push(level(RootSet::new(steady, vec![], 0), 1));
        }
        TqCase::OpenAsymSteady { .. } => {
            levels.push(level(RootSet::new(*case, vec![], 0), 1));
        }
    }
    Ok(LaneSolution {
        case: *case,
        levels,
        shortfall,
        seed: opt.seed,
    })
}

// --- model ↔ lane cases ----------------------------------------------------

/// The T–Q case of one lane of a generator specification.
pub fn lane_case(spec: &GeneratorSpec, lane: Lane, branch: Branch) -> Result<TqCase> {
    spec.validate()?;
    let n = spec.n;
    let eta = match spec.symmetry {
        Symmetry::Symmetric => None,
        Symmetry::Asymmetric { eta1, eta2 } => Some(if lane == Lane::Sigma { eta1 } else { eta2 }),
    };
    Ok(match (spec.boundary, eta) {
        (Boundary::Periodic, None) => TqCase::PeriodicSym { n },
        (Boundary::Twisted, None) => TqCase::TwistedSym { n },
        (Boundary::Open(r), None) => {
            let l = r.lane(lane);
            TqCase::OpenSym { n, branch, w1: l.w1(), w2: l.w2() }
        }
        (Boundary::Periodic, Some(eta)) => TqCase::PeriodicAsym { n, eta },
        (Boundary::Open(r), Some(eta)) => TqCase::OpenAsym { n, eta, rates: r.lane(lane) },
        (Boundary::Twisted, Some(_)) => {
            return Err(Error::Incompatible("twisted asymmetric chain has no T–Q relation here".into()))
        }
    })
}

/// Dense lane generator matching a case (σ or τ lane of the specification).
pub fn lane_matrix(spec: &GeneratorSpec, lane: Lane) -> Result<CMatrix> {
    let (ms, mt) = lane_generators(spec)?;
    Ok(if lane == Lane::Sigma { ms.dense() } else { mt.dense() })
}

// --- reconciliation --------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchRow {
    pub ed: C64,
    pub bethe: Option<C64>,
    pub residual: f64,
    pub label: String,
    pub singular: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumReconciliation {
    pub rows: Vec<MatchRow>,
    pub max_residual: f64,
    pub unmatched_ed: usize,
    pub unmatched_bethe: usize,
}

impl SpectrumReconciliation {
    pub fn all_matched(&self, tol: f64) -> bool {
        self.unmatched_ed == 0 && self.unmatched_bethe == 0 && self.max_residual <= tol
    }
}

/// A Bethe eigenvalue to be matched: value (None = take from ED), label.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub value: Option<C64>,
    pub label: String,
}

fn roots_label(set: &RootSet) -> String {
    let mut parts: Vec<String> = set
        .finite
        .iter()
        .map(|z| format!("{:.4}{:+.4}i", z.re, z.im))
        .collect();
    parts.extend(std::iter::repeat_n("inf".to_string(), set.inf_count));
    format!("{}{{{}}}", set.case.name(), parts.join(", "))
}

/// Lane candidates, one per state.
pub fn lane_candidates(sol: &LaneSolution) -> Vec<Candidate> {
    let mut out = Vec::new();
    for l in &sol.levels {
        for _ in 0..l.multiplicity {
            out.push(Candidate {
                value: l.energy,
                label: roots_label(&l.roots),
            });
        }
    }
    out
}

/// Full-chain candidates λσ + λτ from two lanes.
pub fn combined_candidates(sigma: &LaneSolution, tau: &LaneSolution) -> Vec<Candidate> {
    let (a, b) = (lane_candidates(sigma), lane_candidates(tau));
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in &a {
        for y in &b {
            out.push(Candidate {
                value: x.value.zip(y.value).map(|(p, q)| p + q),
                label: format!("{} | {}", x.label, y.label),
            });
        }
    }
    out
}

/// Greedy matching of exact-diagonalization eigenvalues to Bethe values;
/// candidates without a value take the leftover ED eigenvalues, flagged.
pub fn reconcile(candidates: &[Candidate], ed: &[C64]) -> SpectrumReconciliation {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, cand) in candidates.iter().enumerate() {
        if let Some(v) = cand.value {
            for (ei, &e) in ed.iter().enumerate() {
                pairs.push(((v - e).norm(), ci, ei));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut c_used = vec![false; candidates.len()];
    let mut e_used = vec![false; ed.len()];
    let mut rows = Vec::new();
    for (d, ci, ei) in pairs {
        if c_used[ci] || e_used[ei] {
            continue;
        }
        c_used[ci] = true;
        e_used[ei] = true;
        rows.push(MatchRow {
            ed: ed[ei],
            bethe: candidates[ci].value,
            residual: d,
            label: candidates[ci].label.clone(),
            singular: false,
        });
    }
    let free: Vec<usize> = (0..ed.len()).filter(|&i| !e_used[i]).collect();
    let mut free_ed = free.into_iter();
    for (ci, cand) in candidates.iter().enumerate() {
        if cand.value.is_none() {
            if let Some(ei) = free_ed.next() {
                e_used[ei] = true;
                c_used[ci] = true;
                rows.push(MatchRow {
                    ed: ed[ei],
                    bethe: None,
                    residual: 0.0,
                    label: cand.label.clone(),
                    singular: true,
                });
            }
        }
    }
    rows.sort_by(|a, b| a.ed.re.total_cmp(&b.ed.re).then(a.ed.im.total_cmp(&b.ed.im)));
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    SpectrumReconciliation {
        rows,
        max_residual,
        unmatched_ed: e_used.iter().filter(|u| !**u).count(),
        unmatched_bethe: c_used.iter().filter(|u| !**u).count(),
    }
}

/// Solve both lanes of a specification and reconcile with the spectrum of
/// the full generator (or of one lane when `lane` is given).
pub fn reconcile_spec(
    spec: &GeneratorSpec,
    lane: Option<Lane>,
    branches: (Branch, Branch),
    opt: &SolveOptions,
) -> Result<(SpectrumReconciliation, Vec<LaneSolution>)> {
    match lane {
        Some(l) => {
            let br = if l == Lane::Sigma { branches.0 } else { branches.1 };
            let sol = solve_lane(&lane_case(spec, l, br)?, opt)?;
            let ed = eigenvalues(&lane_matrix(spec, l)?)?;
            Ok((reconcile(&lane_candidates(&sol), &ed), vec![sol]))
        }
        None => {
            let s = solve_lane(&lane_case(spec, Lane::Sigma, branches.0)?, opt)?;
            let t = solve_lane(&lane_case(spec, Lane::Tau, branches.1)?, opt)?;
            let (ms, mt) = lane_generators(spec)?;
            // the full spectrum is the Kronecker sum of the lane spectra; the
            // full ED runs through the lanes only when the full matrix is too large
            let full = crate::markov::build_generator(spec)?.dense();
            let ed = if full.rows() <= crate::lintensor::EIG_CAP {
                eigenvalues(&full)?
            } else {
                let (a, b) = (eigenvalues(&ms.dense())?, eigenvalues(&mt.dense())?);
                a.iter().flat_map(|x| b.iter().map(move |y| x + y)).collect()
            };
            Ok((reconcile(&combined_candidates(&s, &t), &ed), vec![s, t]))
        }
    }
}
