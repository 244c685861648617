//! Master-equation evolution, steady states, correlation functions, open
//! density profiles and Bethe vectors.

use serde::{Deserialize, Serialize};

use crate::algebra::{BoundaryRates, Lane, LaneRates};
use crate::bethe::binom;
use crate::error::{Error, Result};
use crate::lintensor::{expm_action, kron_vec, null_space, re, CMatrix, Interleave, SiteIndexing, C64, ONE, ZERO};
use crate::markov::{build_generator, Boundary, Generator, GeneratorSpec, Symmetry, LABELS};
use crate::transfer::{double_row, monodromy, transfer, LaneSel, TransferSpec};

pub const EVOLVE_TOL: f64 = 1e-10;

/// Sum 1 within 1e-10, entries ≥ −1e-12.
pub fn check_probability(v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("probability vector".into()));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("probabilities sum to {s}")));
    }
    if let Some((i, x)) = v.iter().enumerate().find(|(_, &x)| x < -1e-12) {
        return Err(Error::InvalidParameter(format!("negative probability {x} at {i}")));
    }
    Ok(())
}

pub fn basis_state(dim: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[idx] = 1.0;
    v
}

fn site_bits(j: usize) -> (usize, usize) {
    (j >> 1, j & 1)
}

// --- evolution ---------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvolutionTrace {
    pub n: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl EvolutionTrace {
    pub fn coefficient(&self, idx: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[idx]).collect()
    }
}

pub fn evolve(g: &Generator, initial: &[f64], times: &[f64]) -> Result<EvolutionTrace> {
    evolve_with_tol(g, initial, times, EVOLVE_TOL)
}

/// States e^{Mt}v at sorted times, each step continuing from the previous time.
pub fn evolve_with_tol(g: &Generator, initial: &[f64], times: &[f64], tol: f64) -> Result<EvolutionTrace> {
    if initial.len() != g.dim() {
        return Err(Error::DimensionMismatch(format!("initial length {} vs {}", initial.len(), g.dim())));
    }
    check_probability(initial)?;
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("times must be sorted and non-negative".into()));
    }
    let mut states = Vec::with_capacity(times.len());
    let mut cur = initial.to_vec();
    let mut t0 = 0.0;
    for &t in times {
        if t > t0 {
            cur = expm_action(&g.matrix, &cur, t - t0, tol)?;
            t0 = t;
        }
        states.push(cur.clone());
    }
    Ok(EvolutionTrace {
        n: g.n,
        times: times.to_vec(),
        states,
    })
}

pub fn evolve_many(g: &Generator, initials: Vec<Vec<f64>>, times: &[f64]) -> Result<Vec<EvolutionTrace>> {
    crate::par::par_map(initials, |v| evolve(g, &v, times)).into_iter().collect()
}

// --- steady states -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteadyMember {
    pub label: String,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SteadyStateFamily {
    pub boundary: String,
    pub members: Vec<SteadyMember>,
    /// Left null vector, when it is not the transpose of the right ones.
    pub left: Option<Vec<f64>>,
    /// max ‖M v‖∞ / (‖M‖∞ ‖v‖∞) over members.
    pub max_residual: f64,
}

/// Uniform state over fixed (Q1, Q2): the σ lane holds `m` holes, the τ lane `n`.
pub fn periodic_steady(sites: usize, m: usize, n: usize) -> Vec<f64> {
    let ix = SiteIndexing::new(sites, 4);
    let w = 1.0 / (binom(sites, m) * binom(sites, n)) as f64;
    (0..ix.dim())
        .map(|g| {
            let (mut a, mut b) = (0, 0);
            for j in ix.decode(g) {
                let (x, y) = site_bits(j);
                a += x;
                b += y;
            }
            if a == m && b == n {
                w
            } else {
                0.0
            }
        })
        .collect()
}

/// Member k ∈ 1..=4 of the twisted family: product of (1, ±1, ±1, ±1·±1)/4.
pub fn twisted_steady(sites: usize, k: usize) -> Result<Vec<f64>> {
    if !(1..=4).contains(&k) {
        return Err(Error::InvalidParameter(format!("twisted member {k}")));
    }
    let ix = SiteIndexing::new(sites, 4);
    let w = 0.25f64.powi(sites as i32);
    Ok((0..ix.dim())
        .map(|g| {
            let flips: usize = ix
                .decode(g)
                .into_iter()
                .map(|j| {
                    let (a, b) = site_bits(j);
                    match k {
                        2 => b,
                        3 => a,
                        4 => a + b,
                        _ => 0,
                    }
                })
                .sum();
            if flips % 2 == 0 {
                w
            } else {
                -w
            }
        })
        .collect())
}

fn residual_of(m: &CMatrix, v: &[f64]) -> f64 {
    let cv: Vec<C64> = v.iter().map(|&x| re(x)).collect();
    let r = m.matvec(&cv).iter().fold(0.0f64, |a, z| a.max(z.norm()));
    let vn = v.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
    r / (m.max_abs().max(1e-300) * vn)
}

/// The unique open steady state from the generator's kernel, normalized to sum 1.
pub fn open_steady(g: &Generator) -> Result<Vec<f64>> {
    let ker = null_space(&g.dense(), 1e-10)?;
    if ker.len() != 1 {
        return Err(Error::InvalidParameter(format!("kernel dimension {}", ker.len())));
    }
    let v = &ker[0];
    // fix the phase on the largest entry
    let big = v.iter().fold(ZERO, |m, z| if z.norm() > m.norm() { *z } else { m });
    let ph = big.conj() / big.norm();
    let r: Vec<f64> = v.iter().map(|z| (z * ph).re).collect();
    let s: f64 = r.iter().sum();
    Ok(r.into_iter().map(|x| x / s).collect())
}

pub fn steady_states(spec: &GeneratorSpec) -> Result<SteadyStateFamily> {
    let g = build_generator(spec)?;
    let n = spec.n;
    let (boundary, members, left) = match spec.boundary {
        Boundary::Periodic => {
            let mut out = Vec::new();
            for m in 0..=n {
                for k in 0..=n {
                    out.push(SteadyMember {
                        label: format!("{m},{k}"),
                        vector: periodic_steady(n, m, k),
                    });
                }
            }
            ("periodic", out, None)
        }
        Boundary::Twisted => {
            let out = (1..=4)
                .map(|k| {
                    Ok(SteadyMember {
                        label: k.to_string(),
                        vector: twisted_steady(n, k)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ("twisted", out, None)
        }
        Boundary::Open(_) => {
            let v = open_steady(&g)?;
            let out = vec![SteadyMember {
                label: "open".into(),
                vector: v,
            }];
            ("open", out, Some(vec![1.0; g.dim()]))
        }
    };
    let dense = g.dense();
    let mut max_residual = members.iter().map(|m| residual_of(&dense, &m.vector)).fold(0.0, f64::max);
    if let Some(l) = &left {
        max_residual = max_residual.max(residual_of(&dense.transpose(), l));
    }
    Ok(SteadyStateFamily {
        boundary: boundary.into(),
        members,
        left,
        max_residual,
    })
}

/// The four coefficients 4^N ⟨Ψ_k|Φ⟩ of the long-time twisted limit.
pub fn twisted_projection(initial: &[f64], sites: usize) -> Result<[f64; 4]> {
    if initial.len() != SiteIndexing::new(sites, 4).dim() {
        return Err(Error::DimensionMismatch("twisted projection".into()));
    }
    let scale = 4f64.powi(sites as i32);
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        let psi = twisted_steady(sites, k + 1)?;
        *o = scale * psi.iter().zip(initial).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(out)
}

pub fn twisted_limit(coeffs: &[f64; 4], sites: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; SiteIndexing::new(sites, 4).dim()];
    for (k, &c) in coeffs.iter().enumerate() {
        for (o, p) in out.iter_mut().zip(twisted_steady(sites, k + 1)?) {
            *o += c * p;
        }
    }
    Ok(out)
}

// --- correlations ----------------------------------------------------------------

fn check_sites(sites: &[usize], species: &[usize], n: usize) -> Result<()> {
    if sites.len() != species.len() {
        return Err(Error::InvalidParameter("one species per site".into()));
    }
    for (i, &s) in sites.iter().enumerate() {
        if s == 0 || s > n {
            return Err(Error::InvalidParameter(format!("site {s} outside 1..={n}")));
        }
        if sites[..i].contains(&s) {
            return Err(Error::SiteCollision(format!("site {s} repeated")));
        }
    }
    if let Some(j) = species.iter().find(|&&j| j > 3) {
        return Err(Error::InvalidParameter(format!("species index {j}")));
    }
    Ok(())
}

/// ⟨Π n̂_{j,α}⟩ in Ψ_{m,n}: each lane is uniform over its hole positions, so
/// a lane with `d` prescribed holes among `k` sites contributes C(N−k, m−d)/C(N, m).
pub fn correlations_periodic(m: usize, n: usize, sites_total: usize, sites: &[usize], species: &[usize]) -> Result<f64> {
    if m > sites_total || n > sites_total {
        return Err(Error::InvalidParameter(format!("m = {m}, n = {n} with N = {sites_total}")));
    }
    check_sites(sites, species, sites_total)?;
    let k = sites.len();
    let lane = |holes: usize, d: usize| -> f64 {
        if d > holes || holes - d > sites_total - k {
            0.0
        } else {
            binom(sites_total - k, holes - d) as f64 / binom(sites_total, holes) as f64
        }
    };
    let ds: usize = species.iter().map(|&j| site_bits(j).0).sum();
    let dt: usize = species.iter().map(|&j| site_bits(j).1).sum();
    Ok(lane(m, ds) * lane(n, dt))
}

fn indicator(ix: &SiteIndexing, g: usize, sites: &[usize], species: &[usize]) -> bool {
    sites.iter().zip(species).all(|(&s, &j)| ix.digit(g, s - 1) == j)
}

/// ⟨Ψ|Π n̂|Ψ⟩ / ⟨Ψ|Ψ⟩.
pub fn quadratic_expectation(v: &[f64], n: usize, sites: &[usize], species: &[usize]) -> Result<f64> {
    check_sites(sites, species, n)?;
    let ix = SiteIndexing::new(n, 4);
    let num: f64 = (0..ix.dim()).filter(|&g| indicator(&ix, g, sites, species)).map(|g| v[g] * v[g]).sum();
    let den: f64 = v.iter().map(|x| x * x).sum();
    Ok(num / den)
}

/// (1,…,1) Π n̂ |P⟩ / (1,…,1)|P⟩, the probability reading.
pub fn linear_expectation(v: &[f64], n: usize, sites: &[usize], species: &[usize]) -> Result<f64> {
    check_sites(sites, species, n)?;
    let ix = SiteIndexing::new(n, 4);
    let num: f64 = (0..ix.dim()).filter(|&g| indicator(&ix, g, sites, species)).map(|g| v[g]).sum();
    Ok(num / v.iter().sum::<f64>())
}

// --- open density profile ----------------------------------------------------------

/// Hole density ⟨n̂_{k,↓}⟩ of one open lane with reservoir densities
/// ρa = a1/(a1+a2), ρb = a1′/(a1′+a2′).
pub fn lane_density(r: &LaneRates, n: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("site {k} outside 1..={n}")));
    }
    let (w1, w2) = (r.w1(), r.w2());
    if w1 == 0.0 || w2 == 0.0 {
        return Err(Error::Singular(format!("boundary rate sums {w1}, {w2}")));
    }
    let (ra, rb) = (r.a1 / w1, r.a1p / w2);
    let n = n as f64;
    let k = k as f64;
    let den = n + 1.0 / w1 - 1.0 / w2 - 1.0;
    if den.abs() < 1e-300 {
        return Err(Error::Singular("profile denominator vanishes".into()));
    }
    Ok((ra * (n - k - 1.0 / w2) + rb * (k - 1.0 + 1.0 / w1)) / den)
}

/// ⟨n̂_{k,α}⟩ as the product of the two lane profiles.
pub fn density_profile_open(rates: &BoundaryRates, n: usize, k: usize, species: usize) -> Result<f64> {
    if species > 3 {
        return Err(Error::InvalidParameter(format!("species index {species}")));
    }
    let ps = lane_density(&rates.lane(Lane::Sigma), n, k)?;
    let pt = lane_density(&rates.lane(Lane::Tau), n, k)?;
    let (a, b) = site_bits(species);
    let f = |hole: usize, p: f64| if hole == 1 { p } else { 1.0 - p };
    Ok(f(a, ps) * f(b, pt))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    pub k: usize,
    pub species: String,
    pub analytic: f64,
    pub numeric: f64,
    pub diff: f64,
}

/// Analytic profile against contraction of the generator's kernel, every
/// site and species.
pub fn profile_table(spec: &GeneratorSpec) -> Result<Vec<ProfileRow>> {
    let Boundary::Open(rates) = spec.boundary else {
        return Err(Error::Incompatible("density profile needs open boundaries".into()));
    };
    if spec.symmetry != Symmetry::Symmetric {
        return Err(Error::Incompatible("density profile formula is for symmetric bulk".into()));
    }
    let ss = open_steady(&build_generator(spec)?)?;
    let mut rows = Vec::new();
    for k in 1..=spec.n {
        for (j, label) in LABELS.iter().enumerate() {
            let analytic = density_profile_open(&rates, spec.n, k, j)?;
            let numeric = linear_expectation(&ss, spec.n, &[k], &[j])?;
            rows.push(ProfileRow {
                k,
                species: label.to_string(),
                analytic,
                numeric,
                diff: (analytic - numeric).abs(),
            });
        }
    }
    Ok(rows)
}

// --- short-time orders ---------------------------------------------------------------

/// Eight log-spaced points in [1e-3, 5e-2].
pub fn short_time_grid() -> Vec<f64> {
    let (a, b) = (1e-3f64.ln(), 5e-2f64.ln());
    (0..8).map(|i| (a + (b - a) * i as f64 / 7.0).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    /// (t, c(t)) samples used by the fit.
    pub points: Vec<(f64, f64)>,
}

/// Least-squares slope of ln c(t) against ln t for the coefficient of `target`.
pub fn short_time_order(g: &Generator, initial: &[f64], target: usize, grid: &[f64]) -> Result<OrderFit> {
    if grid.len() < 5 || grid.iter().any(|&t| !(t > 0.0 && t <= 0.1)) {
        return Err(Error::InvalidParameter("grid needs ≥ 5 points in (0, 0.1]".into()));
    }
    if target >= g.dim() {
        return Err(Error::InvalidParameter(format!("target {target} outside the state space")));
    }
    let mut ts = grid.to_vec();
    ts.sort_by(f64::total_cmp);
    let tr = evolve_with_tol(g, initial, &ts, 1e-13)?;
    let cs = tr.coefficient(target);
    let max = cs.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
    if cs.iter().any(|&c| c <= 1e-14) {
        return Err(Error::Unreachable { max });
    }
    let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = cs.iter().map(|c| c.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(OrderFit {
        slope,
        intercept: my - slope * mx,
        points: ts.into_iter().zip(cs).collect(),
    })
}

// --- Bethe vectors ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ket,
    Bra,
}

fn lane_spec(spec: &GeneratorSpec, lane: Lane) -> Result<TransferSpec> {
    if spec.symmetry != Symmetry::Symmetric {
        return Err(Error::Incompatible("Bethe vectors are built for the symmetric chains".into()));
    }
    TransferSpec::from_generator(spec, if lane == Lane::Sigma { LaneSel::Sigma } else { LaneSel::Tau })
}

/// The creation operator and reference vector for one side of the lane.
fn creation(spec: &GeneratorSpec, lane: Lane, side: Side, u: C64) -> Result<CMatrix> {
    let ts = lane_spec(spec, lane)?;
    let blk = |m: &CMatrix| [m.aux_block(2, 0, 0), m.aux_block(2, 0, 1), m.aux_block(2, 1, 0), m.aux_block(2, 1, 1)];
    let lin = |m: &[CMatrix; 4], w: [f64; 4]| {
        let mut out = m[0].scale(re(w[0]));
        for (x, &c) in m[1..].iter().zip(&w[1..]) {
            out = out.add(&x.scale(re(c)));
        }
        out
    };
    Ok(match spec.boundary {
        Boundary::Periodic => {
            let m = blk(&monodromy(&ts, u)?);
            match side {
                Side::Ket => m[1].clone(),
                Side::Bra => m[2].transpose(),
            }
        }
        Boundary::Twisted => {
            let m = blk(&monodromy(&ts, u)?);
            match side {
                Side::Ket => lin(&m, [1.0, -1.0, 1.0, -1.0]),
                Side::Bra => lin(&m, [1.0, 1.0, -1.0, -1.0]).transpose(),
            }
        }
        Boundary::Open(rates) => {
            let r = rates.lane(lane);
            let m = blk(&double_row(&ts, u)?);
            let b = lin(&m, [r.a1p * r.a2p, r.a1p * r.a1p, -r.a2p * r.a2p, -r.a1p * r.a2p]);
            match side {
                Side::Ket => b,
                Side::Bra => b.transpose(),
            }
        }
    })
}

fn reference(spec: &GeneratorSpec, side: Side) -> Vec<C64> {
    let local = match (spec.boundary, side) {
        (Boundary::Periodic, _) => [ONE, ZERO],
        (Boundary::Twisted, _) => [ONE, ONE],
        (Boundary::Open(_), Side::Ket) => [ONE, -ONE],
        (Boundary::Open(_), Side::Bra) => [ONE, ONE],
    };
    let mut v = vec![ONE];
    for _ in 0..spec.n {
        v = kron_vec(&v, &local);
    }
    v
}

/// Lane Bethe vector Π B(u_k) applied to the reference state. Bras are
/// returned as column vectors (the transpose of the row vector).
pub fn bethe_state(spec: &GeneratorSpec, lane: Lane, roots: &[C64], side: Side) -> Result<Vec<C64>> {
    let mut v = reference(spec, side);
    let mut scale = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for &u in roots {
        let op = creation(spec, lane, side, u)?;
        scale *= op.max_abs() * (op.rows() as f64);
        v = op.matvec(&v);
    }
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= 1e-10 * scale {
        return Err(Error::NullVector);
    }
    Ok(v)
}

/// Largest relative eigen-residual ‖t v − λ v‖ / ‖t v‖ of a lane vector
/// under the lane transfer matrix (its transpose for bras).
pub fn bethe_residual(spec: &GeneratorSpec, lane: Lane, v: &[C64], side: Side, us: &[C64]) -> Result<f64> {
    let ts = lane_spec(spec, lane)?;
    let mut worst = 0.0f64;
    for &u in us {
        let t = transfer(&ts, u)?;
        let w = match side {
            Side::Ket => t.matvec(v),
            Side::Bra => t.transpose().matvec(v),
        };
        let vv: C64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().into();
        let lam = v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum::<C64>() / vv;
        let r = w.iter().zip(v).map(|(a, b)| (a - lam * b).norm_sqr()).sum::<f64>().sqrt();
        let wn = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
        worst = worst.max(r / wn);
    }
    Ok(worst)
}

/// Full-chain vector in the site basis: σ ⊗ τ lane vectors, interleaved.
pub fn full_bethe_state(spec: &GeneratorSpec, sigma: &[C64], tau: &[C64], side: Side) -> Result<Vec<C64>> {
    let s = bethe_state(spec, Lane::Sigma, sigma, side)?;
    let t = bethe_state(spec, Lane::Tau, tau, side)?;
    Ok(Interleave::new(spec.n).vec_to_site_basis(&kron_vec(&s, &t)))
}
