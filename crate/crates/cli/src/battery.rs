//! The identity battery behind `verify`.

use d2stoch::algebra::{
    k_matrix, k_matrix_printed, sample_pairs, verify_r_properties, verify_re, verify_twist, verify_ybe, KKind,
    Lane, RKind, VerifierReport, r_matrix,
};
use d2stoch::error::Result;
use d2stoch::lintensor::{c, C64};
use d2stoch::markov::{build_generator, lane_generators, lane_sum_in_site_basis, Boundary, GeneratorSpec, Symmetry, Variant};
use d2stoch::transfer::{commutativity_residual, extract_generator, factorization_residual, Derivative, LaneSel, TransferSpec};

/// Default thresholds per identity.
pub const TOL_YBE: f64 = 1e-10;
pub const TOL_REGULAR: f64 = 1e-12;
pub const TOL_UNITARITY: f64 = 1e-10;
pub const TOL_RE: f64 = 1e-9;
pub const TOL_COMMUTE: f64 = 1e-10;
pub const TOL_EXTRACT: f64 = 1e-7;
pub const TOL_FACTOR: f64 = 1e-10;
pub const TOL_KRON_SUM: f64 = 1e-12;
pub const TOL_STOCH: f64 = 1e-12;

/// Transfer-matrix checks use at most this many samples; each one costs
/// two dense transfer matrices of size 4^N.
const TRANSFER_SAMPLES: usize = 10;

pub struct Battery {
    pub seed: u64,
    pub samples: usize,
    /// Replaces every default threshold when set.
    pub tol: Option<f64>,
}

impl Battery {
    fn report(&self, identity: &str, kind: String, samples: usize, residual: f64, default_tol: f64) -> VerifierReport {
        VerifierReport::new(identity, kind, samples, self.seed, residual, self.tol.unwrap_or(default_tol))
    }

    /// Gating reports, and informational flags that do not affect the exit status.
    pub fn run(&self, spec: &GeneratorSpec) -> Result<(Vec<VerifierReport>, Vec<VerifierReport>)> {
        spec.validate()?;
        let mut flags = Vec::new();
        let pairs = sample_pairs(self.seed, self.samples);
        let ns = pairs.len();
        let mut out = Vec::new();

        let full = TransferSpec::from_generator(spec, LaneSel::Full)?.rkind;
        let mut rkinds = vec![full];
        for l in [Lane::Sigma, Lane::Tau] {
            let k = full.lane_kind(l);
            if !rkinds.contains(&k) {
                rkinds.push(k);
            }
        }
        for &rk in &rkinds {
            if matches!(rk, RKind::D2Sym | RKind::SixVertex) {
                out.push(self.report("ybe", rk.name(), ns, verify_ybe(rk, &pairs), TOL_YBE));
            } else {
                // deformed entries grow like products of sinh; compare relative to the factors
                let rel = pairs
                    .iter()
                    .map(|&(u, v)| {
                        let scale = r_matrix(rk, u - v).max_abs() * r_matrix(rk, u).max_abs() * r_matrix(rk, v).max_abs();
                        verify_ybe(rk, &[(u, v)]) / scale.max(f64::MIN_POSITIVE)
                    })
                    .fold(0.0, f64::max);
                out.push(self.report("ybe", format!("{} relative", rk.name()), ns, rel, TOL_YBE));
            }
            let p = verify_r_properties(rk, &pairs);
            out.push(self.report("regularity", rk.name(), 1, p.regularity, TOL_REGULAR));
            if let Some(x) = p.unitarity {
                out.push(self.report("unitarity", rk.name(), ns, x, TOL_UNITARITY));
            }
            if let Some(x) = p.crossing {
                out.push(self.report("crossing-unitarity", rk.name(), ns, x, TOL_UNITARITY));
            }
            if spec.boundary == Boundary::Twisted {
                out.push(self.report("twist-symmetry", rk.name(), ns, verify_twist(rk, &pairs)?, TOL_YBE));
            }
        }

        if let Boundary::Open(rates) = spec.boundary {
            let kinds: Vec<KKind> = match spec.symmetry {
                Symmetry::Symmetric => vec![
                    KKind::SymMinus,
                    KKind::SymPlus,
                    KKind::SymFactorMinus(Lane::Sigma),
                    KKind::SymFactorPlus(Lane::Sigma),
                    KKind::SymFactorMinus(Lane::Tau),
                    KKind::SymFactorPlus(Lane::Tau),
                ],
                Symmetry::Asymmetric { eta1, eta2 } => {
                    let (e1, e2) = (c(eta1, 0.0), c(eta2, 0.0));
                    vec![
                        KKind::AsymMinus(Lane::Sigma, e1),
                        KKind::AsymPlus(Lane::Sigma, e1),
                        KKind::AsymMinus(Lane::Tau, e2),
                        KKind::AsymPlus(Lane::Tau, e2),
                    ]
                }
            };
            for k in kinds {
                let id = if k.is_plus() { "dual-reflection" } else { "reflection" };
                match k {
                    KKind::AsymMinus(_, eta) | KKind::AsymPlus(_, eta) => {
                        let rk = k.r_kind();
                        let mut worst = 0.0f64;
                        for &(u, v) in &pairs {
                            let sum = if k.is_plus() { -u - v - 2.0 * eta } else { u + v };
                            let scale = r_matrix(rk, u - v).max_abs()
                                * r_matrix(rk, sum).max_abs()
                                * k_matrix(k, &rates, u).max_abs()
                                * k_matrix(k, &rates, v).max_abs();
                            worst = worst.max(verify_re(k, &rates, &[(u, v)])? / scale.max(f64::MIN_POSITIVE));
                        }
                        out.push(self.report(id, format!("{} relative", k.name()), ns, worst, TOL_RE));
                    }
                    _ => out.push(self.report(id, k.name(), ns, verify_re(k, &rates, &pairs)?, TOL_RE)),
                }
            }
            if spec.symmetry == Symmetry::Symmetric {
                // the element-wise listing differs from the factorized K⁻ at one entry
                let worst = pairs
                    .iter()
                    .map(|&(u, _)| k_matrix_printed(&rates, u).dist(&k_matrix(KKind::SymMinus, &rates, u)))
                    .fold(0.0, f64::max);
                let mut r = self.report("k-listing-agreement", "SymMinus".into(), ns, worst, TOL_RE);
                if !r.pass {
                    r.note = Some("listed entry k42 lacks a factor u; the factorized K is used".into());
                }
                flags.push(r);
            }
        }

        let tp: Vec<(C64, C64)> = pairs.iter().copied().take(TRANSFER_SAMPLES).collect();
        for sel in [LaneSel::Full, LaneSel::Sigma, LaneSel::Tau] {
            let ts = TransferSpec::from_generator(spec, sel)?;
            let r = commutativity_residual(&ts, &tp)?;
            out.push(self.report("transfer-commutativity", format!("{}/{:?}", ts.rkind.name(), sel), tp.len(), r, TOL_COMMUTE));
        }

        let built = build_generator(spec)?;
        let stoch = built
            .matrix
            .column_sums()
            .iter()
            .fold(0.0f64, |a, s| a.max(s.abs()))
            .max(built.matrix.triplets().filter(|t| t.0 != t.1).fold(0.0f64, |a, t| a.max(-t.2)));
        out.push(self.report("stochasticity", "generator".into(), 1, stoch, TOL_STOCH));

        let dense = built.dense();
        for mode in [Derivative::Numeric, Derivative::Analytic] {
            let e = extract_generator(spec, mode)?;
            out.push(self.report(
                "generator-extraction",
                format!("{mode:?}"),
                1,
                e.matrix.dist(&dense),
                TOL_EXTRACT,
            ));
        }

        let us: Vec<C64> = tp.iter().map(|p| p.0).collect();
        out.push(self.report("factorization", "transfer".into(), us.len(), factorization_residual(spec, &us)?, TOL_FACTOR));
        let (ms, mt) = lane_generators(spec)?;
        let (ws, wt) = match (spec.variant, spec.symmetry, spec.boundary) {
            (Variant::RawM, Symmetry::Asymmetric { eta1, eta2 }, Boundary::Periodic) => (1.0 / eta1.sinh(), 1.0 / eta2.sinh()),
            _ => (1.0, 1.0),
        };
        let ks = dense.dist(&lane_sum_in_site_basis(&ms, &mt, ws, wt));
        out.push(self.report("lane-kronecker-sum", "generator".into(), 1, ks, TOL_KRON_SUM));
        Ok((out, flags))
    }
}
