use d2stoch::algebra::{r_matrix, sample_pairs, BoundaryRates, RKind};
use d2stoch::lintensor::{cyclic_shift, embed, re, CMatrix, C64};
use d2stoch::markov::{build_generator, lane_generators, GeneratorSpec, Variant};
use d2stoch::transfer::*;

fn rates() -> BoundaryRates {
    BoundaryRates::table3()
}

fn constructions(n: usize) -> Vec<GeneratorSpec> {
    vec![
        GeneratorSpec::periodic(n),
        GeneratorSpec::twisted(n),
        GeneratorSpec::open(n, rates()),
        GeneratorSpec::periodic(n).with_asymmetry(0.3, 0.7).with_variant(Variant::RawM),
        GeneratorSpec::open(n, rates()).with_asymmetry(0.3, 0.7),
    ]
}

#[test]
fn single_site_monodromy_is_r() {
    let s = TransferSpec::from_generator(&GeneratorSpec::open(1, rates()), LaneSel::Full).unwrap();
    let s = TransferSpec {
        boundary: TransferBoundary::Periodic,
        ..s
    };
    let u = C64::new(0.3, -0.2);
    assert_eq!(monodromy(&s, u).unwrap().dist(&r_matrix(RKind::D2Sym, u)), 0.0);
}

#[test]
fn rtt_relation() {
    let s = TransferSpec::from_generator(&GeneratorSpec::periodic(2), LaneSel::Full).unwrap();
    let dims = [4, 4, 4, 4];
    let mut worst = 0.0f64;
    for (u, v) in sample_pairs(31, 20) {
        let r12 = embed(&r_matrix(RKind::D2Sym, u - v), &[0, 1], &dims).unwrap();
        let t1 = embed(&monodromy(&s, u).unwrap(), &[0, 2, 3], &dims).unwrap();
        let t2 = embed(&monodromy(&s, v).unwrap(), &[1, 2, 3], &dims).unwrap();
        let lhs = r12.matmul(&t1).matmul(&t2);
        let rhs = t2.matmul(&t1).matmul(&r12);
        worst = worst.max(lhs.dist(&rhs) / lhs.max_abs());
    }
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn periodic_transfer_at_zero_is_shift() {
    let swap = d2stoch::algebra::permutation(4);
    for n in 2..=4 {
        let s = TransferSpec::from_generator(&GeneratorSpec::periodic(n), LaneSel::Full).unwrap();
        let t0 = transfer(&s, re(0.0)).unwrap();
        // tr₀ P₀N ⋯ P₀₁ = P₁₂ P₂₃ ⋯ P_(N−1)N
        let dims = vec![4; n];
        let mut want = CMatrix::identity(4usize.pow(n as u32));
        for k in 0..n - 1 {
            want = want.matmul(&embed(&swap, &[k, k + 1], &dims).unwrap());
        }
        assert!(t0.dist(&want) < 1e-14, "N = {n}");
        let sh = cyclic_shift(n, 4);
        assert!(t0.dist(&sh) < 1e-14 || t0.dist(&sh.transpose()) < 1e-14);
    }
}

#[test]
fn transfer_matrices_commute() {
    let samples = sample_pairs(32, 20);
    for g in constructions(2) {
        let s = TransferSpec::from_generator(&g, LaneSel::Full).unwrap();
        let r = commutativity_residual(&s, &samples).unwrap();
        assert!(r < 1e-9, "{g:?}: {r}");
    }
    let s = TransferSpec::from_generator(&GeneratorSpec::periodic(3), LaneSel::Full).unwrap();
    assert!(commutativity_residual(&s, &samples[..5]).unwrap() < 1e-9);
}

#[test]
fn lane_transfer_matrices_commute() {
    let samples = sample_pairs(33, 10);
    for g in constructions(3) {
        for l in [LaneSel::Sigma, LaneSel::Tau] {
            let s = TransferSpec::from_generator(&g, l).unwrap();
            let r = commutativity_residual(&s, &samples).unwrap();
            assert!(r < 1e-10, "{g:?} {l:?}: {r}");
        }
    }
}

#[test]
fn transfer_factorizes() {
    let us: Vec<C64> = sample_pairs(34, 10).into_iter().map(|p| p.0).collect();
    for g in constructions(2) {
        let r = factorization_residual(&g, &us).unwrap();
        assert!(r < 1e-10, "{g:?}: {r}");
    }
}

#[test]
fn open_single_site_double_row_at_zero() {
    let s = TransferSpec::from_generator(&GeneratorSpec::open(1, rates()), LaneSel::Full).unwrap();
    let t0 = transfer(&s, re(0.0)).unwrap();
    let c = t0[(0, 0)];
    assert!(t0.dist(&CMatrix::identity(4).scale(c)) < 1e-13);
    assert!(c.norm() > 1e-3);
}

fn assert_extraction(g: &GeneratorSpec, tol: f64) {
    let want = build_generator(g).unwrap().dense();
    for mode in [Derivative::Numeric, Derivative::Analytic] {
        let e = extract_generator(g, mode).unwrap();
        let d = e.matrix.dist(&want);
        assert!(d < tol, "{g:?} {mode:?}: {d}");
        for (_, rep) in &e.reports {
            if let Some(p) = rep.printed_shift {
                assert!((rep.shift - p).abs() < tol, "shift {} vs {}", rep.shift, p);
            }
        }
    }
}

#[test]
fn periodic_extraction() {
    assert_extraction(&GeneratorSpec::periodic(2), 1e-8);
    assert_extraction(&GeneratorSpec::periodic(3), 1e-8);
}

#[test]
fn twisted_extraction() {
    assert_extraction(&GeneratorSpec::twisted(2), 1e-8);
    assert_extraction(&GeneratorSpec::twisted(3), 1e-8);
}

#[test]
fn open_extraction() {
    assert_extraction(&GeneratorSpec::open(2, rates()), 1e-7);
    assert_extraction(&GeneratorSpec::open(3, rates()), 1e-7);
}

#[test]
fn asymmetric_extraction() {
    assert_extraction(
        &GeneratorSpec::periodic(2).with_asymmetry(0.3, 0.7).with_variant(Variant::RawM),
        1e-8,
    );
    assert_extraction(&GeneratorSpec::periodic(3).with_asymmetry(0.3, -0.6), 1e-8);
    assert_extraction(&GeneratorSpec::open(3, rates()).with_asymmetry(0.3, 0.7), 1e-7);
}

#[test]
fn lane_extraction_matches_lane_generators() {
    for g in [GeneratorSpec::periodic(3), GeneratorSpec::twisted(3)] {
        let (ms, _) = lane_generators(&g).unwrap();
        let s = TransferSpec::from_generator(&g, LaneSel::Sigma).unwrap();
        let (m, rep) = extract_from_transfer(&s, Derivative::Analytic).unwrap();
        assert!(m.dist(&ms.dense()) < 1e-10);
        assert!((rep.shift - 3.0).abs() < 1e-10);
    }
}

#[test]
fn open_shift_is_reported() {
    let s = TransferSpec::from_generator(&GeneratorSpec::open(2, rates()), LaneSel::Full).unwrap();
    let (_, rep) = extract_from_transfer(&s, Derivative::Analytic).unwrap();
    assert!(rep.printed_shift.is_none());
    assert!(rep.spread < 1e-10);
    assert!(rep.shift.is_finite());
}

#[test]
fn mismatched_kinds_rejected() {
    let mut s = TransferSpec::from_generator(&GeneratorSpec::open(2, rates()), LaneSel::Full).unwrap();
    s.rkind = RKind::SixVertex;
    assert!(transfer(&s, re(0.1)).is_err());
}
