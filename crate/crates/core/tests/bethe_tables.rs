use d2stoch::algebra::{BoundaryRates, Lane};
use d2stoch::bethe::*;
use d2stoch::lintensor::{c, eigenvalues, re, C64};
use d2stoch::markov::GeneratorSpec;
use proptest::prelude::*;

const INF: f64 = f64::INFINITY;

/// A printed row: finite roots, with `INF` entries standing for roots at infinity.
fn row(z: &[(f64, f64)]) -> (Vec<C64>, usize) {
    let fin = z.iter().filter(|p| p.0.is_finite()).map(|&(a, b)| c(a, b)).collect();
    (fin, z.iter().filter(|p| !p.0.is_finite()).count())
}

/// Printed roots agree with a solved set to 4 decimals, up to order and the
/// case's root equivalences.
fn agrees(case: &TqCase, solved: &[C64], printed: &[C64]) -> bool {
    if solved.len() != printed.len() {
        return false;
    }
    let close = |a: C64, b: C64| (a.re - b.re).abs() <= 5.001e-5 && (a.im - b.im).abs() <= 5.001e-5;
    let mut used = vec![false; solved.len()];
    printed.iter().all(|&p| {
        let p = canonical_root(case, p);
        match (0..solved.len()).find(|&i| !used[i] && close(canonical_root(case, solved[i]), p)) {
            Some(i) => {
                used[i] = true;
                true
            }
            None => false,
        }
    })
}

fn find_row<'a>(sol: &'a LaneSolution, printed: &(Vec<C64>, usize)) -> Option<&'a Level> {
    sol.levels
        .iter()
        .find(|l| l.roots.inf_count == printed.1 && agrees(&sol.case, &l.roots.finite, &printed.0))
}

fn check_rows(sol: &LaneSolution, rows: &[(Vec<C64>, usize)]) {
    for r in rows {
        let l = find_row(sol, r).unwrap_or_else(|| panic!("{} row {:?} not found", sol.case.name(), r));
        if !l.roots.singular {
            let floor = residual_floor(&sol.case, &l.roots.finite);
            assert!(l.roots.residual < 1e-12f64.max(floor), "{:?} residual {}", r, l.roots.residual);
        }
    }
}

fn table1() -> Vec<(Vec<C64>, usize)> {
    [
        &[][..],
        &[(-0.5, 0.0)],
        &[(-0.5, 0.5)],
        &[(-0.5, -0.5)],
        &[(INF, 0.0)],
        &[(-0.5, 0.0), (INF, 0.0)],
        &[(-0.5, 0.5), (INF, 0.0)],
        &[(-0.5, -0.5), (INF, 0.0)],
        &[(INF, 0.0), (INF, 0.0)],
        &[(-0.5, 0.2887), (-0.5, -0.2887)],
        &[(-1.0, 0.0), (0.0, 0.0)],
    ]
    .iter()
    .map(|z| row(z))
    .collect()
}

fn table2() -> Vec<(Vec<C64>, usize)> {
    [
        &[][..],
        &[(-0.5, -1.2071)],
        &[(-0.5, 1.2071)],
        &[(-0.5, -0.2071)],
        &[(-0.5, 0.2071)],
        &[(-0.5, -0.8660), (-0.5, 0.8660)],
        &[(-0.5, -0.0841), (-0.5, 0.7021)],
        &[(-0.5, 0.0841), (-0.5, -0.7021)],
        &[(-1.1360, 0.8090), (0.1360, 0.8090)],
        &[(-1.1360, -0.8090), (0.1360, -0.8090)],
        &[(-1.0, 0.0), (0.0, 0.0)],
    ]
    .iter()
    .map(|z| row(z))
    .collect()
}

/// Open chain, three sites, rows per (lane, branch). The sigma(+) single
/// root at -0.5-0.2229i is the solved value; 0.2299 (digits swapped) solves nothing.
fn table3(lane: Lane, br: Branch) -> Vec<(Vec<C64>, usize)> {
    let rows: Vec<&[(f64, f64)]> = match (lane, br) {
        (Lane::Sigma, Branch::Plus) => vec![
            &[],
            &[(-0.5, -1.3185)],
            &[(-0.5, -0.2229)],
            &[(-0.5, -0.5417)],
            &[(0.0257, 0.8645), (0.0257, -0.8645)],
            &[(0.0, 0.2945), (0.0, -0.2945)],
            &[(-0.5, 0.2488), (-0.5, 0.7455)],
            &[(0.0, 0.2548), (0.0, -0.2548), (1.8004, 0.0)],
        ],
        (Lane::Sigma, Branch::Minus) => vec![
            &[],
            &[(-0.5, -2.4379)],
            &[(-0.5, -0.3337)],
            &[(0.8758, 0.0)],
            &[(0.0061, -0.3777), (0.0061, 0.3777)],
            &[(-0.5, 0.8437), (0.6777, 0.0)],
            &[(0.8129, 0.2412), (0.8129, -0.2412)],
            &[(0.6523, 0.4982), (0.6523, -0.4982), (0.6926, 0.0)],
        ],
        (Lane::Tau, Branch::Plus) => vec![
            &[],
            &[(-0.5, -1.0006)],
            &[(-0.5, -0.3946)],
            &[(-0.5, -0.1510)],
            &[(-0.5, -0.1664), (-0.5, 0.5070)],
            &[(0.0002, -0.3080), (0.0002, 0.3080)],
            &[(0.4431, 0.0), (-0.4576, 0.0)],
            &[(-0.5, 0.0842), (-0.5, 1.7186), (0.5180, 0.0)],
        ],
        (Lane::Tau, Branch::Minus) => vec![
            &[],
            &[(1.0494, 0.0)],
            &[(-0.5, 0.3582)],
            &[(0.5734, 0.0)],
            &[(0.1395, 0.7199), (0.1395, -0.7199)],
            &[(0.4961, 0.0), (-0.5, 0.9399)],
            &[(0.5554, -0.1324), (0.5554, 0.1324)],
            &[(0.4880, -0.3351), (0.4880, 0.3351), (0.4758, 0.0)],
        ],
    };
    rows.into_iter().map(row).collect()
}

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn open3() -> GeneratorSpec {
    GeneratorSpec::open(3, BoundaryRates::table3())
}

#[test]
fn periodic_table_and_spectrum() {
    let spec = GeneratorSpec::periodic(4);
    let (rec, sols) = reconcile_spec(&spec, Some(Lane::Sigma), (Branch::Plus, Branch::Plus), &opts()).unwrap();
    check_rows(&sols[0], &table1());
    assert!(rec.all_matched(1e-7), "{rec:?}");
    assert_eq!(rec.rows.len(), 16);
    let sing: Vec<_> = rec.rows.iter().filter(|r| r.singular).collect();
    assert_eq!(sing.len(), 1);
    assert!(sing[0].label.contains("-1") && sing[0].bethe.is_none());
}

#[test]
fn twisted_table_and_spectrum() {
    let spec = GeneratorSpec::twisted(4);
    let (rec, sols) = reconcile_spec(&spec, Some(Lane::Sigma), (Branch::Plus, Branch::Plus), &opts()).unwrap();
    check_rows(&sols[0], &table2());
    assert!(rec.all_matched(1e-7), "{rec:?}");
    assert_eq!(rec.rows.len(), 16);
    assert_eq!(rec.rows.iter().filter(|r| r.singular).count(), 1);
}

#[test]
fn open_table_all_lanes_and_branches() {
    let spec = open3();
    for lane in [Lane::Sigma, Lane::Tau] {
        let mut matched = Vec::new();
        for br in [Branch::Plus, Branch::Minus] {
            let (rec, sols) = reconcile_spec(&spec, Some(lane), (br, br), &opts()).unwrap();
            check_rows(&sols[0], &table3(lane, br));
            assert!(rec.all_matched(1e-7), "{lane:?} {br:?}: {rec:?}");
            assert_eq!(rec.rows.len(), 8);
            matched.push(rec.rows.iter().map(|r| r.bethe.unwrap()).collect::<Vec<_>>());
        }
        // both parameterizations describe the same eigenvalues
        for e in &matched[0] {
            assert!(matched[1].iter().any(|f| (e - f).norm() < 1e-7), "{lane:?} {e}");
        }
    }
}

#[test]
fn swapped_digit_root_is_not_a_solution() {
    let case = lane_case(&open3(), Lane::Sigma, Branch::Plus).unwrap();
    let bad = RootSet::new(case, vec![c(-0.5, -0.2299)], 0);
    let good = RootSet::new(case, vec![c(-0.5, -0.2229)], 0);
    assert!(bae_residual(&bad).unwrap() > 1e-2);
    assert!(bae_residual(&good).unwrap() < 1e-3);
}

#[test]
fn unpolished_printed_roots() {
    let case = TqCase::PeriodicSym { n: 4 };
    let s = RootSet::new(case, vec![c(-0.5, 0.2887), c(-0.5, -0.2887)], 0);
    assert!(bae_residual(&s).unwrap() < 1e-3);
    let mut o = opts();
    o.warm = vec![s.finite.clone()];
    o.max_rounds = 0;
    let p = solve_bae(&case, 2, 0, None, &o).unwrap();
    assert_eq!(p.len(), 1);
    assert!(p[0].residual < 1e-12);
    assert!((p[0].finite[1].im - 1.0 / 12f64.sqrt()).abs() < 1e-10);
}

#[test]
fn single_root_sectors() {
    let found = |case: TqCase, want: &[(f64, f64)]| {
        let sets = solve_bae(&case, 1, 0, Some(want.len()), &opts()).unwrap();
        for &(a, b) in want {
            assert!(sets.iter().any(|s| agrees(&case, &s.finite, &[c(a, b)])), "{case:?} misses {a}{b:+}i");
        }
    };
    found(TqCase::PeriodicSym { n: 4 }, &[(-0.5, 0.0), (-0.5, 0.5), (-0.5, -0.5)]);
    found(TqCase::TwistedSym { n: 4 }, &[(-0.5, 1.2071), (-0.5, -1.2071), (-0.5, 0.2071), (-0.5, -0.2071)]);
    let open = lane_case(&open3(), Lane::Sigma, Branch::Minus).unwrap();
    found(open, &[(-0.5, -2.4379), (-0.5, -0.3337), (0.8758, 0.0)]);
}

#[test]
fn energies_of_simple_sets() {
    let s = RootSet::new(TqCase::PeriodicSym { n: 4 }, vec![re(-0.5)], 0);
    assert!((energy(&s).unwrap() - re(-4.0)).norm() < 1e-14);
    assert!((lambda_energy(&s).unwrap() - re(-4.0)).norm() < 1e-6);
    assert!(pole_residue(&s) < 1e-10);
    for case in [TqCase::PeriodicSym { n: 4 }, TqCase::TwistedSym { n: 4 }] {
        assert_eq!(energy(&RootSet::new(case, vec![], 0)).unwrap(), re(0.0));
    }
    // no roots, open chain: a pure boundary eigenvalue of the lane generator
    for lane in [Lane::Sigma, Lane::Tau] {
        let e = energy(&RootSet::new(lane_case(&open3(), lane, Branch::Plus).unwrap(), vec![], 0)).unwrap();
        let ed = eigenvalues(&lane_matrix(&open3(), lane).unwrap()).unwrap();
        assert!(ed.iter().any(|x| (x - e).norm() < 1e-8), "{lane:?} {e}");
    }
}

#[test]
fn singular_pair_is_flagged() {
    let s = RootSet::new(TqCase::PeriodicSym { n: 4 }, vec![re(-1.0), re(0.0)], 0);
    assert!(s.singular);
    assert!(energy(&s).is_err());
    assert!(bae_residual(&s).is_err());
}

#[test]
fn asymmetric_periodic_full_spectrum() {
    let spec = GeneratorSpec::periodic(3).with_asymmetry(0.3, 0.7);
    let (rec, _) = reconcile_spec(&spec, None, (Branch::Plus, Branch::Plus), &opts()).unwrap();
    assert_eq!(rec.rows.len(), 64);
    assert!(rec.all_matched(1e-6), "{rec:?}");
}

#[test]
fn asymmetric_open_lanes() {
    let spec = GeneratorSpec::open(2, BoundaryRates::table3()).with_asymmetry(0.3, 0.7);
    for lane in [Lane::Sigma, Lane::Tau] {
        let (rec, sols) = reconcile_spec(&spec, Some(lane), (Branch::Plus, Branch::Plus), &opts()).unwrap();
        assert_eq!(rec.rows.len(), 4);
        assert!(rec.all_matched(1e-6), "{lane:?} {rec:?}");
        assert!(sols[0].levels.iter().all(|l| l.roots.finite.len() <= 1));
    }
    let spec = GeneratorSpec::open(3, BoundaryRates::table3()).with_asymmetry(0.4, 0.7);
    let (rec, sols) = reconcile_spec(&spec, Some(Lane::Sigma), (Branch::Plus, Branch::Plus), &opts()).unwrap();
    assert!(rec.all_matched(1e-6), "{rec:?}");
    let zero: Vec<_> = sols[0].levels.iter().filter(|l| l.energy.unwrap().norm() < 1e-9).collect();
    assert_eq!(zero.len(), 1);
    assert!(matches!(zero[0].roots.case, TqCase::OpenAsymSteady { .. }));
}

#[test]
fn analytic_transfer_eigenvalues() {
    let spec = open3();
    let cases = [
        TqCase::PeriodicSym { n: 4 },
        TqCase::TwistedSym { n: 4 },
        lane_case(&spec, Lane::Sigma, Branch::Plus).unwrap(),
        lane_case(&spec, Lane::Tau, Branch::Minus).unwrap(),
        TqCase::PeriodicAsym { n: 3, eta: 0.3 },
    ];
    for case in cases {
        let sol = solve_lane(&case, &opts()).unwrap();
        for l in sol.levels.iter().filter(|l| !l.roots.singular) {
            assert!(pole_residue(&l.roots) < 1e-9, "{case:?} {:?}", l.roots.finite);
            let e = lambda_energy(&l.roots).unwrap();
            assert!((e - l.energy.unwrap()).norm() < 1e-5, "{case:?} {e} vs {:?}", l.energy);
        }
    }
}

#[test]
fn conjugate_sets_also_solve() {
    let case = lane_case(&open3(), Lane::Sigma, Branch::Minus).unwrap();
    for s in solve_bae(&case, 2, 0, None, &opts()).unwrap() {
        let conj = RootSet::new(case, s.finite.iter().map(|z| z.conj()).collect(), 0);
        assert!(bae_residual(&conj).unwrap() < 1e-10);
        assert!((energy(&conj).unwrap() - energy(&s).unwrap().conj()).norm() < 1e-10);
    }
}

#[test]
fn solving_is_deterministic() {
    let case = TqCase::TwistedSym { n: 4 };
    let a = solve_bae(&case, 2, 0, None, &opts()).unwrap();
    let b = solve_bae(&case, 2, 0, None, &opts()).unwrap();
    assert_eq!(a, b);
    let mut o = opts();
    o.tol = 0.0;
    assert!(solve_bae(&case, 2, 0, None, &o).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_ignores_root_order(a in -1.0..1.0f64, b in 0.1..2.0f64, x in 0.2..3.0f64, rot in 0usize..3) {
        let case = TqCase::OpenSym { n: 3, branch: Branch::Plus, w1: 0.7, w2: -0.4 };
        let mut z = vec![c(a, b), c(a, -b), re(x)];
        let e0 = energy(&RootSet::new(case, z.clone(), 0)).unwrap();
        z.rotate_left(rot);
        z.swap(0, 1);
        let e1 = energy(&RootSet::new(case, z, 0)).unwrap();
        prop_assert!((e0 - e1).norm() <= 1e-12 * (1.0 + e0.norm()));
    }

    #[test]
    fn open_q_crossing_symmetry(a in -2.0..2.0f64, b in -2.0..2.0f64, ur in -3.0..3.0f64, ui in -3.0..3.0f64) {
        let u = c(ur, ui);
        let case = TqCase::OpenSym { n: 3, branch: Branch::Minus, w1: 0.5, w2: 0.3 };
        let z = [c(a, b), re(b)];
        let q = q_eval(&case, &z, u);
        let qc = q_eval(&case, &z, -u - 1.0);
        prop_assert!((q - qc).norm() <= 1e-12 * (1.0 + q.norm()));
        let case = TqCase::OpenAsym { n: 3, eta: 0.4, rates: BoundaryRates::table3().lane(Lane::Tau) };
        let q = q_eval(&case, &z, u);
        let qc = q_eval(&case, &z, -u - 0.4);
        prop_assert!((q - qc).norm() <= 1e-12 * (1.0 + q.norm()));
    }
}
