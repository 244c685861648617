use d2stoch::algebra::{BoundaryRates, Lane, LaneRates};
use d2stoch::bethe::{lane_case, solve_bae, solve_lane, Branch, SolveOptions, TqCase};
use d2stoch::dynamics::*;
use d2stoch::lintensor::{c, null_space, re, C64};
use d2stoch::markov::{build_generator, parse_state, GeneratorSpec};
use d2stoch::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn state(s: &str) -> (usize, Vec<f64>) {
    let (n, idx) = parse_state(s).unwrap();
    (idx, basis_state(4usize.pow(n as u32), idx))
}

fn idx(s: &str) -> usize {
    parse_state(s).unwrap().1
}

/// ‖P_ker v‖ / ‖v‖ for the orthonormal kernel basis.
fn overlap(ker: &[Vec<C64>], v: &[f64]) -> f64 {
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let p: f64 = ker
        .iter()
        .map(|k| k.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>().norm_sqr())
        .sum();
    p.sqrt() / vn
}

fn random_rates(rng: &mut ChaCha8Rng) -> BoundaryRates {
    let mut p = || rng.gen_range(0.05..1.0);
    BoundaryRates {
        s1: p(),
        s2: p(),
        t1: p(),
        t2: p(),
        s1p: -p(),
        s2p: -p(),
        t1p: -p(),
        t2p: -p(),
    }
}

#[test]
fn kernel_dimensions_and_analytic_members() {
    for n in [2, 3] {
        let spec = GeneratorSpec::periodic(n);
        let ker = null_space(&build_generator(&spec).unwrap().dense(), 1e-10).unwrap();
        assert_eq!(ker.len(), (n + 1) * (n + 1));
        let fam = steady_states(&spec).unwrap();
        assert_eq!(fam.members.len(), (n + 1) * (n + 1));
        assert!(fam.max_residual < 1e-12);
        for m in &fam.members {
            assert!((overlap(&ker, &m.vector) - 1.0).abs() < 1e-9);
            assert!(m.vector.iter().all(|&x| x >= 0.0));
        }
    }
    for n in [2, 3, 4] {
        let spec = GeneratorSpec::twisted(n);
        let ker = null_space(&build_generator(&spec).unwrap().dense(), 1e-10).unwrap();
        assert_eq!(ker.len(), 4);
        let fam = steady_states(&spec).unwrap();
        assert!(fam.max_residual < 1e-12);
        for m in &fam.members {
            assert!((overlap(&ker, &m.vector) - 1.0).abs() < 1e-9);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [1, 2, 3] {
        for rates in [BoundaryRates::table3(), random_rates(&mut rng)] {
            let spec = GeneratorSpec::open(n, rates);
            let ker = null_space(&build_generator(&spec).unwrap().dense(), 1e-10).unwrap();
            assert_eq!(ker.len(), 1);
            let fam = steady_states(&spec).unwrap();
            let v = &fam.members[0].vector;
            assert!((overlap(&ker, v) - 1.0).abs() < 1e-9);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|&x| x > -1e-12));
            assert!(fam.max_residual < 1e-9);
        }
    }
}

#[test]
fn periodic_members_are_sector_uniform() {
    let v = periodic_steady(2, 1, 0);
    // sigma lane holds one hole: |+1,-2> and |-2,+1> at 1/2 each
    assert_eq!(v[idx("+1,-2")], 0.5);
    assert_eq!(v[idx("-2,+1")], 0.5);
    assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 2);
}

#[test]
fn twisted_worked_projections() {
    let n = 4;
    let single = |w: [f64; 4]| {
        let mut v = vec![1.0];
        for _ in 0..n {
            v = v.iter().flat_map(|a| w.iter().map(move |b| a * b)).collect();
        }
        v
    };
    let cases: Vec<(Vec<f64>, [f64; 4])> = vec![
        (state("-2,-2,-2,-2").1, [1.0, 1.0, 1.0, 1.0]),
        (state("-1,-1,-1,-1").1, [1.0, 1.0, 1.0, 1.0]),
        (single([0.5, 0.5, 0.0, 0.0]), [1.0, 0.0, 1.0, 0.0]),
        (single([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]), [1.0, 1.0 / 81.0, 1.0 / 81.0, 1.0 / 81.0]),
        (state("-2,-1,-2,+1").1, [1.0, -1.0, -1.0, 1.0]),
        (state("-2,-1,-2,-2").1, [1.0, -1.0, 1.0, -1.0]),
    ];
    let g = build_generator(&GeneratorSpec::twisted(n)).unwrap();
    for (phi, want) in cases {
        let got = twisted_projection(&phi, n).unwrap();
        for k in 0..4 {
            assert!((got[k] - want[k]).abs() < 1e-14, "{got:?} vs {want:?}");
        }
        let lim = twisted_limit(&got, n).unwrap();
        let late = evolve(&g, &phi, &[60.0]).unwrap();
        let d = late.states[0].iter().zip(&lim).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-8, "{d}");
    }
}

#[test]
fn figure_four_relaxation() {
    let g = build_generator(&GeneratorSpec::periodic(3)).unwrap();
    let times: Vec<f64> = (0..=50).map(|i| i as f64).collect();

    let (_, phi) = state("-2,-2,-1");
    let tr = evolve(&g, &phi, &times).unwrap();
    assert_eq!(tr.states[0], phi);
    let (a, b) = (tr.coefficient(idx("-1,-2,-2")), tr.coefficient(idx("-2,-1,-2")));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
    let last = tr.states.last().unwrap();
    for s in ["-2,-2,-1", "-2,-1,-2", "-1,-2,-2"] {
        assert!((last[idx(s)] - 1.0 / 3.0).abs() < 1e-6);
    }

    let (_, phi) = state("-2,-1,+1");
    let tr = evolve(&g, &phi, &times).unwrap();
    for group in [
        ["-1,+1,-2", "+1,-2,-1", "-2,+1,-1", "+2,-2,-2"],
        ["+1,-1,-2", "-1,-2,+1", "-2,+2,-2", "-2,-2,+2"],
    ] {
        let cs: Vec<Vec<f64>> = group.iter().map(|s| tr.coefficient(idx(s))).collect();
        for k in 1..4 {
            for (x, y) in cs[0].iter().zip(&cs[k]) {
                assert!((x - y).abs() < 1e-10, "{} vs {}", group[0], group[k]);
            }
        }
    }
    let last = tr.states.last().unwrap();
    let support: Vec<f64> = last.iter().copied().filter(|&x| x > 1e-9).collect();
    assert_eq!(support.len(), 9);
    assert!(support.iter().all(|x| (x - 1.0 / 9.0).abs() < 1e-6));
}

#[test]
fn sector_confinement_and_conservation() {
    let g = build_generator(&GeneratorSpec::periodic(3)).unwrap();
    let (i0, phi) = state("-2,-1,+1");
    let q = |g: usize| {
        let (a, b) = d2stoch::lintensor::SiteIndexing::new(3, 4)
            .decode(g)
            .iter()
            .fold((0, 0), |(a, b), &j| (a + (j >> 1), b + (j & 1)));
        (a, b)
    };
    let tr = evolve(&g, &phi, &[0.1, 1.0, 10.0]).unwrap();
    for s in &tr.states {
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for (k, &x) in s.iter().enumerate() {
            if q(k) != q(i0) {
                assert!(x.abs() <= 1e-12);
            }
            assert!(x >= -1e-10);
        }
    }
}

#[test]
fn evolve_rejects_bad_input() {
    let g = build_generator(&GeneratorSpec::periodic(2)).unwrap();
    let (_, phi) = state("-2,-1");
    assert!(evolve(&g, &phi, &[1.0, 0.5]).is_err());
    assert!(evolve(&g, &phi, &[-1.0]).is_err());
    assert!(evolve(&g, &vec![0.1; 16], &[1.0]).is_err());
}

#[test]
fn figure_five_orders() {
    let g = build_generator(&GeneratorSpec::periodic(3)).unwrap();
    let (i0, phi) = state("-2,-1,+1");
    let grid = short_time_grid();
    assert_eq!(grid.len(), 8);
    let one = short_time_order(&g, &phi, idx("-2,-2,+2"), &grid).unwrap();
    assert!((one.slope - 1.0).abs() < 0.05, "{}", one.slope);
    let two = short_time_order(&g, &phi, idx("-1,+1,-2"), &grid).unwrap();
    assert!((two.slope - 2.0).abs() < 0.05, "{}", two.slope);
    let zero = short_time_order(&g, &phi, i0, &grid).unwrap();
    assert!(zero.slope.abs() < 0.05);
    // another charge sector is never reached
    assert!(matches!(
        short_time_order(&g, &phi, idx("+2,+2,+2"), &grid),
        Err(Error::Unreachable { .. })
    ));
    assert!(short_time_order(&g, &phi, i0, &[0.01, 0.02]).is_err());
}

#[test]
fn periodic_correlations() {
    assert_eq!(correlations_periodic(0, 0, 4, &[2], &[0]).unwrap(), 1.0);
    let two = correlations_periodic(1, 1, 4, &[1, 3], &[0, 0]).unwrap();
    assert!((two - 0.25).abs() < 1e-15);
    assert!(matches!(
        correlations_periodic(1, 1, 4, &[2, 2], &[0, 0]),
        Err(Error::SiteCollision(_))
    ));
    for n in [3, 4] {
        for m in 0..=n {
            for k in 0..=n {
                let v = periodic_steady(n, m, k);
                for sites in [vec![1], vec![1, 2], vec![2, n], vec![1, 2, 3]] {
                    for sp in 0..4usize.pow(sites.len() as u32) {
                        let species: Vec<usize> = (0..sites.len()).map(|i| (sp >> (2 * i)) & 3).collect();
                        let a = correlations_periodic(m, k, n, &sites, &species).unwrap();
                        let b = quadratic_expectation(&v, n, &sites, &species).unwrap();
                        assert!((a - b).abs() < 1e-12, "{n} {m} {k} {sites:?} {species:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn twisted_correlations_are_flat() {
    let n = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let cs = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let v = twisted_limit(&cs, n).unwrap();
        for sites in [vec![1], vec![2, 4], vec![1, 2, 3]] {
            for sp in 0..4usize.pow(sites.len() as u32) {
                let species: Vec<usize> = (0..sites.len()).map(|i| (sp >> (2 * i)) & 3).collect();
                let x = quadratic_expectation(&v, n, &sites, &species).unwrap();
                assert!((x - 0.25f64.powi(sites.len() as i32)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn open_profiles_against_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut draws = vec![BoundaryRates::table3()];
    draws.extend((0..3).map(|_| random_rates(&mut rng)));
    for rates in draws {
        for n in [2, 3] {
            let rows = profile_table(&GeneratorSpec::open(n, rates)).unwrap();
            assert_eq!(rows.len(), 4 * n);
            for r in rows {
                assert!(r.diff < 1e-8, "{r:?}");
            }
        }
    }
}

#[test]
fn open_profile_edge_cases() {
    let flat = LaneRates {
        a1: 0.3,
        a2: 0.6,
        a1p: -0.2,
        a2p: -0.4,
    };
    for k in 1..=5 {
        assert!((lane_density(&flat, 5, k).unwrap() - 1.0 / 3.0).abs() < 1e-14);
    }
    let dead = LaneRates {
        a1: 0.3,
        a2: -0.3,
        a1p: -0.2,
        a2p: -0.4,
    };
    assert!(lane_density(&dead, 3, 1).is_err());
    assert!(lane_density(&flat, 3, 0).is_err());
    let r = BoundaryRates::table3();
    let p = density_profile_open(&r, 3, 2, 3).unwrap();
    let ps = lane_density(&r.lane(Lane::Sigma), 3, 2).unwrap();
    let pt = lane_density(&r.lane(Lane::Tau), 3, 2).unwrap();
    assert!((p - ps * pt).abs() < 1e-15);
    assert!(profile_table(&GeneratorSpec::periodic(2)).is_err());
}

#[test]
fn bethe_vectors_periodic_and_twisted() {
    let us = [re(0.3), re(0.7), re(1.1)];
    let spec = GeneratorSpec::periodic(4);
    let v = bethe_state(&spec, Lane::Sigma, &[], Side::Ket).unwrap();
    assert_eq!(v[0], re(1.0));
    assert_eq!(v.iter().filter(|z| z.norm() > 0.0).count(), 1);
    let t = d2stoch::transfer::transfer(
        &d2stoch::transfer::TransferSpec::from_generator(&spec, d2stoch::transfer::LaneSel::Sigma).unwrap(),
        re(0.4),
    )
    .unwrap();
    let lam = t.matvec(&v)[0];
    assert!((lam - re(1.4f64.powi(4) + 0.4f64.powi(4))).norm() < 1e-12);

    for side in [Side::Ket, Side::Bra] {
        let v = bethe_state(&spec, Lane::Sigma, &[re(-0.5)], side).unwrap();
        assert!(bethe_residual(&spec, Lane::Sigma, &v, side, &us).unwrap() < 1e-7);
    }
    let opt = SolveOptions::default();
    for spec in [GeneratorSpec::periodic(4), GeneratorSpec::twisted(4)] {
        let case = lane_case(&spec, Lane::Tau, Branch::Plus).unwrap();
        let sol = solve_lane(&case, &opt).unwrap();
        for l in sol.levels.iter().filter(|l| !l.roots.singular && l.roots.inf_count == 0) {
            for side in [Side::Ket, Side::Bra] {
                let v = bethe_state(&spec, Lane::Tau, &l.roots.finite, side).unwrap();
                let r = bethe_residual(&spec, Lane::Tau, &v, side, &us).unwrap();
                assert!(r < 1e-7, "{:?} {:?} {side:?}: {r}", spec.boundary, l.roots.finite);
            }
        }
    }
}

#[test]
fn bethe_vectors_open() {
    let us = [re(0.3), re(0.7), re(1.1)];
    let spec = GeneratorSpec::open(2, BoundaryRates::table3());
    let opt = SolveOptions::default();
    for lane in [Lane::Sigma, Lane::Tau] {
        for (br, side) in [(Branch::Minus, Side::Ket), (Branch::Plus, Side::Bra)] {
            let case = lane_case(&spec, lane, br).unwrap();
            for set in solve_bae(&case, 1, 0, None, &opt).unwrap() {
                let v = bethe_state(&spec, lane, &set.finite, side).unwrap();
                let r = bethe_residual(&spec, lane, &v, side, &us).unwrap();
                assert!(r < 1e-6, "{lane:?} {side:?} {:?}: {r}", set.finite);
            }
        }
    }
}

#[test]
fn open_steady_state_from_bethe_roots() {
    let spec = GeneratorSpec::open(2, BoundaryRates::table3());
    let ss = steady_states(&spec).unwrap().members[0].vector.clone();
    let mut sets = Vec::new();
    for lane in [Lane::Sigma, Lane::Tau] {
        let case = lane_case(&spec, lane, Branch::Minus).unwrap();
        let sol = solve_lane(&case, &SolveOptions::default()).unwrap();
        let zero = sol
            .levels
            .iter()
            .find(|l| l.roots.finite.len() == 2 && l.energy.unwrap().norm() < 1e-9)
            .expect("steady root set");
        sets.push(zero.roots.finite.clone());
    }
    let v = full_bethe_state(&spec, &sets[0], &sets[1], Side::Ket).unwrap();
    let s: C64 = v.iter().sum();
    for (a, b) in v.iter().zip(&ss) {
        assert!((a / s - re(*b)).norm() < 1e-9);
    }
}

#[test]
fn bethe_state_errors() {
    let spec = GeneratorSpec::periodic(3).with_asymmetry(0.3, 0.7);
    assert!(bethe_state(&spec, Lane::Sigma, &[c(0.1, 0.2)], Side::Ket).is_err());
    let case = TqCase::PeriodicSym { n: 3 };
    assert_eq!(case.n(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_stays_on_simplex(seed in 0u64..1000, t in 0.01..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = match seed % 3 {
            0 => GeneratorSpec::periodic(2),
            1 => GeneratorSpec::twisted(2),
            _ => GeneratorSpec::open(2, random_rates(&mut rng)),
        };
        let g = build_generator(&spec).unwrap();
        let mut v: Vec<f64> = (0..g.dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        let tr = evolve(&g, &v, &[t]).unwrap();
        let out = &tr.states[0];
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(out.iter().all(|&x| x >= -1e-10));
    }

    #[test]
    fn profile_is_linear_in_k(a1 in 0.05..1.0f64, a2 in 0.05..1.0f64, b1 in 0.05..1.0f64, b2 in 0.05..1.0f64, n in 2usize..8) {
        let r = LaneRates { a1, a2, a1p: -b1, a2p: -b2 };
        let p: Vec<f64> = (1..=n).map(|k| lane_density(&r, n, k).unwrap()).collect();
        for w in p.windows(3) {
            prop_assert!((w[0] - 2.0 * w[1] + w[2]).abs() < 1e-12);
        }
    }
}
