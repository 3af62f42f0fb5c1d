use std::sync::Arc;

use proptest::prelude::*;
use wassconc::bounds::{evaluate, fuk_nagaev_bound, hoeffding_bound, BoundParams, Formula};
use wassconc::decomposition::{mixture_bound, ring_decompose, verify_mixture_convexity};
use wassconc::harness::{fit_line, run_rate_experiment, Estimator, ExperimentSpec};
use wassconc::multiscale::{build_partition_tree, dyadic_wpp_bound, greedy_cover};
use wassconc::{wpp_1d, wpp_mcf, Measure, MetricSpace, Point};

fn cloud(coords: &[(f64, f64)]) -> Arc<MetricSpace> {
    let pts = coords
        .iter()
        .map(|&(x, y)| Point::new(vec![x, y]).unwrap())
        .collect();
    Arc::new(MetricSpace::euclidean(pts).unwrap())
}

fn weights(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

fn coord() -> impl Strategy<Value = (f64, f64)> {
    (-5.0f64..5.0, -5.0f64..5.0)
}

fn p_value() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(2.0), Just(3.0), 1.0f64..3.0]
}

fn wpp(mu: &Measure, nu: &Measure, p: f64) -> f64 {
    wpp_mcf(mu, nu, p).unwrap().0.value
}

/// Minimum over all permutations of the matching cost between two uniform
/// measures with the same number of atoms.
fn brute_force_matching(space: &MetricSpace, a: &[usize], b: &[usize], p: f64) -> f64 {
    fn permute(k: usize, perm: &mut Vec<usize>, best: &mut f64, cost: &dyn Fn(&[usize]) -> f64) {
        if k == perm.len() {
            *best = best.min(cost(perm));
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(k + 1, perm, best, cost);
            perm.swap(k, i);
        }
    }
    let n = a.len();
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| space.dist(a[i], b[j]).powf(p))
            .sum::<f64>()
            / n as f64
    };
    let mut best = f64::INFINITY;
    permute(0, &mut (0..n).collect(), &mut best, &cost);
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transport_is_symmetric(
        pts in prop::collection::vec(coord(), 2..10),
        wa in prop::collection::vec(0.05f64..1.0, 10),
        wb in prop::collection::vec(0.05f64..1.0, 10),
        p in p_value(),
    ) {
        let n = pts.len();
        let space = cloud(&pts);
        let mu = Measure::from_weights(space.clone(), &weights(&wa[..n])).unwrap();
        let nu = Measure::from_weights(space, &weights(&wb[..n])).unwrap();
        let ab = wpp(&mu, &nu, p);
        let ba = wpp(&nu, &mu, p);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(wpp(&mu, &mu, p).abs() <= 1e-12);
    }

    #[test]
    fn wasserstein_triangle_inequality(
        pts in prop::collection::vec(coord(), 3..9),
        w in prop::collection::vec(0.05f64..1.0, 27),
        p in p_value(),
    ) {
        let n = pts.len();
        let space = cloud(&pts);
        let m = |k: usize| Measure::from_weights(space.clone(), &weights(&w[9 * k..9 * k + n])).unwrap();
        let (a, b, c) = (m(0), m(1), m(2));
        let d = |x: &Measure, y: &Measure| wpp(x, y, p).powf(1.0 / p);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
    }

    #[test]
    fn matches_permutation_oracle(
        pts in prop::collection::vec(coord(), 8),
        k in 1usize..=4,
        p in p_value(),
    ) {
        let space = cloud(&pts);
        let a: Vec<usize> = (0..k).collect();
        let b: Vec<usize> = (4..4 + k).collect();
        let mu = Measure::uniform_on(space.clone(), &a).unwrap();
        let nu = Measure::uniform_on(space.clone(), &b).unwrap();
        let oracle = brute_force_matching(&space, &a, &b, p);
        let got = wpp(&mu, &nu, p);
        prop_assert!((got - oracle).abs() <= 1e-9 * oracle.max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn line_agrees_with_sorted_matching(
        xs in prop::collection::vec(-10.0f64..10.0, 2..24),
        p in p_value(),
    ) {
        let half = xs.len() / 2;
        let space = Arc::new(MetricSpace::line(&xs[..2 * half]).unwrap());
        let mu = Measure::uniform_on(space.clone(), &(0..half).collect::<Vec<_>>()).unwrap();
        let nu = Measure::uniform_on(space.clone(), &(half..2 * half).collect::<Vec<_>>()).unwrap();
        let mut a = xs[..half].to_vec();
        let mut b = xs[half..2 * half].to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let oracle: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>() / half as f64;
        let closed = wpp_1d(&mu, &nu, p).unwrap().value;
        prop_assert!((closed - oracle).abs() <= 1e-9 * oracle.max(1.0));
        prop_assert!((wpp(&mu, &nu, p) - oracle).abs() <= 1e-9 * oracle.max(1.0));
    }

    #[test]
    fn scaling_the_metric_scales_the_cost(
        pts in prop::collection::vec(coord(), 2..9),
        wa in prop::collection::vec(0.05f64..1.0, 9),
        wb in prop::collection::vec(0.05f64..1.0, 9),
        c in 0.1f64..10.0,
        p in p_value(),
    ) {
        let n = pts.len();
        let space = cloud(&pts);
        let scaled = Arc::new(space.scaled(c).unwrap());
        let (ua, ub) = (weights(&wa[..n]), weights(&wb[..n]));
        let base = wpp(
            &Measure::from_weights(space.clone(), &ua).unwrap(),
            &Measure::from_weights(space, &ub).unwrap(),
            p,
        );
        let big = wpp(
            &Measure::from_weights(scaled.clone(), &ua).unwrap(),
            &Measure::from_weights(scaled, &ub).unwrap(),
            p,
        );
        prop_assert!((big - c.powf(p) * base).abs() <= 1e-9 * big.max(1.0));
    }

    #[test]
    fn greedy_cover_brackets_the_optimum(
        pts in prop::collection::vec(coord(), 1..=12),
        delta in 0.3f64..6.0,
    ) {
        let space = cloud(&pts);
        let n = pts.len();
        let all: Vec<usize> = (0..n).collect();
        let est = greedy_cover(&space, &all, delta).unwrap();
        // Smallest cover by balls centred at sample points, by subset search.
        let mut best = n;
        for mask in 1u32..(1 << n) {
            let size = mask.count_ones() as usize;
            if size >= best {
                continue;
            }
            let covers = (0..n).all(|j| (0..n).any(|i| mask & (1 << i) != 0 && space.dist(i, j) <= delta));
            if covers {
                best = size;
            }
        }
        prop_assert!(est.n_lower <= best, "lower {} > optimum {}", est.n_lower, best);
        prop_assert!(best <= est.n_upper);
        for j in 0..n {
            prop_assert!(est.centers.iter().any(|&c| space.dist(c, j) <= delta * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn dyadic_bound_dominates_exact_cost(
        pts in prop::collection::vec(coord(), 4..40),
        split in 0.2f64..0.8,
        k_star in 1usize..=3,
        p in p_value(),
    ) {
        let n = pts.len();
        let cut = ((n as f64 * split) as usize).clamp(1, n - 1);
        let space = cloud(&pts);
        let all: Vec<usize> = (0..n).collect();
        let tree = build_partition_tree(&space, &all, k_star).unwrap();
        let mu = Measure::uniform_on(space.clone(), &all[..cut]).unwrap();
        let nu = Measure::uniform_on(space.clone(), &all[cut..]).unwrap();
        let bound = dyadic_wpp_bound(&tree, &mu, &nu, p).unwrap().value;
        prop_assert!(bound >= wpp(&mu, &nu, p) - 1e-9);
    }

    #[test]
    fn ring_decomposition_rebuilds_both_measures(
        pts in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 3..30),
        wa in prop::collection::vec(0.0f64..1.0, 30),
        wb in prop::collection::vec(0.0f64..1.0, 30),
        p in p_value(),
    ) {
        let n = pts.len();
        let space = cloud(&pts);
        let mut ua = wa[..n].to_vec();
        let mut ub = wb[..n].to_vec();
        ua[0] += 0.01;
        ub[n - 1] += 0.01;
        let ln = Measure::from_weights(space.clone(), &weights(&ua)).unwrap();
        let mu = Measure::from_weights(space, &weights(&ub)).unwrap();
        let d = ring_decompose(&ln, &mu, 0).unwrap();
        let (e_ln, e_mu) = d.reconstruction_error(&ln, &mu);
        prop_assert!(e_ln <= 1e-12 && e_mu <= 1e-12);
        prop_assert!((d.lambda - d.lambda_reverse).abs() <= 1e-12);
        let lambda_sum: f64 = d.rings.iter().map(|r| r.lambda).sum();
        prop_assert!((lambda_sum + d.lambda - 1.0).abs() <= 1e-12);
        let b = mixture_bound(&d, p).unwrap();
        prop_assert!(b.total >= wpp(&ln, &mu, p) - 1e-9);
    }

    #[test]
    fn transport_cost_is_jointly_convex(
        pts in prop::collection::vec(coord(), 3..8),
        w in prop::collection::vec(0.05f64..1.0, 48),
        l in prop::collection::vec(0.05f64..1.0, 3),
        p in p_value(),
    ) {
        let n = pts.len();
        let space = cloud(&pts);
        let m = |k: usize| Measure::from_weights(space.clone(), &weights(&w[8 * k..8 * k + n])).unwrap();
        let mus: Vec<Measure> = (0..3).map(m).collect();
        let nus: Vec<Measure> = (3..6).map(m).collect();
        let r = verify_mixture_convexity(&mus, &nus, &weights(&l), p).unwrap();
        prop_assert!(r.gap >= -1e-9);
    }

    #[test]
    fn hoeffding_decreases_in_x_and_n(
        x in 0.001f64..2.0,
        bump in 1.01f64..3.0,
        n in 1u64..5000,
        p in 1.0f64..3.0,
    ) {
        let params = BoundParams { p, ..Default::default() };
        let base = hoeffding_bound(x, n, &params).unwrap();
        prop_assert!(hoeffding_bound(x * bump, n, &params).unwrap() <= base + 1e-15);
        prop_assert!(hoeffding_bound(x, n + 1, &params).unwrap() <= base + 1e-15);
    }

    #[test]
    fn bound_total_is_the_sum_of_its_terms(
        x in 0.01f64..5.0,
        n in 2u64..10_000,
        alpha in 0.5f64..6.0,
        r in 2.5f64..8.0,
    ) {
        let params = BoundParams {
            alpha,
            r: Some(r),
            q: Some(r + 1.0),
            weak_moment: Some(2.0),
            i_alpha_p: Some(1.5),
            i_2p_p: Some(1.5),
            moment_p: Some(1.0),
            kappa: Some(0.5),
            ..Default::default()
        };
        for formula in [Formula::FukNagaev, Formula::MainTerm, Formula::Bernstein] {
            let v = evaluate(formula, x, n, &params).unwrap();
            if let Some(total) = v.total() {
                let sum: f64 = v.terms().iter().map(|t| t.value).sum();
                prop_assert!((total - sum).abs() <= 1e-12 * total.abs().max(1.0));
                prop_assert!(v.terms().iter().all(|t| t.value >= 0.0));
            }
        }
        let fn_small = fuk_nagaev_bound(x, n, &params).unwrap().total();
        let fn_large = fuk_nagaev_bound(x * 2.0, n, &params).unwrap().total();
        if let (Some(a), Some(b)) = (fn_small, fn_large) {
            prop_assert!(b <= a + 1e-12);
        }
    }

    #[test]
    fn slope_ignores_constant_shifts(
        ys in prop::collection::vec(-5.0f64..5.0, 3..12),
        shift in -20.0f64..20.0,
    ) {
        let xs: Vec<f64> = (0..ys.len()).map(|k| k as f64 * 0.7).collect();
        let shifted: Vec<f64> = ys.iter().map(|y| y + shift).collect();
        let a = fit_line(&xs, &ys).unwrap();
        let b = fit_line(&xs, &shifted).unwrap();
        prop_assert!((a.slope - b.slope).abs() <= 1e-9);
    }
}

#[test]
fn partition_tree_invariants_on_500_points() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let coords: Vec<(f64, f64)> = (0..500)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let space = cloud(&coords);
    let all: Vec<usize> = (0..500).collect();
    let tree = build_partition_tree(&space, &all, 4).unwrap();
    tree.verify(&space).unwrap();
    let mut prev: Option<Vec<usize>> = None;
    for level in &tree.levels {
        let limit = 4f64.powi(-(level.k as i32)) * tree.diameter;
        let mut seen = vec![0usize; 500];
        let mut owner = vec![usize::MAX; 500];
        for (c, cell) in level.cells.iter().enumerate() {
            assert!(!cell.is_empty());
            for &i in cell {
                seen[i] += 1;
                owner[i] = c;
                for &j in cell {
                    assert!(space.dist(i, j) <= limit * (1.0 + 1e-12));
                }
            }
        }
        assert!(
            seen.iter().all(|&s| s == 1),
            "level {} is not a partition",
            level.k
        );
        if let Some(up) = &prev {
            // Points sharing a cell share the enclosing cell.
            for cell in &level.cells {
                assert!(cell.iter().all(|&i| up[i] == up[cell[0]]));
            }
        }
        prev = Some(owner);
    }
    let counts = tree.cell_counts();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn metric_scale_leaves_rate_slope_unchanged() {
    let spec = |scale: f64| ExperimentSpec {
        sampler: "uniform-cube:1".into(),
        p: 2.0,
        estimator: Estimator::Quantile1d { grid: 1024 },
        n_grid: vec![16, 32, 64, 128],
        replicates: 30,
        x_grid: vec![],
        seed: 21,
        drop_smallest: 0,
        scale,
        slope_tolerance: 0.5,
    };
    let a = run_rate_experiment(&spec(1.0), 1).unwrap();
    let b = run_rate_experiment(&spec(7.5), 1).unwrap();
    let (fa, fb) = (a.fit.unwrap(), b.fit.unwrap());
    assert!((fa.slope - fb.slope).abs() <= 1e-9);
    assert!((fb.intercept - fa.intercept - 2.0 * 7.5f64.ln()).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Scaling by a power of two maps every ring outside the unit ring onto
    /// the next ones, so all three terms scale by `c^p`.
    #[test]
    fn ring_bound_scales_with_the_metric(
        radii in prop::collection::vec((2.05f64..40.0, 0.0f64..std::f64::consts::TAU), 2..16),
        wa in prop::collection::vec(0.05f64..1.0, 16),
        wb in prop::collection::vec(0.05f64..1.0, 16),
        k in 1i32..4,
        p in p_value(),
    ) {
        let n = radii.len();
        let mut coords = vec![(0.0, 0.0)];
        coords.extend(radii.iter().map(|&(r, t)| (r * t.cos(), r * t.sin())));
        let space = cloud(&coords);
        let c = 2f64.powi(k);
        let scaled = Arc::new(space.scaled(c).unwrap());
        let mut ua = vec![0.0];
        ua.extend(weights(&wa[..n]));
        let mut ub = vec![0.0];
        ub.extend(weights(&wb[..n]));
        let terms = |s: &Arc<MetricSpace>| {
            let ln = Measure::from_weights(s.clone(), &ua).unwrap();
            let mu = Measure::from_weights(s.clone(), &ub).unwrap();
            let b = mixture_bound(&ring_decompose(&ln, &mu, 0).unwrap(), p).unwrap();
            [b.main, b.remainder_ln, b.remainder_mu]
        };
        let (base, big) = (terms(&space), terms(&scaled));
        for (x, y) in base.iter().zip(&big) {
            prop_assert!((y - c.powf(p) * x).abs() <= 1e-9 * y.abs().max(1.0), "{x} {y}");
        }
    }
}
