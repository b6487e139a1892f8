//! Cross-module checks through the public API.

use clt_lab::blocks::{block_partition, block_sums, optimal_block_length};
use clt_lab::generators::{exact_sigma_n_ma, gen_m_dependent, MomentProfile};
use clt_lab::linalg::{gaussian_w2_closed_form, PsdMatrix};
use clt_lab::markov::{
    exact_covariances, simulate_path, stationary_dist, sum_law, three_state_example, two_state_example,
};
use clt_lab::rates::{clt_distance_curve, CurveConfig, Setting, Source};
use clt_lab::rng::stream;
use clt_lab::transport::{wp_assignment, wp_sorted_1d, PointCloud};
use clt_lab::ustat::{u_statistic, u_statistic_fast, KernelSpec};
use proptest::prelude::*;

fn curve(source: Source, n_grid: Vec<usize>, seed: u64) -> CurveConfig {
    CurveConfig {
        source,
        p: 1.0,
        n_grid,
        reps: 20,
        m: 200,
        seed,
        debias: true,
        estimator: Default::default(),
        sigma: Default::default(),
        setting: None,
        exclude_flagged: false,
        bootstrap: 200,
        fit_min_n: None,
    }
}

#[test]
fn dp_law_variance_matches_exact_sigma_n() {
    let chain = three_state_example();
    let pi = stationary_dist(&chain).unwrap();
    for n in [1usize, 5, 40, 200] {
        let law = sum_law(&chain, n, &pi).unwrap();
        let sigma = exact_covariances(&chain, n).unwrap().sigma_n.get(0, 0);
        assert!((law.variance() - n as f64 * sigma).abs() < 1e-9 * n as f64, "n = {n}");
    }
}

#[test]
fn simulated_chain_visits_states_at_stationary_frequencies() {
    let chain = two_state_example();
    let pi = stationary_dist(&chain).unwrap();
    let mut rng = stream(5, &[]);
    let path = simulate_path(&chain, 0, 200_000, &mut rng);
    let freq0 = path.iter().filter(|&&x| x == 0).count() as f64 / path.len() as f64;
    assert!((freq0 - pi[0]).abs() < 0.01, "{freq0} vs {}", pi[0]);
}

#[test]
fn synthetic_gaussian_source_sits_near_zero() {
    let c =
        clt_distance_curve(&curve(Source::Synthetic { cov: PsdMatrix::identity(1) }, vec![8, 16, 32, 64], 3)).unwrap();
    for p in &c.points {
        assert!(p.estimate.abs() <= 4.0 * p.stderr + 1e-3, "n = {}: {} ± {}", p.n, p.estimate, p.stderr);
    }
}

#[test]
fn iid_curve_decays_and_reports_theory() {
    let mut cfg = curve(Source::Iid { profile: MomentProfile::CenteredExponential, d: 1 }, vec![4, 16, 64, 256], 7);
    cfg.setting = Some(Setting::IndepW1 { delta: 1.0 });
    let c = clt_distance_curve(&cfg).unwrap();
    assert_eq!(c.theoretical_exponent, Some(-0.5));
    assert!(c.slope < -0.2, "{}", c.slope);
    assert!(c.points.first().unwrap().estimate > c.points.last().unwrap().estimate);
}

#[test]
fn ma_sigma_n_matches_block_variance() {
    // Var of the full sum of a unit-variance MA(M) sequence is n Σ_n.
    let (n, m) = (64usize, 2usize);
    let reps = 4000;
    let mut sums = Vec::with_capacity(reps);
    for r in 0..reps {
        let s = gen_m_dependent(n, 1, m, MomentProfile::Rademacher, r as u64).unwrap();
        sums.push(s.sum()[0]);
    }
    let var = clt_lab::stats::variance(&sums) / n as f64;
    let exact = exact_sigma_n_ma(n, m, 1.0).unwrap().get(0, 0);
    assert!((var - exact).abs() < 0.1 * exact, "{var} vs {exact}");
}

#[test]
fn block_decomposition_on_generated_data() {
    let n = 1024;
    let ell = optimal_block_length(n, 1, 2.0, 2.0).unwrap().ell;
    let part = block_partition(n, 1, ell).unwrap();
    let s = gen_m_dependent(n, 3, 1, MomentProfile::Gaussian, 11).unwrap();
    let sums = block_sums(&s, &part).unwrap();
    let total = s.sum();
    for ((a, delta), t) in sums.a.iter().zip(&sums.delta).zip(&total) {
        assert!((a + delta - t).abs() < 1e-10);
    }
    assert_eq!(sums.big_sums.len(), part.k);
}

#[test]
fn closed_form_w2_agrees_with_the_one_dimensional_formula() {
    for (a, b) in [(1.0f64, 4.0f64), (0.25, 9.0), (2.0, 2.0)] {
        let w =
            gaussian_w2_closed_form(&PsdMatrix::diagonal(&[a]).unwrap(), &PsdMatrix::diagonal(&[b]).unwrap()).unwrap();
        assert!((w - (a.sqrt() - b.sqrt()).abs()).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sorted_coupling_equals_assignment(
        xs in prop::collection::vec(-50.0f64..50.0, 1..9),
        seed in any::<u64>(),
        p in 1.0f64..4.0,
    ) {
        use rand::Rng;
        let mut rng = stream(seed, &[]);
        let ys: Vec<f64> = xs.iter().map(|_| rng.random_range(-50.0..50.0)).collect();
        let x = PointCloud::from_scalars(&xs).unwrap();
        let y = PointCloud::from_scalars(&ys).unwrap();
        let a = wp_assignment(&x, &y, p).unwrap();
        let s = wp_sorted_1d(&x, &y, p).unwrap();
        prop_assert!((a - s).abs() <= 1e-9 * (1.0 + a), "{} vs {}", a, s);
    }

    #[test]
    fn closed_form_u_statistics_match_enumeration(
        data in prop::collection::vec(-5.0f64..5.0, 6..40),
        dim in 1usize..3,
    ) {
        let n = data.len() / dim;
        prop_assume!(n >= 2);
        let cloud = PointCloud::new(data[..n * dim].to_vec(), dim).unwrap();
        for spec in [KernelSpec::SampleCovariance, KernelSpec::PairMean] {
            let k = spec.build(dim).unwrap();
            let fast = u_statistic_fast(&cloud, &k).unwrap();
            let slow = u_statistic(&cloud, &k).unwrap();
            for (f, s) in fast.iter().zip(&slow) {
                prop_assert!((f - s).abs() <= 1e-9 * (1.0 + s.abs()));
            }
        }
    }
}
