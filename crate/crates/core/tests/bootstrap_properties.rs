mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{exp_draws, ks_uniform};
use orthofit::goftest::bootstrap;
use orthofit::{
    fit_mle, run_study, run_test, BootstrapConfig, CrossMoment, Family, GramBundle, GridConfig, MleOptions,
    Multiplier, ObservedSample, Scheme, SchemeScoreEngine, SimulationConfig, Study, TestOptions,
};

#[test]
fn bootstrap_mean_matches_trace() {
    let sample = ObservedSample::complete(&exp_draws(1.0, 60, &mut ChaCha8Rng::seed_from_u64(1))).unwrap();
    let fit = fit_mle(&sample, Family::Exponential, None, &MleOptions::default()).unwrap();
    let engine = SchemeScoreEngine::new(Scheme::Complete, Family::Exponential, &fit.theta_hat).unwrap();
    let b = GramBundle::build(&sample, &engine, &GridConfig::default(), Some(&fit.scores), CrossMoment::Projection)
        .unwrap();
    let target = b.kperp.trace() / sample.len() as f64;
    for multiplier in [Multiplier::Mammen, Multiplier::Rademacher] {
        let cfg = BootstrapConfig { b: 10_000, multiplier, seed: 3 };
        let draws = bootstrap(&b, &cfg).unwrap();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        assert!((m - target).abs() <= 3.0 * sd / (draws.len() as f64).sqrt(), "{multiplier}: {m} vs {target}");
    }
}

#[test]
fn two_observations_do_not_panic() {
    let sample = ObservedSample::complete(&[0.4, 1.9]).unwrap();
    let cfg = BootstrapConfig { b: 99, ..Default::default() };
    let r = run_test(&sample, Family::Exponential, &cfg, &TestOptions::default()).unwrap();
    assert!(r.stat_nq.is_finite() && r.stat_nq >= -1e-12);
    assert!(r.p_value > 0.0 && r.p_value <= 1.0);
}

#[test]
fn identical_seeds_reproduce_results() {
    let sample = ObservedSample::complete(&exp_draws(2.0, 40, &mut ChaCha8Rng::seed_from_u64(2))).unwrap();
    let cfg = BootstrapConfig { b: 199, seed: 42, ..Default::default() };
    let a = run_test(&sample, Family::Exponential, &cfg, &TestOptions::default()).unwrap();
    let b = run_test(&sample, Family::Exponential, &cfg, &TestOptions::default()).unwrap();
    assert_eq!(a.boot_draws, b.boot_draws);
    assert_eq!(a.p_value, b.p_value);
    let c = run_test(&sample, Family::Exponential, &BootstrapConfig { seed: 43, ..cfg }, &TestOptions::default()).unwrap();
    assert_ne!(a.boot_draws, c.boot_draws);
}

#[test]
fn jacobian_cross_moment_is_close_to_projection() {
    let sample = ObservedSample::complete(&exp_draws(1.0, 400, &mut ChaCha8Rng::seed_from_u64(4))).unwrap();
    let cfg = BootstrapConfig { b: 49, ..Default::default() };
    let proj = run_test(&sample, Family::Exponential, &cfg, &TestOptions::default()).unwrap();
    let jac = run_test(
        &sample,
        Family::Exponential,
        &cfg,
        &TestOptions { cross_moment: CrossMoment::Jacobian, ..Default::default() },
    )
    .unwrap();
    assert!((proj.stat_nq - jac.stat_nq).abs() < 0.2 * proj.stat_nq.max(0.01), "{} vs {}", proj.stat_nq, jac.stat_nq);
}

#[test]
fn null_p_values_are_roughly_uniform() {
    let cfg = SimulationConfig {
        thetas: vec![1.0],
        ns: vec![50],
        trials_null: 300,
        b: 99,
        seed: 8,
        ..SimulationConfig::desk(Study::RandomSampling)
    };
    let rep = run_study(&cfg).unwrap();
    for cell in &rep.cells {
        let ks = ks_uniform(&cell.p_values);
        assert!(ks <= 0.12, "{}: KS {ks}", cell.variant);
    }
}

#[test]
fn study_is_identical_across_thread_counts() {
    let cfg = SimulationConfig {
        thetas: vec![1.0],
        ns: vec![30],
        trials_null: 24,
        b: 49,
        ..SimulationConfig::desk(Study::Dt)
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_study(&cfg).unwrap())
    };
    let (a, b) = (run(1), run(5));
    assert_eq!(a.cells[0].p_values, b.cells[0].p_values);
    assert_eq!(a.cells[0].pt, b.cells[0].pt);
}
