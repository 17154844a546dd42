use super::*;
use crate::bench::analytic::{analytic_domain, eval_analytic};
use crate::distributions::latin_hypercube;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hyper_2src() -> KernelHyperparams {
    KernelHyperparams {
        components: vec![SeKernel::new(1.3, vec![0.35, 0.5]), SeKernel::new(0.2, vec![0.4, 0.3])],
        means: vec![0.1, -0.05],
        jitter: 1e-10,
    }
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, num_sources: usize) -> TrainingSet {
    let mut data = TrainingSet::new();
    data.push(AugmentedInput::high_fidelity(vec![rng.random(), rng.random()]), rng.random_range(-2.0..2.0)).unwrap();
    while data.len() < n {
        let input = AugmentedInput::new(rng.random_range(0..num_sources), vec![rng.random::<f64>(), rng.random::<f64>()]);
        let y = (3.0 * input.location[0]).sin() + input.location[1] + 0.3 * input.source as f64;
        if !data.contains(&input) {
            data.push(input, y).unwrap();
        }
    }
    data
}

fn conditioned(data: TrainingSet, hyper: KernelHyperparams) -> MfGpPosterior {
    let scaling = OutputScaling::from_data(&data);
    MfGpPosterior::condition(data, &DomainBox::unit(2), hyper, scaling).unwrap()
}

#[test]
fn single_observation_is_interpolated() {
    let data = TrainingSet::from_observations([(AugmentedInput::high_fidelity(vec![0.4, 0.6]), 2.5)]).unwrap();
    let gp = MfGpPosterior::fit(data, &DomainBox::unit(2), &KernelHyperparams::default_for(1, 2), &FitOptions::default()).unwrap();
    let q = AugmentedInput::high_fidelity(vec![0.4, 0.6]);
    assert!((gp.posterior_mean(&q) - 2.5).abs() < 1e-6);
    assert!(gp.posterior_var(&q) <= 1e-6 * gp.prior_variance(0));
}

#[test]
fn training_points_are_interpolated() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gp = conditioned(random_set(&mut rng, 15, 2), hyper_2src());
    let (lo, hi) = gp.data().iter().fold((f64::MAX, f64::MIN), |(lo, hi), o| (lo.min(o.value), hi.max(o.value)));
    for o in gp.data().iter() {
        assert!((gp.posterior_mean(&o.input) - o.value).abs() <= 1e-6 * (hi - lo));
    }
}

#[test]
fn reverts_to_prior_far_from_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gp = conditioned(random_set(&mut rng, 10, 2), hyper_2src());
    // far outside the data in unit-box coordinates (≫ length-scales)
    for source in 0..2 {
        let q = AugmentedInput::new(source, vec![40.0, -35.0]);
        let (mean, var) = gp.predict(&q);
        assert!((var - gp.prior_variance(source)).abs() <= 0.01 * gp.prior_variance(source));
        assert!((mean - gp.prior_mean(source)).abs() <= 0.01 * gp.prior_mean(source).abs().max(gp.scaling().std_dev));
    }
}

#[test]
fn posterior_cov_is_symmetric_and_matches_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gp = conditioned(random_set(&mut rng, 12, 2), hyper_2src());
    for _ in 0..50 {
        let a = AugmentedInput::new(rng.random_range(0..2), vec![rng.random(), rng.random()]);
        let b = AugmentedInput::new(rng.random_range(0..2), vec![rng.random(), rng.random()]);
        assert_eq!(gp.posterior_cov(&a, &b), gp.posterior_cov(&b, &a));
        assert_eq!(gp.posterior_cov(&a, &a), gp.posterior_var(&a));
    }
}

#[test]
fn duplicate_training_pairs_are_rejected() {
    let obs = vec![(AugmentedInput::high_fidelity(vec![0.1, 0.1]), 1.0), (AugmentedInput::high_fidelity(vec![0.1, 0.1]), 1.0)];
    assert!(matches!(TrainingSet::from_observations(obs), Err(Error::Precondition(_))));
}

#[test]
fn missing_high_fidelity_data_is_rejected() {
    let data = TrainingSet::from_observations([(AugmentedInput::new(1, vec![0.1, 0.1]), 1.0)]).unwrap();
    let err = MfGpPosterior::fit(data, &DomainBox::unit(2), &KernelHyperparams::default_for(2, 2), &FitOptions::default());
    assert!(matches!(err, Err(Error::Precondition(_))));
}

#[test]
fn full_resolution_at_the_lookahead_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gp = conditioned(random_set(&mut rng, 8, 2), hyper_2src());
    let z = [0.77, 0.21];
    let present = gp.posterior_var(&AugmentedInput::high_fidelity(z.to_vec()));
    let reduction = gp.future_variance_reduction(&z, &z, 0).unwrap();
    assert!((reduction - present).abs() <= 1e-6 * present);
    assert_eq!(gp.lookahead_variance(&z, &z, 0), gp.variance_floor().max(present - reduction));
    assert!(gp.lookahead_variance(&z, &z, 0) <= 1e-6 * present);
}

#[test]
fn uncorrelated_candidate_gets_no_reduction() {
    let hyper = KernelHyperparams {
        components: vec![SeKernel::new(1.0, vec![0.01, 0.01]), SeKernel::new(0.1, vec![0.01, 0.01])],
        means: vec![0.0, 0.0],
        jitter: 1e-10,
    };
    let data = TrainingSet::from_observations([
        (AugmentedInput::high_fidelity(vec![0.5, 0.5]), 1.0),
        (AugmentedInput::new(1, vec![0.2, 0.2]), 0.5),
    ])
    .unwrap();
    let gp = conditioned(data, hyper);
    let z = [0.9, 0.9];
    let z_next = [0.1, 0.9];
    assert_eq!(gp.future_variance_reduction(&z, &z_next, 0), Some(0.0));
    let present = gp.posterior_var(&AugmentedInput::high_fidelity(z.to_vec()));
    assert_eq!(gp.lookahead_variance(&z, &z_next, 1), present);
}

#[test]
fn resolved_source_signals_zero_information() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_set(&mut rng, 8, 2);
    let at = data.get(0).input.clone();
    let gp = conditioned(data, hyper_2src());
    assert_eq!(gp.future_variance_reduction(&[0.3, 0.3], &at.location, at.source), None);
}

#[test]
fn lookahead_matches_refit_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..20 {
        let gp = conditioned(random_set(&mut rng, 5 + case % 6, 2), hyper_2src());
        let z = [rng.random::<f64>(), rng.random::<f64>()];
        let z_next = [rng.random::<f64>(), rng.random::<f64>()];
        let source = rng.random_range(0..2);
        let refit = gp.with_observation(AugmentedInput::new(source, z_next.to_vec()), rng.random_range(-5.0..5.0)).unwrap();
        let oracle = refit.posterior_var(&AugmentedInput::high_fidelity(z.to_vec()));
        let closed = gp.lookahead_variance(&z, &z_next, source);
        assert!((closed - oracle).abs() <= 1e-6 * oracle, "case {case}: {closed} vs {oracle}");
    }
}

#[test]
fn batch_predictions_match_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gp = conditioned(random_set(&mut rng, 12, 2), hyper_2src());
    let pts: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random(), rng.random()]).collect();
    let set = SampleSet::from_points(&pts, 0).unwrap();
    let batch = gp.predict_high_fidelity(&set);
    let means = gp.mean_high_fidelity(&set);
    let z_next = [0.4, 0.6];
    let reductions = gp.variance_reductions(&batch, &z_next, 1).unwrap();
    for (i, p) in pts.iter().enumerate() {
        let (m, v) = gp.predict(&AugmentedInput::high_fidelity(p.clone()));
        assert!((batch.mean[i] - m).abs() < 1e-10 && (means[i] - m).abs() < 1e-10);
        assert!((batch.variance[i] - v).abs() < 1e-12);
        let r = gp.future_variance_reduction(p, &z_next, 1).unwrap();
        assert!((reductions[i] - r).abs() <= 1e-12 * r.max(1.0));
    }
}

#[test]
fn fitting_analytic_design_improves_likelihood() {
    let domain = analytic_domain();
    let design = latin_hypercube(&domain, 10, 123).unwrap();
    let mut data = TrainingSet::new();
    for p in design.iter() {
        for source in 0..3 {
            data.push(AugmentedInput::new(source, p.to_vec()), eval_analytic(source, p).unwrap()).unwrap();
        }
    }
    let init = KernelHyperparams::default_for(3, 2);
    let before = log_marginal_likelihood(&data, &domain, &init).unwrap();
    let gp = MfGpPosterior::fit(data.clone(), &domain, &init, &FitOptions::default()).unwrap();
    assert!(gp.log_marginal_likelihood() >= before, "{} < {before}", gp.log_marginal_likelihood());
    let again = log_marginal_likelihood(&data, &domain, gp.hyperparams()).unwrap();
    assert!((again - gp.log_marginal_likelihood()).abs() < 1e-8 * again.abs().max(1.0));
}

#[test]
fn state_round_trip_rebuilds_identical_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gp = conditioned(random_set(&mut rng, 9, 2), hyper_2src());
    let json = serde_json::to_string(&PosteriorState::from(&gp)).unwrap();
    let back: PosteriorState = serde_json::from_str(&json).unwrap();
    let rebuilt = back.rebuild().unwrap();
    let q = AugmentedInput::high_fidelity(vec![0.31, 0.62]);
    assert_eq!(gp.predict(&q), rebuilt.predict(&q));
}

mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn kernel_matrix_factorizes(seed in any::<u64>(), n in 1usize..=30, ls in 0.05f64..3.0, var in 0.01f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_set(&mut rng, n, 3);
            let hyper = KernelHyperparams {
                components: vec![SeKernel::new(var, vec![ls, ls * 0.7]), SeKernel::new(0.1 * var, vec![ls, ls]), SeKernel::new(0.5, vec![0.3, ls])],
                means: vec![0.0; 3],
                jitter: 1e-10,
            };
            let scaling = OutputScaling::from_data(&data);
            let gp = MfGpPosterior::condition(data, &DomainBox::unit(2), hyper, scaling);
            prop_assert!(gp.is_ok());
            let gp = gp.unwrap();
            for _ in 0..10 {
                let q = AugmentedInput::new(rng.random_range(0..3), vec![rng.random(), rng.random()]);
                let v = gp.posterior_var(&q);
                prop_assert!(v >= 0.0 && v <= gp.prior_variance(q.source) + 1e-9);
            }
        }

        #[test]
        fn lookahead_identity(seed in any::<u64>(), n in 2usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gp = conditioned(random_set(&mut rng, n, 2), hyper_2src());
            let z = [rng.random::<f64>(), rng.random::<f64>()];
            let z_next = [rng.random::<f64>(), rng.random::<f64>()];
            let source = rng.random_range(0..2);
            let present = gp.posterior_var(&AugmentedInput::high_fidelity(z.to_vec()));
            let reduction = gp.future_variance_reduction(&z, &z_next, source).unwrap_or(0.0);
            let look = gp.lookahead_variance(&z, &z_next, source);
            prop_assert!(reduction >= 0.0 && reduction <= present + 1e-9);
            if present - reduction > gp.variance_floor() {
                prop_assert!((look + reduction - present).abs() <= 1e-9 * present);
            }
        }
    }
}
