use dsteer_core::dynamics::{decay, SystemSchedule};
use dsteer_core::ensemble::{
    rejection_sample, run_discrete, sample_initial, step_ensemble, EnsembleState, RejectionSampler, StreamTag,
};
use dsteer_core::moments::{empirical_moments, DistributionSpec, MomentVector};
use dsteer_core::planner::{plan, CostSpec, PlanOptions};
use dsteer_core::realization::{density, realize, LambdaParam, ReferenceDensity, DEFAULT_TOLERANCE};

fn mv(v: &[f64]) -> MomentVector {
    MomentVector::new(v.to_vec()).unwrap()
}

/// Standard error of the sample mean of `x^l`, from the sample itself.
fn standard_errors(xs: &[f64]) -> Vec<f64> {
    let m = empirical_moments(xs, 4).unwrap();
    (1..=4)
        .map(|l| ((m.moment(2 * l) - m.moment(l).powi(2)) / xs.len() as f64).sqrt())
        .collect()
}

#[test]
fn stepping_normal_agents_matches_propagation() {
    let n = 100_000;
    let state = EnsembleState::sample(&DistributionSpec::gaussian(0.0, 1.0), 2, n, 1).unwrap();
    let controls = sample_initial(&DistributionSpec::gaussian(0.0, 1.0), 2, n, 2).unwrap();
    let next = step_ensemble(&state, 0.5, &controls).unwrap();
    let emp = empirical_moments(&next.positions, 2).unwrap();
    let se = standard_errors(&next.positions);
    for (l, exact) in [0.0, 1.25, 0.0, 4.6875].iter().enumerate() {
        assert!((emp.moment(l + 1) - exact).abs() <= 3.0 * se[l], "order {}", l + 1);
    }
}

#[test]
fn zero_controls_track_decay() {
    let n = 100_000;
    let spec = DistributionSpec::laplace(1.0, 0.5);
    let mut state = EnsembleState::sample(&spec, 2, n, 3).unwrap();
    let a = [0.4, 0.35, 0.45, 0.32];
    for &ak in &a {
        state = step_ensemble(&state, ak, &vec![0.0; n]).unwrap();
    }
    let expect = decay(&spec.moments(2).unwrap(), &a);
    let emp = empirical_moments(&state.positions, 2).unwrap();
    let se = standard_errors(&state.positions);
    for l in 1..=4 {
        assert!((emp.moment(l) - expect.moment(l)).abs() <= 4.0 * se[l - 1], "order {l}");
    }
    assert_eq!(state.step, 4);
}

#[test]
fn controls_are_independent_of_positions() {
    let est = density(&LambdaParam::zeros(2), ReferenceDensity::gaussian(0.5, 1.0).unwrap());
    let sampler = RejectionSampler::new(&est).unwrap();
    let n = 10_000;
    for seed in 0..10 {
        let xs = sample_initial(&DistributionSpec::gaussian(0.0, 1.0), 2, n, seed).unwrap();
        let us = sampler.sample(n, seed, 0, StreamTag::Control).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let cross = xs.iter().zip(&us).map(|(x, u)| x * u).sum::<f64>() / n as f64;
        assert!(
            (cross - mean(&xs) * mean(&us)).abs() <= 4.0 / (n as f64).sqrt(),
            "seed {seed}"
        );
    }
}

#[test]
fn draws_do_not_depend_on_the_batch_size() {
    let est = density(
        &LambdaParam::new(vec![0.05, 0.01, 0.002]).unwrap(),
        ReferenceDensity::gaussian(0.0, 2.0).unwrap(),
    );
    let sampler = RejectionSampler::new(&est).unwrap();
    let short = sampler.sample(100, 9, 2, StreamTag::Control).unwrap();
    let long = sampler.sample(1000, 9, 2, StreamTag::Control).unwrap();
    assert_eq!(short[..], long[..100]);
}

#[test]
fn realized_terminal_density_samples_reproduce_its_moments() {
    let sigma = mv(&[-0.5, 8.5, -12.5, 150.5]);
    let r = realize(&sigma, DEFAULT_TOLERANCE).unwrap();
    let xs = rejection_sample(&r.estimate, 100_000, 4).unwrap();
    let emp = empirical_moments(&xs, 2).unwrap();
    let se = standard_errors(&xs);
    for l in 1..=4 {
        let target = sigma.moment(l) + r.residuals[l];
        assert!((emp.moment(l) - target).abs() <= 3.0 * se[l - 1], "order {l}");
    }
}

fn seeded_plan() -> (
    dsteer_core::planner::SteeringPlan,
    Vec<dsteer_core::realization::DensityEstimate>,
) {
    let s = SystemSchedule::from_seed(2, 4, 0, 0.3, 0.5).unwrap();
    let target = DistributionSpec::mixture(vec![
        (0.5, DistributionSpec::laplace(2.0, 1.0)),
        (0.5, DistributionSpec::laplace(-3.0, 1.0)),
    ]);
    let p = plan(
        &DistributionSpec::gaussian(0.0, 1.0),
        &target,
        &s,
        &CostSpec::Energy,
        &PlanOptions::default(),
    )
    .unwrap();
    let d = p
        .controls
        .iter()
        .map(|u| realize(u, DEFAULT_TOLERANCE).unwrap().estimate)
        .collect();
    (p, d)
}

#[test]
fn single_agent_follows_the_system_equation() {
    let (p, d) = seeded_plan();
    let init = EnsembleState::new(vec![0.3], 5).unwrap();
    let tr = run_discrete(&p, &d, init).unwrap();
    assert_eq!(tr.positions.len(), 5);
    for k in 0..4 {
        let x = tr.positions[k][0];
        let next = tr.positions[k + 1][0];
        let u = next - p.coefficients[k] * x;
        let (lo, hi) = d[k - p.k0].domain();
        assert!(u.is_finite() && u >= lo - 1e-9 && u <= hi + 1e-9);
    }
}

#[test]
fn trajectories_are_reproducible() {
    let (p, d) = seeded_plan();
    let init = || EnsembleState::sample(&DistributionSpec::gaussian(0.0, 1.0), 2, 500, 8).unwrap();
    let a = run_discrete(&p, &d, init()).unwrap();
    let b = run_discrete(&p, &d, init()).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.to_csv().starts_with("step,agent,position\n"));
    let c = run_discrete(
        &p,
        &d,
        EnsembleState::sample(&DistributionSpec::gaussian(0.0, 1.0), 2, 500, 9).unwrap(),
    )
    .unwrap();
    assert_ne!(a.terminal(), c.terminal());
}

#[test]
fn wrong_density_count_is_rejected() {
    let (p, d) = seeded_plan();
    let init = EnsembleState::new(vec![0.0; 3], 1).unwrap();
    assert!(run_discrete(&p, &d[1..], init).is_err());
}
