//! Fixed stepsizes on a strongly convex quadratic stall at a noise floor
//! proportional to the stepsize.

use std::sync::Arc;

use sgfd::analysis::{fixed_limit_b, probe_variance_model};
use sgfd::problems::Quadratic;
use sgfd::{run_sgfd, RunConfig, StepVariant, StepsizeSchedule, StochasticProblem};

fn plateau(problem: &Arc<dyn StochasticProblem>, alpha: f64) -> f64 {
    let config = RunConfig::new(problem.clone(), StepsizeSchedule::fixed(alpha).unwrap())
        .iterations(20_000)
        .replications(40)
        .record_stride(20)
        .seed(17);
    let trace = run_sgfd(&config).unwrap();
    let tail: Vec<f64> = trace.rows.iter().filter(|r| r.k > 10_000).map(|r| r.mean_gap).collect();
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[test]
fn plateau_halves_with_the_stepsize_and_stays_under_the_floor() {
    let problem: Arc<dyn StochasticProblem> = Arc::new(Quadratic::with_condition(4, 4.0, 0.4, 5).unwrap());
    let (l, big_l) = (1.0, 4.0);
    let alpha = 0.02;
    let coarse = plateau(&problem, alpha);
    let fine = plateau(&problem, alpha / 2.0);
    assert!(coarse > 0.0 && fine > 0.0);
    let ratio = coarse / fine;
    println!("plateau ratio {ratio}");
    assert!((2.0 / 1.5..=2.0 * 1.5).contains(&ratio), "plateau ratio {ratio}");

    // floor ᾱ L M_d / (2l) = (L M_d / 2) · lim B_k
    let dist = sgfd::DirectionDistribution::uniform(4).unwrap();
    let model = probe_variance_model(problem.as_ref(), StepVariant::SingleSample, &dist, &[alpha, alpha / 4.0], 8, 4000, 3)
        .unwrap();
    let floor = 0.5 * big_l * model.noise_constant(&dist) * fixed_limit_b(alpha, l);
    assert!(coarse <= floor, "plateau {coarse} above floor {floor}");
}
