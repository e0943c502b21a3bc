use std::f64::consts::PI;

use pilotwave::bohm::{Ensemble, IntegratorConfig};
use pilotwave::collapse::collapse_state;
use pilotwave::experiment::{self, Experiment, ExperimentConfig};
use pilotwave::observables::{octant_masses, Side};
use pilotwave::spectral::make_ghz;
use pilotwave::stats::chi_square;
use pilotwave::Execution;

#[test]
fn fr_positions_contradict_two_time_probability() {
    let mut config = ExperimentConfig::new(Experiment::Fr, Some(7)).unwrap();
    config.count = 2000;
    config.grid = "0:pi/3:4".parse().unwrap();
    let rows = experiment::run(&config).unwrap().rows;
    // rows 0 and 2 read the two particles at different times, row 1 at the same time
    assert!(rows[0].z_score() > 5.0, "{:?}", rows[0]);
    assert!(rows[2].z_score() > 5.0, "{:?}", rows[2]);
    assert!(rows[1].z_score() < 4.0, "{:?}", rows[1]);
    assert!(rows[3].z_score() < 4.0, "{:?}", rows[3]);
}

#[test]
fn two_times_agree_at_the_start() {
    let mut config = ExperimentConfig::new(Experiment::TwoTimes, Some(11)).unwrap();
    config.count = 2000;
    config.grid = "0:pi/3:3".parse().unwrap();
    let rows = experiment::run(&config).unwrap().rows;
    assert!(rows[0].z_score() < 4.0);
    assert!(rows[2].z_score() > 5.0);
}

#[test]
fn collapsed_ensemble_stays_equivariant() {
    let collapsed = collapse_state(&make_ghz(), 0, Side::Minus, 0.0, 32).unwrap();
    let t = PI / 18.0;
    let ensemble = Ensemble::run(
        &collapsed.state,
        0.0,
        &[t],
        400,
        5,
        &IntegratorConfig::default_for(3),
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(ensemble.failures(), 0);
    let counts = ensemble.orthant_counts(t);
    let masses = octant_masses(&collapsed.state, t);
    let (_, p) = chi_square(&counts, &masses);
    assert!(p > 1e-3, "{counts:?} {masses:?}");
}
