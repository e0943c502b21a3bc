//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pilotwave::bohm::{velocity, Ensemble, IntegratorConfig};
use pilotwave::experiment::{self, fr_fixed_queries, fr_state, Experiment, ExperimentConfig, GridSpec};
use pilotwave::observables::{multitime_correlator, octant_masses, sign_overlap, CorrelatorQuery};
use pilotwave::report::{write_csv, Row};
use pilotwave::spectral::{make_ghz, psi_eval, HALF_WIDTH};
use pilotwave::stats::chi_square;
use pilotwave::Execution;

const SEED: u64 = 1;

fn anchor() -> f64 {
    (8.0 / (3.0 * PI)).powi(3)
}

fn ghz_closed_form(times: [f64; 3]) -> f64 {
    -(3.0 * times.iter().sum::<f64>()).cos() * anchor()
}

fn two_time_grid() -> GridSpec {
    "pi/36:pi/3:12".parse().unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_constants() -> Outcome {
    let s12 = sign_overlap(1, 2);
    let err = (s12 - 8.0 / (3.0 * PI)).abs();
    let diag = [sign_overlap(1, 1), sign_overlap(2, 2)];
    outcome(
        err < 1e-10 && diag == [0.0, 0.0],
        format!("|S12 - 8/3pi| = {err:.1e}, S11 = {}, S22 = {}", diag[0], diag[1]),
    )
}

fn c2_anchor() -> Outcome {
    let value = multitime_correlator(&make_ghz(), &CorrelatorQuery::signs(&[0.0, 0.0, 0.0])).unwrap();
    let err = (value + anchor()).abs();
    outcome(err < 1e-10, format!("C(0,0,0) = {value:.10}, error {err:.1e}"))
}

fn c3_sweep() -> Outcome {
    let ghz = make_ghz();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let times = [rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let value = multitime_correlator(&ghz, &CorrelatorQuery::signs(&times)).unwrap();
        worst = worst.max((value - ghz_closed_form(times)).abs());
    }
    let special = multitime_correlator(&ghz, &CorrelatorQuery::signs(&[PI / 6.0, PI / 6.0, 0.0])).unwrap();
    let special_err = (special - anchor()).abs();
    outcome(
        worst < 1e-10 && special_err < 1e-10,
        format!("max error over 1000 triples {worst:.1e}; C(pi/6,pi/6,0) = {special:.10}"),
    )
}

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn mode(n: u32, x: f64) -> f64 {
    let k = n as f64;
    let norm = (2.0 / PI).sqrt();
    if n % 2 == 1 {
        norm * (k * x).cos()
    } else {
        norm * (k * x).sin()
    }
}

/// Probability that particle 1 is on `side1` at `t1` and particle 2 on
/// `side2` at `t2` in the sense of the projector correlator: each particle's
/// factor of the two-particle wavefunction is evolved by its own time and the
/// density integrated over the quadrant.
fn quadrature_oracle(t1: f64, right1: bool, t2: f64, right2: bool) -> f64 {
    // conj of (fb + bf + i ff)/sqrt3 with f = (g + ie)/sqrt2, b = (g - ie)/sqrt2
    let i = Complex64::i();
    let one = Complex64::new(1.0, 0.0);
    let f = [one / 2f64.sqrt(), i / 2f64.sqrt()];
    let b = [one / 2f64.sqrt(), -i / 2f64.sqrt()];
    let c: [[Complex64; 2]; 2] = std::array::from_fn(|m| {
        std::array::from_fn(|n| ((f[m] * b[n] + b[m] * f[n] + i * f[m] * f[n]) / 3f64.sqrt()).conj())
    });
    let energy = |m: usize| ((m + 1) * (m + 1)) as f64;
    let rule = gauss_legendre(64);
    let half = |right: bool| -> Vec<(f64, f64)> {
        let (lo, hi) = if right { (0.0, HALF_WIDTH) } else { (-HALF_WIDTH, 0.0) };
        rule.iter().map(|&(x, w)| (0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w)).collect()
    };
    let mut total = 0.0;
    for &(x1, w1) in &half(right1) {
        for &(x2, w2) in &half(right2) {
            let mut phi = Complex64::default();
            for (m, row) in c.iter().enumerate() {
                for (n, cmn) in row.iter().enumerate() {
                    let phase = Complex64::from_polar(1.0, -energy(m) * t1 - energy(n) * t2);
                    phi += cmn * phase * mode(m as u32 + 1, x1) * mode(n as u32 + 1, x2);
                }
            }
            total += w1 * w2 * phi.norm_sqr();
        }
    }
    total
}

fn c4_fr() -> Outcome {
    let state = fr_state();
    let quoted = [
        0.25 - 2.0 / (9.0 * PI) - 32.0 / (27.0 * PI * PI),
        0.25 - 4.0 / (9.0 * PI) - 16.0 / (27.0 * PI * PI),
        0.25 - 2.0 / (9.0 * PI) - 32.0 / (27.0 * PI * PI),
    ];
    let mut worst_quoted: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut values = Vec::new();
    for (k, (_, factors)) in fr_fixed_queries().into_iter().enumerate() {
        let value = multitime_correlator(&state, &CorrelatorQuery::new(factors.to_vec())).unwrap();
        let side = |obs| obs == pilotwave::observables::Observable::Half(pilotwave::observables::Side::Plus);
        let oracle = quadrature_oracle(factors[0].1, side(factors[0].0), factors[1].1, side(factors[1].0));
        worst_oracle = worst_oracle.max((value - oracle).abs());
        if k < 3 {
            worst_quoted = worst_quoted.max((value - quoted[k]).abs());
        }
        values.push(value);
    }
    outcome(
        worst_quoted < 1e-10 && worst_oracle < 1e-8,
        format!(
            "values {:.7} {:.7} {:.7} (both right at 0: {:.7}); vs quoted {worst_quoted:.1e}, vs quadrature {worst_oracle:.1e}",
            values[0], values[1], values[2], values[3]
        ),
    )
}

fn c5_velocity() -> Outcome {
    let ghz = make_ghz();
    let eps = 1e-300;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let h = 1e-4;
    let current = |t: f64, q: &[f64]| -> Vec<f64> {
        let rho = psi_eval(&ghz, t, q).unwrap().norm_sqr();
        velocity(&ghz, t, q, eps).unwrap().into_iter().map(|v| rho * v).collect()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(0.0..PI / 3.0);
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.4..1.4)).collect();
        let rho = |t: f64| psi_eval(&ghz, t, &q).unwrap().norm_sqr();
        let mut residual = (rho(t + h) - rho(t - h)) / (2.0 * h);
        for axis in 0..3 {
            let mut up = q.clone();
            let mut down = q.clone();
            up[axis] += h;
            down[axis] -= h;
            residual += (current(t, &up)[axis] - current(t, &down)[axis]) / (2.0 * h);
        }
        worst = worst.max(residual.abs());
    }
    let mut max_v0: f64 = 0.0;
    for _ in 0..100 {
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
        max_v0 = velocity(&ghz, 0.0, &q, eps).unwrap().into_iter().fold(max_v0, |m, v| m.max(v.abs()));
    }
    outcome(
        worst < 1e-5 && max_v0 == 0.0,
        format!("max continuity residual {worst:.1e}; max |v| at t = 0: {max_v0:e}"),
    )
}

fn mc_config(experiment: Experiment, count: usize, grid: GridSpec) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(experiment, Some(SEED)).unwrap();
    config.count = count;
    config.grid = grid;
    config
}

fn within(rows: &[Row], sigmas: f64) -> usize {
    rows.iter().filter(|r| r.z_score() <= sigmas).count()
}

fn max_z(rows: &[Row]) -> (f64, f64) {
    rows.iter().map(|r| (r.z_score(), r.t)).fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a })
}

fn c6_equal_times() -> Outcome {
    let config = mc_config(Experiment::EqualTimes, 1000, "0:2pi/9:12".parse().unwrap());
    let started = Instant::now();
    let result = experiment::run(&config).unwrap();
    let elapsed = started.elapsed();
    let ok = within(&result.rows, 3.0);
    let failed = result.rows.iter().map(|r| r.n_failed).max().unwrap_or(0);
    let (z, t) = max_z(&result.rows);
    outcome(
        ok >= 11 && (failed as f64) < 0.01 * 1000.0 && elapsed < Duration::from_secs(300),
        format!(
            "{ok}/12 points within 3 SE (largest {z:.2} SE at t = {t:.4}); {failed} failed; {elapsed:.1?}"
        ),
    )
}

fn c7_two_times() -> Outcome {
    let config = mc_config(Experiment::TwoTimes, 4000, two_time_grid());
    let result = experiment::run(&config).unwrap();
    let beyond = result.rows.iter().filter(|r| r.z_score() > 5.0).count();
    let (z, t) = max_z(&result.rows);
    outcome(beyond > 0, format!("{beyond}/12 points beyond 5 SE; largest {z:.1} SE at s = {t:.4}"))
}

fn c8_equivariance() -> Outcome {
    let ghz = make_ghz();
    let t = PI / 9.0;
    let config = IntegratorConfig::default_for(3);
    let ensemble = Ensemble::run(&ghz, 0.0, &[t], 10_000, SEED, &config, Execution::Parallel).unwrap();
    let counts = ensemble.orthant_counts(t);
    let (stat, p) = chi_square(&counts, &octant_masses(&ghz, t));
    outcome(p > 1e-3, format!("chi2 = {stat:.2} over 8 orthants, p = {p:.3}; counts {counts:?}"))
}

fn c9_collapse() -> Outcome {
    let mut config = mc_config(Experiment::CollapseTwoTimes, 2000, two_time_grid());
    config.cutoff = 64;
    let started = Instant::now();
    let result = experiment::run(&config).unwrap();
    let ok = result
        .rows
        .iter()
        .filter(|r| (r.bohm_mean - ghz_closed_form([0.0, r.t, r.t])).abs() <= 3.0 * r.bohm_stderr)
        .count();
    let (z, t) = max_z(&result.rows);
    outcome(
        ok >= 11,
        format!(
            "{ok}/12 points within 3 SE of -cos(6s)(8/3pi)^3 (largest {z:.2} SE at s = {t:.4}); {:.1?}",
            started.elapsed()
        ),
    )
}

fn csv_of(config: &ExperimentConfig) -> Vec<u8> {
    let mut bytes = Vec::new();
    write_csv(&experiment::run(config).unwrap().rows, &mut bytes).unwrap();
    bytes
}

fn c10_determinism() -> Outcome {
    let grid: GridSpec = "0:pi/3:7".parse().unwrap();
    let mut differing = Vec::new();
    for (experiment, count) in
        [(Experiment::TwoTimes, 1000), (Experiment::Fr, 1000), (Experiment::CollapseTwoTimes, 100)]
    {
        let mut config = mc_config(experiment, count, grid.clone());
        config.cutoff = 32;
        config.threads = 1;
        let reference = csv_of(&config);
        for threads in [0, 2, 3] {
            config.threads = threads;
            if csv_of(&config) != reference {
                differing.push(format!("{experiment} with {threads} threads"));
            }
        }
    }
    let detail = if differing.is_empty() {
        "two-times, fr, collapse-two-times identical for 1 (serial), default, 2, 3 workers".to_string()
    } else {
        format!("differs: {}", differing.join(", "))
    };
    outcome(differing.is_empty(), detail)
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 constants", c1_constants, Some(Duration::from_secs(1))),
        ("2 GHZ anchor", c2_anchor, Some(Duration::from_secs(1))),
        ("3 GHZ sweep", c3_sweep, None),
        ("4 FR probabilities", c4_fr, None),
        ("5 velocity validity", c5_velocity, None),
        ("6 equal-times agreement", c6_equal_times, None),
        ("7 two-times disagreement", c7_two_times, None),
        ("8 equivariance", c8_equivariance, None),
        ("9 collapse rescue", c9_collapse, None),
        ("10 determinism", c10_determinism, None),
    ];
    let mut failures = 0;
    for (name, check, budget) in criteria {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let elapsed = started.elapsed();
        let (pass, detail) = match result {
            Ok(Outcome { pass, detail }) => match budget {
                Some(limit) if elapsed >= limit => {
                    (false, format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
                }
                _ => (pass, detail),
            },
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failures += 1;
        }
        println!("{} [{name}] {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
