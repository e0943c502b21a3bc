//! Guiding-equation dynamics: the velocity field `v_i = 2 Im(d_i psi / psi)`
//! (masses 1/2), an adaptive Dormand–Prince 5(4) integrator with dense
//! output, and ensembles of trajectories read out at prescribed times.

use std::f64::consts::FRAC_2_PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::observables::{Observable, Side};
use crate::sampler::{sample_initial, SampleBatch};
use crate::spectral::{check_inside, BoxState, Evaluator};
use crate::stats::Estimate;

/// Largest tolerated fraction of failed trajectories in an ensemble.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_step: f64,
    /// Density floor below which the velocity quotient is not trusted.
    pub node_epsilon: f64,
    pub max_steps: usize,
}

impl IntegratorConfig {
    /// Defaults for a `dims`-particle state; the node floor scales with the
    /// peak density of a product of ground states.
    pub fn default_for(dims: usize) -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            min_step: 1e-10,
            node_epsilon: 1e-12 * FRAC_2_PI.powi(dims as i32),
            max_steps: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.rel_tol, self.abs_tol, self.min_step, self.node_epsilon];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_steps == 0 {
            return Err(Error::InvalidArgument(format!("integrator settings must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Velocity at `q` written into `out`.
pub fn velocity_into(
    eval: &mut Evaluator<'_>,
    node_epsilon: f64,
    t: f64,
    q: &[f64],
    grad: &mut [Complex64],
    out: &mut [f64],
) -> Result<()> {
    let psi = eval.psi_with_grad(t, q, grad)?;
    let density = psi.norm_sqr();
    if density.is_nan() || density <= node_epsilon {
        return Err(Error::Node { density, floor: node_epsilon });
    }
    let conj = psi.conj();
    for (v, g) in out.iter_mut().zip(grad.iter()) {
        *v = 2.0 * (conj * g).im / density;
    }
    Ok(())
}

pub fn velocity(state: &BoxState, t: f64, q: &[f64], node_epsilon: f64) -> Result<Vec<f64>> {
    let mut grad = vec![Complex64::default(); state.dims()];
    let mut out = vec![0.0; state.dims()];
    velocity_into(&mut state.evaluator(), node_epsilon, t, q, &mut grad, &mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureKind {
    /// Step size fell below `min_step` near a node.
    NodeRegion,
    /// Step size fell below `min_step` while steps kept leaving the box.
    Boundary,
    /// Error control drove the step below `min_step`.
    StepUnderflow,
    MaxSteps,
    /// The initial point is itself inside the node floor.
    StartsAtNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrajectoryStatus {
    Completed,
    /// Completed, but at least one step was halved near a node.
    NodeRescued,
    Failed(FailureKind),
}

impl TrajectoryStatus {
    pub fn is_failed(self) -> bool {
        matches!(self, TrajectoryStatus::Failed(_))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub node_rescues: usize,
    pub boundary_rescues: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Lineage {
    pub master_seed: u64,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub lineage: Lineage,
    pub times: Vec<f64>,
    /// One configuration per entry of `times`; shorter when failed.
    pub positions: Vec<Vec<f64>>,
    pub status: TrajectoryStatus,
    pub stats: StepStats,
}

impl Trajectory {
    /// Configuration at one of the recorded times (exact match).
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        let i = self.times.iter().position(|&s| s == t)?;
        self.positions.get(i).map(|p| p.as_slice())
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];
// continuous extension (Hairer, Nørsett & Wanner)
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

enum StageFault {
    Node,
    Boundary,
    Other(Error),
}

impl From<Error> for StageFault {
    fn from(e: Error) -> Self {
        match e {
            Error::Node { .. } => StageFault::Node,
            Error::OutOfBox(_) => StageFault::Boundary,
            other => StageFault::Other(other),
        }
    }
}

/// Integrates one configuration of `state` through the guiding equation.
struct Stepper<'s> {
    eval: Evaluator<'s>,
    cfg: IntegratorConfig,
    grad: Vec<Complex64>,
    k: [Vec<f64>; 7],
    scratch: Vec<f64>,
    y_new: Vec<f64>,
}

enum Outcome {
    Done(StepStats),
    Failed(FailureKind, StepStats),
}

impl<'s> Stepper<'s> {
    fn new(state: &'s BoxState, cfg: IntegratorConfig) -> Self {
        let d = state.dims();
        Stepper {
            eval: state.evaluator(),
            cfg,
            grad: vec![Complex64::default(); d],
            k: std::array::from_fn(|_| vec![0.0; d]),
            scratch: vec![0.0; d],
            y_new: vec![0.0; d],
        }
    }

    fn rhs(&mut self, t: f64, stage: usize, from_scratch: bool) -> Result<(), StageFault> {
        let y = if from_scratch { &self.scratch } else { &self.y_new };
        velocity_into(&mut self.eval, self.cfg.node_epsilon, t, y, &mut self.grad, &mut self.k[stage])
            .map_err(StageFault::from)
    }

    /// Advances from `(t0, y)` through `outputs` (monotone, all on the same
    /// side of `t0` or equal to it), calling `emit` at each output time.
    #[allow(clippy::needless_range_loop)]
    fn run(
        &mut self,
        t0: f64,
        y: &mut [f64],
        outputs: &[f64],
        mut emit: impl FnMut(&[f64]),
    ) -> Result<Outcome> {
        let mut stats = StepStats::default();
        let Some(&t_end) = outputs.last() else {
            return Ok(Outcome::Done(stats));
        };
        let dims = y.len();
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let mut next = 0;
        while next < outputs.len() && outputs[next] == t0 {
            emit(y);
            next += 1;
        }
        if next == outputs.len() {
            return Ok(Outcome::Done(stats));
        }

        self.scratch.copy_from_slice(y);
        match self.rhs(t0, 0, true) {
            Ok(()) => {}
            Err(StageFault::Other(e)) => return Err(e),
            Err(_) => return Ok(Outcome::Failed(FailureKind::StartsAtNode, stats)),
        }

        let mut t = t0;
        let mut h = dir * 1e-3f64.min((t_end - t0).abs());
        let mut last_rejected = false;
        let mut dense = [vec![0.0; dims], vec![0.0; dims], vec![0.0; dims], vec![0.0; dims]];

        while next < outputs.len() {
            if stats.accepted + stats.rejected >= self.cfg.max_steps {
                return Ok(Outcome::Failed(FailureKind::MaxSteps, stats));
            }
            let remaining = t_end - t;
            let mut landing = false;
            if h.abs() >= remaining.abs() {
                h = remaining;
                landing = true;
            }

            // stages 2..7; stage 7 is evaluated at the new point (FSAL)
            let mut fault = None;
            for s in 1..7 {
                for i in 0..dims {
                    let mut acc = 0.0;
                    for (j, a) in A[s][..s].iter().enumerate() {
                        acc += a * self.k[j][i];
                    }
                    self.scratch[i] = y[i] + h * acc;
                }
                if s == 6 {
                    self.y_new.copy_from_slice(&self.scratch);
                }
                let ts = if s == 6 && landing { t_end } else { t + C[s] * h };
                if let Err(f) = self.rhs(ts, s, true) {
                    fault = Some(f);
                    break;
                }
            }

            if let Some(f) = fault {
                let kind = match f {
                    StageFault::Node => {
                        stats.node_rescues += 1;
                        FailureKind::NodeRegion
                    }
                    StageFault::Boundary => {
                        stats.boundary_rescues += 1;
                        FailureKind::Boundary
                    }
                    StageFault::Other(e) => return Err(e),
                };
                stats.rejected += 1;
                h *= 0.5;
                last_rejected = true;
                if h.abs() < self.cfg.min_step {
                    return Ok(Outcome::Failed(kind, stats));
                }
                continue;
            }

            let mut err_sq = 0.0;
            for i in 0..dims {
                let mut e = 0.0;
                for (j, c) in E.iter().enumerate() {
                    e += c * self.k[j][i];
                }
                let sc = self.cfg.abs_tol + self.cfg.rel_tol * y[i].abs().max(self.y_new[i].abs());
                err_sq += (h * e / sc).powi(2);
            }
            let err = (err_sq / dims as f64).sqrt();

            if err <= 1.0 {
                let t_new = if landing { t_end } else { t + h };
                // dense output coefficients
                for i in 0..dims {
                    let ydiff = self.y_new[i] - y[i];
                    let bspl = h * self.k[0][i] - ydiff;
                    dense[0][i] = ydiff;
                    dense[1][i] = bspl;
                    dense[2][i] = ydiff - h * self.k[6][i] - bspl;
                    let mut acc = 0.0;
                    for (j, d) in D.iter().enumerate() {
                        acc += d * self.k[j][i];
                    }
                    dense[3][i] = h * acc;
                }
                while next < outputs.len() && dir * (outputs[next] - t_new) <= 0.0 {
                    let to = outputs[next];
                    if to == t_new {
                        emit(&self.y_new);
                    } else {
                        let theta = (to - t) / h;
                        let theta1 = 1.0 - theta;
                        for i in 0..dims {
                            self.scratch[i] = y[i]
                                + theta
                                    * (dense[0][i]
                                        + theta1
                                            * (dense[1][i] + theta * (dense[2][i] + theta1 * dense[3][i])));
                        }
                        if self.scratch.iter().any(|&x| check_inside(x).is_err()) {
                            return Ok(Outcome::Failed(FailureKind::Boundary, stats));
                        }
                        emit(&self.scratch);
                    }
                    next += 1;
                }
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                t = t_new;
                stats.accepted += 1;

                let mut factor = if err == 0.0 { MAX_FACTOR } else { SAFETY * err.powf(-0.2) };
                factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
                if last_rejected {
                    factor = factor.min(1.0);
                }
                if !landing {
                    h *= factor;
                }
                last_rejected = false;
            } else {
                stats.rejected += 1;
                h *= (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
                last_rejected = true;
                if h.abs() < self.cfg.min_step {
                    return Ok(Outcome::Failed(FailureKind::StepUnderflow, stats));
                }
            }
        }
        Ok(Outcome::Done(stats))
    }
}

fn status_of(outcome: &Outcome) -> (TrajectoryStatus, StepStats) {
    match *outcome {
        Outcome::Done(stats) if stats.node_rescues > 0 => (TrajectoryStatus::NodeRescued, stats),
        Outcome::Done(stats) => (TrajectoryStatus::Completed, stats),
        Outcome::Failed(kind, stats) => (TrajectoryStatus::Failed(kind), stats),
    }
}

fn check_start(state: &BoxState, q0: &[f64]) -> Result<()> {
    if q0.len() != state.dims() {
        return Err(Error::InvalidArgument(format!(
            "initial point has {} coordinates, state has {} particles",
            q0.len(),
            state.dims()
        )));
    }
    q0.iter().try_for_each(|&x| check_inside(x))
}

/// Path of one configuration starting at `(t0, q0)`, recorded at every time
/// of `t_grid` (strictly increasing, first entry `t0`).
pub fn integrate_trajectory(
    state: &BoxState,
    q0: &[f64],
    t0: f64,
    t_grid: &[f64],
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    config.validate()?;
    check_start(state, q0)?;
    if t_grid.first() != Some(&t0) {
        return Err(Error::InvalidArgument("time grid must start at t0".into()));
    }
    if t_grid.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        || t_grid.iter().any(|t| !t.is_finite())
    {
        return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
    }
    let mut y = q0.to_vec();
    let mut positions = Vec::with_capacity(t_grid.len());
    let outcome = Stepper::new(state, *config).run(t0, &mut y, t_grid, |p| positions.push(p.to_vec()))?;
    let (status, stats) = status_of(&outcome);
    Ok(Trajectory { lineage: Lineage::default(), times: t_grid.to_vec(), positions, status, stats })
}

/// End point of the flow from `(t_from, q0)` to `t_to`, in either time
/// direction. `Ok(None)` when the integration fails.
pub fn integrate_between(
    state: &BoxState,
    q0: &[f64],
    t_from: f64,
    t_to: f64,
    config: &IntegratorConfig,
) -> Result<Option<(Vec<f64>, StepStats)>> {
    config.validate()?;
    check_start(state, q0)?;
    let mut y = q0.to_vec();
    let mut end = None;
    let outcome = Stepper::new(state, *config).run(t_from, &mut y, &[t_to], |p| end = Some(p.to_vec()))?;
    Ok(match outcome {
        Outcome::Done(stats) => end.map(|p| (p, stats)),
        Outcome::Failed(..) => None,
    })
}

/// Integrated ensemble: one trajectory per sampled configuration, all
/// recorded on the same time list.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub batch: SampleBatch,
    pub times: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

impl Ensemble {
    /// Samples `count` configurations of `state` at `t0` and integrates each
    /// once through `times` (merged with `t0`, sorted, deduplicated; none may
    /// precede `t0`).
    pub fn run(
        state: &BoxState,
        t0: f64,
        times: &[f64],
        count: usize,
        master_seed: u64,
        config: &IntegratorConfig,
        exec: Execution,
    ) -> Result<Ensemble> {
        let batch = sample_initial(state, t0, count, master_seed, exec)?;
        Self::from_batch(state, batch, times, config, exec)
    }

    /// Integrates an existing batch under `state`.
    pub fn from_batch(
        state: &BoxState,
        batch: SampleBatch,
        times: &[f64],
        config: &IntegratorConfig,
        exec: Execution,
    ) -> Result<Ensemble> {
        let t0 = batch.t0;
        let times = merged_grid(t0, times)?;
        let trajectories = exec
            .map_indexed(batch.points.len(), |i| {
                integrate_trajectory(state, &batch.points[i], t0, &times, config).map(|mut tr| {
                    tr.lineage = Lineage { master_seed: batch.master_seed, index: i as u64 };
                    tr
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble { batch, times, trajectories })
    }

    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn failures(&self) -> usize {
        self.trajectories.iter().filter(|t| t.status.is_failed()).count()
    }

    pub fn node_rescued(&self) -> usize {
        self.trajectories.iter().filter(|t| t.status == TrajectoryStatus::NodeRescued).count()
    }

    /// Errors when more than 1% of the trajectories failed.
    pub fn check_failures(&self) -> Result<()> {
        let failed = self.failures();
        if failed as f64 > MAX_FAILURE_FRACTION * self.count() as f64 {
            return Err(Error::TooManyFailures { failed, count: self.count() });
        }
        Ok(())
    }

    /// Mean of `f` over the trajectories that did not fail, in index order.
    pub fn estimate(&self, f: impl Fn(&Trajectory) -> f64) -> Estimate {
        let values: Vec<f64> = self.trajectories.iter().filter(|t| !t.status.is_failed()).map(f).collect();
        Estimate::from_values(&values)
    }

    /// Product over particles of `observable_i(q_i(t_i))`.
    pub fn product_estimate(&self, factors: &[(Observable, f64)]) -> Estimate {
        self.estimate(|tr| {
            factors
                .iter()
                .enumerate()
                .map(|(i, &(obs, t))| obs.at_position(tr.at(t).expect("time on grid")[i]))
                .product()
        })
    }

    /// `sgn q_1(t_1) ... sgn q_D(t_D)`.
    pub fn sign_product(&self, times: &[f64]) -> Estimate {
        let factors: Vec<_> = times.iter().map(|&t| (Observable::Sign, t)).collect();
        self.product_estimate(&factors)
    }

    /// Counts per orthant at time `t` over non-failed trajectories.
    pub fn orthant_counts(&self, t: f64) -> Vec<usize> {
        let dims = self.batch.points.first().map_or(0, |p| p.len());
        let mut counts = vec![0usize; 1 << dims];
        for tr in self.trajectories.iter().filter(|t| !t.status.is_failed()) {
            counts[crate::observables::orthant_of(tr.at(t).expect("time on grid"))] += 1;
        }
        counts
    }
}

fn merged_grid(t0: f64, times: &[f64]) -> Result<Vec<f64>> {
    if times.iter().any(|t| !t.is_finite() || *t < t0) {
        return Err(Error::InvalidArgument(format!("readout times must be finite and >= {t0}")));
    }
    let mut all = Vec::with_capacity(times.len() + 1);
    all.push(t0);
    all.extend_from_slice(times);
    all.sort_by(f64::total_cmp);
    all.dedup();
    Ok(all)
}

/// Ensemble estimate of a product of per-particle observables together with
/// its failure count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatorEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_effective: usize,
    pub failures: usize,
}

/// Bohmian estimate of `E[sgn q_1(t_1) ... sgn q_D(t_D)]` with initial
/// configurations drawn from `|psi(0, .)|^2`. Every particle of a trajectory
/// is read from the same uncollapsed path.
pub fn ensemble_correlator(
    state: &BoxState,
    times: &[f64],
    count: usize,
    master_seed: u64,
    config: &IntegratorConfig,
    exec: Execution,
) -> Result<CorrelatorEstimate> {
    if count < 100 {
        return Err(Error::InvalidArgument("ensemble needs at least 100 samples".into()));
    }
    if times.len() != state.dims() {
        return Err(Error::InvalidArgument("one readout time per particle required".into()));
    }
    let ensemble = Ensemble::run(state, 0.0, times, count, master_seed, config, exec)?;
    ensemble.check_failures()?;
    let est = ensemble.sign_product(times);
    Ok(CorrelatorEstimate {
        mean: est.mean,
        stderr: est.stderr,
        n_effective: est.n,
        failures: ensemble.failures(),
    })
}

/// Readout side helper for indicator statistics.
pub fn side_indicator(side: Side, x: f64) -> f64 {
    Observable::Half(side).at_position(x)
}
