//! Collapse onto one half of a particle's box: `P psi / |P psi|` with
//! `P = (1 ± sgn)/2` on the measured axis, re-expanded over modes `1..=K`.
//!
//! The half-interval indicator has a jump at the origin, so its expansion
//! coefficients decay like `1/n` and a fraction of the projected norm
//! (about 0.3% at K = 64) lies beyond any finite cutoff.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::bohm::{Ensemble, IntegratorConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::observables::{sign_overlap, Side};
use crate::sampler::sample_initial;
use crate::spectral::{make_ghz, BoxState};
use crate::stats::Estimate;

pub const DEFAULT_CUTOFF: u32 = 64;
pub const MIN_ENSEMBLE_CUTOFF: u32 = 32;
/// Born weights below this are treated as impossible outcomes.
pub const MIN_OUTCOME_WEIGHT: f64 = 1e-12;

/// `(delta_mn ± S_mn) / 2` on modes `1..=K`.
#[derive(Debug, Clone)]
pub struct HalfProjectorMatrix {
    cutoff: u32,
    side: Side,
    entries: Vec<f64>,
}

#[inline]
fn half_element(side: Side, m: u32, n: u32) -> f64 {
    let delta = if m == n { 1.0 } else { 0.0 };
    0.5 * (delta + side.sign() * sign_overlap(m, n))
}

impl HalfProjectorMatrix {
    pub fn new(cutoff: u32, side: Side) -> Self {
        let k = cutoff as usize;
        let mut entries = vec![0.0; k * k];
        for m in 1..=cutoff {
            for n in 1..=cutoff {
                entries[(m as usize - 1) * k + n as usize - 1] = half_element(side, m, n);
            }
        }
        HalfProjectorMatrix { cutoff, side, entries }
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn get(&self, m: u32, n: u32) -> f64 {
        let k = self.cutoff as usize;
        self.entries[(m as usize - 1) * k + n as usize - 1]
    }

    /// Frobenius norm of `P^2 - P` restricted to modes `1..=block`, with the
    /// square taken inside the truncated space. Tends to zero as the cutoff
    /// grows for a fixed block; over the whole block it does not.
    pub fn idempotence_defect(&self, block: u32) -> f64 {
        let k = self.cutoff as usize;
        let b = block.min(self.cutoff) as usize;
        let mut sum = 0.0;
        for i in 0..b {
            for j in 0..b {
                let sq: f64 = (0..k).map(|l| self.entries[i * k + l] * self.entries[l * k + j]).sum();
                sum += (sq - self.entries[i * k + j]).powi(2);
            }
        }
        sum.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Collapsed {
    /// Renormalized post-measurement state, stated at the collapse time.
    pub state: BoxState,
    /// Born probability `<psi|P|psi>` of the outcome (exact, no truncation).
    pub weight: f64,
    /// Norm squared of the truncated projection before renormalization;
    /// `weight - retained` is the mass lost beyond the cutoff.
    pub retained: f64,
}

/// Projects particle `axis` (0-based) of `state` onto `side` of its box at
/// time `t_c`, keeping modes up to `cutoff` on that axis.
pub fn collapse_state(state: &BoxState, axis: usize, side: Side, t_c: f64, cutoff: u32) -> Result<Collapsed> {
    if axis >= state.dims() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for a {}-particle state",
            state.dims()
        )));
    }
    let norm = state.norm_sqr();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("state norm {norm} is not 1")));
    }
    let top = state.axis_modes(axis).last().copied().unwrap_or(1);
    if cutoff < top {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff} is below mode {top} already present on axis {axis}"
        )));
    }
    let projector = HalfProjectorMatrix::new(cutoff, side);
    let at_tc = state.coefficients_at(t_c);

    // exact Born weight: P only couples entries that agree off the axis
    let mut weight = Complex64::default();
    for (mi, cm) in &at_tc {
        for (ni, cn) in &at_tc {
            let same_elsewhere = mi.iter().zip(ni).enumerate().all(|(a, (x, y))| a == axis || x == y);
            if same_elsewhere {
                weight += cm.conj() * cn * projector.get(mi[axis], ni[axis]);
            }
        }
    }
    let weight = weight.re;
    if weight < MIN_OUTCOME_WEIGHT {
        return Err(Error::NegligibleOutcome(weight));
    }

    let mut projected: BTreeMap<Vec<u32>, Complex64> = BTreeMap::new();
    for (idx, c) in &at_tc {
        let n = idx[axis];
        for k in 1..=cutoff {
            let p = projector.get(k, n);
            if p == 0.0 {
                continue;
            }
            let mut target = idx.clone();
            target[axis] = k;
            *projected.entry(target).or_default() += c * p;
        }
    }
    let (state, retained) = BoxState::normalized(state.dims(), projected, t_c)?;
    Ok(Collapsed { state, weight, retained })
}

/// Two-time sign correlator with particle 1 measured (and collapsed) at
/// time 0, particles 2 and 3 read at each `s`.
#[derive(Debug, Clone)]
pub struct CollapseRun {
    pub s_grid: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub count: usize,
    pub failures: usize,
    /// Fraction of trajectories whose first particle started on the right.
    pub plus_fraction: f64,
    /// Node-triggered step halvings over all attempted steps.
    pub node_rescue_fraction: f64,
    pub collapsed: [Collapsed; 2],
}

impl CollapseRun {
    pub fn collapsed_for(&self, side: Side) -> &Collapsed {
        match side {
            Side::Plus => &self.collapsed[0],
            Side::Minus => &self.collapsed[1],
        }
    }
}

/// GHZ ensemble where the first particle's sign is read at t = 0, the state
/// collapses accordingly, and the configuration continues under the guiding
/// field of the collapsed state. Reports `a sgn q2(s) sgn q3(s)` per `s`.
pub fn collapsed_two_time_ensemble(
    count: usize,
    s_grid: &[f64],
    cutoff: u32,
    master_seed: u64,
    config: &IntegratorConfig,
    exec: Execution,
) -> Result<CollapseRun> {
    if cutoff < MIN_ENSEMBLE_CUTOFF {
        return Err(Error::InvalidArgument(format!(
            "cutoff must be at least {MIN_ENSEMBLE_CUTOFF}, got {cutoff}"
        )));
    }
    if count < 100 {
        return Err(Error::InvalidArgument("ensemble needs at least 100 samples".into()));
    }
    let ghz = make_ghz();
    let collapsed = [
        collapse_state(&ghz, 0, Side::Plus, 0.0, cutoff)?,
        collapse_state(&ghz, 0, Side::Minus, 0.0, cutoff)?,
    ];
    let batch = sample_initial(&ghz, 0.0, count, master_seed, exec)?;

    // Each side's trajectories run under that side's collapsed state; the
    // batch is split and re-merged by index so the order stays fixed.
    let mut merged = Vec::with_capacity(count);
    let mut times = Vec::new();
    let mut parts = Vec::with_capacity(2);
    for (slot, side) in [Side::Plus, Side::Minus].into_iter().enumerate() {
        let members: Vec<usize> = (0..count).filter(|&i| Side::of(batch.points[i][0]) == side).collect();
        let mut sub = batch.clone();
        sub.points = members.iter().map(|&i| batch.points[i].clone()).collect();
        let ensemble = Ensemble::from_batch(&collapsed[slot].state, sub, s_grid, config, exec)?;
        times = ensemble.times.clone();
        parts.push((members, ensemble));
    }
    let mut slots: Vec<Option<(Side, _)>> = vec![None; count];
    for (slot, (members, ensemble)) in parts.into_iter().enumerate() {
        let side = if slot == 0 { Side::Plus } else { Side::Minus };
        for (j, mut tr) in ensemble.trajectories.into_iter().enumerate() {
            tr.lineage.index = members[j] as u64;
            slots[members[j]] = Some((side, tr));
        }
    }
    merged.extend(slots.into_iter().map(|s| s.expect("every sample assigned")));

    let failures = merged.iter().filter(|(_, tr)| tr.status.is_failed()).count();
    if failures as f64 > crate::bohm::MAX_FAILURE_FRACTION * count as f64 {
        return Err(Error::TooManyFailures { failed: failures, count });
    }
    let (rescues, steps) = merged.iter().fold((0usize, 0usize), |(r, s), (_, tr)| {
        (r + tr.stats.node_rescues, s + tr.stats.accepted + tr.stats.rejected)
    });
    let plus = merged.iter().filter(|(side, _)| *side == Side::Plus).count();

    let estimates = s_grid
        .iter()
        .map(|&s| {
            debug_assert!(times.contains(&s));
            let values: Vec<f64> = merged
                .iter()
                .filter(|(_, tr)| !tr.status.is_failed())
                .map(|(side, tr)| {
                    let q = tr.at(s).expect("time on grid");
                    side.sign() * Side::of(q[1]).sign() * Side::of(q[2]).sign()
                })
                .collect();
            Estimate::from_values(&values)
        })
        .collect();

    Ok(CollapseRun {
        s_grid: s_grid.to_vec(),
        estimates,
        count,
        failures,
        plus_fraction: plus as f64 / count as f64,
        node_rescue_fraction: if steps == 0 { 0.0 } else { rescues as f64 / steps as f64 },
        collapsed,
    })
}
