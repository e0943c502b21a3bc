//! Seed-reproducible rejection sampling of configurations from |psi|^2.
//!
//! Sample `i` draws from its own ChaCha8 stream keyed by the master seed and
//! selected by `i`, so a batch does not depend on how work is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::spectral::{BoxState, Evaluator, HALF_WIDTH};

/// Consecutive rejections after which the envelope is declared broken.
pub const MAX_CONSECUTIVE_REJECTIONS: u64 = 1_000_000;

/// Grid resolution per axis for the envelope scan.
pub const BOUND_GRID: usize = 64;

/// Safety factor applied to the grid maximum.
pub const BOUND_SAFETY: f64 = 1.2;

const MAX_BOUND_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub t0: f64,
    pub points: Vec<Vec<f64>>,
    pub master_seed: u64,
    pub envelope_bound: f64,
}

/// Independent random stream for sample `index`.
pub fn substream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// `BOUND_SAFETY` times the largest density on a `BOUND_GRID^D` grid of cell
/// centres.
pub fn density_bound(state: &BoxState, t0: f64) -> Result<f64> {
    density_bound_with_grid(state, t0, BOUND_GRID)
}

pub fn density_bound_with_grid(state: &BoxState, t0: f64, points_per_axis: usize) -> Result<f64> {
    let dims = state.dims();
    if dims > MAX_BOUND_DIMS {
        return Err(Error::InvalidArgument(format!(
            "envelope scan supports at most {MAX_BOUND_DIMS} particles, got {dims}"
        )));
    }
    if points_per_axis == 0 {
        return Err(Error::InvalidArgument("grid needs at least one point".into()));
    }
    let step = 2.0 * HALF_WIDTH / points_per_axis as f64;
    let axis: Vec<f64> = (0..points_per_axis).map(|i| -HALF_WIDTH + (i as f64 + 0.5) * step).collect();
    let mut eval = state.evaluator();
    let mut q = vec![0.0; dims];
    let total = points_per_axis.pow(dims as u32);
    let mut max = 0.0f64;
    for flat in 0..total {
        let mut rest = flat;
        for x in q.iter_mut() {
            *x = axis[rest % points_per_axis];
            rest /= points_per_axis;
        }
        max = max.max(eval.density(t0, &q)?);
    }
    Ok(BOUND_SAFETY * max)
}

/// One accepted point from `rng`.
pub fn draw_point<R: Rng>(eval: &mut Evaluator<'_>, t0: f64, bound: f64, rng: &mut R) -> Result<Vec<f64>> {
    let dims = eval.state().dims();
    let mut q = vec![0.0; dims];
    let mut rejections = 0u64;
    loop {
        if rejections >= MAX_CONSECUTIVE_REJECTIONS {
            return Err(Error::SamplerStalled(rejections));
        }
        let mut inside = true;
        for x in q.iter_mut() {
            *x = -HALF_WIDTH + 2.0 * HALF_WIDTH * rng.random::<f64>();
            inside &= x.abs() < HALF_WIDTH;
        }
        let u: f64 = rng.random();
        if !inside {
            rejections += 1;
            continue;
        }
        let density = eval.density(t0, &q)?;
        if density > bound {
            return Err(Error::EnvelopeViolated { density, bound });
        }
        if u * bound < density {
            return Ok(q);
        }
        rejections += 1;
    }
}

/// `count` i.i.d. draws from `|psi(t0, .)|^2`.
pub fn sample_initial(
    state: &BoxState,
    t0: f64,
    count: usize,
    master_seed: u64,
    exec: Execution,
) -> Result<SampleBatch> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let bound = density_bound(state, t0)?;
    let points = exec
        .map_indexed(count, |i| {
            let mut rng = substream(master_seed, i as u64);
            draw_point(&mut state.evaluator(), t0, bound, &mut rng)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleBatch { t0, points, master_seed, envelope_bound: bound })
}
