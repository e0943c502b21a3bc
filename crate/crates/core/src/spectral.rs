//! Dirichlet eigenbasis of the box (-pi/2, pi/2) and sparse superpositions
//! of products of box modes.
//!
//! Units: hbar = 1, every mass 1/2, so each axis carries H = -d^2/dx^2 and
//! mode `n` has energy `n^2`. Odd `n` are cosines (even functions), even `n`
//! are sines.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_2_SQRT_PI, FRAC_PI_2, SQRT_2};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Half the box width; the box is `(-HALF_WIDTH, HALF_WIDTH)` on every axis.
pub const HALF_WIDTH: f64 = FRAC_PI_2;

/// Normalization `sqrt(2/pi)` shared by all box modes.
pub const MODE_NORM: f64 = FRAC_2_SQRT_PI / SQRT_2;

const NORM_TOL: f64 = 1e-12;

/// Axes whose highest mode is at most this are evaluated mode by mode.
const DIRECT_EVAL_LIMIT: usize = 8;

pub fn check_inside(x: f64) -> Result<()> {
    if x.is_finite() && x.abs() < HALF_WIDTH {
        Ok(())
    } else {
        Err(Error::OutOfBox(x))
    }
}

/// One-particle box eigenstate, 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode(u32);

impl Mode {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("mode index must be >= 1".into()));
        }
        Ok(Mode(n))
    }

    /// Ground state `g`.
    pub const GROUND: Mode = Mode(1);
    /// First excited state `e`.
    pub const EXCITED: Mode = Mode(2);

    pub fn index(self) -> u32 {
        self.0
    }

    pub fn energy(self) -> f64 {
        let n = self.0 as f64;
        n * n
    }

    /// True when the eigenfunction is even in x (odd index).
    pub fn is_even_function(self) -> bool {
        self.0 % 2 == 1
    }

    /// Value and derivative without the domain check.
    #[inline]
    pub fn eval_with_grad_unchecked(self, x: f64) -> (f64, f64) {
        let n = self.0 as f64;
        let (s, c) = (n * x).sin_cos();
        if self.is_even_function() {
            (MODE_NORM * c, -MODE_NORM * n * s)
        } else {
            (MODE_NORM * s, MODE_NORM * n * c)
        }
    }

    pub fn eval(self, x: f64) -> Result<f64> {
        check_inside(x)?;
        Ok(self.eval_with_grad_unchecked(x).0)
    }

    pub fn grad(self, x: f64) -> Result<f64> {
        check_inside(x)?;
        Ok(self.eval_with_grad_unchecked(x).1)
    }
}

pub fn mode_eval(n: u32, x: f64) -> Result<f64> {
    Mode::new(n)?.eval(x)
}

pub fn mode_grad(n: u32, x: f64) -> Result<f64> {
    Mode::new(n)?.grad(x)
}

/// Terms sharing the same modes on every axis except the pivot.
#[derive(Debug, Clone)]
struct Group {
    /// Slot inside `axis_modes[axis]` for each axis; the pivot entry is unused.
    rest: Vec<usize>,
    /// (pivot slot, coefficient)
    members: Vec<(usize, Complex64)>,
}

/// Normalized superposition `sum_n c_n phi_{n_1}(x_1) ... phi_{n_D}(x_D)`,
/// with the coefficients valid at time `t_ref`.
#[derive(Debug, Clone)]
pub struct BoxState {
    dims: usize,
    cutoff: u32,
    t_ref: f64,
    coeffs: BTreeMap<Vec<u32>, Complex64>,
    axis_modes: Vec<Vec<u32>>,
    pivot: usize,
    groups: Vec<Group>,
}

impl BoxState {
    /// Builds a state from (multi-index, amplitude) pairs. Repeated indices
    /// are summed and exact zeros dropped. The result must already be
    /// normalized to within 1e-12.
    pub fn new<I>(dims: usize, coeffs: I, t_ref: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, Complex64)>,
    {
        let state = Self::build(dims, coeffs, t_ref)?;
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidArgument(format!("state is not normalized: sum |c|^2 = {norm}")));
        }
        Ok(state)
    }

    /// Like [`BoxState::new`] but rescales to unit norm. Returns the norm
    /// squared found before rescaling.
    pub fn normalized<I>(dims: usize, coeffs: I, t_ref: f64) -> Result<(Self, f64)>
    where
        I: IntoIterator<Item = (Vec<u32>, Complex64)>,
    {
        let raw = Self::build(dims, coeffs, t_ref)?;
        let norm = raw.norm_sqr();
        if norm.is_nan() || norm <= 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument("state has zero norm".into()));
        }
        let scale = norm.sqrt().recip();
        let state = Self::build(dims, raw.coeffs.into_iter().map(|(k, c)| (k, c * scale)), t_ref)?;
        Ok((state, norm))
    }

    fn build<I>(dims: usize, coeffs: I, t_ref: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, Complex64)>,
    {
        if dims == 0 {
            return Err(Error::InvalidArgument("a state needs at least one particle".into()));
        }
        if !t_ref.is_finite() {
            return Err(Error::InvalidArgument("reference time must be finite".into()));
        }
        let mut map: BTreeMap<Vec<u32>, Complex64> = BTreeMap::new();
        for (idx, c) in coeffs {
            if idx.len() != dims {
                return Err(Error::InvalidArgument(format!(
                    "multi-index {idx:?} does not have {dims} entries"
                )));
            }
            if idx.contains(&0) {
                return Err(Error::InvalidArgument(format!("multi-index {idx:?} contains a zero mode")));
            }
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::InvalidArgument("non-finite amplitude".into()));
            }
            *map.entry(idx).or_default() += c;
        }
        map.retain(|_, c| *c != Complex64::new(0.0, 0.0));
        if map.is_empty() {
            return Err(Error::InvalidArgument("state has no nonzero coefficients".into()));
        }

        let mut axis_modes: Vec<Vec<u32>> = vec![Vec::new(); dims];
        for idx in map.keys() {
            for (axis, &n) in idx.iter().enumerate() {
                axis_modes[axis].push(n);
            }
        }
        for modes in &mut axis_modes {
            modes.sort_unstable();
            modes.dedup();
        }
        let pivot = (0..dims).max_by_key(|&a| (axis_modes[a].len(), std::cmp::Reverse(a))).unwrap_or(0);
        let mut grouped: BTreeMap<Vec<usize>, Vec<(usize, Complex64)>> = BTreeMap::new();
        for (idx, &coeff) in &map {
            let mut slots: Vec<usize> =
                idx.iter().enumerate().map(|(axis, n)| axis_modes[axis].binary_search(n).unwrap()).collect();
            let own = std::mem::take(&mut slots[pivot]);
            grouped.entry(slots).or_default().push((own, coeff));
        }
        let groups = grouped.into_iter().map(|(rest, members)| Group { rest, members }).collect();
        let cutoff = axis_modes.iter().filter_map(|m| m.last()).copied().max().unwrap_or(1);

        Ok(BoxState { dims, cutoff, t_ref, coeffs: map, axis_modes, pivot, groups })
    }

    /// Product of single modes, e.g. `&[1]` for the one-particle ground state.
    pub fn product(modes: &[u32]) -> Result<Self> {
        Self::new(modes.len(), [(modes.to_vec(), Complex64::new(1.0, 0.0))], 0.0)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Largest mode index present on any axis.
    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (&[u32], Complex64)> + '_ {
        self.coeffs.iter().map(|(k, &c)| (k.as_slice(), c))
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coefficient(&self, idx: &[u32]) -> Complex64 {
        self.coeffs.get(idx).copied().unwrap_or_default()
    }

    /// Modes appearing on one axis, ascending.
    pub fn axis_modes(&self, axis: usize) -> &[u32] {
        &self.axis_modes[axis]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_sqr()).sum()
    }

    pub fn energy_of(idx: &[u32]) -> f64 {
        idx.iter().map(|&n| (n as f64) * (n as f64)).sum()
    }

    /// Coefficients restated at time `t`: `c_n exp(-i E_n (t - t_ref))`.
    pub fn coefficients_at(&self, t: f64) -> BTreeMap<Vec<u32>, Complex64> {
        let dt = t - self.t_ref;
        self.coeffs
            .iter()
            .map(|(k, &c)| (k.clone(), c * Complex64::from_polar(1.0, -Self::energy_of(k) * dt)))
            .collect()
    }

    /// Same physical state with coefficients restated at `t`.
    pub fn restated_at(&self, t: f64) -> Result<Self> {
        Self::build(self.dims, self.coefficients_at(t), t)
    }

    /// The time-reversed state `psi'(t, q) = conj(psi(-t, q))`.
    pub fn time_reversed(&self) -> Self {
        Self::build(self.dims, self.coeffs.iter().map(|(k, c)| (k.clone(), c.conj())), -self.t_ref)
            .expect("conjugation preserves validity")
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(self)
    }
}

/// Reusable scratch for pointwise evaluation of one state. Not shared across
/// threads; create one per worker.
pub struct Evaluator<'s> {
    state: &'s BoxState,
    vals: Vec<Vec<Complex64>>,
    ders: Vec<Vec<Complex64>>,
}

impl<'s> Evaluator<'s> {
    pub fn new(state: &'s BoxState) -> Self {
        let vals = state.axis_modes.iter().map(|m| vec![Complex64::default(); m.len()]).collect();
        let ders = state.axis_modes.iter().map(|m| vec![Complex64::default(); m.len()]).collect();
        Evaluator { state, vals, ders }
    }

    pub fn state(&self) -> &'s BoxState {
        self.state
    }

    fn fill(&mut self, t: f64, q: &[f64], with_grad: bool) -> Result<()> {
        if q.len() != self.state.dims {
            return Err(Error::InvalidArgument(format!(
                "position has {} coordinates, state has {} particles",
                q.len(),
                self.state.dims
            )));
        }
        for &x in q {
            check_inside(x)?;
        }
        let dt = t - self.state.t_ref;
        for (axis, modes) in self.state.axis_modes.iter().enumerate() {
            let x = q[axis];
            let top = *modes.last().expect("every axis carries a mode");
            if top as usize <= DIRECT_EVAL_LIMIT {
                for (slot, &n) in modes.iter().enumerate() {
                    let nf = n as f64;
                    let phase = Complex64::from_polar(1.0, -nf * nf * dt);
                    let (v, d) = Mode(n).eval_with_grad_unchecked(x);
                    self.vals[axis][slot] = phase * v;
                    if with_grad {
                        self.ders[axis][slot] = phase * d;
                    }
                }
                continue;
            }
            // Long mode ladders: trig and phase tables by recurrence.
            // cos/sin((n+1)x) from the addition formulas, and
            // exp(-i(n+1)^2 dt) = exp(-i n^2 dt) exp(-i(2n+1) dt).
            let (s1, c1) = x.sin_cos();
            let step2 = Complex64::from_polar(1.0, -2.0 * dt);
            let mut ratio = Complex64::from_polar(1.0, -3.0 * dt);
            let mut phase = Complex64::from_polar(1.0, -dt);
            let (mut cn, mut sn) = (c1, s1);
            let mut slot = 0;
            for n in 1..=top {
                if modes[slot] == n {
                    let nf = n as f64;
                    let (v, d) = if n % 2 == 1 {
                        (MODE_NORM * cn, -MODE_NORM * nf * sn)
                    } else {
                        (MODE_NORM * sn, MODE_NORM * nf * cn)
                    };
                    self.vals[axis][slot] = phase * v;
                    if with_grad {
                        self.ders[axis][slot] = phase * d;
                    }
                    slot += 1;
                }
                let next_c = cn * c1 - sn * s1;
                sn = sn * c1 + cn * s1;
                cn = next_c;
                phase *= ratio;
                ratio *= step2;
            }
        }
        Ok(())
    }

    pub fn psi(&mut self, t: f64, q: &[f64]) -> Result<Complex64> {
        self.fill(t, q, false)?;
        let pivot = self.state.pivot;
        let mut psi = Complex64::default();
        for group in &self.state.groups {
            let along: Complex64 = group.members.iter().map(|&(slot, c)| c * self.vals[pivot][slot]).sum();
            let rest = group
                .rest
                .iter()
                .enumerate()
                .filter(|&(axis, _)| axis != pivot)
                .fold(Complex64::new(1.0, 0.0), |acc, (axis, &slot)| acc * self.vals[axis][slot]);
            psi += along * rest;
        }
        Ok(psi)
    }

    /// Returns psi and writes the gradient into `grad`.
    pub fn psi_with_grad(&mut self, t: f64, q: &[f64], grad: &mut [Complex64]) -> Result<Complex64> {
        self.fill(t, q, true)?;
        let dims = self.state.dims;
        let pivot = self.state.pivot;
        assert_eq!(grad.len(), dims);
        grad.iter_mut().for_each(|g| *g = Complex64::default());
        let mut psi = Complex64::default();
        for group in &self.state.groups {
            let mut along = Complex64::default();
            let mut along_der = Complex64::default();
            for &(slot, c) in &group.members {
                along += c * self.vals[pivot][slot];
                along_der += c * self.ders[pivot][slot];
            }
            let rest = |skip: usize| {
                group
                    .rest
                    .iter()
                    .enumerate()
                    .filter(|&(axis, _)| axis != pivot && axis != skip)
                    .fold(Complex64::new(1.0, 0.0), |acc, (axis, &slot)| acc * self.vals[axis][slot])
            };
            let full = rest(pivot);
            psi += along * full;
            grad[pivot] += along_der * full;
            for axis in (0..dims).filter(|&a| a != pivot) {
                grad[axis] += along * self.ders[axis][group.rest[axis]] * rest(axis);
            }
        }
        Ok(psi)
    }

    pub fn density(&mut self, t: f64, q: &[f64]) -> Result<f64> {
        self.psi(t, q).map(|p| p.norm_sqr())
    }
}

pub fn psi_eval(state: &BoxState, t: f64, q: &[f64]) -> Result<Complex64> {
    state.evaluator().psi(t, q)
}

pub fn psi_grad(state: &BoxState, t: f64, q: &[f64]) -> Result<Vec<Complex64>> {
    let mut grad = vec![Complex64::default(); state.dims()];
    state.evaluator().psi_with_grad(t, q, &mut grad)?;
    Ok(grad)
}

/// `(g g g - e e e) / sqrt 2` on three boxes.
pub fn make_ghz() -> BoxState {
    let c = Complex64::new(FRAC_1_SQRT_2, 0.0);
    BoxState::new(3, [(vec![1, 1, 1], c), (vec![2, 2, 2], -c)], 0.0).expect("GHZ state is valid")
}

/// Two-box state `(f b + b f + i f f) / sqrt 3` with `f = (g + i e)/sqrt 2`
/// and `b = (g - i e)/sqrt 2`, expanded over modes {1, 2}^2.
pub fn make_fr() -> BoxState {
    let i = Complex64::i();
    let one = Complex64::new(1.0, 0.0);
    // components over (g, e)
    let f = [one * FRAC_1_SQRT_2, i * FRAC_1_SQRT_2];
    let b = [one * FRAC_1_SQRT_2, -i * FRAC_1_SQRT_2];
    let scale = 1.0 / 3f64.sqrt();
    let mut coeffs = Vec::with_capacity(4);
    for m in 0..2 {
        for n in 0..2 {
            let c = (f[m] * b[n] + b[m] * f[n] + i * f[m] * f[n]) * scale;
            coeffs.push((vec![m as u32 + 1, n as u32 + 1], c));
        }
    }
    BoxState::new(2, coeffs, 0.0).expect("FR state is valid")
}

/// Integral of |psi(t, .)|^2 over the whole box by tensor-product
/// Gauss–Legendre quadrature. Cost grows as order^D; intended for D <= 3.
pub fn norm_by_quadrature(state: &BoxState, t: f64, rule: &GaussLegendre) -> f64 {
    let points: Vec<(f64, f64)> = rule.mapped(-HALF_WIDTH, HALF_WIDTH).collect();
    let dims = state.dims();
    let mut eval = state.evaluator();
    let mut q = vec![0.0; dims];
    let mut idx = vec![0usize; dims];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for axis in 0..dims {
            q[axis] = points[idx[axis]].0;
            w *= points[idx[axis]].1;
        }
        total += w * eval.density(t, &q).expect("quadrature nodes are interior");
        // odometer increment
        let mut axis = 0;
        loop {
            if axis == dims {
                return total;
            }
            idx[axis] += 1;
            if idx[axis] < points.len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}
