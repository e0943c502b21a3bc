//! Closed-form quantum predictions: sign-operator matrix elements, their
//! Heisenberg-picture evolution, multi-time correlators and orthant masses.
//!
//! The Heisenberg operator is `A_t = exp(iHt) A exp(-iHt)`, so a correlator
//! with per-particle times `t_i` is the joint expectation of measuring
//! particle `i` at time `t_i` under the Schrödinger flow of the state.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::spectral::{BoxState, Mode, HALF_WIDTH};

/// Imaginary residue above which a Hermitian expectation is rejected.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// `<phi_m | sgn | phi_n>` over the box.
///
/// Nonzero only for opposite parities; with `k` the even index and `j` the
/// odd one the value is `4k / (pi (k^2 - j^2))`.
pub fn sign_overlap(m: u32, n: u32) -> f64 {
    assert!(m >= 1 && n >= 1, "mode indices are 1-based");
    if (m + n).is_multiple_of(2) {
        return 0.0;
    }
    let (even, odd) = if m.is_multiple_of(2) { (m, n) } else { (n, m) };
    let k = even as f64;
    let j = odd as f64;
    4.0 * k / (PI * (k * k - j * j))
}

/// `<phi_m | exp(iHt) sgn exp(-iHt) | phi_n> = S_mn exp(i (E_m - E_n) t)`.
pub fn heisenberg_sign_element(m: u32, n: u32, t: f64) -> Complex64 {
    let s = sign_overlap(m, n);
    if s == 0.0 {
        return Complex64::default();
    }
    let de = Mode::new(m).unwrap().energy() - Mode::new(n).unwrap().energy();
    Complex64::from_polar(s, de * t)
}

/// Dense `K x K` table of [`sign_overlap`], 1-based in its accessors.
#[derive(Debug, Clone)]
pub struct SignMatrix {
    cutoff: u32,
    entries: Vec<f64>,
}

impl SignMatrix {
    pub fn new(cutoff: u32) -> Self {
        assert!(cutoff >= 1);
        let k = cutoff as usize;
        let mut entries = vec![0.0; k * k];
        for m in 1..=cutoff {
            for n in 1..=cutoff {
                entries[(m as usize - 1) * k + n as usize - 1] = sign_overlap(m, n);
            }
        }
        SignMatrix { cutoff, entries }
    }

    /// Process-wide cache; each cutoff is built once.
    pub fn cached(cutoff: u32) -> Arc<SignMatrix> {
        static CACHE: OnceLock<Mutex<HashMap<u32, Arc<SignMatrix>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap();
        guard.entry(cutoff).or_insert_with(|| Arc::new(SignMatrix::new(cutoff))).clone()
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    #[inline]
    pub fn get(&self, m: u32, n: u32) -> f64 {
        let k = self.cutoff as usize;
        self.entries[(m as usize - 1) * k + n as usize - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn of(x: f64) -> Side {
        // sgn(0) reads as +1; the event has measure zero
        if x >= 0.0 {
            Side::Plus
        } else {
            Side::Minus
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

/// Per-particle observable: the sign of the position or the indicator of
/// one half of the box, `(1 ± sgn) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    Sign,
    Half(Side),
    /// No measurement on this particle.
    Identity,
}

impl Observable {
    /// Matrix element between box modes.
    pub fn element(self, signs: &SignMatrix, m: u32, n: u32) -> f64 {
        let s = signs.get(m, n);
        match self {
            Observable::Sign => s,
            Observable::Identity => {
                if m == n {
                    1.0
                } else {
                    0.0
                }
            }
            Observable::Half(side) => {
                let delta = if m == n { 1.0 } else { 0.0 };
                0.5 * (delta + side.sign() * s)
            }
        }
    }

    /// Value of the observable at a definite position.
    pub fn at_position(self, x: f64) -> f64 {
        match self {
            Observable::Sign => Side::of(x).sign(),
            Observable::Identity => 1.0,
            Observable::Half(side) => {
                if Side::of(x) == side {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One observable and one readout time per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorQuery {
    pub factors: Vec<(Observable, f64)>,
}

impl CorrelatorQuery {
    pub fn new(factors: Vec<(Observable, f64)>) -> Self {
        CorrelatorQuery { factors }
    }

    /// Sign observable on every particle at the given times.
    pub fn signs(times: &[f64]) -> Self {
        CorrelatorQuery { factors: times.iter().map(|&t| (Observable::Sign, t)).collect() }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.factors.iter().map(|f| f.1)
    }
}

/// `<psi| A_1(t_1) ⊗ ... ⊗ A_D(t_D) |psi>`.
///
/// Each factor is sandwiched between the modes the state occupies on that
/// axis, so the result is exact for any finitely supported state.
pub fn multitime_correlator(state: &BoxState, query: &CorrelatorQuery) -> Result<f64> {
    let dims = state.dims();
    if query.factors.len() != dims {
        return Err(Error::InvalidArgument(format!(
            "query has {} factors for a {dims}-particle state",
            query.factors.len()
        )));
    }
    if query.times().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("readout times must be finite".into()));
    }
    let signs = SignMatrix::cached(state.cutoff());
    let t_ref = state.t_ref();

    // per axis, element (m, n) of the evolved observable
    let elements: Vec<HashMap<(u32, u32), Complex64>> = (0..dims)
        .map(|axis| {
            let (obs, t) = query.factors[axis];
            let modes = state.axis_modes(axis);
            let mut table = HashMap::with_capacity(modes.len() * modes.len());
            for &m in modes {
                for &n in modes {
                    let a = obs.element(&signs, m, n);
                    let de = (m as f64).powi(2) - (n as f64).powi(2);
                    table.insert((m, n), Complex64::from_polar(a, de * (t - t_ref)));
                }
            }
            table
        })
        .collect();

    let coeffs: Vec<(&[u32], Complex64)> = state.coeffs().collect();
    let mut total = Complex64::default();
    for &(mi, cm) in &coeffs {
        for &(ni, cn) in &coeffs {
            let mut prod = cm.conj() * cn;
            for axis in 0..dims {
                prod *= elements[axis][&(mi[axis], ni[axis])];
                if prod == Complex64::default() {
                    break;
                }
            }
            total += prod;
        }
    }
    if total.im.abs() > HERMITIAN_TOL {
        return Err(Error::NonHermitian(total.im));
    }
    Ok(total.re)
}

/// Orthant labels: bit `i` of the index is set when particle `i` sits on the
/// positive half (`x >= 0`).
pub fn orthant_of(q: &[f64]) -> usize {
    q.iter().enumerate().filter(|(_, &x)| Side::of(x) == Side::Plus).fold(0, |acc, (i, _)| acc | (1 << i))
}

/// Sign of particle `axis` in orthant `orthant`.
pub fn orthant_side(orthant: usize, axis: usize) -> Side {
    if orthant >> axis & 1 == 1 {
        Side::Plus
    } else {
        Side::Minus
    }
}

/// Product of coordinate signs over an orthant.
pub fn orthant_parity(orthant: usize, dims: usize) -> f64 {
    (0..dims).map(|a| orthant_side(orthant, a).sign()).product()
}

/// `int_{half} phi_m phi_n dx` on either half of the box, by quadrature.
#[derive(Debug, Clone)]
struct HalfIntegrals {
    k: usize,
    plus: Vec<f64>,
}

impl HalfIntegrals {
    fn new(cutoff: u32, rule: &GaussLegendre) -> Self {
        let k = cutoff as usize;
        let mut plus = vec![0.0; k * k];
        let nodes: Vec<(f64, f64)> = rule.mapped(0.0, HALF_WIDTH).collect();
        let vals: Vec<Vec<f64>> = (1..=cutoff)
            .map(|n| {
                let mode = Mode::new(n).unwrap();
                nodes.iter().map(|&(x, _)| mode.eval_with_grad_unchecked(x).0).collect()
            })
            .collect();
        for m in 0..k {
            for n in 0..k {
                plus[m * k + n] =
                    nodes.iter().enumerate().map(|(j, &(_, w))| w * vals[m][j] * vals[n][j]).sum();
            }
        }
        HalfIntegrals { k, plus }
    }

    fn get(&self, side: Side, m: u32, n: u32) -> f64 {
        let p = self.plus[(m as usize - 1) * self.k + n as usize - 1];
        match side {
            Side::Plus => p,
            // phi_m phi_n has definite parity, so the left half is +-p
            Side::Minus => {
                if (m + n).is_multiple_of(2) {
                    p
                } else {
                    -p
                }
            }
        }
    }
}

/// Probability mass of each of the `2^D` orthants under `|psi(t, .)|^2`,
/// indexed as in [`orthant_of`].
pub fn octant_masses(state: &BoxState, t: f64) -> Vec<f64> {
    let dims = state.dims();
    let half = HalfIntegrals::new(state.cutoff(), GaussLegendre::standard());
    let coeffs: Vec<(Vec<u32>, Complex64)> = state.coefficients_at(t).into_iter().collect();
    (0..1usize << dims)
        .map(|orthant| {
            let mut mass = Complex64::default();
            for (mi, cm) in &coeffs {
                for (ni, cn) in &coeffs {
                    let overlap: f64 =
                        (0..dims).map(|a| half.get(orthant_side(orthant, a), mi[a], ni[a])).product();
                    mass += cm.conj() * cn * overlap;
                }
            }
            mass.re
        })
        .collect()
}
