//! Markov-jump sufficiency test.
//!
//! Under the minimal scaling law, the vector of the last `n` scaling
//! parameters obeys `zeta_{k+1} <= H_{Gamma_k} zeta_k` elementwise, where the
//! mode `Gamma_k` is the window of the last `n` reception flags. The window
//! is a Markov chain on `2^n` states. Mean-square stability of that jump
//! system, and hence of the loop, follows from `rho(F) < 1` with
//! `F = (P^T (x) I_{n^2}) diag(H_1 (x) H_1, ..., H_{2^n} (x) H_{2^n})`.
//!
//! Window states are numbered `1..=2^n` with `gamma_k` as the most
//! significant bit and `gamma_{k-n+1}` as the least significant one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::UncertainPlant;

/// Largest plant order for which the dense `F` (`2^n n^2` square) is built.
pub const N_MAX_ORDER: usize = 6;

/// Levels below the bisection result that are rechecked one by one.
pub const CONFIRM_WINDOW: u64 = 1024;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossWindow {
    /// `(gamma_k, gamma_{k-1}, ..., gamma_{k-n+1})`.
    pub bits: Vec<u8>,
    /// One-based state number.
    pub index: usize,
}

impl LossWindow {
    pub fn from_bits(bits: Vec<u8>) -> Self {
        let index = 1 + bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        LossWindow { bits, index }
    }

    pub fn from_index(n: usize, index: usize) -> Self {
        assert!(
            index >= 1 && index <= 1 << n,
            "window index {index} out of range"
        );
        let v = index - 1;
        let bits = (0..n).map(|i| ((v >> (n - 1 - i)) & 1) as u8).collect();
        LossWindow { bits, index }
    }

    /// Reception flag `gamma_{k-i+1}` for coefficient `i` in `1..=n`.
    pub fn flag_for(&self, i: usize) -> u8 {
        self.bits[i - 1]
    }

    /// Window after a new flag enters at the front.
    pub fn shift(&self, gamma: u8) -> Self {
        let mut bits = Vec::with_capacity(self.bits.len());
        bits.push(gamma);
        bits.extend_from_slice(&self.bits[..self.bits.len() - 1]);
        LossWindow::from_bits(bits)
    }
}

/// Bound on the expansion of `A_i * Y` relative to the scale of `Y`'s range.
pub fn theta(a_star_i: f64, eps_i: f64, levels: f64, gamma: u8) -> f64 {
    let a = a_star_i.abs();
    if gamma == 0 {
        a + eps_i
    } else if a - eps_i > 0.0 {
        (a + eps_i * (levels - 1.0)) / levels
    } else {
        ((a + eps_i) / levels).max(eps_i)
    }
}

/// Transition matrix of the loss window: from state `i`, the next window
/// drops the oldest flag and shifts in `gamma_{k+1}`.
pub fn build_transition(n: usize, p: f64) -> DMatrix<f64> {
    let states = 1usize << n;
    let mut m = DMatrix::zeros(states, states);
    for row in 0..states {
        m[(row, row / 2)] += p;
        m[(row, states / 2 + row / 2)] += 1.0 - p;
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct MjlsModel {
    pub n: usize,
    pub levels: f64,
    pub p: f64,
    /// `theta_table[i-1] = [theta_i(gamma=0), theta_i(gamma=1)]`.
    pub theta_table: Vec<[f64; 2]>,
    /// `h[j-1]` is `H` for window state `j`.
    pub h: Vec<DMatrix<f64>>,
    pub transition: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

impl MjlsModel {
    pub fn window(&self, index: usize) -> LossWindow {
        LossWindow::from_index(self.n, index)
    }

    /// Row-major CSV dump of `F`.
    pub fn f_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.f.nrows() {
            let row: Vec<String> = (0..self.f.ncols())
                .map(|c| self.f[(r, c)].to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn companion_h(thetas: &[f64]) -> DMatrix<f64> {
    let n = thetas.len();
    let mut h = DMatrix::zeros(n, n);
    for r in 0..n - 1 {
        h[(r, r + 1)] = 1.0;
    }
    // last row: theta_n, theta_{n-1}, ..., theta_1
    for (i, t) in thetas.iter().enumerate() {
        h[(n - 1, n - 1 - i)] = *t;
    }
    h
}

/// Builds `H`, `P` and `F` for quantizer level `levels >= 2` (fractional
/// levels are accepted for rate-curve searches).
pub fn build_f(plant: &UncertainPlant, levels: f64, p: f64) -> Result<MjlsModel> {
    if !(levels >= 2.0 && levels.is_finite()) {
        return Err(Error::arg(
            "N",
            format!("sufficiency test needs N >= 2, got {levels}"),
        ));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(
            "p",
            format!("loss probability {p} must lie in [0, 1)"),
        ));
    }
    let n = plant.order();
    if n > N_MAX_ORDER {
        return Err(Error::DimensionCap {
            n,
            cap: N_MAX_ORDER,
        });
    }
    let theta_table: Vec<[f64; 2]> = plant
        .a_star()
        .iter()
        .zip(plant.eps())
        .map(|(&a, &e)| [theta(a, e, levels, 0), theta(a, e, levels, 1)])
        .collect();
    let states = 1usize << n;
    let h: Vec<DMatrix<f64>> = (1..=states)
        .map(|j| {
            let w = LossWindow::from_index(n, j);
            let t: Vec<f64> = (1..=n)
                .map(|i| theta_table[i - 1][w.flag_for(i) as usize])
                .collect();
            companion_h(&t)
        })
        .collect();
    let transition = build_transition(n, p);

    let block = n * n;
    let dim = states * block;
    let f1 = transition
        .transpose()
        .kronecker(&DMatrix::<f64>::identity(block, block));
    let mut f2 = DMatrix::zeros(dim, dim);
    for (j, hj) in h.iter().enumerate() {
        f2.view_mut((j * block, j * block), (block, block))
            .copy_from(&hj.kronecker(hj));
    }
    let f = f1 * f2;
    Ok(MjlsModel {
        n,
        levels,
        p,
        theta_table,
        h,
        transition,
        f,
    })
}

fn power_iterate(m: &DMatrix<f64>) -> Option<f64> {
    let dim = m.nrows();
    let mut x = DVector::from_element(dim, 1.0 / dim as f64);
    let mut prev: Option<f64> = None;
    let mut prev_delta: Option<f64> = None;
    for _ in 0..POWER_MAX_ITER {
        let y = m * &x;
        let s: f64 = y.iter().sum();
        if s <= 0.0 {
            return Some(0.0);
        }
        // Collatz-Wielandt bracket when the iterate is strictly positive
        if x.iter().all(|&v| v > 0.0) {
            let (lo, hi) = y
                .iter()
                .zip(x.iter())
                .map(|(a, b)| a / b)
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
                    (lo.min(r), hi.max(r))
                });
            if hi - lo <= POWER_TOL * hi {
                return Some(0.5 * (hi + lo));
            }
        }
        if let Some(last) = prev {
            let delta = (s - last).abs();
            if delta == 0.0 {
                return Some(s);
            }
            if let Some(pd) = prev_delta {
                let rate = delta / pd;
                if rate < 1.0
                    && delta * rate / (1.0 - rate) <= POWER_TOL * s
                    && delta <= POWER_TOL * s
                {
                    return Some(s);
                }
            }
            prev_delta = Some(delta);
        }
        prev = Some(s);
        x = y / s;
    }
    None
}

/// Perron root of a nonnegative square matrix by power iteration.
///
/// When the plain iteration does not settle (a dominant eigenvalue class
/// that rotates), it is rerun on `M + delta I` with `delta` the max row sum,
/// which makes the Perron root strictly dominant, and `delta` is subtracted.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::arg(
            "matrix",
            "spectral radius needs a square matrix",
        ));
    }
    if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::arg(
            "matrix",
            "entries must be finite and nonnegative",
        ));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if let Some(r) = power_iterate(m) {
        return Ok(r);
    }
    let delta = m.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let shifted = m + DMatrix::<f64>::identity(m.nrows(), m.ncols()) * delta;
    power_iterate(&shifted)
        .map(|r| (r - delta).max(0.0))
        .ok_or(Error::IterationCap {
            iterations: 2 * POWER_MAX_ITER,
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sufficiency {
    pub n: usize,
    #[serde(rename = "N")]
    pub levels: u64,
    pub p: f64,
    pub rho: f64,
    /// `rho < 1`; `rho == 1` is not sufficient.
    pub sufficient: bool,
}

pub fn sufficient_mss(plant: &UncertainPlant, levels: u64, p: f64) -> Result<Sufficiency> {
    let rho = rho_at(plant, levels as f64, p)?;
    Ok(Sufficiency {
        n: plant.order(),
        levels,
        p,
        rho,
        sufficient: rho < 1.0,
    })
}

/// `rho(F)` at a possibly fractional level.
pub fn rho_at(plant: &UncertainPlant, levels: f64, p: f64) -> Result<f64> {
    spectral_radius(&build_f(plant, levels, p)?.f)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinLevel {
    /// Smallest sufficient integer level in `[2, n_max]`.
    #[serde(rename = "N")]
    pub levels: Option<u64>,
    /// `rho` at the returned level, or at `n_max` when none qualified.
    pub rho: f64,
}

/// Smallest integer `N` in `[2, n_max]` with `rho(F) < 1`.
///
/// Galloping then bisection locate the crossing under the assumption that
/// `rho` decreases in `N`; up to [`CONFIRM_WINDOW`] levels below the result
/// are then rechecked and the smallest passing one is kept.
pub fn min_sufficient_n(plant: &UncertainPlant, p: f64, n_max: u64) -> Result<MinLevel> {
    if n_max < 2 {
        return Err(Error::arg("n-max", "search cap must be at least 2"));
    }
    let rho = |n: u64| rho_at(plant, n as f64, p);
    let top = rho(n_max)?;
    if top >= 1.0 {
        return Ok(MinLevel {
            levels: None,
            rho: top,
        });
    }
    let mut lo = 1u64; // last level known to fail (1 is a sentinel)
    let mut hi = 2u64;
    let mut hi_rho = rho(2)?;
    while hi_rho >= 1.0 {
        lo = hi;
        hi = (hi * 2).min(n_max);
        hi_rho = if hi == n_max { top } else { rho(hi)? };
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let r = rho(mid)?;
        if r < 1.0 {
            hi = mid;
            hi_rho = r;
        } else {
            lo = mid;
        }
    }
    let floor = hi.saturating_sub(CONFIRM_WINDOW).max(2);
    for n in (floor..hi).rev() {
        let r = rho(n)?;
        if r < 1.0 {
            hi = n;
            hi_rho = r;
        }
    }
    Ok(MinLevel {
        levels: Some(hi),
        rho: hi_rho,
    })
}

/// Smallest rate `log2 N` over real `N >= 2` with `rho(F) < 1`, to `1e-10`
/// bits; `None` when no finite level suffices.
pub fn min_sufficient_rate(plant: &UncertainPlant, p: f64) -> Result<Option<f64>> {
    const MAX_BITS: f64 = 60.0;
    if rho_at(plant, 2.0, p)? < 1.0 {
        return Ok(Some(1.0));
    }
    if rho_at(plant, MAX_BITS.exp2(), p)? >= 1.0 {
        return Ok(None);
    }
    let (mut lo, mut hi) = (1.0f64, MAX_BITS);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if rho_at(plant, mid.exp2(), p)? < 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
