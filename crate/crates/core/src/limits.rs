//! Closed-form rate and loss limits.
//!
//! * [`necessary_bounds`]: the data-rate and loss-probability thresholds any
//!   mean-square stabilizing scheme must meet for an uncertain plant.
//! * [`you_bounds`]: the exact thresholds for a known plant, which the
//!   necessary bounds reduce to when `eps_n = 0`.
//! * [`phat_bound`], [`martins_bound`]: earlier lossless sufficient rates for
//!   scalar uncertain plants, for comparison.
//! * [`eta_second_moment`], [`max_cell_expansion`]: the per-step growth factor
//!   of the scaling parameter behind the necessary bounds, and a brute-force
//!   enumeration of it over decoder cells.
//!
//! A bound that does not exist (nonpositive radicand or denominator) is
//! `None`, never NaN.

use serde::{Deserialize, Serialize};

use crate::codec::decode_cell;
use crate::error::{Error, Result};
use crate::interval::{scale_product, Interval};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessaryBounds {
    /// Rate bound from the `1 <= N < 2` branch, in bits.
    pub r_nec0: Option<f64>,
    /// Rate bound from the `N >= 2` branch, in bits.
    pub r_nec1: Option<f64>,
    /// `max(r_nec0, r_nec1)`; `None` when infeasible.
    pub r_nec: Option<f64>,
    /// `(1 - eps^2) / ((|lambda| + eps)^2 - eps^2)`.
    pub p_nec: f64,
    /// `1 / (|lambda| + eps)^2`.
    pub p_nec0: f64,
    /// `(1 - eps^2) / (|lambda|^2 + 2 |lambda| eps)`, equal to `p_nec`.
    pub p_nec1: f64,
    /// `eps < 1` and `p < p_nec`.
    pub feasible: bool,
}

fn check_common(lambda_abs: f64, eps: f64, p: f64) -> Result<()> {
    if !(lambda_abs > 0.0 && lambda_abs.is_finite()) {
        return Err(Error::arg(
            "lambda",
            format!("|lambda| = {lambda_abs} must be positive"),
        ));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::arg(
            "eps",
            format!("eps = {eps} must be nonnegative"),
        ));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(
            "p",
            format!("loss probability {p} must lie in [0, 1)"),
        ));
    }
    Ok(())
}

fn positive_log2(num: f64, den: f64) -> Option<f64> {
    (num > 0.0 && den > 0.0).then(|| (num / den).log2())
}

pub fn necessary_bounds(lambda_abs: f64, eps_n: f64, p: f64) -> Result<NecessaryBounds> {
    check_common(lambda_abs, eps_n, p)?;
    let up = lambda_abs + eps_n;
    let q = (1.0 - p).sqrt();
    let radicand = 1.0 - p * up * up;
    let root = if radicand > 0.0 { radicand.sqrt() } else { 0.0 };

    let r_nec0 = (radicand > 0.0).then(|| (up * q / root).log2());
    let r_nec1 = if radicand > 0.0 {
        positive_log2((lambda_abs - eps_n) * q, root - eps_n * q)
    } else {
        None
    };
    let p_nec = (1.0 - eps_n * eps_n) / (up * up - eps_n * eps_n);
    let p_nec0 = 1.0 / (up * up);
    let p_nec1 = (1.0 - eps_n * eps_n) / (lambda_abs * lambda_abs + 2.0 * lambda_abs * eps_n);
    let feasible = eps_n < 1.0 && p < p_nec;
    let r_nec = match (feasible, r_nec0, r_nec1) {
        (true, Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    Ok(NecessaryBounds {
        r_nec0,
        r_nec1,
        r_nec,
        p_nec,
        p_nec0,
        p_nec1,
        feasible,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YouBounds {
    pub r_y: Option<f64>,
    pub p_y: f64,
    pub feasible: bool,
}

/// Known-plant thresholds: `R > log2(|l| sqrt(1-p) / sqrt(1 - p l^2))`, `p < 1/l^2`.
pub fn you_bounds(lambda_abs: f64, p: f64) -> Result<YouBounds> {
    check_common(lambda_abs, 0.0, p)?;
    let p_y = 1.0 / (lambda_abs * lambda_abs);
    let radicand = 1.0 - p * lambda_abs * lambda_abs;
    let feasible = p < p_y && radicand > 0.0;
    let r_y = feasible.then(|| (lambda_abs * (1.0 - p).sqrt() / radicand.sqrt()).log2());
    Ok(YouBounds { r_y, p_y, feasible })
}

/// Lossless sufficient rate of the scalar comparison scheme with a rational
/// growth bound; `None` when its denominator is nonpositive.
pub fn phat_bound(lambda_abs: f64, eps1: f64) -> Option<f64> {
    let num = lambda_abs - eps1 * (lambda_abs + eps1);
    let den = 1.0 - eps1 * (2.0 * lambda_abs + 2.0 * eps1 + 1.0);
    positive_log2(num, den)
}

/// Lossless sufficient rate `log2(|lambda| / (1 - eps))`; `None` for `eps >= 1`.
pub fn martins_bound(lambda_abs: f64, eps1: f64) -> Option<f64> {
    positive_log2(lambda_abs, 1.0 - eps1)
}

/// Growth factor of the worst decoder cell for reception flag `gamma`, with
/// a possibly fractional level count `levels >= 1`.
pub fn eta(lambda_abs: f64, eps_n: f64, levels: f64, gamma: u8) -> f64 {
    let m = if gamma == 1 { levels } else { 1.0 };
    (lambda_abs + (m - 1.0).max(1.0) * eps_n) / m
}

/// `E[eta^2] = p eta(0)^2 + (1-p) eta(1)^2`.
pub fn eta_second_moment(lambda_abs: f64, eps_n: f64, p: f64, levels: f64) -> f64 {
    let e0 = eta(lambda_abs, eps_n, levels, 0);
    let e1 = eta(lambda_abs, eps_n, levels, 1);
    p * e0 * e0 + (1.0 - p) * e1 * e1
}

/// Largest `mu(A_n * Y)` over every decoder cell `Y` the quantizer can
/// produce at scale `sigma`: all `N` cells on reception, the full range on
/// loss. Computed by enumeration, independent of [`eta`].
pub fn max_cell_expansion(a_n_star: f64, eps_n: f64, levels: u64, gamma: u8, sigma: f64) -> f64 {
    let a = Interval::uncertainty(a_n_star, eps_n);
    let measure = |cell: Interval| scale_product(&a, &cell).measure();
    if gamma == 0 {
        measure(decode_cell(levels, sigma, 0.0, None).expect("loss cell"))
    } else {
        (0..levels)
            .map(|i| measure(decode_cell(levels, sigma, 0.0, Some(i)).expect("symbol in range")))
            .fold(0.0, f64::max)
    }
}

/// JSON report for a plant: necessary bounds, the known-plant bounds at the
/// nominal `|lambda_pi|`, and (scalar plants only) the comparison rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub r_nec0: Option<f64>,
    pub r_nec1: Option<f64>,
    pub r_nec: Option<f64>,
    pub p_nec: f64,
    pub r_you: Option<f64>,
    pub p_you: f64,
    pub r_phat: Option<f64>,
    pub r_martins: Option<f64>,
    pub feasible: bool,
}

impl BoundsReport {
    pub fn for_plant(plant: &crate::plant::UncertainPlant, p: f64) -> Result<Self> {
        let lambda = plant.lambda_pi().abs();
        let eps_n = *plant.eps().last().unwrap();
        let nec = necessary_bounds(lambda, eps_n, p)?;
        let you = you_bounds(lambda, p)?;
        let scalar = plant.order() == 1;
        Ok(BoundsReport {
            r_nec0: nec.r_nec0,
            r_nec1: nec.r_nec1,
            r_nec: nec.r_nec,
            p_nec: nec.p_nec,
            r_you: you.r_y,
            p_you: you.p_y,
            r_phat: if scalar {
                phat_bound(lambda, eps_n)
            } else {
                None
            },
            r_martins: if scalar {
                martins_bound(lambda, eps_n)
            } else {
                None
            },
            feasible: nec.feasible,
        })
    }
}
