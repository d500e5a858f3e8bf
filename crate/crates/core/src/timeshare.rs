//! Time-sharing protocol for scalar plants.
//!
//! Time is split into cycles of `m` slots. The output `y_{mj}` sampled at the
//! start of a cycle is refined packet by packet during the cycle; a lost
//! packet is retransmitted in the next slot, so after `s` successes the
//! decoder resolves `y_{mj}` to `M = N^s` levels. Inputs are zero inside the
//! cycle and `-(a*)^m yhat_{mj}` in its last slot.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelStream;
use crate::codec::{
    fractional_cell, fractional_cell_at, initial_sigma, pad_outward, rounding_pad, settle_index,
    ControlLaw, LoopStatus, SimTrace, TraceStep, CONVERGED_SIGMA, DIVERGED_SIGMA, SATURATION_TOL,
    SIGMA_MIN,
};
use crate::error::{Error, Result};
use crate::interval::{scale_product, Interval};
use crate::limits::necessary_bounds;
use crate::plant::{ParamStrategy, UncertainPlant};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeShareConfig {
    pub a_star: f64,
    pub eps: f64,
    /// Cycle duration.
    pub m: u32,
    /// Per-slot level `N`; may be fractional, the average level `T^{1/m}`.
    #[serde(rename = "N")]
    pub levels: f64,
    pub p: f64,
}

impl TimeShareConfig {
    pub fn new(a_star: f64, eps: f64, m: u32, levels: f64, p: f64) -> Result<Self> {
        if !(a_star.is_finite() && eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidPlant(format!("a* = {a_star}, eps = {eps}")));
        }
        if a_star.is_nan() || eps.is_nan() || a_star.abs() - eps <= 1.0 {
            return Err(Error::InvalidPlant(format!(
                "|a*| - eps = {} must exceed 1",
                a_star.abs() - eps
            )));
        }
        if m == 0 {
            return Err(Error::arg("m", "cycle duration must be at least 1"));
        }
        if !(levels >= 1.0 && levels.is_finite()) {
            return Err(Error::arg(
                "N",
                format!("level {levels} must be at least 1"),
            ));
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg(
                "p",
                format!("loss probability {p} must lie in [0, 1)"),
            ));
        }
        Ok(TimeShareConfig {
            a_star,
            eps,
            m,
            levels,
            p,
        })
    }

    /// Config whose per-cycle total level is the integer `total`.
    pub fn with_total_level(a_star: f64, eps: f64, m: u32, total: u64, p: f64) -> Result<Self> {
        if total < 2 {
            return Err(Error::arg("N", "total level per cycle must be at least 2"));
        }
        Self::new(
            a_star,
            eps,
            m,
            (total as f64).powf(1.0 / m.max(1) as f64),
            p,
        )
    }

    /// `N^m`, rounded when it is an integer up to roundoff.
    pub fn total_level(&self) -> Option<u64> {
        let t = self.levels.powi(self.m as i32);
        let r = t.round();
        ((t - r).abs() <= 1e-9 * r.max(1.0)).then_some(r as u64)
    }

    pub fn plant(&self, y0_bound: f64) -> Result<UncertainPlant> {
        UncertainPlant::scalar(self.a_star, self.eps, y0_bound)
    }
}

/// `(delta_plus, delta_minus)`: growth of `|a|^m` over the box edges.
pub fn deltas(a_star: f64, eps: f64, m: u32) -> (f64, f64) {
    let a = a_star.abs();
    let am = a.powi(m as i32);
    ((a + eps).powi(m as i32) - am, am - (a - eps).powi(m as i32))
}

/// Per-cycle expansion of the scaling parameter when `M` levels resolved.
pub fn kappa(a_star: f64, eps: f64, m: u32, big_m: f64) -> f64 {
    let (dp, dm) = deltas(a_star, eps, m);
    let am = a_star.abs().powi(m as i32);
    (am + (big_m / 2.0).max(1.0) * dp + (big_m / 2.0 - 1.0).max(0.0) * dm) / big_m
}

/// `E[kappa^2]` over the binomial count of successful slots.
pub fn kappa_bar(cfg: &TimeShareConfig) -> f64 {
    let m = cfg.m;
    let q = 1.0 - cfg.p;
    let mut binom = 1.0f64;
    let mut total = 0.0;
    for s in 0..=m {
        if s > 0 {
            binom = binom * (m - s + 1) as f64 / s as f64;
        }
        let w = binom * q.powi(s as i32) * cfg.p.powi((m - s) as i32);
        if w > 0.0 {
            let k = kappa(cfg.a_star, cfg.eps, m, cfg.levels.powi(s as i32));
            total += w * k * k;
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosslessBound {
    /// Bits per slot; `None` stands for an infinite bound.
    pub r_bar: Option<f64>,
    pub feasible: bool,
}

/// Necessary average rate for the lossless channel.
pub fn lossless_bound(a_star: f64, eps: f64, m: u32) -> LosslessBound {
    let (dp, dm) = deltas(a_star, eps, m);
    let half = (dp + dm) / 2.0;
    if half >= 1.0 {
        return LosslessBound {
            r_bar: None,
            feasible: false,
        };
    }
    let a = a_star.abs();
    let r0 = (a + eps).log2();
    let r1 = ((a.powi(m as i32) - dm) / (1.0 - half)).log2() / m as f64;
    LosslessBound {
        r_bar: Some(r0.max(r1)),
        feasible: true,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleLevel {
    /// Smallest integer `T = N^m >= 2` with `kappa_bar < 1`.
    pub total: u64,
    /// `T^{1/m}`.
    pub avg_level: f64,
    pub kappa_bar: f64,
}

/// Scans `T = 2..=cap` for the first total level with `kappa_bar < 1`.
pub fn min_feasible_average_level(
    a_star: f64,
    eps: f64,
    p: f64,
    m: u32,
    cap: u64,
) -> Result<Option<FeasibleLevel>> {
    TimeShareConfig::new(a_star, eps, m, 2.0, p)?;
    let (dp, dm) = deltas(a_star, eps, m);
    // at p = 0 kappa(T) tends to (dp + dm)/2 from above
    if p == 0.0 && (dp + dm) / 2.0 >= 1.0 {
        return Ok(None);
    }
    for total in 2..=cap {
        let cfg = TimeShareConfig::with_total_level(a_star, eps, m, total, p)?;
        let kb = kappa_bar(&cfg);
        if kb < 1.0 {
            return Ok(Some(FeasibleLevel {
                total,
                avg_level: cfg.levels,
                kappa_bar: kb,
            }));
        }
    }
    Ok(None)
}

/// One row of a cycle-length sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeShareRow {
    pub m: u32,
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// At the requested level, or at the minimal feasible one when none was
    /// requested.
    pub kappa_bar: Option<f64>,
    pub r_bar: Option<f64>,
    pub feasible: bool,
    pub min_total_level: Option<u64>,
    pub avg_level: Option<f64>,
}

pub fn timeshare_row(
    a_star: f64,
    eps: f64,
    p: f64,
    m: u32,
    levels: Option<f64>,
    cap: u64,
) -> Result<TimeShareRow> {
    let (delta_plus, delta_minus) = deltas(a_star, eps, m);
    let min = min_feasible_average_level(a_star, eps, p, m, cap)?;
    let bound = if p == 0.0 {
        lossless_bound(a_star, eps, m)
    } else if m == 1 {
        let b = necessary_bounds(a_star.abs(), eps, p)?;
        LosslessBound {
            r_bar: b.r_nec,
            feasible: b.feasible,
        }
    } else {
        // no closed-form rate bound for lossy cycles; feasibility from kappa_bar
        LosslessBound {
            r_bar: None,
            feasible: min.is_some(),
        }
    };
    let kappa_bar = match levels {
        Some(n) => Some(kappa_bar(&TimeShareConfig::new(a_star, eps, m, n, p)?)),
        None => min.map(|f| f.kappa_bar),
    };
    Ok(TimeShareRow {
        m,
        delta_plus,
        delta_minus,
        kappa_bar,
        r_bar: bound.r_bar,
        feasible: bound.feasible,
        min_total_level: min.map(|f| f.total),
        avg_level: min.map(|f| f.avg_level),
    })
}

/// Simulates `cycles` cycles from `y0`. Trace entries are per cycle: `k` is
/// the slot `mj`, `gamma` counts the successful slots of the cycle, `symbol`
/// is the resolved cell index and `u` the end-of-cycle input.
pub fn run_timeshare_loop(
    cfg: &TimeShareConfig,
    y0_bound: f64,
    law: ControlLaw,
    channel: &mut ChannelStream,
    strategy: &mut ParamStrategy,
    cycles: usize,
    y0: f64,
) -> Result<SimTrace> {
    let plant = cfg.plant(y0_bound)?;
    if cfg.total_level().is_none_or(|t| t < 2) {
        return Err(Error::arg(
            "N",
            format!(
                "N^m = {} must be an integer >= 2",
                cfg.levels.powi(cfg.m as i32)
            ),
        ));
    }
    if y0.abs() > y0_bound {
        return Err(Error::arg(
            "y0",
            format!("|y0| = {} exceeds the bound {y0_bound}", y0.abs()),
        ));
    }
    let m = cfg.m as usize;
    let box_m = plant.uncertainty_box(1).powi_nonzero(cfg.m);
    let am = cfg.a_star.powi(cfg.m as i32);
    let mut sigma = initial_sigma(&plant);
    let mut center = 0.0;
    let mut y = y0;
    let mut trace = Vec::with_capacity(cycles);
    let mut status = LoopStatus::Completed;

    for j in 0..cycles {
        let k0 = j * m;
        let successes: u8 = (0..m).map(|i| channel.draw((k0 + i) as u64)).sum();
        let resolved = cfg.levels.powi(successes as i32);
        let v = (y - center) / sigma;
        let (idx, _) = fractional_cell(resolved, sigma, center, v)
            .map_err(|_| Error::Saturation { step: k0, value: v })?;
        let count = resolved.ceil().max(1.0) as u64;
        let symbol = settle_index(y, idx, count, |i| {
            fractional_cell_at(resolved, sigma, center, i)
        });
        let cell = fractional_cell_at(resolved, sigma, center, symbol);
        if !cell.contains_within(y, SATURATION_TOL * sigma) {
            return Err(Error::Saturation { step: k0, value: v });
        }
        let prediction = scale_product(&box_m, &cell);
        let u = match law {
            ControlLaw::Nominal => -am * cell.midpoint(),
            ControlLaw::Centering => -prediction.midpoint(),
        };
        trace.push(TraceStep {
            k: k0,
            y,
            sigma,
            center,
            gamma: successes,
            u,
            symbol,
            cell,
        });

        let mut hist: VecDeque<f64> = VecDeque::from([y]);
        for i in 0..m {
            let ui = if i + 1 == m { u } else { 0.0 };
            let h = hist.make_contiguous();
            let params = strategy.realize(&plant, |a| plant_step(h, ui, a));
            let next = plant.step(h, ui, &params)?;
            hist[0] = next;
        }
        y = hist[0];
        let mag = magnitude(&box_m) * (magnitude(&cell) + center.abs() + sigma)
            + u.abs()
            + magnitude(&prediction);
        let padded = pad_outward(&prediction, rounding_pad(mag, m));
        sigma = padded.measure().max(SIGMA_MIN);
        center = padded.midpoint() + u;

        if sigma < CONVERGED_SIGMA {
            status = LoopStatus::Converged;
            break;
        }
        if sigma > DIVERGED_SIGMA {
            status = LoopStatus::Diverged;
            break;
        }
    }
    Ok(SimTrace {
        steps: trace,
        status,
        final_sigma: sigma,
    })
}

fn magnitude(iv: &Interval) -> f64 {
    iv.lo().abs().max(iv.hi().abs())
}

fn plant_step(history: &[f64], u: f64, params: &[f64]) -> f64 {
    params[0] * history[0] + u
}

/// Interval `{a^m : a in [a* - eps, a* + eps]}`.
pub fn power_box(a_star: f64, eps: f64, m: u32) -> Interval {
    Interval::uncertainty(a_star, eps).powi_nonzero(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use crate::limits::eta_second_moment;
    use crate::plant::StrategyKind;
    use rand::{Rng, SeedableRng};

    #[test]
    fn delta_examples() {
        assert_eq!(deltas(2.5, 0.0, 4), (0.0, 0.0));
        let (dp, dm) = deltas(2.5, 0.1, 1);
        assert!((dp - 0.1).abs() < 1e-15 && (dm - 0.1).abs() < 1e-15);
        let (dp, dm) = deltas(3.3, 0.025, 3);
        assert!((dp - (3.325f64.powi(3) - 3.3f64.powi(3))).abs() < 1e-12);
        assert!((dm - (3.3f64.powi(3) - 3.275f64.powi(3))).abs() < 1e-12);
        assert!(((dp + dm) / 2.0 - 0.816765625).abs() < 1e-12);
        let (dp, dm) = deltas(-3.3, 0.025, 3);
        assert!(dp > 0.0 && dm > 0.0);
    }

    #[test]
    fn kappa_examples() {
        let (a, e) = (2.3, 0.12);
        assert!((kappa(a, e, 1, 1.0) - (a + e)).abs() < 1e-15);
        for n in [2.0, 5.0, 16.0] {
            assert!((kappa(a, e, 1, n) - (a + (n - 1.0) * e) / n).abs() < 1e-14);
        }
        assert!((kappa(3.0, 0.0, 3, 7.0) - 27.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn kappa_bar_examples() {
        let cfg = TimeShareConfig::new(3.3, 0.025, 2, 13f64.sqrt(), 0.0).unwrap();
        let k = kappa(3.3, 0.025, 2, 13.0);
        assert!((kappa_bar(&cfg) - k * k).abs() < 1e-12);
        assert!(kappa_bar(&cfg) < 1.0);
    }

    #[test]
    fn kappa_bar_reduces_to_eta_moment() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let a: f64 = rng.random_range(1.05..6.0);
            let e = rng.random_range(0.0..(a - 1.0).min(0.99));
            let n = rng.random_range(2..64) as f64;
            let p = rng.random_range(0.0..0.5);
            let cfg = TimeShareConfig::new(a, e, 1, n, p).unwrap();
            assert!((kappa_bar(&cfg) - eta_second_moment(a, e, p, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn lossless_bound_examples() {
        for (a, e) in [(2.0, 0.1), (3.3, 0.025), (5.0, 0.5)] {
            let b = necessary_bounds(a, e, 0.0).unwrap();
            let l = lossless_bound(a, e, 1);
            assert!((l.r_bar.unwrap() - b.r_nec.unwrap()).abs() < 1e-12);
        }
        for m in 1..=3 {
            assert!(lossless_bound(3.3, 0.025, m).feasible);
        }
        for m in 4..=6 {
            let l = lossless_bound(3.3, 0.025, m);
            assert!(!l.feasible && l.r_bar.is_none());
        }
        for m in 1..=5 {
            assert!((lossless_bound(2.7, 0.0, m).r_bar.unwrap() - 2.7f64.log2()).abs() < 1e-12);
        }
    }

    #[test]
    fn feasibility_flips_at_half_delta_sum_one() {
        // (delta_plus + delta_minus)/2 increases in m; find the real crossing
        let half = |m: f64| {
            let (a, e) = (3.3f64, 0.025f64);
            ((a + e).powf(m) - (a - e).powf(m)) / 2.0
        };
        let (mut lo, mut hi) = (1.0, 10.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if half(mid) < 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        for m in 1..=8u32 {
            assert_eq!(lossless_bound(3.3, 0.025, m).feasible, (m as f64) < lo);
        }
        assert!(lo > 3.0 && lo < 4.0);
    }

    #[test]
    fn min_level_examples() {
        let f1 = min_feasible_average_level(3.3, 0.025, 0.0, 1, 10_000)
            .unwrap()
            .unwrap();
        assert_eq!((f1.total, f1.avg_level), (4, 4.0));
        let f2 = min_feasible_average_level(3.3, 0.025, 0.0, 2, 10_000)
            .unwrap()
            .unwrap();
        assert_eq!(f2.total, 13);
        assert!((f2.avg_level - 13f64.sqrt()).abs() < 1e-12);
        let f3 = min_feasible_average_level(3.3, 0.025, 0.0, 3, 10_000)
            .unwrap()
            .unwrap();
        // threshold (|a|^3 - dm) / (1 - (dp + dm)/2) = 191.702...
        assert_eq!(f3.total, 192);
        assert!((f3.avg_level - 192f64.cbrt()).abs() < 1e-12);
        assert!(min_feasible_average_level(3.3, 0.025, 0.0, 4, 10_000)
            .unwrap()
            .is_none());
    }

    #[test]
    fn total_level_roundtrip() {
        let cfg = TimeShareConfig::with_total_level(3.3, 0.025, 3, 190, 0.0).unwrap();
        assert_eq!(cfg.total_level(), Some(190));
        assert_eq!(
            TimeShareConfig::new(3.3, 0.025, 2, 3.5, 0.0)
                .unwrap()
                .total_level(),
            None
        );
        assert!(TimeShareConfig::new(1.5, 0.6, 1, 4.0, 0.0).is_err());
    }

    fn run(
        cfg: &TimeShareConfig,
        law: ControlLaw,
        kind: StrategyKind,
        seed: u64,
        cycles: usize,
    ) -> SimTrace {
        let ch = ChannelConfig::new(cfg.p, seed).unwrap();
        run_timeshare_loop(
            cfg,
            1.0,
            law,
            &mut ch.stream(0),
            &mut ParamStrategy::new(kind, seed),
            cycles,
            0.7,
        )
        .unwrap()
    }

    #[test]
    fn exact_plant_lossless_ratio() {
        let cfg = TimeShareConfig::with_total_level(2.0, 0.0, 2, 20, 0.0).unwrap();
        let t = run(&cfg, ControlLaw::Nominal, StrategyKind::Nominal, 1, 30);
        for w in t.steps.windows(2) {
            assert!((w[1].sigma / w[0].sigma - 4.0 / 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_lost_cycle_ratio() {
        let cfg = TimeShareConfig::with_total_level(2.0, 0.1, 2, 9, 0.9).unwrap();
        let t = run(
            &cfg,
            ControlLaw::Centering,
            StrategyKind::GreedyAdversarial,
            4,
            40,
        );
        let want = kappa(2.0, 0.1, 2, 1.0);
        let mut seen = false;
        for w in t.steps.windows(2) {
            if w[0].gamma == 0 {
                seen = true;
                assert!((w[1].sigma / w[0].sigma - want).abs() < 1e-12);
            }
        }
        assert!(seen);
        assert!((want - 2.1f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn ratio_never_exceeds_kappa_when_centered() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for trial in 0..40 {
            let a: f64 = rng.random_range(1.1..4.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let e = rng.random_range(0.0..(a.abs() - 1.0).min(0.3));
            let m = rng.random_range(1..4);
            let total = rng.random_range(2..200);
            let p = rng.random_range(0.0..0.5);
            let cfg = TimeShareConfig::with_total_level(a, e, m, total, p).unwrap();
            for kind in [StrategyKind::IidUniform, StrategyKind::GreedyAdversarial] {
                let t = run(&cfg, ControlLaw::Centering, kind, trial, 60);
                for w in t.steps.windows(2) {
                    let big_m = cfg.levels.powi(w[0].gamma as i32);
                    let bound = kappa(a, e, m, big_m);
                    // slack covers the outward rounding pad
                    assert!(w[1].sigma / w[0].sigma <= bound * (1.0 + 1e-10));
                    assert!(w[0].cell.contains_within(w[0].y, 1e-12 * w[0].sigma));
                }
            }
        }
    }

    #[test]
    fn nominal_law_keeps_containment() {
        let cfg = TimeShareConfig::with_total_level(3.3, 0.025, 2, 13, 0.05).unwrap();
        for kind in [
            StrategyKind::Nominal,
            StrategyKind::IidUniform,
            StrategyKind::GreedyAdversarial,
        ] {
            let t = run(&cfg, ControlLaw::Nominal, kind, 77, 200);
            for s in &t.steps {
                assert!(s.cell.contains_within(s.y, 1e-12 * s.sigma));
            }
        }
    }

    #[test]
    fn non_integer_total_rejected() {
        let cfg = TimeShareConfig::new(3.3, 0.025, 2, 3.5, 0.0).unwrap();
        let ch = ChannelConfig::lossless();
        let r = run_timeshare_loop(
            &cfg,
            1.0,
            ControlLaw::Nominal,
            &mut ch.stream(0),
            &mut ParamStrategy::new(StrategyKind::Nominal, 0),
            5,
            0.1,
        );
        assert!(r.is_err());
    }

    #[test]
    fn power_box_is_monotone_image() {
        let b = power_box(-2.0, 0.1, 3);
        assert!((b.lo() - (-2.1f64).powi(3)).abs() < 1e-12);
        assert!((b.hi() - (-1.9f64).powi(3)).abs() < 1e-12);
    }
}
