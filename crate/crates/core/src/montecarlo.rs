//! Trial orchestration and the empirical mean-square verdict.
//!
//! Trials run in fixed blocks of [`BLOCK`] on the rayon pool. Each block and
//! then the sequence of blocks is reduced pairwise in trial order, so the
//! report is bit-identical for any thread count. `sigma^2` is accumulated in
//! the log domain since it spans hundreds of decades.

use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::codec::{run_closed_loop, ControlLaw, LoopStatus, QuantizerSpec, SimTrace};
use crate::error::{Error, Result};
use crate::plant::{ParamStrategy, StrategyKind, UncertainPlant};
use crate::timeshare::{run_timeshare_loop, TimeShareConfig};

/// Trials per reduction block.
pub const BLOCK: usize = 64;
pub const DEFAULT_TOL_SLOPE: f64 = 1e-3;

const STRATEGY_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const Y0_SALT: u64 = 0xd1b5_4a32_d192_ed03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub trials: usize,
    /// Steps, or cycles for the time-sharing loop.
    pub steps: usize,
    pub base_seed: u64,
    pub strategy: StrategyKind,
    pub law: ControlLaw,
    /// Fixed initial output; drawn uniformly from `[-Y0, Y0]` per trial when
    /// absent.
    pub y0: Option<f64>,
    pub tol_slope: f64,
}

impl Experiment {
    pub fn new(trials: usize, steps: usize, base_seed: u64, strategy: StrategyKind) -> Self {
        Experiment {
            trials,
            steps,
            base_seed,
            strategy,
            law: ControlLaw::Nominal,
            y0: None,
            tol_slope: DEFAULT_TOL_SLOPE,
        }
    }
}

/// What a trial simulates.
#[derive(Clone, Debug)]
pub enum Target {
    Plant {
        plant: UncertainPlant,
        quantizer: QuantizerSpec,
    },
    TimeShare {
        cfg: TimeShareConfig,
        y0_bound: f64,
    },
}

impl Target {
    fn y0_bound(&self) -> f64 {
        match self {
            Target::Plant { plant, .. } => plant.y0_bound(),
            Target::TimeShare { y0_bound, .. } => *y0_bound,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub trials: usize,
    pub steps: usize,
    pub mean_sq_y: Vec<f64>,
    pub mean_sq_sigma: Vec<f64>,
    /// Least-squares slope of `ln mean sigma^2` per step over the second half.
    pub slope: f64,
    pub verdict: Verdict,
    pub converged_trials: usize,
    pub diverged_trials: usize,
}

impl DecayReport {
    /// Columns `k, mean_sq_y, mean_sq_sigma`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::arg("output", e.to_string());
        w.write_record(["k", "mean_sq_y", "mean_sq_sigma"])
            .map_err(io)?;
        for (k, (y, s)) in self.mean_sq_y.iter().zip(&self.mean_sq_sigma).enumerate() {
            w.write_record([k.to_string(), y.to_string(), s.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::arg("output", e.to_string()))
    }
}

/// Per-step accumulator: plain sum of `y^2`, and `sum sigma^2` stored as
/// `exp(log_max) * scaled`.
#[derive(Clone, Copy, Debug)]
struct Acc {
    sum_y2: f64,
    log_max: f64,
    scaled: f64,
}

impl Acc {
    const ZERO: Acc = Acc {
        sum_y2: 0.0,
        log_max: f64::NEG_INFINITY,
        scaled: 0.0,
    };

    fn one(y: f64, sigma: f64) -> Acc {
        if sigma.is_infinite() {
            return Acc {
                sum_y2: f64::INFINITY,
                log_max: f64::INFINITY,
                scaled: 1.0,
            };
        }
        Acc {
            sum_y2: y * y,
            log_max: 2.0 * sigma.ln(),
            scaled: 1.0,
        }
    }

    fn combine(a: Acc, b: Acc) -> Acc {
        let log_max = a.log_max.max(b.log_max);
        let part = |x: &Acc| {
            if x.scaled == 0.0 {
                0.0
            } else if x.log_max == log_max {
                x.scaled
            } else {
                x.scaled * (x.log_max - log_max).exp()
            }
        };
        Acc {
            sum_y2: a.sum_y2 + b.sum_y2,
            log_max,
            scaled: part(&a) + part(&b),
        }
    }

    fn ln_sum(&self) -> f64 {
        if self.scaled == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.log_max + self.scaled.ln()
        }
    }
}

fn pairwise(items: &[Vec<Acc>]) -> Vec<Acc> {
    match items.len() {
        0 => Vec::new(),
        1 => items[0].clone(),
        n => {
            let (l, r) = items.split_at(n / 2);
            let (l, r) = (pairwise(l), pairwise(r));
            l.iter()
                .zip(&r)
                .map(|(a, b)| Acc::combine(*a, *b))
                .collect()
        }
    }
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var("RATELIM_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            b = b.num_threads(n);
        }
        b.build().expect("thread pool")
    })
}

/// Runs `f` on the work pool, honoring `RATELIM_THREADS`.
pub fn in_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    pool().install(f)
}

/// One trial under the experiment's seeds.
pub fn run_trial(
    target: &Target,
    channel: &ChannelConfig,
    exp: &Experiment,
    trial: u64,
) -> Result<SimTrace> {
    let mut stream = channel.with_seed(exp.base_seed).stream(trial);
    let mut strategy =
        ParamStrategy::with_stream(exp.strategy.clone(), exp.base_seed ^ STRATEGY_SALT, trial);
    let y0 = match exp.y0 {
        Some(y) => y,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(exp.base_seed ^ Y0_SALT);
            rng.set_stream(trial);
            let b = target.y0_bound();
            rng.random_range(-b..=b)
        }
    };
    match target {
        Target::Plant { plant, quantizer } => run_closed_loop(
            plant,
            *quantizer,
            &mut stream,
            &mut strategy,
            exp.law,
            exp.steps,
            y0,
        ),
        Target::TimeShare { cfg, y0_bound } => run_timeshare_loop(
            cfg,
            *y0_bound,
            exp.law,
            &mut stream,
            &mut strategy,
            exp.steps,
            y0,
        ),
    }
}

fn trial_acc(trace: &SimTrace, steps: usize) -> Vec<Acc> {
    let mut out: Vec<Acc> = trace.steps.iter().map(|s| Acc::one(s.y, s.sigma)).collect();
    let tail = match trace.status {
        LoopStatus::Diverged => Acc::one(f64::INFINITY, f64::INFINITY),
        _ => Acc::ZERO,
    };
    out.resize(steps, tail);
    out
}

/// Averages `exp.trials` trials of `target` over the channel's loss
/// probability (the channel seed is replaced by `exp.base_seed`).
pub fn run_experiment(
    target: &Target,
    channel: &ChannelConfig,
    exp: &Experiment,
) -> Result<DecayReport> {
    if exp.trials == 0 || exp.steps < 2 {
        return Err(Error::arg(
            "trials",
            "need at least one trial and two steps",
        ));
    }
    let blocks: Vec<(usize, usize)> = (0..exp.trials)
        .step_by(BLOCK)
        .map(|s| (s, (s + BLOCK).min(exp.trials)))
        .collect();
    let results: Vec<Result<(Vec<Acc>, usize, usize)>> = in_pool(|| {
        blocks
            .par_iter()
            .map(|&(start, end)| {
                let mut accs = Vec::with_capacity(end - start);
                let (mut conv, mut div) = (0, 0);
                for t in start..end {
                    let trace = run_trial(target, channel, exp, t as u64)?;
                    match trace.status {
                        LoopStatus::Converged => conv += 1,
                        LoopStatus::Diverged => div += 1,
                        LoopStatus::Completed => {}
                    }
                    accs.push(trial_acc(&trace, exp.steps));
                }
                Ok((pairwise(&accs), conv, div))
            })
            .collect()
    });
    let mut block_accs = Vec::with_capacity(results.len());
    let (mut converged, mut diverged) = (0, 0);
    for r in results {
        let (a, c, d) = r?;
        block_accs.push(a);
        converged += c;
        diverged += d;
    }
    let total = pairwise(&block_accs);
    let n = exp.trials as f64;
    let mean_sq_y: Vec<f64> = total.iter().map(|a| a.sum_y2 / n).collect();
    let ln_mean: Vec<f64> = total.iter().map(|a| a.ln_sum() - n.ln()).collect();
    let mean_sq_sigma = ln_mean.iter().map(|l| l.exp()).collect();
    let slope = second_half_slope(&ln_mean);
    let verdict = if diverged > 0 || slope > exp.tol_slope {
        Verdict::Unstable
    } else if slope < -exp.tol_slope {
        Verdict::Stable
    } else {
        Verdict::Inconclusive
    };
    Ok(DecayReport {
        trials: exp.trials,
        steps: exp.steps,
        mean_sq_y,
        mean_sq_sigma,
        slope,
        verdict,
        converged_trials: converged,
        diverged_trials: diverged,
    })
}

/// Least-squares slope of `values[k]` against `k` for `k >= len/2`. An
/// infinite value in the window makes the slope infinite with its sign.
pub fn second_half_slope(values: &[f64]) -> f64 {
    let start = values.len() / 2;
    let window = &values[start..];
    if window.iter().any(|v| *v == f64::INFINITY || v.is_nan()) {
        return f64::INFINITY;
    }
    if window.contains(&f64::NEG_INFINITY) {
        return f64::NEG_INFINITY;
    }
    let m = window.len() as f64;
    if window.len() < 2 {
        return 0.0;
    }
    let kbar = (0..window.len()).map(|k| k as f64).sum::<f64>() / m;
    let vbar = window.iter().sum::<f64>() / m;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, v) in window.iter().enumerate() {
        let dk = k as f64 - kbar;
        num += dk * (v - vbar);
        den += dk * dk;
    }
    num / den
}
