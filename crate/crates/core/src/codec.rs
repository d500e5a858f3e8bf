//! Encoder, decoder and controller of the quantized feedback loop.
//!
//! Both ends of the channel run the same [`CodecState`] recursion from the
//! shared `(gamma, symbol)` history, so the scaling parameter `sigma_k` and the
//! range center `c_k` never need to be transmitted. The encoder quantizes
//! `(y_k - c_k) / sigma_k`; the decoder turns what it received into the cell
//! `Y_k` known to contain `y_k`; the controller applies the certainty
//! equivalent input built from the cell midpoints.
//!
//! Range centering: the set containing `y_{k+1}` is the prediction set
//! translated by `u_k`, whose midpoint is generally nonzero. Tracking that
//! midpoint as `c_{k+1}` keeps the quantizer out of saturation without
//! changing any measure.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelStream;
use crate::error::{Error, Result};
use crate::interval::{minkowski_sum, scale_product, Interval};
use crate::plant::{ParamStrategy, UncertainPlant};

/// Floor applied to `sigma` to stay clear of subnormals.
pub const SIGMA_MIN: f64 = 1e-300;
/// A trial stops as converged once `sigma` drops below this.
pub const CONVERGED_SIGMA: f64 = 1e-150;
/// A trial stops as diverged once `sigma` exceeds this.
pub const DIVERGED_SIGMA: f64 = 1e150;
/// Slack on the quantizer input range, relative to the unit range.
pub const SATURATION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    levels: u64,
}

impl QuantizerSpec {
    pub fn new(levels: u64) -> Result<Self> {
        if levels == 0 {
            return Err(Error::arg("N", "quantizer needs at least one level"));
        }
        Ok(QuantizerSpec { levels })
    }

    pub fn levels(&self) -> u64 {
        self.levels
    }

    /// Bits per packet, `log2 N`.
    pub fn rate_bits(&self) -> f64 {
        (self.levels as f64).log2()
    }
}

/// `N`-level uniform quantizer on `[-1/2, 1/2]`. Cells are half-open except
/// the top one, which is closed.
pub fn quantize(levels: u64, v: f64) -> Result<u64> {
    if v.is_nan() || v.abs() > 0.5 + SATURATION_TOL {
        return Err(Error::Saturation { step: 0, value: v });
    }
    let idx = ((v + 0.5) * levels as f64).floor();
    Ok((idx.max(0.0) as u64).min(levels - 1))
}

/// Cell of the range `[center - sigma/2, center + sigma/2]` selected by
/// `symbol`, or the whole range when the packet was lost (`None`).
pub fn decode_cell(levels: u64, sigma: f64, center: f64, symbol: Option<u64>) -> Result<Interval> {
    let half = sigma / 2.0;
    match symbol {
        None => Ok(Interval::new(center - half, center + half)),
        Some(i) if i >= levels => Err(Error::SymbolOutOfRange { symbol: i, levels }),
        Some(i) if i == levels - 1 => Ok(Interval::new(
            center + half - sigma / levels as f64,
            center + half,
        )),
        Some(i) => {
            let step = sigma / levels as f64;
            Ok(Interval::new(
                center - half + step * i as f64,
                center - half + step * (i + 1) as f64,
            ))
        }
    }
}

/// Cell of width `sigma / level` containing the normalized input `v`, for a
/// possibly fractional `level >= 1`. The top cell is anchored at the upper
/// end of the range, mirroring the integer quantizer, so every cell has the
/// same measure. Returns the cell index and the interval.
pub fn fractional_cell(level: f64, sigma: f64, center: f64, v: f64) -> Result<(u64, Interval)> {
    if v.is_nan() || v.abs() > 0.5 + SATURATION_TOL {
        return Err(Error::Saturation { step: 0, value: v });
    }
    let count = level.ceil().max(1.0) as u64;
    let idx = (((v + 0.5) * level).floor().max(0.0) as u64).min(count - 1);
    Ok((idx, fractional_cell_at(level, sigma, center, idx)))
}

/// Cell `idx` of the fractional quantizer.
pub fn fractional_cell_at(level: f64, sigma: f64, center: f64, idx: u64) -> Interval {
    let count = level.ceil().max(1.0) as u64;
    let width = sigma / level;
    let half = sigma / 2.0;
    let lo = if idx >= count - 1 {
        center + half - width
    } else {
        center - half + width * idx as f64
    };
    Interval::new(lo, lo + width)
}

/// Moves `idx` to a neighbor when rounding in the normalization placed `y`
/// just outside the cell it selected. `cell_at` maps an index to its cell.
pub(crate) fn settle_index(y: f64, idx: u64, count: u64, cell_at: impl Fn(u64) -> Interval) -> u64 {
    let cell = cell_at(idx);
    if y < cell.lo() && idx > 0 && cell_at(idx - 1).hi() >= y {
        idx - 1
    } else if y > cell.hi() && idx + 1 < count && cell_at(idx + 1).lo() <= y {
        idx + 1
    } else {
        idx
    }
}

/// Outward padding for a predicted range. `magnitude` bounds the absolute
/// size of the terms the plant update and the cell endpoints were computed
/// from and `terms` counts the roundings, so that an output inside its cell
/// stays inside the next range despite rounding.
pub fn rounding_pad(magnitude: f64, terms: usize) -> f64 {
    16.0 * (terms as f64 + 2.0) * f64::EPSILON * magnitude
}

/// `iv` widened by `pad` on both sides.
pub fn pad_outward(iv: &Interval, pad: f64) -> Interval {
    Interval::new(iv.lo() - pad, iv.hi() + pad)
}

fn magnitude(iv: &Interval) -> f64 {
    iv.lo().abs().max(iv.hi().abs())
}

/// Prediction set `sum_i A_i * Y_{k-i+1}` where `cells[i-1]` is `Y_{k-i+1}`.
/// Its measure is the sum of the product measures.
pub fn predict(plant: &UncertainPlant, cells: &[Interval]) -> Interval {
    debug_assert_eq!(cells.len(), plant.order());
    cells
        .iter()
        .enumerate()
        .map(|(i, y)| scale_product(&plant.uncertainty_box(i + 1), y))
        .fold(Interval::point(0.0), |acc, t| minkowski_sum(&acc, &t))
}

/// Certainty-equivalent input `-sum_i a_i* yhat_{k-i+1}` from cell midpoints.
pub fn control(plant: &UncertainPlant, cells: &[Interval]) -> f64 {
    -plant
        .a_star()
        .iter()
        .zip(cells)
        .map(|(a, y)| a * y.midpoint())
        .sum::<f64>()
}

/// Next scaling parameter and range center from the prediction set and the
/// applied input.
pub fn advance_scaling(prediction: &Interval, u: f64) -> (f64, f64) {
    (
        prediction.measure().max(SIGMA_MIN),
        prediction.midpoint() + u,
    )
}

/// Which input the controller applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlLaw {
    /// `u_k = -sum a_i* yhat_{k-i+1}`; the next range is re-centered instead.
    #[default]
    Nominal,
    /// `u_k = -midpoint(prediction)`, so every range stays centered at zero.
    Centering,
}

impl std::str::FromStr for ControlLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(ControlLaw::Nominal),
            "centering" => Ok(ControlLaw::Centering),
            _ => Err(Error::arg(
                "control-law",
                format!("unknown law `{s}` (nominal, centering)"),
            )),
        }
    }
}

/// Shared encoder/decoder state.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecState {
    levels: u64,
    sigma: f64,
    center: f64,
    /// Most recent first: `cells[0]` is `Y_k`.
    cells: VecDeque<Interval>,
}

/// What one codec update produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecStep {
    pub cell: Interval,
    pub prediction: Interval,
    pub u: f64,
}

impl CodecState {
    /// Range `[-sigma0/2, sigma0/2]`; pre-initial cells are `{0}`.
    pub fn initial(plant: &UncertainPlant, quantizer: QuantizerSpec, sigma0: f64) -> Self {
        CodecState {
            levels: quantizer.levels(),
            sigma: sigma0,
            center: 0.0,
            cells: std::iter::repeat_n(Interval::point(0.0), plant.order()).collect(),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn range(&self) -> Interval {
        Interval::centered(self.center, self.sigma)
    }

    pub fn cells(&self) -> &VecDeque<Interval> {
        &self.cells
    }

    /// Consumes `gamma_k` and the symbol (ignored on loss), then advances
    /// `sigma` and the center to step `k+1`.
    pub fn update(
        &mut self,
        plant: &UncertainPlant,
        law: ControlLaw,
        gamma: u8,
        symbol: u64,
    ) -> Result<CodecStep> {
        let received = (gamma == 1).then_some(symbol);
        let cell = decode_cell(self.levels, self.sigma, self.center, received)?;
        let range_mag = self.center.abs() + self.sigma;
        self.cells.push_front(cell);
        self.cells.truncate(plant.order());
        let cells = self.cells.make_contiguous();
        let prediction = predict(plant, cells);
        let u = match law {
            ControlLaw::Nominal => control(plant, cells),
            ControlLaw::Centering => -prediction.midpoint(),
        };
        let boxes = (1..=plant.order()).map(|i| plant.uncertainty_box(i));
        let mag: f64 = boxes
            .zip(cells.iter())
            .map(|(a, y)| magnitude(&a) * (magnitude(y) + range_mag))
            .sum::<f64>()
            + u.abs()
            + magnitude(&prediction);
        let padded = pad_outward(&prediction, rounding_pad(mag, plant.order()));
        let (sigma, center) = advance_scaling(&padded, u);
        self.sigma = sigma;
        self.center = center;
        Ok(CodecStep {
            cell,
            prediction,
            u,
        })
    }
}

/// Plant-side half: sees `y_k`, learns `gamma_k` by acknowledgement.
#[derive(Clone, Debug)]
pub struct Encoder {
    state: CodecState,
    law: ControlLaw,
}

impl Encoder {
    pub fn new(state: CodecState, law: ControlLaw) -> Self {
        Encoder { state, law }
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    pub fn encode(&self, y: f64) -> Result<u64> {
        let st = &self.state;
        let idx = quantize(st.levels, (y - st.center) / st.sigma)?;
        Ok(settle_index(y, idx, st.levels, |i| {
            decode_cell(st.levels, st.sigma, st.center, Some(i)).expect("index in range")
        }))
    }

    pub fn acknowledge(
        &mut self,
        plant: &UncertainPlant,
        gamma: u8,
        sent: u64,
    ) -> Result<CodecStep> {
        self.state.update(plant, self.law, gamma, sent)
    }
}

/// Controller-side half: sees only `gamma_k * s_k`.
#[derive(Clone, Debug)]
pub struct Decoder {
    state: CodecState,
    law: ControlLaw,
}

impl Decoder {
    pub fn new(state: CodecState, law: ControlLaw) -> Self {
        Decoder { state, law }
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    /// `packet` is `None` on loss.
    pub fn receive(&mut self, plant: &UncertainPlant, packet: Option<u64>) -> Result<CodecStep> {
        match packet {
            Some(s) => self.state.update(plant, self.law, 1, s),
            None => self.state.update(plant, self.law, 0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopStatus {
    /// Ran the full horizon.
    Completed,
    Converged,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub k: usize,
    pub y: f64,
    pub sigma: f64,
    pub center: f64,
    pub gamma: u8,
    pub u: f64,
    pub symbol: u64,
    pub cell: Interval,
}

/// Per-step record of one closed-loop trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub steps: Vec<TraceStep>,
    pub status: LoopStatus,
    /// `sigma` after the last recorded step.
    pub final_sigma: f64,
}

impl SimTrace {
    /// Columns `k, y, sigma, gamma, u, symbol, cell_lo, cell_hi`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::arg("output", e.to_string());
        w.write_record([
            "k", "y", "sigma", "gamma", "u", "symbol", "cell_lo", "cell_hi",
        ])
        .map_err(io)?;
        for s in &self.steps {
            w.write_record([
                s.k.to_string(),
                s.y.to_string(),
                s.sigma.to_string(),
                s.gamma.to_string(),
                s.u.to_string(),
                s.symbol.to_string(),
                s.cell.lo().to_string(),
                s.cell.hi().to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::arg("output", e.to_string()))
    }
}

/// Initial range for `|y0| <= Y0`: `sigma_0 = 2 Y0`, i.e. `[-Y0, Y0]`.
pub fn initial_sigma(plant: &UncertainPlant) -> f64 {
    2.0 * plant.y0_bound()
}

/// Runs the synchronized loop for `steps` steps from `y0`.
pub fn run_closed_loop(
    plant: &UncertainPlant,
    quantizer: QuantizerSpec,
    channel: &mut ChannelStream,
    strategy: &mut ParamStrategy,
    law: ControlLaw,
    steps: usize,
    y0: f64,
) -> Result<SimTrace> {
    if y0.abs() > plant.y0_bound() {
        return Err(Error::arg(
            "y0",
            format!("|y0| = {} exceeds the bound {}", y0.abs(), plant.y0_bound()),
        ));
    }
    let n = plant.order();
    let state = CodecState::initial(plant, quantizer, initial_sigma(plant));
    let mut encoder = Encoder::new(state.clone(), law);
    let mut decoder = Decoder::new(state, law);
    // outputs, most recent first
    let mut history: VecDeque<f64> = std::iter::once(y0)
        .chain(std::iter::repeat_n(0.0, n - 1))
        .collect();
    let mut trace = Vec::with_capacity(steps);
    let mut status = LoopStatus::Completed;

    for k in 0..steps {
        let y = history[0];
        let sigma = encoder.state().sigma();
        let center = encoder.state().center();
        let symbol = encoder.encode(y).map_err(|e| at_step(e, k))?;
        let gamma = channel.draw(k as u64);
        let packet = (gamma == 1).then_some(symbol);
        let rx = decoder.receive(plant, packet)?;
        encoder.acknowledge(plant, gamma, symbol)?;
        debug_assert_eq!(encoder.state(), decoder.state());

        if !rx.cell.contains_within(y, SATURATION_TOL * sigma) {
            return Err(Error::Saturation {
                step: k,
                value: (y - center) / sigma,
            });
        }
        trace.push(TraceStep {
            k,
            y,
            sigma,
            center,
            gamma,
            u: rx.u,
            symbol,
            cell: rx.cell,
        });

        let hist = history.make_contiguous();
        let params = strategy.realize(plant, |a| plant.step_unchecked(hist, rx.u, a));
        let y_next = plant.step(hist, rx.u, &params)?;
        history.push_front(y_next);
        history.truncate(n);

        let next_sigma = decoder.state().sigma();
        if next_sigma < CONVERGED_SIGMA {
            status = LoopStatus::Converged;
            break;
        }
        if next_sigma > DIVERGED_SIGMA {
            status = LoopStatus::Diverged;
            break;
        }
    }
    Ok(SimTrace {
        steps: trace,
        status,
        final_sigma: decoder.state().sigma(),
    })
}

fn at_step(e: Error, k: usize) -> Error {
    match e {
        Error::Saturation { value, .. } => Error::Saturation { step: k, value },
        other => other,
    }
}
