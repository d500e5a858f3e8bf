//! The uncertain autoregressive plant
//! `y_{k+1} = a_{1,k} y_k + ... + a_{n,k} y_{k-n+1} + u_k`,
//! with `a_{i,k}` anywhere in `[a_i* - eps_i, a_i* + eps_i]` at every step.

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainPlant {
    a_star: Vec<f64>,
    eps: Vec<f64>,
    y0_bound: f64,
}

impl UncertainPlant {
    /// `a_star[i-1]` is `a_i*`. Rejects plants with `|a_n*| - eps_n <= 1`.
    pub fn new(a_star: Vec<f64>, eps: Vec<f64>, y0_bound: f64) -> Result<Self> {
        if a_star.is_empty() {
            return Err(Error::InvalidPlant("order must be at least 1".into()));
        }
        if a_star.len() != eps.len() {
            return Err(Error::InvalidPlant(format!(
                "{} nominal coefficients but {} uncertainty radii",
                a_star.len(),
                eps.len()
            )));
        }
        if a_star.iter().chain(eps.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPlant("coefficients must be finite".into()));
        }
        if let Some(i) = eps.iter().position(|&e| e < 0.0) {
            return Err(Error::InvalidPlant(format!(
                "eps_{} = {} is negative",
                i + 1,
                eps[i]
            )));
        }
        if !(y0_bound > 0.0 && y0_bound.is_finite()) {
            return Err(Error::InvalidPlant(format!(
                "initial bound Y0 = {y0_bound} must be positive"
            )));
        }
        let n = a_star.len();
        let margin = a_star[n - 1].abs() - eps[n - 1];
        if margin <= 1.0 {
            return Err(Error::InvalidPlant(format!(
                "|a_{n}*| - eps_{n} = {margin} must exceed 1"
            )));
        }
        Ok(UncertainPlant {
            a_star,
            eps,
            y0_bound,
        })
    }

    pub fn scalar(a_star: f64, eps: f64, y0_bound: f64) -> Result<Self> {
        Self::new(vec![a_star], vec![eps], y0_bound)
    }

    pub fn order(&self) -> usize {
        self.a_star.len()
    }

    pub fn a_star(&self) -> &[f64] {
        &self.a_star
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn y0_bound(&self) -> f64 {
        self.y0_bound
    }

    /// `A_i = [a_i* - eps_i, a_i* + eps_i]` for `i` in `1..=n`.
    pub fn uncertainty_box(&self, i: usize) -> Interval {
        Interval::uncertainty(self.a_star[i - 1], self.eps[i - 1])
    }

    /// Product of the nominal eigenvalues, which for the companion form is `a_n*`.
    pub fn lambda_pi(&self) -> f64 {
        self.a_star[self.order() - 1]
    }

    /// Copy with `a_n*` replaced, keeping its sign convention to the caller.
    pub fn with_lambda_pi(&self, a_n: f64) -> Result<Self> {
        let mut a = self.a_star.clone();
        *a.last_mut().unwrap() = a_n;
        Self::new(a, self.eps.clone(), self.y0_bound)
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.order() {
            return Err(Error::arg(
                "params",
                format!(
                    "expected {} coefficients, got {}",
                    self.order(),
                    params.len()
                ),
            ));
        }
        for (i, &a) in params.iter().enumerate() {
            let b = self.uncertainty_box(i + 1);
            if !b.contains(a) {
                return Err(Error::ParamOutOfBox {
                    index: i + 1,
                    value: a,
                    lo: b.lo(),
                    hi: b.hi(),
                });
            }
        }
        Ok(())
    }

    /// One step of the recursion. `history[i]` holds `y_{k-i}` (most recent
    /// first); missing pre-initial entries count as zero.
    pub fn step(&self, history: &[f64], u: f64, params: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        Ok(self.step_unchecked(history, u, params))
    }

    pub(crate) fn step_unchecked(&self, history: &[f64], u: f64, params: &[f64]) -> f64 {
        params
            .iter()
            .zip(history.iter())
            .map(|(a, y)| a * y)
            .sum::<f64>()
            + u
    }

    /// Companion matrix with last row `(a_n, ..., a_1)`.
    pub fn companion(params: &[f64]) -> DMatrix<f64> {
        let n = params.len();
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n.saturating_sub(1) {
            m[(r, r + 1)] = 1.0;
        }
        for (i, a) in params.iter().enumerate() {
            m[(n - 1, n - 1 - i)] = *a;
        }
        m
    }

    /// Samples the uncertainty box (all vertices plus a `grid`-per-axis lattice)
    /// and reports every sampled parameter vector with an eigenvalue of
    /// modulus at most one. Diagnostic only.
    pub fn check_unstable_assumption(&self, grid: usize) -> Vec<StabilityViolation> {
        let n = self.order();
        let grid = grid.max(1);
        let axis = |i: usize, g: usize, steps: usize| -> f64 {
            let b = self.uncertainty_box(i + 1);
            if steps == 1 {
                self.a_star[i]
            } else {
                b.lo() + (b.hi() - b.lo()) * g as f64 / (steps - 1) as f64
            }
        };
        let mut samples: Vec<Vec<f64>> = Vec::new();
        for mask in 0..(1usize << n) {
            samples.push(
                (0..n)
                    .map(|i| {
                        let b = self.uncertainty_box(i + 1);
                        if mask >> i & 1 == 1 {
                            b.hi()
                        } else {
                            b.lo()
                        }
                    })
                    .collect(),
            );
        }
        let total = grid.pow(n as u32);
        for idx in 0..total {
            let mut rem = idx;
            let p: Vec<f64> = (0..n)
                .map(|i| {
                    let g = rem % grid;
                    rem /= grid;
                    axis(i, g, grid)
                })
                .collect();
            samples.push(p);
        }
        samples
            .into_iter()
            .filter_map(|params| {
                let min_modulus = Self::companion(&params)
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.norm())
                    .fold(f64::INFINITY, f64::min);
                (min_modulus <= 1.0).then_some(StabilityViolation {
                    params,
                    min_modulus,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityViolation {
    pub params: Vec<f64>,
    pub min_modulus: f64,
}

/// How the time-varying coefficients are chosen in simulation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    Nominal,
    /// `true` selects `a_i* + eps_i`, `false` selects `a_i* - eps_i`.
    FixedVertex(Vec<bool>),
    IidUniform,
    /// Per step, the vertex that maximizes `|y_{k+1}|`.
    GreedyAdversarial,
}

impl StrategyKind {
    pub fn name(&self) -> String {
        match self {
            StrategyKind::Nominal => "nominal".into(),
            StrategyKind::FixedVertex(signs) => {
                let s: String = signs.iter().map(|&b| if b { '+' } else { '-' }).collect();
                format!("vertex:{s}")
            }
            StrategyKind::IidUniform => "iid".into(),
            StrategyKind::GreedyAdversarial => "greedy".into(),
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(StrategyKind::Nominal),
            "iid" | "uniform" => Ok(StrategyKind::IidUniform),
            "greedy" | "adversarial" => Ok(StrategyKind::GreedyAdversarial),
            _ => {
                if let Some(signs) = s.strip_prefix("vertex:") {
                    let v: Option<Vec<bool>> = signs
                        .chars()
                        .map(|c| match c {
                            '+' => Some(true),
                            '-' => Some(false),
                            _ => None,
                        })
                        .collect();
                    match v {
                        Some(v) if !v.is_empty() => Ok(StrategyKind::FixedVertex(v)),
                        _ => Err(Error::arg(
                            "strategy",
                            format!("bad sign pattern `{signs}`"),
                        )),
                    }
                } else {
                    Err(Error::arg(
                        "strategy",
                        format!("unknown strategy `{s}` (nominal, vertex:+-.., iid, greedy)"),
                    ))
                }
            }
        }
    }
}

/// A strategy instance with its own generator; use one per trial.
#[derive(Clone, Debug)]
pub struct ParamStrategy {
    kind: StrategyKind,
    rng: ChaCha8Rng,
}

impl ParamStrategy {
    pub fn new(kind: StrategyKind, seed: u64) -> Self {
        ParamStrategy {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for trial `stream` under the same seed.
    pub fn with_stream(kind: StrategyKind, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        ParamStrategy { kind, rng }
    }

    pub fn kind(&self) -> &StrategyKind {
        &self.kind
    }

    /// Realizes one step's coefficients. `next_output` evaluates `y_{k+1}` for
    /// a candidate coefficient vector and is only consulted by the greedy
    /// strategy.
    pub fn realize<F>(&mut self, plant: &UncertainPlant, next_output: F) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let n = plant.order();
        match &self.kind {
            StrategyKind::Nominal => plant.a_star().to_vec(),
            StrategyKind::FixedVertex(signs) => (0..n)
                .map(|i| {
                    let b = plant.uncertainty_box(i + 1);
                    // a short pattern repeats its last sign
                    let up = signs.get(i).or(signs.last()).copied().unwrap_or(true);
                    if up {
                        b.hi()
                    } else {
                        b.lo()
                    }
                })
                .collect(),
            StrategyKind::IidUniform => (0..n)
                .map(|i| {
                    let b = plant.uncertainty_box(i + 1);
                    if b.measure() == 0.0 {
                        b.lo()
                    } else {
                        Uniform::new_inclusive(b.lo(), b.hi())
                            .expect("finite box")
                            .sample(&mut self.rng)
                    }
                })
                .collect(),
            StrategyKind::GreedyAdversarial => {
                // y_{k+1} is affine in the coefficients, so |y_{k+1}| peaks at
                // one of the two vertices that push every coordinate the same way
                let nominal = plant.a_star().to_vec();
                let base = next_output(&nominal);
                let mut up = nominal.clone();
                let mut down = nominal.clone();
                for i in 0..n {
                    let b = plant.uncertainty_box(i + 1);
                    let mut probe = nominal.clone();
                    probe[i] = b.hi();
                    let rising = next_output(&probe) >= base;
                    up[i] = if rising { b.hi() } else { b.lo() };
                    down[i] = if rising { b.lo() } else { b.hi() };
                }
                if next_output(&up).abs() >= next_output(&down).abs() {
                    up
                } else {
                    down
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant2() -> UncertainPlant {
        UncertainPlant::new(vec![1.0, 2.5], vec![0.05, 0.05], 1.0).unwrap()
    }

    #[test]
    fn lambda_pi_is_last_coefficient() {
        assert_eq!(plant2().lambda_pi(), 2.5);
        assert_eq!(
            UncertainPlant::scalar(3.3, 0.025, 1.0).unwrap().lambda_pi(),
            3.3
        );
        let neg = UncertainPlant::new(vec![1.0, -2.5], vec![0.05, 0.05], 1.0).unwrap();
        assert_eq!(neg.lambda_pi(), -2.5);
    }

    #[test]
    fn construction_rejects_weak_last_coefficient() {
        assert!(matches!(
            UncertainPlant::scalar(1.5, 0.6, 1.0),
            Err(Error::InvalidPlant(_))
        ));
        assert!(UncertainPlant::scalar(2.0, 1.0, 1.0).is_err());
        assert!(UncertainPlant::scalar(3.0, -0.1, 1.0).is_err());
        assert!(UncertainPlant::scalar(3.0, 0.1, 0.0).is_err());
        assert!(UncertainPlant::new(vec![1.0, 3.0], vec![0.1], 1.0).is_err());
    }

    #[test]
    fn step_examples() {
        let p = UncertainPlant::scalar(2.0, 0.0, 1.0).unwrap();
        assert_eq!(p.step(&[1.0], -2.0, &[2.0]).unwrap(), 0.0);
        let p = UncertainPlant::new(vec![1.0, 2.0], vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(p.step(&[1.0, 1.0], 0.0, &[1.0, 2.0]).unwrap(), 3.0);
        assert_eq!(plant2().step(&[0.0, 0.0], 0.0, &[1.05, 2.45]).unwrap(), 0.0);
    }

    #[test]
    fn step_rejects_params_outside_box() {
        let err = plant2().step(&[1.0, 1.0], 0.0, &[1.0, 2.6]).unwrap_err();
        assert!(matches!(err, Error::ParamOutOfBox { index: 2, .. }));
    }

    #[test]
    fn step_is_affine_in_input() {
        let p = plant2();
        let h = [0.3, -0.7];
        let params = [1.02, 2.47];
        for u in [-3.0, 0.0, 0.5, 1e-3] {
            let d = p.step(&h, u, &params).unwrap() - p.step(&h, 0.0, &params).unwrap();
            assert!((d - u).abs() <= 1e-15 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn nominal_and_vertex_strategies() {
        let p = plant2();
        let mut s = ParamStrategy::new(StrategyKind::Nominal, 0);
        assert_eq!(s.realize(&p, |_| 0.0), vec![1.0, 2.5]);
        let mut s = ParamStrategy::new(StrategyKind::FixedVertex(vec![true, true]), 0);
        assert_eq!(s.realize(&p, |_| 0.0), vec![1.05, 2.55]);
        let mut s = ParamStrategy::new(StrategyKind::FixedVertex(vec![false, true]), 0);
        assert_eq!(s.realize(&p, |_| 0.0), vec![0.95, 2.55]);
    }

    #[test]
    fn greedy_enlarges_next_output() {
        let p = plant2();
        let history = [1.0, -1.0];
        let next = |a: &[f64]| p.step_unchecked(&history, 0.0, a);
        let mut s = ParamStrategy::new(StrategyKind::GreedyAdversarial, 0);
        let chosen = s.realize(&p, next);
        // compare against all four vertices
        let best = [[0.95, 2.45], [0.95, 2.55], [1.05, 2.45], [1.05, 2.55]]
            .iter()
            .map(|a| next(a).abs())
            .fold(0.0, f64::max);
        assert_eq!(next(&chosen).abs(), best);
        assert_eq!(chosen, vec![0.95, 2.55]);
    }

    #[test]
    fn iid_is_reproducible_and_in_box() {
        let p = plant2();
        let draw = |seed| {
            let mut s = ParamStrategy::new(StrategyKind::IidUniform, seed);
            (0..100).map(|_| s.realize(&p, |_| 0.0)).collect::<Vec<_>>()
        };
        let a = draw(7);
        assert_eq!(a, draw(7));
        assert_ne!(a, draw(8));
        for params in &a {
            p.check_params(params).unwrap();
        }
    }

    #[test]
    fn strategy_names_parse_back() {
        for k in [
            StrategyKind::Nominal,
            StrategyKind::IidUniform,
            StrategyKind::GreedyAdversarial,
            StrategyKind::FixedVertex(vec![true, false, true]),
        ] {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("vertex:".parse::<StrategyKind>().is_err());
        assert!("random".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn unstable_assumption_scalar() {
        let p = UncertainPlant::scalar(3.3, 0.025, 1.0).unwrap();
        assert!(p.check_unstable_assumption(7).is_empty());
    }

    #[test]
    fn unstable_assumption_second_order() {
        // z^2 - a1 z - a2 with a2 near 2.5 keeps both roots outside the unit disk
        assert!(plant2().check_unstable_assumption(5).is_empty());
        // a1 = 1, a2 = 1.5 has a root at (1 - sqrt 7)/2, inside the disk
        let p = UncertainPlant::new(vec![1.0, 1.5], vec![0.05, 0.05], 1.0).unwrap();
        let v = p.check_unstable_assumption(3);
        assert!(!v.is_empty());
        assert!(v.iter().all(|d| d.min_modulus <= 1.0));
    }

    #[test]
    fn companion_layout() {
        let m = UncertainPlant::companion(&[1.0, 2.0, 3.0]);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(1, 2)], 1.0);
        assert_eq!(m[(2, 0)], 3.0);
        assert_eq!(m[(2, 2)], 1.0);
    }
}
