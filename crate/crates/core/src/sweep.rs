//! Parameter grids over `lambda` (the last coefficient `a_n*`), `p`, `N` and
//! the cycle length `m`, tabulated as CSV.

use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::channel::ChannelConfig;
use crate::codec::QuantizerSpec;
use crate::error::{Error, Result};
use crate::limits::necessary_bounds;
use crate::mjls::{min_sufficient_n, min_sufficient_rate, rho_at};
use crate::montecarlo::{run_experiment, Experiment, Target, Verdict};
use crate::plant::UncertainPlant;
use crate::timeshare::{timeshare_row, TimeShareConfig, TimeShareRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SweepVar {
    Lambda,
    P,
    N,
    M,
}

impl SweepVar {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::Lambda => "lambda",
            SweepVar::P => "p",
            SweepVar::N => "N",
            SweepVar::M => "m",
        }
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" | "a-n" => Ok(SweepVar::Lambda),
            "p" => Ok(SweepVar::P),
            "N" | "levels" => Ok(SweepVar::N),
            "m" => Ok(SweepVar::M),
            _ => Err(Error::arg(
                "var",
                format!("unknown sweep variable `{s}` (lambda, p, N, m)"),
            )),
        }
    }
}

/// `lo:hi:step`, inclusive of `hi` up to roundoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridRange {
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.lo + self.step * i as f64).collect()
    }
}

impl FromStr for GridRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::arg("range", format!("`{s}` is not lo:hi:step"));
        let parts: Vec<f64> = s
            .split(':')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [lo, hi, step] = parts[..] else {
            return Err(bad());
        };
        if !(lo.is_finite() && hi.is_finite() && step.is_finite() && step > 0.0 && hi >= lo) {
            return Err(bad());
        }
        if (hi - lo) / step > 1e6 {
            return Err(Error::arg(
                "range",
                format!("`{s}` has more than a million points"),
            ));
        }
        Ok(GridRange { lo, hi, step })
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub plant: UncertainPlant,
    pub p: f64,
    pub levels: Option<u64>,
    pub m: Option<u32>,
    /// One or two swept variables.
    pub vars: Vec<(SweepVar, GridRange)>,
    /// Cap on the integer level search.
    pub n_max: u64,
    /// Runs the Monte Carlo verdict at each point when present.
    pub empirical: Option<Experiment>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlantRow {
    pub grid: Vec<f64>,
    pub r_nec0: Option<f64>,
    pub r_nec1: Option<f64>,
    pub r_nec: Option<f64>,
    pub p_nec: f64,
    pub rho_f: Option<f64>,
    pub min_n: Option<u64>,
    /// Smallest sufficient rate over real levels.
    pub r_suf: Option<f64>,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleRow {
    pub grid: Vec<f64>,
    pub row: TimeShareRow,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SweepTable {
    Plant {
        vars: Vec<SweepVar>,
        rows: Vec<PlantRow>,
    },
    TimeShare {
        vars: Vec<SweepVar>,
        rows: Vec<CycleRow>,
    },
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn rate(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "inf".into())
}

fn verdict_str(v: Option<Verdict>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::arg("output", e.to_string());
        match self {
            SweepTable::Plant { vars, rows } => {
                let mut head: Vec<&str> = vars.iter().map(|v| v.name()).collect();
                head.extend([
                    "r_nec0", "r_nec1", "r_nec", "p_nec", "rho_F", "min_N", "r_suf", "verdict",
                ]);
                w.write_record(&head).map_err(io)?;
                for r in rows {
                    let mut rec: Vec<String> = r.grid.iter().map(|g| g.to_string()).collect();
                    rec.extend([
                        rate(r.r_nec0),
                        rate(r.r_nec1),
                        rate(r.r_nec),
                        r.p_nec.to_string(),
                        opt(r.rho_f),
                        opt(r.min_n),
                        rate(r.r_suf),
                        verdict_str(r.verdict),
                    ]);
                    w.write_record(&rec).map_err(io)?;
                }
            }
            SweepTable::TimeShare { vars, rows } => {
                let mut head: Vec<&str> = vars
                    .iter()
                    .filter(|v| **v != SweepVar::M)
                    .map(|v| v.name())
                    .collect();
                head.extend([
                    "m",
                    "delta_plus",
                    "delta_minus",
                    "kappa_bar",
                    "r_bar",
                    "feasible",
                    "min_total_level",
                    "avg_level",
                    "verdict",
                ]);
                w.write_record(&head).map_err(io)?;
                for r in rows {
                    let mut rec: Vec<String> = vars
                        .iter()
                        .zip(&r.grid)
                        .filter(|(v, _)| **v != SweepVar::M)
                        .map(|(_, g)| g.to_string())
                        .collect();
                    rec.extend(timeshare_record(&r.row));
                    rec.push(verdict_str(r.verdict));
                    w.write_record(&rec).map_err(io)?;
                }
            }
        }
        w.flush().map_err(|e| Error::arg("output", e.to_string()))
    }
}

/// The timeshare CSV fields of one row, `m` through `avg_level`.
pub fn timeshare_record(r: &TimeShareRow) -> Vec<String> {
    vec![
        r.m.to_string(),
        r.delta_plus.to_string(),
        r.delta_minus.to_string(),
        opt(r.kappa_bar),
        rate(r.r_bar),
        r.feasible.to_string(),
        opt(r.min_total_level),
        opt(r.avg_level),
    ]
}

fn as_level(v: f64) -> Result<u64> {
    if v.fract() != 0.0 || v < 1.0 {
        return Err(Error::arg(
            "range",
            format!("N must be a positive integer, got {v}"),
        ));
    }
    Ok(v as u64)
}

fn as_cycle(v: f64) -> Result<u32> {
    if v.fract() != 0.0 || v < 1.0 {
        return Err(Error::arg(
            "range",
            format!("m must be a positive integer, got {v}"),
        ));
    }
    Ok(v as u32)
}

fn grid_points(vars: &[(SweepVar, GridRange)]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for (_, r) in vars {
        let vals = r.values();
        points = points
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    points
}

pub fn sweep(spec: &SweepSpec) -> Result<SweepTable> {
    if spec.vars.is_empty() || spec.vars.len() > 2 {
        return Err(Error::arg("var", "sweep one or two variables"));
    }
    let names: Vec<SweepVar> = spec.vars.iter().map(|(v, _)| *v).collect();
    if names.len() == 2 && names[0] == names[1] {
        return Err(Error::arg("var", "sweep variables must differ"));
    }
    let cycles = names.contains(&SweepVar::M) || spec.m.is_some();
    if cycles && spec.plant.order() != 1 {
        return Err(Error::arg("m", "cycle sweeps need a scalar plant"));
    }

    let mut plant_rows = Vec::new();
    let mut cycle_rows = Vec::new();
    for point in grid_points(&spec.vars) {
        let mut plant = spec.plant.clone();
        let mut p = spec.p;
        let mut levels = spec.levels;
        let mut m = spec.m;
        for ((var, _), v) in spec.vars.iter().zip(&point) {
            match var {
                SweepVar::Lambda => plant = plant.with_lambda_pi(*v)?,
                SweepVar::P => p = *v,
                SweepVar::N => levels = Some(as_level(*v)?),
                SweepVar::M => m = Some(as_cycle(*v)?),
            }
        }
        let channel = ChannelConfig::new(p, 0)?;
        if cycles {
            let m = m.unwrap_or(1);
            let (a, e) = (plant.a_star()[0], plant.eps()[0]);
            let row = timeshare_row(a, e, p, m, levels.map(|n| n as f64), spec.n_max)?;
            let total = levels.map(|n| n.pow(m)).or(row.min_total_level);
            let verdict = match (&spec.empirical, total) {
                (Some(exp), Some(t)) => {
                    let cfg = TimeShareConfig::with_total_level(a, e, m, t, p)?;
                    let target = Target::TimeShare {
                        cfg,
                        y0_bound: plant.y0_bound(),
                    };
                    Some(run_experiment(&target, &channel, exp)?.verdict)
                }
                _ => None,
            };
            cycle_rows.push(CycleRow {
                grid: point,
                row,
                verdict,
            });
        } else {
            let nb = necessary_bounds(plant.lambda_pi().abs(), *plant.eps().last().unwrap(), p)?;
            let min = min_sufficient_n(&plant, p, spec.n_max)?;
            let rho_f = match levels {
                Some(n) if n >= 2 => Some(rho_at(&plant, n as f64, p)?),
                Some(_) => None,
                None => min.levels.map(|_| min.rho),
            };
            let r_suf = min_sufficient_rate(&plant, p)?;
            let verdict = match (&spec.empirical, levels.or(min.levels)) {
                (Some(exp), Some(n)) => {
                    let target = Target::Plant {
                        plant: plant.clone(),
                        quantizer: QuantizerSpec::new(n)?,
                    };
                    Some(run_experiment(&target, &channel, exp)?.verdict)
                }
                _ => None,
            };
            plant_rows.push(PlantRow {
                grid: point,
                r_nec0: nb.r_nec0,
                r_nec1: nb.r_nec1,
                r_nec: nb.r_nec,
                p_nec: nb.p_nec,
                rho_f,
                min_n: min.levels,
                r_suf,
                verdict,
            });
        }
    }
    Ok(if cycles {
        SweepTable::TimeShare {
            vars: names,
            rows: cycle_rows,
        }
    } else {
        SweepTable::Plant {
            vars: names,
            rows: plant_rows,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        let r: GridRange = "1.5:4.3:0.1".parse().unwrap();
        let v = r.values();
        assert_eq!(v.len(), 29);
        assert!((v[28] - 4.3).abs() < 1e-12);
        assert_eq!(
            "1:5:1".parse::<GridRange>().unwrap().values(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0]
        );
        for bad in ["1:2", "a:b:c", "2:1:0.1", "1:2:0", "1:2:-1", "1:2:3:4"] {
            assert!(bad.parse::<GridRange>().is_err(), "{bad}");
        }
    }

    #[test]
    fn fig2_grid_is_monotone() {
        let plant = UncertainPlant::new(vec![1.0, 2.0], vec![0.05, 0.05], 1.0).unwrap();
        let spec = SweepSpec {
            plant,
            p: 0.05,
            levels: None,
            m: None,
            vars: vec![(SweepVar::Lambda, "1.5:4.3:0.2".parse().unwrap())],
            n_max: 1 << 20,
            empirical: None,
        };
        let SweepTable::Plant { rows, .. } = sweep(&spec).unwrap() else {
            panic!("plant table expected")
        };
        let inf = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
        for w in rows.windows(2) {
            assert!(inf(w[1].r_nec) >= inf(w[0].r_nec));
            assert!(inf(w[1].r_suf) >= inf(w[0].r_suf) - 1e-9);
        }
        for r in &rows {
            assert!(inf(r.r_suf) >= inf(r.r_nec));
        }
        // the sufficient curve has its own asymptote below the necessary one
        assert!(rows.last().unwrap().r_suf.is_none() && rows.last().unwrap().r_nec.is_some());
        let mut buf = Vec::new();
        SweepTable::Plant {
            vars: vec![SweepVar::Lambda],
            rows,
        }
        .write_csv(&mut buf)
        .unwrap();
        let head = String::from_utf8(buf)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(
            head,
            "lambda,r_nec0,r_nec1,r_nec,p_nec,rho_F,min_N,r_suf,verdict"
        );
    }

    #[test]
    fn cycle_grid_layout() {
        let plant = UncertainPlant::scalar(3.3, 0.025, 1.0).unwrap();
        let spec = SweepSpec {
            plant,
            p: 0.0,
            levels: None,
            m: None,
            vars: vec![(SweepVar::M, "1:5:1".parse().unwrap())],
            n_max: 100_000,
            empirical: None,
        };
        let table = sweep(&spec).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(
            lines[0],
            "m,delta_plus,delta_minus,kappa_bar,r_bar,feasible,min_total_level,avg_level,verdict"
        );
        assert!(lines[2].starts_with("2,") && lines[2].contains(",true,13,"));
        assert!(lines[4].starts_with("4,") && lines[4].contains(",inf,false,,"));
    }

    #[test]
    fn two_variable_grid() {
        let plant = UncertainPlant::scalar(2.0, 0.1, 1.0).unwrap();
        let spec = SweepSpec {
            plant,
            p: 0.0,
            levels: None,
            m: None,
            vars: vec![
                (SweepVar::P, "0:0.1:0.05".parse().unwrap()),
                (SweepVar::N, "2:4:1".parse().unwrap()),
            ],
            n_max: 64,
            empirical: None,
        };
        let SweepTable::Plant { rows, .. } = sweep(&spec).unwrap() else {
            panic!()
        };
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[0].grid, vec![0.0, 2.0]);
        assert!(rows.iter().all(|r| r.rho_f.is_some()));
    }

    #[test]
    fn cycle_sweep_needs_scalar_plant() {
        let plant = UncertainPlant::new(vec![1.0, 2.0], vec![0.05, 0.05], 1.0).unwrap();
        let spec = SweepSpec {
            plant,
            p: 0.0,
            levels: None,
            m: None,
            vars: vec![(SweepVar::M, "1:3:1".parse().unwrap())],
            n_max: 64,
            empirical: None,
        };
        assert!(sweep(&spec).is_err());
    }
}
