//! Parameter sweeps behind the throughput and regret curves, plus log-log
//! slope fits over them. Grid points are independent and evaluated through
//! [`map_indexed`], so every sweep runs in parallel when enabled and returns
//! rows in grid order either way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ett::{
    backoff_for_eeff, eeff_step_gauss, n_closed, n_closed_at_eeff, n_exact_step, opt_eeff, opt_te, EttConfig,
};
use crate::fbl::{oracle_n, regret, Channel};
use crate::numerics::fit_loglog_slope;
use crate::par::{map_indexed, Exec};
use crate::windowing::{make_arithmetic, make_geometric, window_n_closed, window_n_exact};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeRow {
    pub te: u64,
    pub backoff: f64,
    pub n_closed: f64,
    pub n_exact: f64,
    /// Set on the grid point closest to the optimizer's `Te`.
    pub is_opt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeSweep {
    pub te_opt: u64,
    pub rows: Vec<TeRow>,
}

/// Throughput against `Te` at a fixed operating point, the backoff following
/// `Te` through [`backoff_for_eeff`].
pub fn te_sweep(ch: Channel, horizon: u64, eeff: f64, grid: &[u64], exec: Exec) -> Result<TeSweep> {
    if grid.is_empty() {
        return Err(Error::domain("empty Te grid"));
    }
    let te_opt = opt_te(ch, horizon, eeff)?;
    let cfgs = grid
        .iter()
        .map(|&te| EttConfig::new(horizon, te, backoff_for_eeff(ch, te, eeff)?))
        .collect::<Result<Vec<_>>>()?;
    let nearest = nearest_index(grid.iter().map(|&te| (te as f64 - te_opt as f64).abs()));
    let rows = map_indexed(exec, cfgs.len(), |i| TeRow {
        te: cfgs[i].te,
        backoff: cfgs[i].backoff,
        n_closed: n_closed(ch, cfgs[i]),
        n_exact: n_exact_step(ch, cfgs[i]),
        is_opt: i == nearest,
    });
    Ok(TeSweep { te_opt, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackoffRow {
    pub backoff: f64,
    pub eeff: f64,
    pub n_closed: f64,
    pub n_exact: f64,
    pub is_opt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackoffSweep {
    pub backoff_opt: f64,
    pub rows: Vec<BackoffRow>,
}

/// Throughput against the backoff at fixed `Te`.
pub fn backoff_sweep(ch: Channel, horizon: u64, te: u64, grid: &[f64], exec: Exec) -> Result<BackoffSweep> {
    if grid.is_empty() {
        return Err(Error::domain("empty backoff grid"));
    }
    let backoff_opt = opt_eeff(ch, te)?.backoff;
    let cfgs = grid
        .iter()
        .map(|&b| EttConfig::new(horizon, te, b))
        .collect::<Result<Vec<_>>>()?;
    let nearest = nearest_index(grid.iter().map(|&b| (b - backoff_opt).abs()));
    let rows = map_indexed(exec, cfgs.len(), |i| BackoffRow {
        backoff: cfgs[i].backoff,
        eeff: eeff_step_gauss(ch, te, cfgs[i].backoff),
        n_closed: n_closed(ch, cfgs[i]),
        n_exact: n_exact_step(ch, cfgs[i]),
        is_opt: i == nearest,
    });
    Ok(BackoffSweep { backoff_opt, rows })
}

fn nearest_index(distances: impl Iterator<Item = f64>) -> usize {
    distances
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bd), (i, d)| if d < bd { (i, d) } else { (bi, bd) },
        )
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeOptRow {
    pub horizon: u64,
    pub te_opt: u64,
    /// Brute-force integer maximizer of the closed-form throughput.
    pub te_argmax: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeOptCurve {
    pub rows: Vec<TeOptRow>,
    /// Least-squares slope of `ln Te*` against `ln T`.
    pub slope: f64,
}

pub fn te_opt_vs_horizon(ch: Channel, eeff: f64, horizons: &[u64], exec: Exec) -> Result<TeOptCurve> {
    let rows = map_indexed(exec, horizons.len(), |i| {
        let t = horizons[i];
        Ok(TeOptRow {
            horizon: t,
            te_opt: opt_te(ch, t, eeff)?,
            te_argmax: closed_form_argmax(ch, t, eeff)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.horizon as f64, r.te_opt as f64)).collect();
    Ok(TeOptCurve {
        slope: fit_loglog_slope(&points)?,
        rows,
    })
}

fn closed_form_argmax(ch: Channel, horizon: u64, eeff: f64) -> Result<u64> {
    let mut best = (0, f64::NEG_INFINITY);
    for te in 1..horizon {
        let n = n_closed_at_eeff(ch, horizon, te, eeff)?;
        if n > best.1 {
            best = (te, n);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Estimate-then-Transmit at the optimizer's `Te` for each horizon.
    EttOpt,
    Geometric,
    /// Arithmetic windows with as many blocks as the geometric schedule.
    Arithmetic,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::EttOpt, Strategy::Geometric, Strategy::Arithmetic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::EttOpt => "ett_opt",
            Strategy::Geometric => "geometric",
            Strategy::Arithmetic => "arithmetic",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            Error::domain(format!(
                "unknown strategy '{s}' (expected ett_opt, geometric or arithmetic)"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub strategy: Strategy,
    pub horizon: u64,
    pub n_exact: f64,
    pub n_closed: f64,
    pub n_oracle: f64,
    /// `n_oracle - n_exact`.
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub rows: Vec<RegretRow>,
    /// Log-log slope of regret against horizon, per strategy.
    pub slopes: Vec<(Strategy, f64)>,
}

/// Regret of each strategy at horizons `T = 2^k - 1` for `k` in `exponents`,
/// the horizons at which geometric windowing is defined.
pub fn regret_curve(
    ch: Channel,
    eeff: f64,
    exponents: &[u32],
    strategies: &[Strategy],
    exec: Exec,
) -> Result<RegretCurve> {
    if strategies.is_empty() {
        return Err(Error::domain("no strategies requested"));
    }
    if exponents.len() < 2 {
        return Err(Error::domain("regret curve needs at least two horizons"));
    }
    let jobs: Vec<(Strategy, u32)> = strategies
        .iter()
        .flat_map(|&s| exponents.iter().map(move |&k| (s, k)))
        .collect();
    let rows = map_indexed(exec, jobs.len(), |i| regret_point(ch, eeff, jobs[i].0, jobs[i].1))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let slopes = strategies
        .iter()
        .map(|&s| {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.strategy == s)
                .map(|r| (r.horizon as f64, r.regret))
                .collect();
            Ok((s, fit_loglog_slope(&points)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegretCurve { rows, slopes })
}

fn regret_point(ch: Channel, eeff: f64, strategy: Strategy, k: u32) -> Result<RegretRow> {
    let geometric = make_geometric(k)?;
    let horizon = geometric.horizon();
    let (n_exact, n_closed) = match strategy {
        Strategy::EttOpt => {
            let te = opt_te(ch, horizon, eeff)?;
            let cfg = EttConfig::new(horizon, te, backoff_for_eeff(ch, te, eeff)?)?;
            (n_exact_step(ch, cfg), n_closed(ch, cfg))
        }
        Strategy::Geometric => (
            window_n_exact(ch, &geometric, eeff)?.n_total,
            window_n_closed(ch, &geometric, eeff)?.n_total,
        ),
        Strategy::Arithmetic => {
            let s = make_arithmetic(horizon, u64::from(k))?;
            (
                window_n_exact(ch, &s, eeff)?.n_total,
                window_n_closed(ch, &s, eeff)?.n_total,
            )
        }
    };
    let n_oracle = oracle_n(ch, horizon, eeff)?;
    Ok(RegretRow {
        strategy,
        horizon,
        n_exact,
        n_closed,
        n_oracle,
        regret: regret(n_exact, n_oracle),
    })
}

/// Integer grid `lo, lo + step, ...` up to and including `hi`.
pub fn int_grid(lo: u64, hi: u64, step: u64) -> Result<Vec<u64>> {
    if step == 0 || hi < lo {
        return Err(Error::domain(format!("invalid grid {lo}:{hi}:{step}")));
    }
    Ok((lo..=hi).step_by(step as usize).collect())
}

/// Real grid `lo + i step` for `i = 0..=round((hi - lo) / step)`, computed by
/// index so that the endpoint is not lost to accumulated rounding.
pub fn real_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(Error::domain(format!("invalid grid {lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| lo + i as f64 * step).collect())
}
