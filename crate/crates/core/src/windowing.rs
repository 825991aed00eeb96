//! Windowing strategies: the horizon is cut into blocks `T_1..T_M`; before
//! block `i >= 2` the transmitter queries the erasure rate over everything
//! sent so far (`S_{i-1}` bits) and codes block `i` at
//! `max(0, 1 - delta_hat - b_i)`.
//!
//! Block 1 has no prior estimate, so it carries no information: its backoff is
//! infinite and it contributes nothing. Each later block behaves like the
//! transmission phase of Estimate-then-Transmit with `Te = S_{i-1}` and
//! `Tt = T_i`, and its expected contribution depends only on the marginal law
//! of the cumulative erasure count, so the exact total is a sum of
//! per-block terms.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ett::{n_exact_ppv_with, step_throughput_per_bit, ErrorModel, EttConfig};
use crate::fbl::Channel;
use crate::numerics::{normal_pdf, q_inv};
use crate::par::{map_indexed, Exec};

pub const MAX_GEOMETRIC_BLOCKS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Geometric,
    Arithmetic,
    Custom,
}

/// Block lengths of a windowing strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    blocks: Vec<u64>,
    kind: ScheduleKind,
}

impl Schedule {
    pub fn custom(blocks: Vec<u64>) -> Result<Self> {
        Self::with_kind(blocks, ScheduleKind::Custom)
    }

    fn with_kind(blocks: Vec<u64>, kind: ScheduleKind) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::domain(format!(
                "a schedule needs at least 2 blocks, got {}",
                blocks.len()
            )));
        }
        if let Some(i) = blocks.iter().position(|&b| b == 0) {
            return Err(Error::domain(format!("block {} has length 0", i + 1)));
        }
        Ok(Self { blocks, kind })
    }

    pub fn blocks(&self) -> &[u64] {
        &self.blocks
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of blocks `M`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn horizon(&self) -> u64 {
        self.blocks.iter().sum()
    }

    /// Erasure-rate queries the strategy issues: one before every block but the first.
    pub fn queries(&self) -> usize {
        self.blocks.len() - 1
    }

    /// `S_{i-1}` for every block: bits sent before it.
    pub fn prefix_sums(&self) -> Vec<u64> {
        self.blocks
            .iter()
            .scan(0u64, |acc, &b| {
                let before = *acc;
                *acc += b;
                Some(before)
            })
            .collect()
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = self.blocks.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        match self.kind {
            ScheduleKind::Geometric => write!(f, "geometric:{}", self.blocks.len()),
            ScheduleKind::Arithmetic => write!(f, "arithmetic:{},{}", self.horizon(), self.blocks.len()),
            ScheduleKind::Custom => write!(f, "custom:{list}"),
        }
    }
}

/// Parses `geometric:M`, `arithmetic:T,M` or `custom:T1,T2,...`.
impl FromStr for Schedule {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let (kind, args) = spec
            .split_once(':')
            .ok_or_else(|| Error::domain(format!("malformed schedule '{spec}': expected KIND:ARGS")))?;
        let numbers = args
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::domain(format!("malformed schedule '{spec}': bad token '{tok}'")))
            })
            .collect::<Result<Vec<u64>>>()?;
        match (kind, numbers.as_slice()) {
            ("geometric", &[m]) => {
                let m = u32::try_from(m).map_err(|_| Error::domain(format!("block count {m} out of range")))?;
                make_geometric(m)
            }
            ("arithmetic", &[t, m]) => make_arithmetic(t, m),
            ("custom", _) => Schedule::custom(numbers),
            ("geometric" | "arithmetic", _) => Err(Error::domain(format!(
                "malformed schedule '{spec}': wrong number of arguments for '{kind}'"
            ))),
            _ => Err(Error::domain(format!(
                "malformed schedule '{spec}': unknown kind '{kind}'"
            ))),
        }
    }
}

/// Doubling windows `1, 2, 4, ..., 2^{M-1}` over a horizon of `2^M - 1`.
pub fn make_geometric(m: u32) -> Result<Schedule> {
    if !(2..=MAX_GEOMETRIC_BLOCKS).contains(&m) {
        return Err(Error::domain(format!(
            "geometric schedule needs 2 <= M <= {MAX_GEOMETRIC_BLOCKS}, got {m}"
        )));
    }
    Schedule::with_kind((0..m).map(|i| 1u64 << i).collect(), ScheduleKind::Geometric)
}

/// Windows growing linearly from 1 with common difference
/// `d = 2 (T - M) / (M (M - 1))`, so the unrounded lengths sum to `T`. Each
/// length is rounded to the nearest integer and the rounding residual is
/// added to the last block.
pub fn make_arithmetic(horizon: u64, m: u64) -> Result<Schedule> {
    if m < 2 {
        return Err(Error::domain(format!("arithmetic schedule needs M >= 2, got {m}")));
    }
    if horizon < m * (m + 1) / 2 {
        return Err(Error::domain(format!(
            "arithmetic schedule with M = {m} needs T >= {}, got {horizon}",
            m * (m + 1) / 2
        )));
    }
    let d = 2.0 * (horizon - m) as f64 / (m * (m - 1)) as f64;
    let mut blocks: Vec<u64> = (0..m).map(|i| (1.0 + i as f64 * d).round() as u64).collect();
    let sum: u64 = blocks.iter().sum();
    let last = blocks.last_mut().expect("m >= 2");
    *last = (*last + horizon).checked_sub(sum).filter(|&v| v >= 1).ok_or_else(|| {
        Error::domain(format!(
            "rounding residual empties the last block at T = {horizon}, M = {m}"
        ))
    })?;
    Schedule::with_kind(blocks, ScheduleKind::Arithmetic)
}

fn check_eeff(eeff: f64) -> Result<()> {
    if !(eeff > 0.0 && eeff <= 0.5) {
        return Err(Error::domain(format!(
            "operating error probability must lie in (0, 0.5], got {eeff}"
        )));
    }
    Ok(())
}

/// Per-block backoffs `b_i = sqrt(delta (1 - delta) / S_{i-1}) Q^{-1}(eeff)`;
/// `b_1` is infinite.
pub fn window_backoffs(ch: Channel, s: &Schedule, eeff: f64) -> Result<Vec<f64>> {
    check_eeff(eeff)?;
    let x = q_inv(eeff)?;
    Ok(s.prefix_sums()
        .into_iter()
        .map(|prev| {
            if prev == 0 {
                f64::INFINITY
            } else {
                (ch.variance() / prev as f64).sqrt() * x
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockTerm {
    pub len: u64,
    /// Bits sent before this block.
    pub s_prev: u64,
    /// Serialized as `null` for the estimation-only first block.
    pub backoff: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub n_total: f64,
    pub per_block: Vec<BlockTerm>,
    pub queries: usize,
}

fn assemble(s: &Schedule, backoffs: &[f64], contributions: Vec<f64>) -> WindowReport {
    let per_block: Vec<BlockTerm> = s
        .blocks()
        .iter()
        .zip(s.prefix_sums())
        .zip(backoffs)
        .zip(contributions)
        .map(|(((&len, s_prev), &backoff), contribution)| BlockTerm {
            len,
            s_prev,
            backoff,
            contribution,
        })
        .collect();
    WindowReport {
        n_total: per_block.iter().map(|b| b.contribution).sum(),
        per_block,
        queries: s.queries(),
    }
}

/// Exact expected throughput under the step model.
pub fn window_n_exact(ch: Channel, s: &Schedule, eeff: f64) -> Result<WindowReport> {
    window_n_exact_with(ch, s, eeff, Exec::default())
}

pub fn window_n_exact_with(ch: Channel, s: &Schedule, eeff: f64, exec: Exec) -> Result<WindowReport> {
    let backoffs = window_backoffs(ch, s, eeff)?;
    let prev = s.prefix_sums();
    let contributions = map_indexed(exec, s.len(), |i| {
        if prev[i] == 0 {
            0.0
        } else {
            s.blocks()[i] as f64 * step_throughput_per_bit(ch.delta(), prev[i], backoffs[i])
        }
    });
    Ok(assemble(s, &backoffs, contributions))
}

/// Exact expected throughput with the chosen block-error model. Each block
/// after the first is scored as an Estimate-then-Transmit run with
/// `Te = S_{i-1}` and `Tt = T_i`.
pub fn window_n_exact_model(
    ch: Channel,
    s: &Schedule,
    eeff: f64,
    model: ErrorModel,
    exec: Exec,
) -> Result<WindowReport> {
    if model == ErrorModel::Step {
        return window_n_exact_with(ch, s, eeff, exec);
    }
    let backoffs = window_backoffs(ch, s, eeff)?;
    let prev = s.prefix_sums();
    let contributions = s
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            if prev[i] == 0 {
                return Ok(0.0);
            }
            let cfg = EttConfig::new(prev[i] + len, prev[i], backoffs[i])?;
            Ok(n_exact_ppv_with(ch, cfg, model, exec))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(assemble(s, &backoffs, contributions))
}

/// `G = x (1 - eeff) + phi(x)` with `x = Q^{-1}(eeff)`.
fn correction_factor(eeff: f64) -> Result<f64> {
    let x = q_inv(eeff)?;
    Ok(x * (1.0 - eeff) + normal_pdf(x))
}

/// Closed-form throughput, summing per block
/// `T_i ((1 - delta)(1 - eeff) - sqrt(delta (1 - delta) / S_{i-1}) G)`, each
/// clamped at 0.
pub fn window_n_closed(ch: Channel, s: &Schedule, eeff: f64) -> Result<WindowReport> {
    let backoffs = window_backoffs(ch, s, eeff)?;
    let g = correction_factor(eeff)?;
    let lead = ch.capacity() * (1.0 - eeff);
    let contributions = s
        .blocks()
        .iter()
        .zip(s.prefix_sums())
        .map(|(&len, prev)| {
            if prev == 0 {
                0.0
            } else {
                (len as f64 * (lead - (ch.variance() / prev as f64).sqrt() * g)).max(0.0)
            }
        })
        .collect();
    Ok(assemble(s, &backoffs, contributions))
}

/// Closed-form throughput bounds for geometric windowing, in bits. Unlike
/// [`crate::fbl::BoundPair`] these are not probabilities and may be negative
/// for small `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputBounds {
    pub lower: f64,
    pub upper: f64,
}

/// With `T = 2^M - 1`:
/// upper `T (1 - delta)(1 - eeff) - sqrt((T + 1) delta (1 - delta)) G / (sqrt 2 - 1)`,
/// lower `T (1 - delta)(1 - eeff) - sqrt(2 (T + 1) delta (1 - delta)) G / (sqrt 2 - 1)`.
pub fn geom_n_bounds(ch: Channel, m: u32, eeff: f64) -> Result<ThroughputBounds> {
    if !(2..=MAX_GEOMETRIC_BLOCKS).contains(&m) {
        return Err(Error::domain(format!(
            "geometric schedule needs 2 <= M <= {MAX_GEOMETRIC_BLOCKS}, got {m}"
        )));
    }
    check_eeff(eeff)?;
    let g = correction_factor(eeff)?;
    let t = ((1u64 << m) - 1) as f64;
    let lead = t * ch.capacity() * (1.0 - eeff);
    let spread = ((t + 1.0) * ch.variance()).sqrt() * g / (SQRT_2 - 1.0);
    Ok(ThroughputBounds {
        lower: lead - SQRT_2 * spread,
        upper: lead - spread,
    })
}
