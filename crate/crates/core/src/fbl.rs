//! Finite-blocklength block-error bounds for the binary erasure channel, the
//! normal-approximation optimal rate, and the oracle throughput that regret is
//! measured against.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{floor_snapped, log_binom_pmf_unchecked, q_inv, CompensatedSum};

/// Slack allowed when checking `lower <= upper` on evaluated bounds.
pub const BOUND_SLACK: f64 = 1e-12;

/// A binary erasure channel with erasure probability `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    delta: f64,
}

impl Channel {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!(
                "erasure probability must lie in (0, 1), got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `1 - delta`, the capacity in bits per channel use.
    #[inline]
    pub fn capacity(&self) -> f64 {
        1.0 - self.delta
    }

    /// Per-bit erasure variance `delta (1 - delta)`.
    #[inline]
    pub fn variance(&self) -> f64 {
        self.delta * (1.0 - self.delta)
    }
}

/// Blocklength and rate of a code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodePoint {
    pub n: u64,
    pub rate: f64,
}

impl CodePoint {
    pub fn new(n: u64, rate: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("blocklength must be at least 1"));
        }
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::domain(format!("rate must lie in [0, 1], got {rate}")));
        }
        Ok(Self { n, rate })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
}

impl BoundPair {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower > upper + BOUND_SLACK {
            return Err(Error::BoundOrdering { lower, upper });
        }
        Ok(Self { lower, upper })
    }
}

/// Achievability bound: some code of this length and rate has block error at
/// most `sum_t P(t erasures) 2^{-[n(1-r) - t]^+}`.
pub fn eps_upper(ch: Channel, cp: CodePoint) -> f64 {
    eps_upper_raw(ch.delta(), cp.n, cp.rate)
}

pub(crate) fn eps_upper_raw(delta: f64, n: u64, rate: f64) -> f64 {
    let redundancy = n as f64 * (1.0 - rate);
    let total: CompensatedSum = (0..=n)
        .map(|t| {
            let deficit = (redundancy - t as f64).max(0.0);
            (log_binom_pmf_unchecked(n, t, delta) - LN_2 * deficit).exp()
        })
        .collect();
    total.value().clamp(0.0, 1.0)
}

/// Converse bound: every code of this length and rate has block error at
/// least `sum_{t > n(1-r)} P(t erasures) (1 - 2^{n(1-r) - t})`.
pub fn eps_lower(ch: Channel, cp: CodePoint) -> f64 {
    eps_lower_raw(ch.delta(), cp.n, cp.rate)
}

pub(crate) fn eps_lower_raw(delta: f64, n: u64, rate: f64) -> f64 {
    let redundancy = n as f64 * (1.0 - rate);
    let first = floor_snapped(redundancy) + 1.0;
    if first > n as f64 {
        return 0.0;
    }
    let first = first.max(0.0) as u64;
    let total: CompensatedSum = (first..=n)
        .map(|t| {
            let miss = -(LN_2 * (redundancy - t as f64)).exp_m1();
            log_binom_pmf_unchecked(n, t, delta).exp() * miss
        })
        .collect();
    total.value().clamp(0.0, 1.0)
}

pub fn eps_bounds(ch: Channel, cp: CodePoint) -> Result<BoundPair> {
    BoundPair::new(eps_lower(ch, cp), eps_upper(ch, cp))
}

/// Normal-approximation maximal rate `(1 - delta) - sqrt(delta (1 - delta) / n) Q^{-1}(eeff)`,
/// with the `O(1)/n` remainder dropped and the result clamped to `[0, 1]`.
pub fn oracle_rate(ch: Channel, n: u64, eeff: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("blocklength must be at least 1"));
    }
    let x = q_inv(eeff)?;
    Ok((ch.capacity() - (ch.variance() / n as f64).sqrt() * x).clamp(0.0, 1.0))
}

/// Expected successfully decoded bits of a transmitter that knows `delta`
/// and codes the whole horizon as one block at error probability `eeff`.
pub fn oracle_n(ch: Channel, horizon: u64, eeff: f64) -> Result<f64> {
    Ok(horizon as f64 * oracle_rate(ch, horizon, eeff)? * (1.0 - eeff))
}

/// Oracle throughput minus strategy throughput. Can be negative because the
/// oracle rate omits its `O(1)/n` term.
#[inline]
pub fn regret(n_strategy: f64, n_oracle: f64) -> f64 {
    n_oracle - n_strategy
}
