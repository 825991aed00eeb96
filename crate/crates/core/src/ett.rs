//! Estimate-then-Transmit: send `Te` pilot bits, query the empirical erasure
//! count `K` once, then code the remaining `Tt = T - Te` bits as a single
//! block at rate `max(0, 1 - K/Te - b)`.
//!
//! Two families of evaluators live here. The exact ones sum over the
//! binomial law of `K`; the closed forms replace the lattice sum with its
//! Gaussian limit and drop the `O(1/sqrt(Te))` remainders. The optimizers
//! work on the closed forms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbl::{eps_lower_raw, eps_upper_raw, oracle_n, regret, Channel};
use crate::numerics::{
    binom_cdf_unchecked, binom_pmf, bisect_root, ceil_snapped, floor_snapped, normal_pdf, phi_cdf, q_inv, q_unchecked,
    CompensatedSum, Tolerance,
};
use crate::par::{map_indexed, Exec};

/// How the block error of a rate-`r` block is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModel {
    /// Error iff the rate exceeds capacity `1 - delta`.
    Step,
    /// Achievability bound as the block error.
    PpvUpper,
    /// Converse bound as the block error.
    PpvLower,
    /// Mean of the two bounds.
    PpvMid,
}

impl ErrorModel {
    pub const ALL: [ErrorModel; 4] = [
        ErrorModel::Step,
        ErrorModel::PpvUpper,
        ErrorModel::PpvLower,
        ErrorModel::PpvMid,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorModel::Step => "step",
            ErrorModel::PpvUpper => "ppv_upper",
            ErrorModel::PpvLower => "ppv_lower",
            ErrorModel::PpvMid => "ppv_mid",
        }
    }
}

impl fmt::Display for ErrorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ErrorModel::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::domain(format!(
                "unknown error model '{s}' (expected step, ppv_upper, ppv_lower or ppv_mid)"
            ))
        })
    }
}

/// Horizon, estimation length and backoff of one Estimate-then-Transmit run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EttConfig {
    pub horizon: u64,
    pub te: u64,
    pub backoff: f64,
}

impl EttConfig {
    pub fn new(horizon: u64, te: u64, backoff: f64) -> Result<Self> {
        if te == 0 || te >= horizon {
            return Err(Error::domain(format!("need 1 <= Te < T, got Te = {te}, T = {horizon}")));
        }
        if backoff.is_nan() || backoff < 0.0 {
            return Err(Error::domain(format!("backoff must be >= 0, got {backoff}")));
        }
        Ok(Self { horizon, te, backoff })
    }

    /// Transmission-phase length `T - Te`.
    #[inline]
    pub fn tt(&self) -> u64 {
        self.horizon - self.te
    }
}

/// Committed rate after observing `k` erasures among `te` pilot bits.
#[inline]
pub fn rate_decision(te: u64, k: u64, backoff: f64) -> f64 {
    (1.0 - k as f64 / te as f64 - backoff).max(0.0)
}

/// Smallest erasure count whose committed rate is at most capacity. Under the
/// step model a block succeeds iff `k >= first_success_count`; the boundary
/// rate `1 - delta` itself counts as success.
pub(crate) fn first_success_count(te: u64, delta: f64, backoff: f64) -> u64 {
    let threshold = te as f64 * (delta - backoff);
    if threshold <= 0.0 {
        0
    } else {
        ceil_snapped(threshold) as u64
    }
}

/// Block error of a rate-`rate` block of length `n` under a bound-based model.
/// Returns `None` for [`ErrorModel::Step`], which is decided on counts.
pub(crate) fn ppv_error(delta: f64, n: u64, rate: f64, model: ErrorModel) -> Option<f64> {
    let e = match model {
        ErrorModel::Step => return None,
        ErrorModel::PpvUpper => eps_upper_raw(delta, n, rate),
        ErrorModel::PpvLower => eps_lower_raw(delta, n, rate),
        ErrorModel::PpvMid => 0.5 * (eps_upper_raw(delta, n, rate) + eps_lower_raw(delta, n, rate)),
    };
    Some(e.clamp(0.0, 1.0))
}

/// Block error for every possible pilot erasure count `k = 0..=te`.
pub(crate) fn error_table(delta: f64, te: u64, tt: u64, backoff: f64, model: ErrorModel, exec: Exec) -> Vec<f64> {
    match model {
        ErrorModel::Step => {
            let first = first_success_count(te, delta, backoff);
            (0..=te).map(|k| if k < first { 1.0 } else { 0.0 }).collect()
        }
        _ => {
            // every k whose rate clamps to 0 shares one bound evaluation
            let zero_rate = ppv_error(delta, tt, 0.0, model).unwrap();
            map_indexed(exec, te as usize + 1, |k| {
                let rate = rate_decision(te, k as u64, backoff);
                if rate == 0.0 {
                    zero_rate
                } else {
                    ppv_error(delta, tt, rate, model).unwrap()
                }
            })
        }
    }
}

/// Average block error over the pilot count, using one of the bound models as
/// the per-rate block error.
pub fn eeff_exact_ppv(ch: Channel, cfg: EttConfig, which: ErrorModel) -> Result<f64> {
    eeff_exact_ppv_with(ch, cfg, which, Exec::default())
}

pub fn eeff_exact_ppv_with(ch: Channel, cfg: EttConfig, which: ErrorModel, exec: Exec) -> Result<f64> {
    if which == ErrorModel::Step {
        return Err(Error::domain("eeff_exact_ppv needs a bound-based error model"));
    }
    let d = ch.delta();
    let table = error_table(d, cfg.te, cfg.tt(), cfg.backoff, which, exec);
    let total: CompensatedSum = table
        .iter()
        .enumerate()
        .map(|(k, e)| binom_pmf(cfg.te, k as u64, d) * e)
        .collect();
    Ok(total.value().clamp(0.0, 1.0))
}

/// `P(K < Te (delta - b))` for `K ~ Bin(Te, delta)`: the block error under the
/// step model, averaged over the pilot count.
pub fn eeff_step_exact(ch: Channel, te: u64, backoff: f64) -> f64 {
    let first = first_success_count(te, ch.delta(), backoff);
    binom_cdf_unchecked(te, first as i64 - 1, ch.delta())
}

/// Gaussian form `Q(b sqrt(Te / (delta (1 - delta))))` of [`eeff_step_exact`].
pub fn eeff_step_gauss(ch: Channel, te: u64, backoff: f64) -> f64 {
    q_unchecked(standardized_backoff(ch, te, backoff))
}

#[inline]
fn standardized_backoff(ch: Channel, te: u64, backoff: f64) -> f64 {
    backoff * (te as f64 / ch.variance()).sqrt()
}

/// Backoff that makes [`eeff_step_gauss`] equal `eeff`.
pub fn backoff_for_eeff(ch: Channel, te: u64, eeff: f64) -> Result<f64> {
    check_eeff(eeff)?;
    if te == 0 {
        return Err(Error::domain("estimation length must be at least 1"));
    }
    Ok((ch.variance() / te as f64).sqrt() * q_inv(eeff)?)
}

fn check_eeff(eeff: f64) -> Result<()> {
    if !(eeff > 0.0 && eeff <= 0.5) {
        return Err(Error::domain(format!(
            "operating error probability must lie in (0, 0.5] so that the backoff is non-negative, got {eeff}"
        )));
    }
    Ok(())
}

/// Expected successful bits per transmitted bit under the step model,
/// `E[max(0, 1 - K/Te - b) 1{K >= Te (delta - b)}]`.
pub(crate) fn step_throughput_per_bit(delta: f64, te: u64, backoff: f64) -> f64 {
    if !backoff.is_finite() {
        return 0.0;
    }
    let lo = first_success_count(te, delta, backoff);
    let hi = floor_snapped(te as f64 * (1.0 - backoff));
    if hi < 0.0 {
        return 0.0;
    }
    let hi = (hi as u64).min(te);
    if hi < lo {
        return 0.0;
    }
    let total: CompensatedSum = (lo..=hi)
        .map(|k| rate_decision(te, k, backoff) * binom_pmf(te, k, delta))
        .collect();
    total.value().max(0.0)
}

/// Exact expected successfully decoded bits under the step model.
pub fn n_exact_step(ch: Channel, cfg: EttConfig) -> f64 {
    cfg.tt() as f64 * step_throughput_per_bit(ch.delta(), cfg.te, cfg.backoff)
}

/// Exact expected successfully decoded bits with the chosen error model.
/// With `PpvUpper` this is a lower bound on the throughput of the best codes,
/// with `PpvLower` an upper bound.
pub fn n_exact_ppv(ch: Channel, cfg: EttConfig, which: ErrorModel) -> f64 {
    n_exact_ppv_with(ch, cfg, which, Exec::default())
}

pub fn n_exact_ppv_with(ch: Channel, cfg: EttConfig, which: ErrorModel, exec: Exec) -> f64 {
    if which == ErrorModel::Step {
        return n_exact_step(ch, cfg);
    }
    let d = ch.delta();
    let table = error_table(d, cfg.te, cfg.tt(), cfg.backoff, which, exec);
    let total: CompensatedSum = table
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let k = k as u64;
            binom_pmf(cfg.te, k, d) * (1.0 - e) * rate_decision(cfg.te, k, cfg.backoff)
        })
        .collect();
    cfg.tt() as f64 * total.value().max(0.0)
}

/// Closed-form throughput
/// `Tt ((1 - delta - b)(1 - eeff(b)) - sqrt(delta (1 - delta) / (2 pi Te)) e^{-x^2/2})`
/// with `x = Q^{-1}(eeff(b)) = b sqrt(Te / (delta (1 - delta)))`. Not clamped.
pub fn n_closed(ch: Channel, cfg: EttConfig) -> f64 {
    closed_form_n(ch, cfg.horizon as f64, cfg.te as f64, cfg.backoff)
}

fn closed_form_n(ch: Channel, horizon: f64, te: f64, backoff: f64) -> f64 {
    let x = backoff * (te / ch.variance()).sqrt();
    let eeff = q_unchecked(x);
    let tt = horizon - te;
    tt * ((ch.capacity() - backoff) * (1.0 - eeff) - (ch.variance() / (2.0 * PI * te)).sqrt() * (-0.5 * x * x).exp())
}

/// Closed-form throughput at a fixed operating point `eeff`, with the backoff
/// recomputed from `Te`: `Tt ((1 - delta)(1 - eeff) - sqrt(delta (1 - delta) / Te) G)`
/// where `G = x (1 - eeff) + phi(x)` and `x = Q^{-1}(eeff)`.
pub fn n_closed_at_eeff(ch: Channel, horizon: u64, te: u64, eeff: f64) -> Result<f64> {
    check_eeff(eeff)?;
    let x = q_inv(eeff)?;
    Ok(closed_form_n_at(ch, horizon as f64, te as f64, eeff, x))
}

fn closed_form_n_at(ch: Channel, horizon: f64, te: f64, eeff: f64, x: f64) -> f64 {
    let g = x * (1.0 - eeff) + normal_pdf(x);
    (horizon - te) * (ch.capacity() * (1.0 - eeff) - (ch.variance() / te).sqrt() * g)
}

/// Derivative of [`n_closed_at_eeff`] in `Te` (treated as continuous), holding
/// the operating point fixed:
/// `(T + Te) sqrt(delta (1 - delta)) G / (2 Te^{3/2}) - (1 - delta)(1 - eeff)`.
/// Strictly decreasing in `Te`.
pub fn te_residual(ch: Channel, horizon: f64, eeff: f64, te: f64) -> Result<f64> {
    check_eeff(eeff)?;
    let x = q_inv(eeff)?;
    Ok(te_residual_at(ch, horizon, eeff, x, te))
}

fn te_residual_at(ch: Channel, horizon: f64, eeff: f64, x: f64, te: f64) -> f64 {
    let g = x * (1.0 - eeff) + normal_pdf(x);
    0.5 * (horizon + te) * ch.variance().sqrt() * g / te.powf(1.5) - ch.capacity() * (1.0 - eeff)
}

/// Stationarity residual obtained by differentiating the closed form in `Te`
/// while holding the backoff constant:
/// `(T + Te)/2 sqrt(delta (1 - delta) / (2 pi Te^3)) e^{-x^2/2} - (1 - delta - b)(1 - eeff)`
/// with `b = sqrt(delta (1 - delta) / Te) x`. Agrees with [`te_residual`] at
/// `eeff = 1/2` and drifts from the true maximizer below it.
pub fn te_residual_frozen_backoff(ch: Channel, horizon: f64, eeff: f64, te: f64) -> Result<f64> {
    check_eeff(eeff)?;
    let x = q_inv(eeff)?;
    let b = (ch.variance() / te).sqrt() * x;
    Ok(
        0.5 * (horizon + te) * (ch.variance() / (2.0 * PI * te.powi(3))).sqrt() * (-0.5 * x * x).exp()
            - (ch.capacity() - b) * (1.0 - eeff),
    )
}

/// Estimation length maximizing the closed-form throughput for a fixed
/// operating point. The continuous root of [`te_residual`] on `[2, T - 1]` is
/// rounded to whichever neighbouring integer has the larger throughput.
pub fn opt_te(ch: Channel, horizon: u64, eeff: f64) -> Result<u64> {
    opt_te_with(ch, horizon, eeff, Tolerance::default())
}

pub fn opt_te_with(ch: Channel, horizon: u64, eeff: f64, tol: Tolerance) -> Result<u64> {
    check_eeff(eeff)?;
    if horizon < 4 {
        return Err(Error::domain(format!("horizon must be at least 4, got {horizon}")));
    }
    let x = q_inv(eeff)?;
    let t = horizon as f64;
    let (lo, hi) = (2.0, t - 1.0);
    let root = bisect_root(|te| te_residual_at(ch, t, eeff, x, te), lo, hi, tol).map_err(|e| match e {
        Error::NoSignChange { .. } => Error::NoSolution(format!(
            "throughput has no interior maximum in Te on [2, {}] at delta = {}, eeff = {eeff}",
            horizon - 1,
            ch.delta()
        )),
        other => other,
    })?;
    let down = root.floor().max(lo);
    let up = root.ceil().min(hi);
    let value = |te: f64| closed_form_n_at(ch, t, te, eeff, x);
    Ok(if value(up) > value(down) {
        up as u64
    } else {
        down as u64
    })
}

/// Result of maximizing the closed-form throughput over the backoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeffOptimum {
    /// Optimal operating point; 0.5 when the optimum sits on `b = 0`.
    pub eeff: f64,
    pub backoff: f64,
    /// `false` when no interior optimum with `b >= 0` exists.
    pub interior: bool,
}

/// Operating point maximizing the closed-form throughput over the backoff at
/// fixed `Te`: the root in `x >= 0` of
/// `(1 - delta) e^{-x^2/2} sqrt(Te / (2 pi delta (1 - delta))) = 1 - Q(x)`.
pub fn opt_eeff(ch: Channel, te: u64) -> Result<EeffOptimum> {
    opt_eeff_with(ch, te, Tolerance::default())
}

pub fn opt_eeff_with(ch: Channel, te: u64, tol: Tolerance) -> Result<EeffOptimum> {
    if te < 2 {
        return Err(Error::domain(format!("estimation length must be at least 2, got {te}")));
    }
    let scale = ch.capacity() * (te as f64 / (2.0 * PI * ch.variance())).sqrt();
    let f = |x: f64| scale * (-0.5 * x * x).exp() - phi_cdf(x);
    if f(0.0) <= 0.0 {
        return Ok(EeffOptimum {
            eeff: 0.5,
            backoff: 0.0,
            interior: false,
        });
    }
    let x = bisect_root(f, 0.0, 40.0, tol)?;
    Ok(EeffOptimum {
        eeff: q_unchecked(x),
        backoff: x * (ch.variance() / te as f64).sqrt(),
        interior: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOptimum {
    pub te: u64,
    pub eeff: f64,
    pub backoff: f64,
    pub n_closed: f64,
    pub rounds: usize,
    pub converged: bool,
}

pub const JOINT_MAX_ROUNDS: usize = 100;

/// Alternates [`opt_te`] and [`opt_eeff`] from `eeff = 1/2` until neither
/// moves. If the iteration cycles, the iterate with the best closed-form
/// throughput is returned with `converged = false`.
pub fn joint_opt(ch: Channel, horizon: u64) -> Result<JointOptimum> {
    joint_opt_with(ch, horizon, Tolerance::default())
}

pub fn joint_opt_with(ch: Channel, horizon: u64, tol: Tolerance) -> Result<JointOptimum> {
    if horizon < 16 {
        return Err(Error::domain(format!("horizon must be at least 16, got {horizon}")));
    }
    let mut eeff = 0.5;
    let mut te = opt_te_with(ch, horizon, eeff, tol)?;
    let mut best: Option<JointOptimum> = None;
    for round in 1..=JOINT_MAX_ROUNDS {
        let next = opt_eeff_with(ch, te, tol)?;
        let next_te = opt_te_with(ch, horizon, next.eeff, tol)?;
        let n = n_closed_at_eeff(ch, horizon, next_te, next.eeff)?;
        let candidate = JointOptimum {
            te: next_te,
            eeff: next.eeff,
            backoff: backoff_for_eeff(ch, next_te, next.eeff)?,
            n_closed: n,
            rounds: round,
            converged: false,
        };
        let settled = next_te == te && (next.eeff - eeff).abs() <= tol.rel_tol * eeff.max(f64::MIN_POSITIVE);
        if settled {
            return Ok(JointOptimum {
                converged: true,
                ..candidate
            });
        }
        if best.is_none_or(|b| candidate.n_closed > b.n_closed) {
            best = Some(candidate);
        }
        te = next_te;
        eeff = next.eeff;
    }
    let mut best = best.expect("at least one round ran");
    best.rounds = JOINT_MAX_ROUNDS;
    Ok(best)
}

/// Every throughput and error quantity for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EttReport {
    pub delta: f64,
    pub horizon: u64,
    pub te: u64,
    pub tt: u64,
    pub backoff: f64,
    pub eeff_exact: f64,
    pub eeff_gauss: f64,
    pub n_exact: f64,
    pub n_closed: f64,
    /// Throughput with the achievability bound as block error (a lower bound).
    pub n_ppv_lower: f64,
    /// Throughput with the converse bound as block error (an upper bound).
    pub n_ppv_upper: f64,
    pub n_oracle: f64,
    pub regret_step: f64,
}

pub fn ett_report(ch: Channel, cfg: EttConfig) -> Result<EttReport> {
    let eeff_gauss = eeff_step_gauss(ch, cfg.te, cfg.backoff);
    let n_exact = n_exact_step(ch, cfg);
    let n_oracle = oracle_n_saturating(ch, cfg.horizon, eeff_gauss)?;
    Ok(EttReport {
        delta: ch.delta(),
        horizon: cfg.horizon,
        te: cfg.te,
        tt: cfg.tt(),
        backoff: cfg.backoff,
        eeff_exact: eeff_step_exact(ch, cfg.te, cfg.backoff),
        eeff_gauss,
        n_exact,
        n_closed: n_closed(ch, cfg),
        n_ppv_lower: n_exact_ppv(ch, cfg, ErrorModel::PpvUpper),
        n_ppv_upper: n_exact_ppv(ch, cfg, ErrorModel::PpvLower),
        n_oracle,
        regret_step: regret(n_exact, n_oracle),
    })
}

/// Oracle throughput that tolerates an operating point which underflowed to 0
/// (the oracle rate then clamps to 0).
pub(crate) fn oracle_n_saturating(ch: Channel, horizon: u64, eeff: f64) -> Result<f64> {
    if eeff <= 0.0 {
        Ok(0.0)
    } else {
        oracle_n(ch, horizon, eeff)
    }
}
