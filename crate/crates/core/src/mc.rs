//! Seeded Monte Carlo simulation of both strategies on bit-level erasure
//! sample paths.
//!
//! Every trial gets its own ChaCha8 stream seeded by [`derive_trial_seed`].
//! Trials are grouped into fixed-size chunks; each chunk is reduced in trial
//! order and the chunk summaries are merged in chunk order, so a report is
//! bit-identical no matter how many worker threads ran.
//!
//! `empirical_eeff` is the fraction of transmitted blocks that fail, averaged
//! per trial. For Estimate-then-Transmit each trial has one transmitted block;
//! for windowing every block after the first counts.

use rand::distr::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ett::{error_table, first_success_count, rate_decision, ErrorModel, EttConfig};
use crate::fbl::Channel;
use crate::par::{map_indexed, Exec};
use crate::windowing::{window_backoffs, Schedule};

const CHUNK: u64 = 1024;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub trials: u64,
    pub master_seed: u64,
    pub error_model: ErrorModel,
}

impl SimConfig {
    pub fn new(trials: u64, master_seed: u64, error_model: ErrorModel) -> Result<Self> {
        if trials == 0 {
            return Err(Error::domain("at least one trial is required"));
        }
        Ok(Self {
            trials,
            master_seed,
            error_model,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mean_n: f64,
    pub stderr_n: f64,
    pub empirical_eeff: f64,
    pub stderr_eeff: f64,
    pub trials: u64,
}

impl SimReport {
    /// Standardized distance of the mean from `exact`. Zero when both the
    /// gap and the standard error vanish.
    pub fn z_score(&self, exact: f64) -> f64 {
        let gap = self.mean_n - exact;
        if gap == 0.0 {
            0.0
        } else {
            gap / self.stderr_n
        }
    }
}

/// SplitMix64 output for the `(index + 1)`-th state after `master`. The map
/// `index -> master + (index + 1) * gamma` is injective modulo `2^64` because
/// `gamma` is odd, and the finalizer is a bijection, so distinct indices always
/// get distinct seeds.
pub fn derive_trial_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Running mean and sum of squared deviations for two per-trial quantities.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean_n: f64,
    m2_n: f64,
    mean_e: f64,
    m2_e: f64,
}

impl Moments {
    fn push(&mut self, n: f64, e: f64) {
        self.count += 1.0;
        let dn = n - self.mean_n;
        self.mean_n += dn / self.count;
        self.m2_n += dn * (n - self.mean_n);
        let de = e - self.mean_e;
        self.mean_e += de / self.count;
        self.m2_e += de * (e - self.mean_e);
    }

    fn merge(self, other: Self) -> Self {
        if other.count == 0.0 {
            return self;
        }
        if self.count == 0.0 {
            return other;
        }
        let count = self.count + other.count;
        let w = other.count / count;
        let dn = other.mean_n - self.mean_n;
        let de = other.mean_e - self.mean_e;
        Self {
            count,
            mean_n: self.mean_n + dn * w,
            m2_n: self.m2_n + other.m2_n + dn * dn * self.count * w,
            mean_e: self.mean_e + de * w,
            m2_e: self.m2_e + other.m2_e + de * de * self.count * w,
        }
    }

    fn report(self, trials: u64) -> SimReport {
        let stderr = |m2: f64| {
            if self.count > 1.0 {
                (m2.max(0.0) / (self.count - 1.0) / self.count).sqrt()
            } else {
                0.0
            }
        };
        SimReport {
            mean_n: self.mean_n,
            stderr_n: stderr(self.m2_n),
            empirical_eeff: self.mean_e.clamp(0.0, 1.0),
            stderr_eeff: stderr(self.m2_e),
            trials,
        }
    }
}

/// Runs `trial(rng) -> (payoff, error_fraction)` for every trial index.
fn run_trials<F>(sim: SimConfig, exec: Exec, trial: F) -> SimReport
where
    F: Fn(&mut ChaCha8Rng) -> (f64, f64) + Sync + Send,
{
    let chunks = sim.trials.div_ceil(CHUNK);
    let partials = map_indexed(exec, chunks as usize, |c| {
        let start = c as u64 * CHUNK;
        let end = (start + CHUNK).min(sim.trials);
        let mut acc = Moments::default();
        for index in start..end {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_trial_seed(sim.master_seed, index));
            let (n, e) = trial(&mut rng);
            acc.push(n, e);
        }
        acc
    });
    partials
        .into_iter()
        .fold(Moments::default(), Moments::merge)
        .report(sim.trials)
}

/// How a block at a given pilot count fails.
enum Outcome {
    /// Fails iff fewer than this many erasures were seen.
    Step(u64),
    /// Fails with the tabulated probability, indexed by erasure count.
    Random(Vec<f64>),
}

impl Outcome {
    fn new(delta: f64, te: u64, tt: u64, backoff: f64, model: ErrorModel, exec: Exec) -> Self {
        match model {
            ErrorModel::Step => Outcome::Step(first_success_count(te, delta, backoff)),
            _ => Outcome::Random(error_table(delta, te, tt, backoff, model, exec)),
        }
    }

    fn fails(&self, k: u64, rng: &mut ChaCha8Rng) -> bool {
        match self {
            Outcome::Step(first) => k < *first,
            Outcome::Random(table) => {
                let p = table[k as usize];
                p >= 1.0 || (p > 0.0 && rand::Rng::random_bool(rng, p))
            }
        }
    }
}

fn erasures(rng: &mut ChaCha8Rng, bit: &Bernoulli, bits: u64) -> u64 {
    (0..bits).map(|_| u64::from(bit.sample(rng))).sum()
}

/// Simulates Estimate-then-Transmit: `Te` pilot bits, then one block of `Tt`
/// bits at the committed rate.
pub fn simulate_ett(ch: Channel, cfg: EttConfig, sim: SimConfig) -> Result<SimReport> {
    simulate_ett_with(ch, cfg, sim, Exec::default())
}

pub fn simulate_ett_with(ch: Channel, cfg: EttConfig, sim: SimConfig, exec: Exec) -> Result<SimReport> {
    let sim = SimConfig::new(sim.trials, sim.master_seed, sim.error_model)?;
    let bit = Bernoulli::new(ch.delta()).map_err(|e| Error::domain(e.to_string()))?;
    let (te, tt, b) = (cfg.te, cfg.tt(), cfg.backoff);
    let outcome = Outcome::new(ch.delta(), te, tt, b, sim.error_model, exec);
    Ok(run_trials(sim, exec, |rng| {
        let k = erasures(rng, &bit, te);
        let rate = rate_decision(te, k, b);
        if outcome.fails(k, rng) {
            (0.0, 1.0)
        } else {
            (tt as f64 * rate, 0.0)
        }
    }))
}

/// Simulates a windowing strategy on one erasure path per trial, re-estimating
/// from all bits sent so far before every block after the first.
pub fn simulate_window(ch: Channel, s: &Schedule, eeff: f64, sim: SimConfig) -> Result<SimReport> {
    simulate_window_with(ch, s, eeff, sim, Exec::default())
}

pub fn simulate_window_with(ch: Channel, s: &Schedule, eeff: f64, sim: SimConfig, exec: Exec) -> Result<SimReport> {
    let sim = SimConfig::new(sim.trials, sim.master_seed, sim.error_model)?;
    let bit = Bernoulli::new(ch.delta()).map_err(|e| Error::domain(e.to_string()))?;
    let backoffs = window_backoffs(ch, s, eeff)?;
    let prev = s.prefix_sums();
    let blocks = s.blocks();
    let outcomes: Vec<Option<Outcome>> = (0..s.len())
        .map(|i| {
            (prev[i] > 0).then(|| Outcome::new(ch.delta(), prev[i], blocks[i], backoffs[i], sim.error_model, exec))
        })
        .collect();
    let transmitted = (s.len() - 1) as f64;
    Ok(run_trials(sim, exec, |rng| {
        let mut k = 0u64;
        let mut payoff = 0.0;
        let mut failures = 0u32;
        for i in 0..blocks.len() {
            if let Some(outcome) = &outcomes[i] {
                let rate = rate_decision(prev[i], k, backoffs[i]);
                if outcome.fails(k, rng) {
                    failures += 1;
                } else {
                    payoff += blocks[i] as f64 * rate;
                }
            }
            k += erasures(rng, &bit, blocks[i]);
        }
        (payoff, f64::from(failures) / transmitted)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ett::{eeff_step_exact, n_exact_ppv, n_exact_step};
    use crate::windowing::{make_geometric, window_n_exact};
    use std::collections::HashSet;

    fn ch(d: f64) -> Channel {
        Channel::new(d).unwrap()
    }

    fn sim(trials: u64, seed: u64) -> SimConfig {
        SimConfig::new(trials, seed, ErrorModel::Step).unwrap()
    }

    #[test]
    fn seed_derivation() {
        assert_eq!(derive_trial_seed(42, 7), derive_trial_seed(42, 7));
        // SplitMix64 reference: first output for state 0
        assert_eq!(derive_trial_seed(0, 0), 0xe220_a839_7b1d_cdaf);
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s: u64 = rng.random();
            assert_ne!(derive_trial_seed(s, 0), derive_trial_seed(s, 1));
        }
        let seen: HashSet<u64> = (0..100_000).map(|i| derive_trial_seed(99, i)).collect();
        assert_eq!(seen.len(), 100_000);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(SimConfig::new(0, 1, ErrorModel::Step).is_err());
        let bad = SimConfig {
            trials: 0,
            master_seed: 1,
            error_model: ErrorModel::Step,
        };
        let cfg = EttConfig::new(10, 4, 0.0).unwrap();
        assert!(simulate_ett(ch(0.5), cfg, bad).is_err());
    }

    #[test]
    fn large_backoff_gives_nothing() {
        let cfg = EttConfig::new(100, 20, 1.0).unwrap();
        let r = simulate_ett(ch(0.3), cfg, sim(5000, 3)).unwrap();
        assert_eq!(r.mean_n, 0.0);
        assert_eq!(r.stderr_n, 0.0);
        assert_eq!(r.empirical_eeff, 0.0);

        // Q^{-1}(1e-12) ~ 7.03, so every b_i >= 1 once sqrt(0.25 / S) * 7.03 >= 1
        let s = Schedule::custom(vec![3, 5, 6]).unwrap();
        let r = simulate_window(ch(0.5), &s, 1e-12, sim(2000, 3)).unwrap();
        assert_eq!(r.mean_n, 0.0);
    }

    #[test]
    fn ett_matches_exact_evaluator() {
        let cfg = EttConfig::new(250, 50, 0.05).unwrap();
        let r = simulate_ett(ch(0.3), cfg, sim(100_000, 11)).unwrap();
        let exact = n_exact_step(ch(0.3), cfg);
        assert!(r.z_score(exact).abs() <= 4.0, "{r:?} vs {exact}");
        let e = eeff_step_exact(ch(0.3), 50, 0.05);
        assert!(
            (r.empirical_eeff - e).abs() <= 4.0 * r.stderr_eeff,
            "{} vs {e}",
            r.empirical_eeff
        );
    }

    #[test]
    fn ett_hand_case() {
        let cfg = EttConfig::new(8, 4, 0.0).unwrap();
        let r = simulate_ett(ch(0.5), cfg, sim(200_000, 5)).unwrap();
        assert!(r.z_score(1.0).abs() <= 4.0, "{r:?}");
        assert!((r.empirical_eeff - 5.0 / 16.0).abs() <= 4.0 * r.stderr_eeff);
    }

    #[test]
    fn ett_ppv_models_match_exact() {
        let cfg = EttConfig::new(160, 60, 0.08).unwrap();
        for model in [ErrorModel::PpvUpper, ErrorModel::PpvLower, ErrorModel::PpvMid] {
            let s = SimConfig::new(40_000, 21, model).unwrap();
            let r = simulate_ett(ch(0.3), cfg, s).unwrap();
            let exact = n_exact_ppv(ch(0.3), cfg, model);
            assert!(r.z_score(exact).abs() <= 4.0, "{model}: {r:?} vs {exact}");
        }
    }

    #[test]
    fn window_matches_exact_evaluator() {
        let s = make_geometric(3).unwrap();
        let r = simulate_window(ch(0.5), &s, 0.5, sim(200_000, 8)).unwrap();
        let exact = window_n_exact(ch(0.5), &s, 0.5).unwrap().n_total;
        assert!(r.z_score(exact).abs() <= 4.0, "{r:?} vs {exact}");

        let s = Schedule::custom(vec![4, 9, 20, 30]).unwrap();
        let r = simulate_window(ch(0.3), &s, 0.2, sim(100_000, 9)).unwrap();
        let exact = window_n_exact(ch(0.3), &s, 0.2).unwrap().n_total;
        assert!(r.z_score(exact).abs() <= 4.0, "{r:?} vs {exact}");
    }

    #[test]
    fn window_error_fraction_tracks_operating_point() {
        let s = make_geometric(12).unwrap();
        // mean over blocks 2..=12 of P(K_{S_{i-1}} < S_{i-1} (delta - b_i)),
        // computed from the exact binomial law
        let blocks_mean = |e: f64| {
            let b = window_backoffs(ch(0.5), &s, e).unwrap();
            let p = s.prefix_sums();
            (1..s.len()).map(|i| eeff_step_exact(ch(0.5), p[i], b[i])).sum::<f64>() / (s.len() - 1) as f64
        };
        for (e, trials) in [(0.1, 4000), (0.5, 4000)] {
            let r = simulate_window(ch(0.5), &s, e, sim(trials, 77)).unwrap();
            let want = blocks_mean(e);
            assert!(
                (r.empirical_eeff - want).abs() <= 4.0 * r.stderr_eeff,
                "{e}: {} vs {want}",
                r.empirical_eeff
            );
            assert!((r.empirical_eeff - e).abs() <= 0.01, "{e}: {}", r.empirical_eeff);
        }
    }

    #[test]
    fn stderr_scales_with_trials() {
        let cfg = EttConfig::new(250, 50, 0.05).unwrap();
        let errs: Vec<f64> = [1_000u64, 10_000, 100_000]
            .iter()
            .map(|&t| simulate_ett(ch(0.3), cfg, sim(t, 4)).unwrap().stderr_n)
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio / 10f64.sqrt() - 1.0).abs() <= 0.2, "{errs:?}");
        }
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let cfg = EttConfig::new(250, 50, 0.05).unwrap();
        let s = make_geometric(6).unwrap();
        let run = |exec| {
            (
                simulate_ett_with(ch(0.3), cfg, sim(10_000, 5), exec).unwrap(),
                simulate_window_with(ch(0.5), &s, 0.3, sim(10_000, 5), exec).unwrap(),
            )
        };
        let seq = run(Exec::Sequential);
        assert_eq!(seq, run(Exec::Sequential));
        #[cfg(feature = "parallel")]
        for threads in [1, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let par = pool.install(|| run(Exec::Parallel));
            assert_eq!(seq.0.mean_n.to_bits(), par.0.mean_n.to_bits());
            assert_eq!(seq.1.stderr_n.to_bits(), par.1.stderr_n.to_bits());
            assert_eq!(seq, par);
        }
    }

    #[test]
    fn seeds_change_the_estimate() {
        let cfg = EttConfig::new(250, 50, 0.05).unwrap();
        let a = simulate_ett(ch(0.3), cfg, sim(2000, 1)).unwrap();
        let b = simulate_ett(ch(0.3), cfg, sim(2000, 2)).unwrap();
        assert_ne!(a.mean_n, b.mean_n);
    }
}
