//! Acceptance suite: eight end-to-end checks, each printed as one PASS/FAIL
//! line with its runtime. Exits non-zero if any check fails.

use std::time::{Duration, Instant};

use erasure_regret::ett::{backoff_for_eeff, eeff_step_exact, eeff_step_gauss, n_closed, n_exact_step, opt_eeff};
use erasure_regret::fbl::{eps_bounds, eps_upper, oracle_n};
use erasure_regret::mc::{simulate_ett_with, simulate_window_with};
use erasure_regret::numerics::fit_loglog_slope;
use erasure_regret::sweep::{real_grid, regret_curve, te_opt_vs_horizon, Strategy};
use erasure_regret::windowing::{geom_n_bounds, make_geometric, window_n_closed, window_n_exact};
use erasure_regret::{Channel, CodePoint, ErrorModel, EttConfig, Exec, SimConfig};

type Check = (u32, &'static str, u64, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn ch(d: f64) -> Channel {
    Channel::new(d).unwrap()
}

fn error_bound_curve() -> Outcome {
    let c = ch(0.3);
    let grid = real_grid(0.0, 1.0, 0.01).unwrap();
    let bounds: Vec<_> = grid
        .iter()
        .map(|&r| eps_bounds(c, CodePoint::new(100, r.min(1.0)).unwrap()))
        .collect();
    let ordered = bounds.iter().all(Result::is_ok);
    let bounds: Vec<_> = bounds.into_iter().filter_map(Result::ok).collect();
    let monotone = bounds
        .windows(2)
        .all(|w| w[1].lower >= w[0].lower && w[1].upper >= w[0].upper);
    let crossing = grid.iter().zip(&bounds).find(|(_, b)| b.upper > 0.5).map(|(r, _)| *r);
    let in_window = crossing.is_some_and(|r| (0.65..=0.72).contains(&r));
    Outcome {
        pass: ordered && monotone && in_window && grid.len() == 101,
        detail: format!("ordered={ordered} monotone={monotone} upper>0.5 first at r={crossing:?}"),
    }
}

fn gaussian_gap() -> Outcome {
    let c = ch(0.5);
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for b in [0.0, 0.02, 0.05] {
        for te in [25u64, 100, 400, 1600, 6400] {
            let gap = (eeff_step_exact(c, te, b) - eeff_step_gauss(c, te, b)).abs();
            let scaled = gap * (te as f64).sqrt();
            worst = worst.max(scaled);
            pass &= scaled <= 1.0;
        }
    }
    Outcome {
        pass,
        detail: format!("max |exact - gauss| sqrt(Te) = {worst:.4} (limit 1)"),
    }
}

fn closed_form_agreement() -> Outcome {
    let c = ch(0.5);
    let (t, eeff) = (10_000u64, 0.5);
    let mut worst = (0u64, 0.0f64);
    for te in 100..=2000u64 {
        let cfg = EttConfig::new(t, te, backoff_for_eeff(c, te, eeff).unwrap()).unwrap();
        let exact = n_exact_step(c, cfg);
        let gap = (n_closed(c, cfg) - exact).abs() / exact;
        if gap > worst.1 {
            worst = (te, gap);
        }
    }
    let te = 256;
    let grid = real_grid(0.0, 0.2, 0.0001).unwrap();
    let ns: Vec<f64> = grid
        .iter()
        .map(|&b| n_closed(c, EttConfig::new(t, te, b).unwrap()))
        .collect();
    let peak = (0..ns.len()).max_by(|&a, &b| ns[a].total_cmp(&ns[b])).unwrap();
    let unimodal = ns[..=peak].windows(2).all(|w| w[1] >= w[0]) && ns[peak..].windows(2).all(|w| w[1] <= w[0]);
    let b_opt = opt_eeff(c, te).unwrap().backoff;
    let near = (grid[peak] - b_opt).abs() <= 0.005;
    Outcome {
        pass: worst.1 <= 0.02 && unimodal && near,
        detail: format!(
            "max rel gap {:.4} at Te={} (limit 0.02); backoff argmax {:.4} vs optimizer {b_opt:.5}, unimodal={unimodal}",
            worst.1, worst.0, grid[peak]
        ),
    }
}

fn te_optimizer() -> Outcome {
    let c = ch(0.5);
    let curve = te_opt_vs_horizon(c, 0.5, &[1_000, 10_000, 100_000, 1_000_000], Exec::default()).unwrap();
    let row = curve.rows[1];
    let at_target = row.te_opt.abs_diff(256) <= 2 && row.te_opt == row.te_argmax;
    let slope_ok = (curve.slope - 2.0 / 3.0).abs() <= 0.05;
    let list: Vec<String> = curve
        .rows
        .iter()
        .map(|r| format!("{}:{}", r.horizon, r.te_opt))
        .collect();
    Outcome {
        pass: at_target && slope_ok,
        detail: format!(
            "Te*(1e4)={} argmax={} slope={:.4} [{}]",
            row.te_opt,
            row.te_argmax,
            curve.slope,
            list.join(" ")
        ),
    }
}

fn regret_scaling() -> Outcome {
    let c = ch(0.5);
    let curve = regret_curve(c, 0.5, &(10..=20).collect::<Vec<_>>(), &Strategy::ALL, Exec::default()).unwrap();
    let slope = |s: Strategy| curve.slopes.iter().find(|(v, _)| *v == s).unwrap().1;
    let at = |s: Strategy| {
        curve
            .rows
            .iter()
            .find(|r| r.strategy == s && r.horizon == (1 << 16) - 1)
            .unwrap()
            .regret
    };
    let (ett, geo) = (slope(Strategy::EttOpt), slope(Strategy::Geometric));
    let (r_ett, r_geo, r_ari) = (at(Strategy::EttOpt), at(Strategy::Geometric), at(Strategy::Arithmetic));
    let between = r_ari > r_geo.min(r_ett) && r_ari < r_geo.max(r_ett);
    Outcome {
        pass: (ett - 2.0 / 3.0).abs() <= 0.07 && (geo - 0.5).abs() <= 0.07 && between,
        detail: format!(
            "slopes ett_opt={ett:.4} geometric={geo:.4}; regret at 2^16: geometric {r_geo:.1} arithmetic {r_ari:.1} ett_opt {r_ett:.1}"
        ),
    }
}

fn geometric_sandwich() -> Outcome {
    let mut misses = Vec::new();
    let mut total = 0;
    for m in [6u32, 8, 10, 12, 14] {
        for d in [0.2, 0.5, 0.8] {
            for e in [0.1, 0.5] {
                total += 1;
                let s = make_geometric(m).unwrap();
                let n = window_n_closed(ch(d), &s, e).unwrap().n_total;
                let b = geom_n_bounds(ch(d), m, e).unwrap();
                let slack = (1.0 - d) * (1.0 - e);
                if n < b.lower - slack || n > b.upper + slack {
                    misses.push(format!("M={m} d={d} e={e}: {n:.2} vs [{:.2}, {:.2}]", b.lower, b.upper));
                }
            }
        }
    }
    let points: Vec<(f64, f64)> = (8..=20u32)
        .map(|m| {
            let t = ((1u64 << m) - 1) as f64;
            let b = geom_n_bounds(ch(0.5), m, 0.5).unwrap();
            (t, oracle_n(ch(0.5), (1 << m) - 1, 0.5).unwrap() - b.lower)
        })
        .collect();
    let slope = fit_loglog_slope(&points).unwrap();
    let slope_ok = (slope - 0.5).abs() <= 0.02;
    let first = misses.first().cloned().unwrap_or_default();
    Outcome {
        pass: misses.is_empty() && slope_ok,
        detail: format!(
            "{} of {total} outside the sandwich{}{first}; bound regret slope {slope:.4}",
            misses.len(),
            if misses.is_empty() { "" } else { ", e.g. " }
        ),
    }
}

fn monte_carlo_agreement() -> Outcome {
    let sim = |trials| SimConfig::new(trials, 0x5eed, ErrorModel::Step).unwrap();
    let c_ett = ch(0.3);
    let cfg = EttConfig::new(250, 50, 0.05).unwrap();
    let s = make_geometric(3).unwrap();
    let run = |exec| {
        (
            simulate_ett_with(c_ett, cfg, sim(100_000), exec).unwrap(),
            simulate_window_with(ch(0.5), &s, 0.5, sim(1_000_000), exec).unwrap(),
        )
    };
    let single = run(Exec::Sequential);
    let z_ett = single.0.z_score(n_exact_step(c_ett, cfg));
    let z_win = single.1.z_score(window_n_exact(ch(0.5), &s, 0.5).unwrap().n_total);
    let mut identical = single == run(Exec::Sequential);
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let multi = pool.install(|| run(Exec::Parallel));
        identical &= format!("{single:?}") == format!("{multi:?}");
    }
    Outcome {
        pass: z_ett.abs() <= 4.0 && z_win.abs() <= 4.0 && identical,
        detail: format!("z ett={z_ett:.3} window={z_win:.3}; identical across workers={identical}"),
    }
}

fn hand_enumeration() -> Outcome {
    let e = eeff_step_exact(ch(0.5), 4, 0.0);
    let n = n_exact_step(ch(0.5), EttConfig::new(8, 4, 0.0).unwrap());
    let u = eps_upper(ch(0.5), CodePoint::new(2, 0.0).unwrap());
    Outcome {
        pass: e == 5.0 / 16.0 && n == 1.0 && u == 0.5625,
        detail: format!("eeff={e:?} N={n:?} eps_upper={u:?}"),
    }
}

fn main() {
    let checks: [Check; 8] = [
        (1, "error bound curve", 1, error_bound_curve),
        (2, "gaussian error gap", 1, gaussian_gap),
        (3, "closed form vs exact throughput", 5, closed_form_agreement),
        (4, "estimation length optimizer", 10, te_optimizer),
        (5, "regret scaling", 60, regret_scaling),
        (6, "geometric windowing sandwich", 5, geometric_sandwich),
        (7, "monte carlo vs exact", 30, monte_carlo_agreement),
        (8, "hand enumeration", 1, hand_enumeration),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in checks {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = outcome.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {id} {}: {name}: {} [{:.2}s / {budget}s]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
