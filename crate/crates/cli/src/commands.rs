use clap::ValueEnum;
use serde::Serialize;

use erasure_regret::ett::{backoff_for_eeff, ett_report, n_exact_ppv, EttReport};
use erasure_regret::fbl::{eps_lower, eps_upper};
use erasure_regret::mc::{simulate_ett, simulate_window};
use erasure_regret::sweep::{backoff_sweep, regret_curve, te_opt_vs_horizon, te_sweep};
use erasure_regret::windowing::{geom_n_bounds, window_n_closed, window_n_exact_model, ScheduleKind, ThroughputBounds};
use erasure_regret::{Channel, CodePoint, ErrorModel, EttConfig, Exec, Schedule, SimConfig, SimReport};

use crate::output::{json, num, Table};
use crate::params::{Format, Params};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    /// Throughput against Te at fixed eeff
    Te,
    /// Throughput against the backoff at fixed Te
    Backoff,
    /// Optimal Te against the horizon
    #[value(name = "te_opt_vs_T")]
    TeOptVsT,
    /// Regret against the horizon per strategy
    #[value(name = "regret_curve")]
    RegretCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimStrategy {
    Ett,
    Window,
}

fn channel(p: &Params) -> Result<Channel, CliError> {
    Ok(Channel::new(p.delta_or_default())?)
}

fn render<T: Serialize>(p: &Params, value: &T, table: impl FnOnce() -> Table) -> Result<Vec<u8>, CliError> {
    match p.format() {
        Format::Json => json(value),
        Format::Csv => table().render(),
    }
}

#[derive(Serialize)]
struct BoundRow {
    rate: f64,
    eps_lower: f64,
    eps_upper: f64,
}

pub fn bounds(p: &Params) -> Result<Vec<u8>, CliError> {
    let ch = channel(p)?;
    let n = Params::require(p.n, "n")?;
    let rows = p
        .real_grid((0.0, 1.0, 0.01))?
        .into_iter()
        .map(|rate| {
            // grid points may overshoot 1 by an ulp
            let rate = if rate > 1.0 && rate - 1.0 < 1e-9 { 1.0 } else { rate };
            let cp = CodePoint::new(n, rate)?;
            Ok(BoundRow {
                rate,
                eps_lower: eps_lower(ch, cp),
                eps_upper: eps_upper(ch, cp),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    render(p, &rows, || {
        let mut t = Table::new(&["rate", "eps_lower", "eps_upper"]);
        for r in &rows {
            t.row(vec![num(r.rate), num(r.eps_lower), num(r.eps_upper)]);
        }
        t
    })
}

fn ett_config(p: &Params, ch: Channel) -> Result<EttConfig, CliError> {
    let horizon = Params::require(p.horizon, "T")?;
    let te = Params::require(p.te, "Te")?;
    let backoff = match (p.backoff, p.eeff) {
        (Some(b), None) => b,
        (None, Some(e)) => backoff_for_eeff(ch, te, e)?,
        _ => return Err(CliError::Usage("give exactly one of --backoff and --eeff".into())),
    };
    Ok(EttConfig::new(horizon, te, backoff)?)
}

pub const ETT_COLUMNS: [&str; 13] = [
    "delta",
    "T",
    "Te",
    "Tt",
    "backoff",
    "eeff_exact",
    "eeff_gauss",
    "N_exact",
    "N_closed",
    "N_ppv_lower",
    "N_ppv_upper",
    "N_oracle",
    "regret",
];

fn ett_cells(r: &EttReport) -> Vec<String> {
    vec![
        num(r.delta),
        r.horizon.to_string(),
        r.te.to_string(),
        r.tt.to_string(),
        num(r.backoff),
        num(r.eeff_exact),
        num(r.eeff_gauss),
        num(r.n_exact),
        num(r.n_closed),
        num(r.n_ppv_lower),
        num(r.n_ppv_upper),
        num(r.n_oracle),
        num(r.regret_step),
    ]
}

pub fn ett_eval(p: &Params) -> Result<Vec<u8>, CliError> {
    let ch = channel(p)?;
    let report = ett_report(ch, ett_config(p, ch)?)?;
    render(p, &report, || {
        let mut t = Table::new(&ETT_COLUMNS);
        t.row(ett_cells(&report));
        t
    })
}

pub fn sweep(p: &Params, kind: SweepKind) -> Result<Vec<u8>, CliError> {
    let ch = channel(p)?;
    let exec = Exec::default();
    match kind {
        SweepKind::Te => {
            let horizon = Params::require(p.horizon, "T")?;
            let grid = p.int_grid((2, horizon.saturating_sub(1), 1))?;
            let s = te_sweep(ch, horizon, p.eeff_or_default(), &grid, exec)?;
            render(p, &s, || {
                let mut t = Table::new(&["Te", "backoff", "N_closed", "N_exact", "is_opt"]);
                for r in &s.rows {
                    t.row(vec![
                        r.te.to_string(),
                        num(r.backoff),
                        num(r.n_closed),
                        num(r.n_exact),
                        flag(r.is_opt),
                    ]);
                }
                t.note("Te_opt", s.te_opt.to_string());
                t
            })
        }
        SweepKind::Backoff => {
            let horizon = Params::require(p.horizon, "T")?;
            let te = Params::require(p.te, "Te")?;
            let grid = p.real_grid((0.0, 0.2, 0.001))?;
            let s = backoff_sweep(ch, horizon, te, &grid, exec)?;
            render(p, &s, || {
                let mut t = Table::new(&["backoff", "eeff", "N_closed", "N_exact", "is_opt"]);
                for r in &s.rows {
                    t.row(vec![
                        num(r.backoff),
                        num(r.eeff),
                        num(r.n_closed),
                        num(r.n_exact),
                        flag(r.is_opt),
                    ]);
                }
                t.note("backoff_opt", num(s.backoff_opt));
                t
            })
        }
        SweepKind::TeOptVsT => {
            let c = te_opt_vs_horizon(ch, p.eeff_or_default(), &p.horizons()?, exec)?;
            render(p, &c, || {
                let mut t = Table::new(&["T", "Te_opt", "Te_argmax"]);
                for r in &c.rows {
                    t.row(vec![
                        r.horizon.to_string(),
                        r.te_opt.to_string(),
                        r.te_argmax.to_string(),
                    ]);
                }
                t.note("slope", num(c.slope));
                t
            })
        }
        SweepKind::RegretCurve => {
            let exponents = p
                .int_grid((10, 20, 1))?
                .into_iter()
                .map(|k| u32::try_from(k).map_err(|_| CliError::Usage(format!("exponent {k} out of range"))))
                .collect::<Result<Vec<u32>, CliError>>()?;
            let c = regret_curve(ch, p.eeff_or_default(), &exponents, &p.strategies()?, exec)?;
            render(p, &c, || {
                let mut t = Table::new(&["strategy", "T", "N_exact", "N_closed", "N_oracle", "regret"]);
                for r in &c.rows {
                    t.row(vec![
                        r.strategy.to_string(),
                        r.horizon.to_string(),
                        num(r.n_exact),
                        num(r.n_closed),
                        num(r.n_oracle),
                        num(r.regret),
                    ]);
                }
                for (s, slope) in &c.slopes {
                    t.note(&format!("slope {s}"), num(*slope));
                }
                t
            })
        }
    }
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

#[derive(Serialize)]
struct SimSummary {
    #[serde(flatten)]
    report: SimReport,
    seed: u64,
    error_model: ErrorModel,
    exact_n: f64,
    z: f64,
}

fn sim_config(p: &Params) -> Result<SimConfig, CliError> {
    let trials = Params::require(p.trials, "trials")?;
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    Ok(SimConfig::new(trials, p.seed()?, p.error_model()?)?)
}

#[derive(Serialize)]
struct WindowOutput {
    schedule: String,
    blocks: Vec<u64>,
    horizon: u64,
    eeff: f64,
    n_exact: f64,
    n_closed: f64,
    queries: usize,
    bounds: Option<ThroughputBounds>,
    per_block_exact: Vec<f64>,
    per_block_closed: Vec<f64>,
    simulation: Option<SimSummary>,
}

pub fn window(p: &Params, per_block: bool) -> Result<Vec<u8>, CliError> {
    let ch = channel(p)?;
    let s = p.schedule()?;
    let eeff = p.eeff_or_default();
    let model = p.error_model()?;
    let exact = window_n_exact_model(ch, &s, eeff, model, Exec::default())?;
    let closed = window_n_closed(ch, &s, eeff)?;
    let bounds = match s.kind() {
        ScheduleKind::Geometric => Some(geom_n_bounds(ch, s.len() as u32, eeff)?),
        _ => None,
    };
    let simulation = match p.trials {
        Some(_) => {
            let sim = sim_config(p)?;
            let report = simulate_window(ch, &s, eeff, sim)?;
            Some(SimSummary {
                report,
                seed: sim.master_seed,
                error_model: sim.error_model,
                exact_n: exact.n_total,
                z: report.z_score(exact.n_total),
            })
        }
        None => None,
    };
    let out = WindowOutput {
        schedule: s.to_string(),
        blocks: s.blocks().to_vec(),
        horizon: s.horizon(),
        eeff,
        n_exact: exact.n_total,
        n_closed: closed.n_total,
        queries: exact.queries,
        bounds,
        per_block_exact: exact.per_block.iter().map(|b| b.contribution).collect(),
        per_block_closed: closed.per_block.iter().map(|b| b.contribution).collect(),
        simulation,
    };
    render(p, &out, || {
        if per_block {
            let mut t = Table::new(&["block", "len", "S_prev", "backoff", "N_exact", "N_closed"]);
            for (i, (e, c)) in exact.per_block.iter().zip(&closed.per_block).enumerate() {
                t.row(vec![
                    (i + 1).to_string(),
                    e.len.to_string(),
                    e.s_prev.to_string(),
                    num(e.backoff),
                    num(e.contribution),
                    num(c.contribution),
                ]);
            }
            return t;
        }
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        let sim = out.simulation.as_ref();
        let mut t = Table::new(&[
            "schedule",
            "T",
            "M",
            "queries",
            "eeff",
            "N_exact",
            "N_closed",
            "bound_lower",
            "bound_upper",
            "mc_mean_N",
            "mc_stderr_N",
            "mc_empirical_eeff",
            "mc_stderr_eeff",
            "mc_z",
        ]);
        t.row(vec![
            out.schedule.clone(),
            out.horizon.to_string(),
            s.len().to_string(),
            out.queries.to_string(),
            num(eeff),
            num(out.n_exact),
            num(out.n_closed),
            opt(bounds.map(|b| b.lower)),
            opt(bounds.map(|b| b.upper)),
            opt(sim.map(|s| s.report.mean_n)),
            opt(sim.map(|s| s.report.stderr_n)),
            opt(sim.map(|s| s.report.empirical_eeff)),
            opt(sim.map(|s| s.report.stderr_eeff)),
            opt(sim.map(|s| s.z)),
        ]);
        t
    })
}

#[derive(Serialize)]
struct SimulateOutput {
    strategy: String,
    #[serde(flatten)]
    summary: SimSummary,
}

pub fn simulate(p: &Params, strategy: SimStrategy) -> Result<Vec<u8>, CliError> {
    let ch = channel(p)?;
    let sim = sim_config(p)?;
    let (label, report, exact) = match strategy {
        SimStrategy::Ett => {
            let cfg = ett_config(p, ch)?;
            let report = simulate_ett(ch, cfg, sim)?;
            ("ett".to_string(), report, n_exact_ppv(ch, cfg, sim.error_model))
        }
        SimStrategy::Window => {
            let s: Schedule = p.schedule()?;
            let eeff = p.eeff_or_default();
            let report = simulate_window(ch, &s, eeff, sim)?;
            let exact = window_n_exact_model(ch, &s, eeff, sim.error_model, Exec::default())?.n_total;
            (s.to_string(), report, exact)
        }
    };
    let out = SimulateOutput {
        strategy: label,
        summary: SimSummary {
            report,
            seed: sim.master_seed,
            error_model: sim.error_model,
            exact_n: exact,
            z: report.z_score(exact),
        },
    };
    render(p, &out, || {
        let mut t = Table::new(&[
            "strategy",
            "error_model",
            "trials",
            "seed",
            "mean_N",
            "stderr_N",
            "empirical_eeff",
            "stderr_eeff",
            "exact_N",
            "z",
        ]);
        let s = &out.summary;
        t.row(vec![
            out.strategy.clone(),
            s.error_model.to_string(),
            s.report.trials.to_string(),
            s.seed.to_string(),
            num(s.report.mean_n),
            num(s.report.stderr_n),
            num(s.report.empirical_eeff),
            num(s.report.stderr_eeff),
            num(s.exact_n),
            num(s.z),
        ]);
        t
    })
}
