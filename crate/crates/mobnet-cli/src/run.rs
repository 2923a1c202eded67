//! Experiment dispatch: everything that turns a validated config into
//! artifacts on disk. All writes stay under the configured output
//! directory; all randomness derives from the config seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde_json::json;

use mobnet::scaling::{
    drift_run, ergodicity_probe, fluid_run, kelly_run, martingale_constancy_run,
    subcritical_exit_run, trapping_run, EnsembleOptions,
};
use mobnet::simulator::{
    check_mm1_embedding, simulate, simulate_triple, RngStream,
};
use mobnet::martingale::{deviation_bound_check, DeviationCheckConfig};
use mobnet::spectral::SpectralData;
use mobnet::state::{epsilon_zero, Regime, SimplexPoint};
use mobnet::suite;

use crate::config::{ExperimentConfig, Kind, Manifest, Representation};

pub enum Verdict {
    Ok,
    /// An exact pathwise invariant failed; the process exits nonzero.
    HardFailure,
}

fn ensemble_options(cfg: &ExperimentConfig, default_tolerance: f64) -> EnsembleOptions {
    EnsembleOptions {
        master_seed: cfg.seed,
        tolerance: cfg.experiment.tolerance.unwrap_or(default_tolerance),
        ..EnsembleOptions::default()
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn require<T: Copy>(v: Option<T>, field: &str) -> anyhow::Result<T> {
    v.with_context(|| format!("missing experiment.{field}"))
}

pub fn run(cfg: ExperimentConfig) -> anyhow::Result<Verdict> {
    if let Some(w) = cfg.workers {
        if std::env::var_os("MOBNET_WORKERS").is_none() {
            std::env::set_var("MOBNET_WORKERS", w.to_string());
        }
    }
    let q = cfg.q.build()?;
    let s = SpectralData::validate(&q).context("spectral validation")?;
    let params = cfg.params()?;
    if params.n() != q.n() {
        bail!(
            "network has {} nodes but q.rows is {}x{}",
            params.n(),
            q.n(),
            q.n()
        );
    }
    // regime declarations are config errors when they contradict the
    // rates, caught before any simulation starts
    if let Some(declared) = cfg.experiment.regime {
        if declared != params.regime() {
            bail!(
                "experiment.regime = {declared:?} contradicts the rates \
                 (lambda = {}, mu = {})",
                params.lambda_total(),
                params.mu_total()
            );
        }
    }

    let out = cfg.output.clone();
    std::fs::create_dir_all(&out)
        .with_context(|| format!("cannot create {}", out.display()))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
    };
    write_json(&out.join("manifest.json"), &serde_json::to_value(&manifest)?)?;

    let (summary, verdict) = match cfg.kind {
        Kind::Simulate => run_simulate(&cfg, &s, &q)?,
        Kind::Kelly => run_kelly(&cfg, &s, &q)?,
        Kind::Fluid => run_fluid(&cfg, &s, &q)?,
        Kind::Drift => run_drift(&cfg, &s, &q)?,
        Kind::Trapping => run_trapping(&cfg, &s, &q)?,
        Kind::SubcriticalExit => run_subcritical_exit(&cfg, &s, &q)?,
        Kind::Ergodicity => run_ergodicity(&cfg, &s, &q)?,
        Kind::MartingaleCheck => run_martingale_check(&cfg, &s, &q)?,
        Kind::DeviationBound => run_deviation_bound(&cfg, &s, &q)?,
        Kind::IdentitySuite => run_identity_suite(&cfg)?,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(verdict)
}

fn run_simulate(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let x0 = cfg.x0(s.n())?;
    let horizon = require(cfg.experiment.horizon, "horizon")?;
    let paths = cfg.experiment.paths.unwrap_or(1);
    let repr = cfg
        .experiment
        .representation
        .unwrap_or(Representation::Plain);
    let opts = cfg.sim_options();
    let mut hard_pass = true;
    let mut files = Vec::new();
    for k in 0..paths {
        let stream = RngStream::new(cfg.seed, k as u64);
        let name = match repr {
            Representation::Plain => {
                let traj = simulate(&params, q, &x0, horizon, &opts, &stream)?;
                traj.check_well_formed().context("sampled trajectory")?;
                let name = format!("trajectory_{k:04}.csv");
                let mut w = BufWriter::new(File::create(cfg.output.join(&name))?);
                traj.write_csv(&mut w)?;
                name
            }
            Representation::Triple => {
                let tp = simulate_triple(&params, q, &x0, horizon, &opts, &stream)?;
                if !check_mm1_embedding(&tp).pass() {
                    hard_pass = false;
                }
                let name = format!("triple_{k:04}.csv");
                let mut w = BufWriter::new(File::create(cfg.output.join(&name))?);
                tp.write_csv(&mut w)?;
                name
            }
        };
        files.push(name);
    }
    let verdict = if hard_pass {
        Verdict::Ok
    } else {
        Verdict::HardFailure
    };
    Ok((
        json!({
            "kind": "simulate",
            "paths": paths,
            "hard_pass": hard_pass,
            "files": files,
        }),
        verdict,
    ))
}

fn write_deviation_report(
    cfg: &ExperimentConfig,
    rep: &mobnet::scaling::DeviationReport,
) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(cfg.output.join("report.csv"))?);
    rep.write_csv(&mut w)?;
    Ok(())
}

fn run_kelly(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let plan = cfg.plan()?;
    let t = require(cfg.experiment.t, "t")?;
    let rho = match &cfg.experiment.rho {
        Some(r) => SimplexPoint::new(r.clone()).context("experiment.rho")?,
        None => SimplexPoint::new(s.pi().to_vec())?,
    };
    let opts = ensemble_options(cfg, 0.1);
    let rep = kelly_run(&plan, s, &params, q, &rho, t, &opts)?;
    write_deviation_report(cfg, &rep)?;
    let (lo, hi) = (plan.ladder[0], *plan.ladder.last().unwrap());
    let passed = rep.median_for(hi) < rep.median_for(lo);
    Ok((
        json!({
            "kind": "kelly",
            "summary": rep.summary(),
            "passed": passed,
        }),
        Verdict::Ok,
    ))
}

fn run_fluid(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let plan = cfg.plan()?;
    let regime = require(cfg.experiment.regime, "regime")?;
    let a = cfg.experiment.a.unwrap_or(1.0);
    let [ws, wt] = require(cfg.experiment.window, "window")?;
    let opts = ensemble_options(cfg, 0.1);
    let rep = fluid_run(&plan, s, &params, q, regime, a, (ws, wt), &opts)?;
    write_deviation_report(cfg, &rep)?;
    let (lo, hi) = (plan.ladder[0], *plan.ladder.last().unwrap());
    let passed = rep.pass_fraction_for(hi).unwrap_or(0.0) >= 0.95
        && rep.median_for(hi) < rep.median_for(lo);
    Ok((
        json!({
            "kind": "fluid",
            "summary": rep.summary(),
            "passed": passed,
        }),
        Verdict::Ok,
    ))
}

fn run_drift(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let x0 = cfg.x0(s.n())?;
    let t_max = require(cfg.experiment.t, "t")?;
    let paths = cfg.experiment.paths.unwrap_or(100);
    let opts = ensemble_options(cfg, 0.05);
    let rep = drift_run(s, &params, q, &x0, t_max, paths, &opts)?;
    write_deviation_report(cfg, &rep)?;
    let t_last = rep
        .samples
        .iter()
        .map(|x| x.fluid_time)
        .fold(0.0f64, f64::max);
    let finals: Vec<f64> = rep
        .samples
        .iter()
        .filter(|x| x.fluid_time == t_last)
        .map(|x| x.deviation)
        .collect();
    let within = finals.iter().filter(|&&d| d < opts.tolerance).count();
    let passed = within as f64 >= 0.95 * finals.len() as f64;
    Ok((
        json!({
            "kind": "drift",
            "final_time": t_last,
            "within_tolerance": within,
            "paths": finals.len(),
            "passed": passed,
        }),
        Verdict::Ok,
    ))
}

fn run_trapping(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let plan = cfg.plan()?;
    let eps = require(cfg.experiment.eps, "eps")?;
    let delta = cfg.experiment.delta.unwrap_or(0.0);
    let opts = ensemble_options(cfg, 0.1);
    let rep = trapping_run(&plan, s, &params, q, eps, delta, &opts)?;
    let p = rep.increasing_p();
    Ok((
        json!({
            "kind": "trapping",
            "report": rep,
            "increasing_p": p,
            "passed": p < 0.05,
        }),
        Verdict::Ok,
    ))
}

fn run_subcritical_exit(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let plan = cfg.plan()?;
    let eps = require(cfg.experiment.eps, "eps")?;
    let a = cfg.experiment.a.unwrap_or(1.0);
    let t = require(cfg.experiment.t, "t")?;
    let opts = ensemble_options(cfg, 0.1);
    let rep = subcritical_exit_run(&plan, s, &params, q, eps, a, t, &opts)?;
    let p = rep.decreasing_p();
    Ok((
        json!({
            "kind": "subcritical-exit",
            "report": rep,
            "decreasing_p": p,
            "passed": p < 0.05,
        }),
        Verdict::Ok,
    ))
}

fn run_ergodicity(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let plan = cfg.plan()?;
    let opts = ensemble_options(cfg, 0.1);
    let rep = ergodicity_probe(&plan, s, &params, q, &opts)?;
    let worst: Vec<f64> = plan
        .ladder
        .iter()
        .map(|&n| rep.worst(n).unwrap_or(f64::INFINITY))
        .collect();
    let passed = worst.windows(2).all(|w| w[1] <= w[0])
        && worst.last().is_some_and(|&w| w < opts.tolerance);
    Ok((
        json!({
            "kind": "ergodicity",
            "report": rep,
            "worst_by_scale": worst,
            "passed": passed,
        }),
        Verdict::Ok,
    ))
}

fn run_martingale_check(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let x0 = cfg.x0(s.n())?;
    let alphas = cfg
        .experiment
        .alpha
        .clone()
        .context("missing experiment.alpha")?;
    let times = cfg
        .experiment
        .times
        .clone()
        .context("missing experiment.times")?;
    let paths = cfg.experiment.paths.unwrap_or(1000);
    let cells = cfg.experiment.cells.unwrap_or(48);
    let opts = ensemble_options(cfg, 0.1);
    let mut reports = Vec::new();
    let mut passed = true;
    for &alpha in &alphas {
        let rep =
            martingale_constancy_run(s, &params, q, &x0, alpha, &times, paths, cells, &opts)?;
        passed &= rep.max_sigma_deviation() <= 3.0;
        reports.push(rep);
    }
    Ok((
        json!({
            "kind": "martingale-check",
            "reports": reports,
            "passed": passed,
        }),
        Verdict::Ok,
    ))
}

fn run_deviation_bound(
    cfg: &ExperimentConfig,
    s: &SpectralData,
    q: &mobnet::RateMatrix,
) -> anyhow::Result<(serde_json::Value, Verdict)> {
    let params = cfg.params()?;
    let x0 = cfg.x0(s.n())?;
    let check = DeviationCheckConfig {
        eps: require(cfg.experiment.eps, "eps")?,
        delta: require(cfg.experiment.delta, "delta")?,
        alphas: cfg
            .experiment
            .alpha
            .clone()
            .context("missing experiment.alpha")?,
        ells: cfg
            .experiment
            .ells
            .clone()
            .context("missing experiment.ells")?,
        paths: cfg.experiment.paths.unwrap_or(300),
        horizon: require(cfg.experiment.horizon, "horizon")?,
        grid_step: cfg.experiment.grid_step.unwrap_or(0.01),
        cells: cfg.experiment.cells.unwrap_or(48),
    };
    let rep = deviation_bound_check(s, &params, q, &x0, &check, &RngStream::new(cfg.seed, 0))?;
    let passed = rep.pass();
    Ok((
        json!({
            "kind": "deviation-bound",
            "report": rep,
            "passed": passed,
        }),
        Verdict::Ok,
    ))
}

fn run_identity_suite(cfg: &ExperimentConfig) -> anyhow::Result<(serde_json::Value, Verdict)> {
    // the exact-algebra subset of the battery: these are hard checks
    let results = suite::run_battery_subset(cfg.seed, &[1, 2, 11, 12]);
    for r in &results {
        println!("{r}");
    }
    let passed = suite::all_passed(&results);
    let verdict = if passed {
        Verdict::Ok
    } else {
        Verdict::HardFailure
    };
    Ok((
        json!({
            "kind": "identity-suite",
            "results": results,
            "passed": passed,
        }),
        verdict,
    ))
}

pub fn describe(cfg: ExperimentConfig) -> anyhow::Result<Verdict> {
    let q = cfg.q.build()?;
    let s = SpectralData::validate(&q).context("spectral validation")?;
    let params = cfg.params()?;
    let pi = SimplexPoint::new(s.pi().to_vec())?;
    let (b_mix, eta) = s.mixing_constants();
    let (e_norm, e_entropy) = epsilon_zero(&pi);

    println!("nodes:      {}", s.n());
    println!("pi:         {:?}", s.pi());
    println!("theta:      {:.6}", s.theta());
    println!("eta:        {eta:.6}");
    println!("B:          {b_mix:.6}");
    println!("epsilon0:   norm {e_norm:.6}, entropy {e_entropy:.6}");
    let (lt, mt) = (params.lambda_total(), params.mu_total());
    println!(
        "regime:     {:?} (lambda = {lt}, mu = {mt})",
        params.regime()
    );
    if params.regime() == Regime::Subcritical {
        let a = cfg.experiment.a.unwrap_or(1.0);
        println!("t_a:        {} (initial mass {a})", a / (mt - lt));
    }
    if let Some(plan) = &cfg.plan {
        let plan = plan.build()?;
        println!("schedule:   N, delta_N, t_N");
        for &n in &plan.ladder {
            let delta = plan.delta.delta(n);
            let t_n = (-(delta / (4.0 * b_mix)).ln() / eta).max(0.0);
            println!("            {n}, {delta:.6}, {t_n:.6}");
        }
    }
    Ok(Verdict::Ok)
}
