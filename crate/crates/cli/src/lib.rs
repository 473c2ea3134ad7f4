//! Command-line front end: `analyze`, `tune`, `simulate`, and `report`
//! over JSON scenario configs or the compiled-in presets.
//!
//! Exit codes are a stable contract: 0 on success, 1 on a domain failure
//! (a failed assumption, certificate, or convergence), 2 on usage or
//! config errors.

use consensus_core::costs;
use consensus_core::error::Error;
use consensus_core::graph;
use consensus_core::plant::{self, BoxAssumptionsSample};
use consensus_core::scenario::{preset, Resolved, ScenarioConfig};
use consensus_core::sim::{self, Trajectory};
use consensus_core::tuning::{self, TuningCertificate};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const USAGE: &str = "\
usage: consensus-sim <analyze|tune|simulate|report> [options]

options:
  --config FILE     scenario config (JSON)
  --preset NAME     compiled-in scenario: example1 | example2
  --out DIR         output directory (simulate/tune artifacts; default ./out)
  --tol T           settle tolerance override
  --seed S          randomize initial conditions with this seed
  --t-final T       horizon override (seconds)
  --dump-config     print the expanded config as JSON and exit
  --csv FILE        trajectory CSV to summarize (report)
  --y-star X        optimum override when no costs are available (report)
";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Tune,
    Simulate,
    Report,
}

#[derive(Clone, Debug)]
pub struct Args {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub out: PathBuf,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub t_final: Option<f64>,
    pub dump_config: bool,
    pub csv: Option<PathBuf>,
    pub y_star: Option<f64>,
}

pub fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut it = argv.iter();
    let command = match it.next().map(String::as_str) {
        Some("analyze") => Command::Analyze,
        Some("tune") => Command::Tune,
        Some("simulate") => Command::Simulate,
        Some("report") => Command::Report,
        Some(other) => return Err(format!("unknown command {other:?}")),
        None => return Err("missing command".into()),
    };
    let mut args = Args {
        command,
        config: None,
        preset: None,
        out: PathBuf::from("out"),
        tol: None,
        seed: None,
        t_final: None,
        dump_config: false,
        csv: None,
        y_star: None,
    };
    while let Some(flag) = it.next() {
        let mut value = || {
            it.next()
                .cloned()
                .ok_or_else(|| format!("flag {flag} needs a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value()?)),
            "--preset" => args.preset = Some(value()?),
            "--out" => args.out = PathBuf::from(value()?),
            "--tol" => args.tol = Some(parse_num(&value()?, flag)?),
            "--seed" => {
                args.seed = Some(
                    value()?
                        .parse::<u64>()
                        .map_err(|e| format!("bad --seed: {e}"))?,
                )
            }
            "--t-final" => args.t_final = Some(parse_num(&value()?, flag)?),
            "--dump-config" => args.dump_config = true,
            "--csv" => args.csv = Some(PathBuf::from(value()?)),
            "--y-star" => args.y_star = Some(parse_num(&value()?, flag)?),
            other => return Err(format!("unknown flag {other:?}")),
        }
    }
    if args.config.is_some() && args.preset.is_some() {
        return Err("give either --config or --preset, not both".into());
    }
    Ok(args)
}

fn parse_num(s: &str, flag: &str) -> Result<f64, String> {
    s.parse::<f64>().map_err(|e| format!("bad {flag}: {e}"))
}

/// 1 for domain failures, 2 for config/usage problems.
fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::CsvParse { .. } | Error::Io(_) | Error::Dimension(_) => 2,
        _ => 1,
    }
}

/// Load the scenario config from `--config`/`--preset` and apply flag
/// overrides.
pub fn load_config(args: &Args) -> Result<ScenarioConfig, Error> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ScenarioConfig::from_json(&text)?
        }
        (None, Some(name)) => preset(name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?,
        (None, None) => {
            return Err(Error::Config(
                "a scenario is required: --config FILE or --preset NAME".into(),
            ))
        }
        _ => unreachable!(),
    };
    if let Some(tol) = args.tol {
        cfg.sim.tol = tol;
    }
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
        cfg.sim.initial = sim::InitialCondition::Random;
    }
    if let Some(t_final) = args.t_final {
        cfg.sim.t_final = t_final;
        cfg.sim.schedule.retain(|e| e.t < t_final);
    }
    Ok(cfg)
}

/// Per-assumption verdicts produced by `analyze`.
#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub strongly_connected: bool,
    pub weight_balanced: bool,
    pub lambda2: f64,
    pub lambda_max: f64,
    /// Convexity-window verdict per agent.
    pub convexity_window: Vec<bool>,
    pub plant_box_pass: bool,
    pub plant_relative_degree: usize,
    pub plant_box_violations: Vec<BoxAssumptionsSample>,
    pub pass: bool,
}

impl AnalyzeReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
        s.push_str(&format!(
            "graph: strongly connected {} | weight balanced {}\n",
            verdict(self.strongly_connected),
            verdict(self.weight_balanced)
        ));
        s.push_str(&format!(
            "spectrum of Sym(L): lambda_2 = {:.9}, lambda_N = {:.9}\n",
            self.lambda2, self.lambda_max
        ));
        for (i, ok) in self.convexity_window.iter().enumerate() {
            s.push_str(&format!(
                "cost {}: convexity window {}\n",
                i + 1,
                verdict(*ok)
            ));
        }
        s.push_str(&format!(
            "plant: relative degree {} / minimum phase over the box {}\n",
            self.plant_relative_degree,
            verdict(self.plant_box_pass)
        ));
        for v in &self.plant_box_violations {
            s.push_str(&format!(
                "  violation at w = {:?}: {}\n",
                v.w,
                v.reason.as_deref().unwrap_or("unknown")
            ));
        }
        s.push_str(&format!("analyze: {}\n", verdict(self.pass)));
        s
    }
}

/// Run every standing-assumption check.
pub fn cmd_analyze(cfg: &ScenarioConfig) -> Result<AnalyzeReport, Error> {
    let g = cfg.build_graph()?;
    let ensemble = cfg.build_costs()?;
    let plant = cfg.build_plant()?;
    let spectrum = graph::laplacian(&g);
    let strongly_connected = graph::is_strongly_connected(&g);
    let weight_balanced = graph::is_weight_balanced(&g, cfg.analysis.balance_tol);
    let convexity_window: Vec<bool> = ensemble
        .costs
        .iter()
        .map(|c| costs::verify_convexity_window(c, cfg.analysis.interval, cfg.analysis.samples))
        .collect();
    let box_report = plant::check_box_assumptions(&plant, cfg.analysis.grid())?;
    let pass = strongly_connected
        && weight_balanced
        && convexity_window.iter().all(|&b| b)
        && box_report.pass;
    Ok(AnalyzeReport {
        strongly_connected,
        weight_balanced,
        lambda2: spectrum.lambda2(),
        lambda_max: spectrum.lambda_max(),
        convexity_window,
        plant_box_pass: box_report.pass,
        plant_relative_degree: box_report.nominal_m,
        plant_box_violations: box_report.violations().cloned().collect(),
        pass,
    })
}

/// Gains and their certificate, as produced by `tune`.
#[derive(Debug, Serialize)]
pub struct TuneReport {
    pub k: Vec<f64>,
    pub lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub observer_l: Vec<f64>,
    pub notes: Vec<String>,
    pub certificate: TuningCertificate,
}

impl TuneReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "gains: k = {:?}, alpha = {}, beta = {}, epsilon = {}, gamma = {}\n",
            self.k, self.alpha, self.beta, self.epsilon, self.gamma
        ));
        s.push_str(&format!("observer gains l = {:?}\n", self.observer_l));
        for n in &self.notes {
            s.push_str(&format!("note: {n}\n"));
        }
        s.push_str(&format!(
            "epsilon bound: eps_hat = {:.6}, eps >= {:.6}\n",
            self.certificate.eps_hat, self.certificate.eps_bound
        ));
        s.push_str(&format!(
            "certificate over {} sampled w: worst margin {:.6} at {:?} -> {}\n",
            self.certificate.sampled_w.len(),
            self.certificate.worst_margin,
            self.certificate.worst_w,
            if self.certificate.pass { "pass" } else { "FAIL" }
        ));
        s
    }
}

/// Resolve `"auto"` gains and certify the closed loop.
pub fn cmd_tune(cfg: &ScenarioConfig) -> Result<TuneReport, Error> {
    let resolved = cfg.build()?;
    let sc = &resolved.scenario;
    let certificate = tuning::certify_closed_loop(
        &sc.plant,
        &sc.ensemble,
        &sc.graph,
        &sc.gains,
        sc.gen_gains,
        resolved.analysis.grid(),
    )?;
    Ok(TuneReport {
        k: sc.gains.k.clone(),
        lambda0: sc.gains.lambda0,
        alpha: sc.gen_gains.alpha,
        beta: sc.gen_gains.beta,
        epsilon: sc.gains.epsilon,
        gamma: sc.gains.gamma,
        observer_l: sc.gains.observer_l.clone(),
        notes: resolved.notes.clone(),
        certificate,
    })
}

/// Everything `simulate` leaves on disk.
pub struct SimulateOutput {
    pub resolved: Resolved,
    pub trajectory: Trajectory,
    pub report: sim::ConvergenceReport,
    pub y_star: f64,
    pub csv_path: PathBuf,
}

/// Pre-check assumptions, run the closed loop, and write
/// `trajectory.csv`, `report.json`, `report.txt`, and `config.json`.
pub fn cmd_simulate(cfg: &ScenarioConfig, out_dir: &Path) -> Result<SimulateOutput, Error> {
    let analysis = cmd_analyze(cfg)?;
    if !analysis.pass {
        return Err(Error::AssumptionViolated(format!(
            "pre-checks failed:\n{}",
            analysis.render()
        )));
    }
    let resolved = cfg.build()?;
    let y_star = costs::global_minimizer(&resolved.scenario.ensemble, 1e-10)?;
    let (trajectory, failure) = sim::simulate_partial(&resolved.scenario, &resolved.sim)?;
    let report = sim::convergence_report(&trajectory, y_star, resolved.tol);

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("trajectory.csv");
    sim::write_csv(&csv_path, &trajectory)?;
    std::fs::write(out_dir.join("config.json"), cfg.to_json())?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    let mut text = report.to_string();
    if let Some(e) = &failure {
        text.push_str(&format!("abort: {e}\n"));
    }
    std::fs::write(out_dir.join("report.txt"), text)?;
    Ok(SimulateOutput {
        resolved,
        trajectory,
        report,
        y_star,
        csv_path,
    })
}

/// Recompute a convergence report from a trajectory CSV.
///
/// The optimum comes from `--y-star` when given, otherwise from the
/// bisection oracle on the config's costs.
pub fn cmd_report(
    csv: &Path,
    cfg: Option<&ScenarioConfig>,
    y_star_flag: Option<f64>,
    tol: f64,
) -> Result<sim::ConvergenceReport, Error> {
    let data = sim::read_csv(csv)?;
    let y_star = match (y_star_flag, cfg) {
        (Some(y), _) => y,
        (None, Some(c)) => costs::global_minimizer(&c.build_costs()?, 1e-10)?,
        (None, None) => {
            return Err(Error::Config(
                "report needs --y-star or a config with costs".into(),
            ))
        }
    };
    let switch_times = cfg
        .map(|c| {
            c.sim
                .schedule
                .iter()
                .skip(1)
                .map(|e| e.t)
                .filter(|t| *t < *data.times.last().unwrap())
                .collect()
        })
        .unwrap_or_default();
    let n = data.times.len();
    let traj = Trajectory {
        times: data.times,
        y: data.y,
        u: data.u,
        z: data.z,
        v: vec![Vec::new(); n],
        xi0: vec![Vec::new(); n],
        x: vec![Vec::new(); n],
        chi: vec![Vec::new(); n],
        switch_times,
        diverged: None,
    };
    Ok(sim::convergence_report(&traj, y_star, tol))
}

/// Entry point used by `main`; returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let args = match parse_args(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}\n{USAGE}");
            return 2;
        }
    };

    if args.command == Command::Report {
        let Some(csv) = &args.csv else {
            eprintln!("error: report needs --csv FILE\n{USAGE}");
            return 2;
        };
        let cfg = if args.config.is_some() || args.preset.is_some() {
            match load_config(&args) {
                Ok(c) => Some(c),
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit_code_for(&e);
                }
            }
        } else {
            None
        };
        let tol = args.tol.or(cfg.as_ref().map(|c| c.sim.tol)).unwrap_or(0.05);
        return match cmd_report(csv, cfg.as_ref(), args.y_star, tol) {
            Ok(report) => {
                print!("{report}");
                i32::from(!report.settled)
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        };
    }

    let cfg = match load_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code_for(&e);
        }
    };
    if args.dump_config {
        println!("{}", cfg.to_json());
        return 0;
    }

    match args.command {
        Command::Analyze => match cmd_analyze(&cfg) {
            Ok(report) => {
                print!("{}", report.render());
                i32::from(!report.pass)
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::Tune => match cmd_tune(&cfg) {
            Ok(report) => {
                print!("{}", report.render());
                if let Err(e) = write_tune_json(&args.out, &report) {
                    eprintln!("error: {e}");
                    return 2;
                }
                i32::from(!report.certificate.pass)
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::Simulate => match cmd_simulate(&cfg, &args.out) {
            Ok(out) => {
                print!("{}", out.report);
                println!("artifacts in {}", args.out.display());
                i32::from(!out.report.settled)
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_for(&e)
            }
        },
        Command::Report => unreachable!(),
    }
}

fn write_tune_json(out_dir: &Path, report: &TuneReport) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("tune_report.json"),
        serde_json::to_string_pretty(report).expect("tune report serializes"),
    )?;
    Ok(())
}
