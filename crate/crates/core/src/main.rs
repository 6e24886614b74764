//! `fracbench` command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fracbench::controllers::{preset, reference_presets, NamedController};
use fracbench::error::{Error, Result};
use fracbench::factorial::{
    influence_report, mf_matrix, published_mf_matrices, replay_published_tables, run_design,
    csv_writer, write_influence_csv, write_mf_csv, write_replay_csv, InfluenceEntry, Metric, EFFECTS,
};
use fracbench::plant::{design_plant, TransferFunction};
use fracbench::simloop::{metrics, simulate, FactorLevels, PlantMode, ResponseMetrics, SimConfig};
use fracbench::tuning::{stability_margins, tune, Family, FrequencySpec, TuneConfig, TuningResult};

#[derive(Parser, Debug)]
#[command(name = "fracbench", version, about = "Fractional-order PID benchmark on a two-tank process")]
struct Cli {
    /// Seed for noise streams and tuner starts [default: 42]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true, env = "FRACBENCH_OUTDIR", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tune a controller against a frequency-domain specification
    Tune(TuneArgs),
    /// Simulate the closed loop and write the trace and metrics
    Simulate(SimulateArgs),
    /// Run the replicated 2^3 factorial design
    Doe(DoeArgs),
    /// Summarise metrics and influence files found in a directory
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct TuneArgs {
    /// Specification JSON
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum, default_value = "fopid")]
    family: FamilyArg,
    /// Plant JSON; the design plant when omitted
    #[arg(long)]
    plant: Option<PathBuf>,
    /// Tuner settings JSON
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FamilyArg {
    Fopid,
    Iopid,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Fopid => Family::Fopid,
            FamilyArg::Iopid => Family::Iopid,
        }
    }
}

#[derive(Args, Debug)]
#[group(id = "source", required = true, multiple = false, args = ["preset", "controller"])]
struct ControllerSource {
    /// Reference controller: fopid, iopid or simc
    #[arg(long)]
    preset: Option<String>,
    /// Controller JSON
    #[arg(long)]
    controller: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: ControllerSource,
    /// Simulation settings JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Double the plant gain
    #[arg(long)]
    factor_a: bool,
    /// Add +-10 % measurement noise
    #[arg(long)]
    factor_b: bool,
    /// Add a 20 % load step to the control signal
    #[arg(long)]
    factor_c: bool,
    /// Close the loop around the linearized tank process
    #[arg(long)]
    nonlinear: bool,
}

#[derive(Args, Debug)]
struct DoeArgs {
    #[arg(long, conflicts_with = "replay_paper")]
    preset: Option<String>,
    #[arg(long, conflicts_with_all = ["replay_paper", "preset"])]
    controller: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    replicates: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Recompute influence from the embedded published tables
    #[arg(long)]
    replay_paper: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding `*_metrics.json` and `*_influence.json` files
    dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: String,
    config_path: Option<PathBuf>,
    output_dir: PathBuf,
    seed: u64,
    timestamp: u64,
    version: String,
    files: Vec<String>,
    config: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsRecord {
    controller: NamedController,
    factors: FactorLevels,
    plant_mode: PlantMode,
    metrics: ResponseMetrics,
}

#[derive(Debug, Serialize, Deserialize)]
struct InfluenceRecord {
    controller: String,
    replicates: usize,
    influence: Vec<InfluenceEntry>,
}

/// Failure with its process exit code.
enum Failure {
    Usage(Error),
    Infeasible,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Files of one command, written together at the end.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> Result<()> {
        let name = name.into();
        let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
            path: self.dir.join(&name),
            source,
        })?;
        text.push('\n');
        self.add(name, text.into_bytes());
        Ok(())
    }

    fn commit(mut self, command: &str, stem: &str, config_path: Option<&Path>, seed: u64, config: serde_json::Value) -> Result<()> {
        let manifest = RunManifest {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            output_dir: self.dir.clone(),
            seed,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            version: env!("CARGO_PKG_VERSION").to_string(),
            files: self.files.iter().map(|(n, _)| n.clone()).collect(),
            config,
        };
        self.json(format!("{stem}_manifest.json"), &manifest)?;
        fs::create_dir_all(&self.dir).map_err(|source| Error::Io {
            path: self.dir.clone(),
            source,
        })?;
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes).map_err(|source| Error::Io { path, source })?;
        }
        Ok(())
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn stem_of(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    match s.as_str() {
        "simc_pid" => "simc".to_string(),
        _ => s,
    }
}

fn load_controller(preset_name: Option<&str>, file: Option<&Path>) -> Result<NamedController> {
    match (preset_name, file) {
        (Some(name), _) => preset(name)
            .map(|p| NamedController::from(&p))
            .ok_or_else(|| Error::Config(format!("unknown preset '{name}' (expected fopid, iopid or simc)"))),
        (None, Some(path)) => {
            let c: NamedController = read_json(path)?;
            c.params()?;
            Ok(c)
        }
        (None, None) => Err(Error::Config("a controller source is required".into())),
    }
}

fn load_sim_config(path: Option<&Path>, seed: Option<u64>) -> Result<SimConfig> {
    let mut cfg = match path {
        Some(p) => read_json::<SimConfig>(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn margin_table(result: &TuningResult, spec: &FrequencySpec, plant: &TransferFunction) -> Result<String> {
    let a = &result.achieved;
    let margins = stability_margins(&result.params, plant, (1e-3 * spec.gain_crossover, 1e3 * spec.gain_crossover))?;
    let mut rows = vec![
        ("phase margin [deg]", format!("{}", spec.phase_margin_deg), a.phase_margin_deg, format!("+-{}", spec.phase_margin_tol_deg)),
        ("crossover residual [dB]", "0".to_string(), a.crossover_residual_db, format!("+-{}", spec.crossover_tol_db)),
        ("phase slope [deg/(rad/s)]", "0".to_string(), a.phase_slope, format!("+-{}", spec.flatness_tol)),
        ("|T(j w_t)| [dB]", format!("<= {}", spec.noise_bound_db), a.noise_db, String::new()),
        ("|S(j w_s)| [dB]", format!("<= {}", spec.disturbance_bound_db), a.disturbance_db, String::new()),
        ("saturated fraction", String::new(), result.saturated_fraction, String::new()),
        ("nominal ISE", String::new(), result.ise, String::new()),
    ];
    if let Some(gm) = margins.gain_margin_db {
        rows.push(("gain margin [dB]", String::new(), gm, String::new()));
    }
    let mut out = format!(
        "family {:?}  k={} tau_i={} tau_d={} lambda={} mu={}\n",
        result.family, result.params.k, result.params.tau_i, result.params.tau_d, result.params.lambda, result.params.mu
    );
    out += &format!("{:<28}{:>12}{:>16}{:>10}\n", "quantity", "target", "achieved", "tol");
    for (name, target, achieved, tol) in rows {
        out += &format!("{name:<28}{target:>12}{achieved:>16.6}{tol:>10}\n");
    }
    out += &format!("feasible: {}\n", result.feasible);
    for v in &result.violations {
        out += &format!("violated: {v}\n");
    }
    Ok(out)
}

fn cmd_tune(cli: &Cli, args: &TuneArgs) -> Outcome {
    let spec: FrequencySpec = read_json(&args.spec)?;
    let plant = match &args.plant {
        Some(p) => read_json::<TransferFunction>(p)?,
        None => design_plant(),
    };
    let mut config = match &args.config {
        Some(p) => read_json::<TuneConfig>(p)?,
        None => TuneConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let family = Family::from(args.family);
    let result = tune(family, &plant, &spec, &config)?;
    let table = margin_table(&result, &spec, &plant)?;
    print!("{table}");

    let stem = format!("tune_{}", stem_of(&format!("{family:?}")));
    let mut out = Outputs::new(&cli.out);
    out.json(format!("{stem}.json"), &result)?;
    out.json(
        format!("{stem}_controller.json"),
        &NamedController::new(format!("tuned {family:?}"), result.params),
    )?;
    out.add(format!("{stem}_margins.txt"), table.into_bytes());
    let config_value = serde_json::json!({ "spec": to_value(&spec), "plant": to_value(&plant), "tuner": to_value(&config) });
    out.commit("tune", &stem, Some(&args.spec), config.seed, config_value)?;
    if result.feasible {
        Ok(())
    } else {
        eprintln!("specification not met: {}", result.violations.join("; "));
        Err(Failure::Infeasible)
    }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Outcome {
    let controller = load_controller(args.source.preset.as_deref(), args.source.controller.as_deref())?;
    let mut cfg = load_sim_config(args.config.as_deref(), cli.seed)?;
    let f = &mut cfg.factors;
    f.a_gain_uncertainty |= args.factor_a as u8;
    f.b_noise |= args.factor_b as u8;
    f.c_disturbance |= args.factor_c as u8;
    if args.nonlinear {
        cfg.plant_mode = PlantMode::Nonlinear;
    }
    let trace = simulate(&controller.params()?, &cfg)?;
    let m = metrics(&trace)?;
    let stem = stem_of(&controller.name);
    let mut out = Outputs::new(&cli.out);
    out.add(format!("{stem}_trace.csv"), csv_bytes(|b| trace.write_csv(b))?);
    out.json(
        format!("{stem}_metrics.json"),
        &MetricsRecord {
            controller: controller.clone(),
            factors: cfg.factors,
            plant_mode: cfg.plant_mode,
            metrics: m,
        },
    )?;
    println!(
        "{}: ise={} step_std={} u_mean={} u_std={}",
        controller.name, m.ise, m.step_std, m.control_mean, m.control_std
    );
    let value = serde_json::json!({ "controller": to_value(&controller), "simulation": to_value(&cfg) });
    out.commit("simulate", &format!("{stem}_simulate"), args.config.as_deref(), cfg.seed, value)?;
    Ok(())
}

fn cmd_doe(cli: &Cli, args: &DoeArgs) -> Outcome {
    let mut out = Outputs::new(&cli.out);
    if args.replay_paper {
        let replay = replay_published_tables()?;
        out.add("paper_replay.csv", csv_bytes(|b| write_replay_csv(&replay, b))?);
        out.add("paper_mf.csv", csv_bytes(|b| write_mf_csv(&published_mf_matrices(), b))?);
        out.commit("doe", "paper", None, cli.seed.unwrap_or(42), serde_json::json!({ "replay_paper": true }))?;
        for r in &replay {
            println!("{:<9} {:<9} max |computed - published| = {:.3} %", r.controller, r.computed.metric, r.max_abs_difference);
        }
        return Ok(());
    }
    if args.replicates == 0 {
        return Err(Error::Config("--replicates must be at least 1".into()).into());
    }
    let controller = load_controller(args.preset.as_deref(), args.controller.as_deref())?;
    let cfg = load_sim_config(args.config.as_deref(), cli.seed)?;
    let table = run_design(&controller.params()?, &cfg, args.replicates)?;
    let report = influence_report(&table)?;
    let mf: Vec<_> = Metric::ALL
        .iter()
        .zip(&report)
        .flat_map(|(m, entry)| mf_matrix(&controller.name, m.name(), &table.cell_means(*m), &entry.percentages()))
        .collect();

    let stem = stem_of(&controller.name);
    out.add(format!("{stem}_factorial.csv"), csv_bytes(|b| table.write_csv(b))?);
    out.add(format!("{stem}_influence.csv"), csv_bytes(|b| write_influence_csv(&report, b))?);
    out.add(format!("{stem}_mf.csv"), csv_bytes(|b| write_mf_csv(&mf, b))?);
    out.json(
        format!("{stem}_influence.json"),
        &InfluenceRecord {
            controller: controller.name.clone(),
            replicates: args.replicates,
            influence: report.clone(),
        },
    )?;
    let value = serde_json::json!({ "controller": to_value(&controller), "simulation": to_value(&cfg), "replicates": args.replicates });
    out.commit("doe", &format!("{stem}_doe"), args.config.as_deref(), cfg.seed, value)?;
    for e in &report {
        let pct: Vec<String> = e.effects.iter().map(|s| format!("{}={:.3}", s.effect, s.percentage)).collect();
        println!("{:<9} {}", e.metric, pct.join(" "));
    }
    Ok(())
}

/// Reference preset order first, then anything else by name.
fn report_rank(name: &str) -> (usize, String) {
    let order = reference_presets().map(|p| stem_of(p.name));
    let stem = stem_of(name);
    (order.iter().position(|s| *s == stem).unwrap_or(order.len()), stem)
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Outcome {
    let entries = fs::read_dir(&args.dir).map_err(|source| Error::Io {
        path: args.dir.clone(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    let mut runs: Vec<MetricsRecord> = Vec::new();
    let mut influences: Vec<InfluenceRecord> = Vec::new();
    for p in &paths {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.ends_with("_metrics.json") {
            runs.push(read_json(p)?);
        } else if name.ends_with("_influence.json") {
            influences.push(read_json(p)?);
        }
    }
    if runs.is_empty() && influences.is_empty() {
        return Err(Error::Config(format!("{}: no metrics or influence results found", args.dir.display())).into());
    }
    runs.sort_by_key(|r| report_rank(&r.controller.name));
    influences.sort_by_key(|r| report_rank(&r.controller));

    let mut out = Outputs::new(&cli.out);
    let mut text = String::new();
    if !runs.is_empty() {
        let mut w = csv_writer(Vec::new());
        w.write_record(["controller", "k", "tau_i", "tau_d", "lambda", "mu", "ise", "u_mean"]).map_err(Error::from)?;
        text += &format!(
            "{:<12}{:>12}{:>12}{:>12}{:>10}{:>10}{:>12}{:>12}\n",
            "controller", "k", "tau_i", "tau_d", "lambda", "mu", "ISE", "u_mean"
        );
        for r in &runs {
            let c = &r.controller;
            w.write_record([
                c.name.clone(),
                c.k.to_string(),
                c.tau_i.to_string(),
                c.tau_d.to_string(),
                c.lambda.to_string(),
                c.mu.to_string(),
                r.metrics.ise.to_string(),
                r.metrics.control_mean.to_string(),
            ])
            .map_err(Error::from)?;
            text += &format!(
                "{:<12}{:>12.4}{:>12.4}{:>12.4}{:>10.3}{:>10.3}{:>12.4}{:>12.4}\n",
                c.name, c.k, c.tau_i, c.tau_d, c.lambda, c.mu, r.metrics.ise, r.metrics.control_mean
            );
        }
        out.add("summary.csv", w.into_inner().map_err(|e| Error::from(csv::Error::from(e.into_error())))?);
    }
    if !influences.is_empty() {
        let mut w = csv_writer(Vec::new());
        let mut header = vec!["effect".to_string()];
        let mut columns: BTreeMap<usize, [f64; 7]> = BTreeMap::new();
        for m in Metric::ALL {
            for inf in &influences {
                header.push(format!("{} {}", m.name(), inf.controller));
            }
        }
        let mut col = 0;
        for m in Metric::ALL {
            for inf in &influences {
                let entry = inf
                    .influence
                    .iter()
                    .find(|e| e.metric == m.name())
                    .ok_or_else(|| Error::InvalidInput(format!("{}: missing metric {}", inf.controller, m.name())))?;
                columns.insert(col, entry.percentages());
                col += 1;
            }
        }
        w.write_record(&header).map_err(Error::from)?;
        text += "\ninfluence [%]\n";
        text += &header.iter().map(|h| format!("{h:>16}")).collect::<String>();
        text += "\n";
        for (e, name) in EFFECTS.iter().enumerate() {
            let mut rec = vec![name.to_string()];
            let mut line = format!("{name:>16}");
            for v in columns.values() {
                rec.push(v[e].to_string());
                line += &format!("{:>16.3}", v[e]);
            }
            w.write_record(&rec).map_err(Error::from)?;
            text += &line;
            text += "\n";
        }
        out.add("influence_matrix.csv", w.into_inner().map_err(|e| Error::from(csv::Error::from(e.into_error())))?);
    }
    print!("{text}");
    out.add("summary.txt", text.into_bytes());
    out.commit("report", "report", None, cli.seed.unwrap_or(42), serde_json::json!({ "dir": args.dir }))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Tune(a) => cmd_tune(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Doe(a) => cmd_doe(&cli, a),
        Command::Report(a) => cmd_report(&cli, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Infeasible) => ExitCode::from(2),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            eprintln!("run `fracbench --help` for usage");
            ExitCode::from(1)
        }
    }
}
