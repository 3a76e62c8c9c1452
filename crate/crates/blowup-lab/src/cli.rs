//! Command-line front end. Every command writes its outputs and a
//! `manifest.json` into one directory: `--out`, else `$BLOWUP_LAB_OUT`, else
//! `runs/<command>`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::balance::{predicted_lambda, solve_reduced, verify_blowup, ReducedOptions, VerifyOptions};
use crate::constants::compute_all;
use crate::error::{LabError, Result};
use crate::functional::Configuration;
use crate::lemmas::{inequality_suite, power_lemma_suite};
use crate::radial::{bubble_seed, continue_in_tau, fit_radial, ContinuationOptions, RadialFunction, RadialOptions};
use crate::sphere::{manufactured_curvature, ScalarField, SpherePoint};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "BLOWUP_LAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "blowup-lab", version, about = "Blow-up diagnostics for the subcritical prescribed scalar curvature problem on S^n")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides $BLOWUP_LAB_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dimensional constants with error bounds and cross-checks.
    Constants {
        #[arg(long, default_value_t = 7)]
        n: usize,
    },
    /// Solve the reduced system along a τ schedule.
    Construct {
        #[arg(long)]
        config: PathBuf,
    },
    /// Radial collocation with continuation in τ, fitted per member.
    Radial {
        #[arg(long)]
        config: PathBuf,
    },
    /// Refit the radial solutions stored in a family file.
    Fit {
        #[arg(long)]
        family: PathBuf,
    },
    /// Blow-up verdicts for a family file.
    VerifyRate {
        #[arg(long)]
        family: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        slope_tolerance: f64,
        #[arg(long, default_value_t = 0.1)]
        rate_tolerance: f64,
        #[arg(long, default_value_t = 10.0)]
        gamma_threshold: f64,
    },
    /// Expansion lemma checks and sampled inequality constants.
    Lemmas {
        #[arg(long, default_value_t = 7)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        small: usize,
        #[arg(long, default_value_t = 100_000)]
        large: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Constants { .. } => "constants",
            Command::Construct { .. } => "construct",
            Command::Radial { .. } => "radial",
            Command::Fit { .. } => "fit",
            Command::VerifyRate { .. } => "verify-rate",
            Command::Lemmas { .. } => "lemmas",
        }
    }
}

/// τ values: explicit `taus`, or `members` geometric steps from `start` to `end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(default)]
    pub taus: Vec<f64>,
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub members: Option<usize>,
}

impl Schedule {
    pub fn values(&self) -> Result<Vec<f64>> {
        let taus = if !self.taus.is_empty() {
            self.taus.clone()
        } else {
            match (self.start, self.end, self.members) {
                (Some(a), Some(b), Some(k)) if k >= 2 && a > 0.0 && b > 0.0 => {
                    (0..k).map(|j| if j + 1 == k { b } else { a * (b / a).powf(j as f64 / (k - 1) as f64) }).collect()
                }
                _ => return Err(LabError::Format("schedule needs `taus` or positive `start`, `end` and `members` ≥ 2".into())),
            }
        };
        if taus.iter().any(|t| !(*t > 0.0)) || taus.windows(2).any(|w| w[1] >= w[0]) {
            return Err(LabError::Format(format!("schedule must be positive and strictly decreasing, got {taus:?}")));
        }
        Ok(taus)
    }
}

/// Curvature, zonal about the pole e_0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CurvatureSpec {
    /// Polynomial in cos θ.
    Zonal { coefficients: Vec<f64> },
    /// L ω / ω^p, so that the configured ω is a critical solution.
    Manufactured,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    #[default]
    Pure,
    ResidualMass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSection {
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default)]
    pub branch: Branch,
    /// Seed concentration; defaults to the rate-law prediction at the first τ.
    pub seed_lambda: Option<f64>,
}

fn default_nodes() -> usize {
    200
}

impl Default for RadialSection {
    fn default() -> Self {
        Self {
            nodes: default_nodes(),
            branch: Branch::Pure,
            seed_lambda: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Pole,
    Antipode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructSection {
    #[serde(default = "default_targets")]
    pub targets: Vec<Target>,
}

fn default_targets() -> Vec<Target> {
    vec![Target::Pole]
}

impl Default for ConstructSection {
    fn default() -> Self {
        Self { targets: default_targets() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub schedule: Schedule,
    pub curvature: CurvatureSpec,
    /// ω as a polynomial in cos θ; empty means ω = 0.
    #[serde(default)]
    pub omega: Vec<f64>,
    #[serde(default)]
    pub radial: RadialSection,
    #[serde(default)]
    pub construct: ConstructSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| LabError::Format(e.to_string()))?;
        if cfg.n < 3 {
            return Err(LabError::Format(format!("n must be at least 3, got {}", cfg.n)));
        }
        if cfg.radial.nodes < 4 {
            return Err(LabError::Format("radial.nodes must be at least 4".into()));
        }
        cfg.schedule.values()?;
        Ok(cfg)
    }

    pub fn pole(&self) -> SpherePoint {
        SpherePoint::basis(self.n, 0)
    }

    /// (ω, K)
    pub fn fields(&self) -> Result<(ScalarField, ScalarField)> {
        let omega = if self.omega.is_empty() {
            ScalarField::zero(self.n)
        } else {
            ScalarField::zonal_polynomial(self.pole(), self.omega.clone())
        };
        let curvature = match &self.curvature {
            CurvatureSpec::Zonal { coefficients } if !coefficients.is_empty() => ScalarField::zonal_polynomial(self.pole(), coefficients.clone()),
            CurvatureSpec::Zonal { .. } => return Err(LabError::Format("zonal curvature needs coefficients".into())),
            CurvatureSpec::Manufactured if omega.is_zero() => return Err(LabError::Format("manufactured curvature needs a non-empty omega".into())),
            CurvatureSpec::Manufactured => manufactured_curvature(&omega)?,
        };
        Ok((omega, curvature))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    /// sha256 over the input files in argument order
    pub input_checksum: String,
}

struct Run {
    command: &'static str,
    argv: Vec<String>,
    out: PathBuf,
    config: Value,
    seeds: Vec<u64>,
    hasher: Sha256,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    fn new(command: &'static str, argv: Vec<String>, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out)?;
        Ok(Self {
            command,
            argv,
            out,
            config: Value::Null,
            seeds: Vec::new(),
            hasher: Sha256::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn read_input(&mut self, path: &Path) -> Result<String> {
        let bytes = fs::read(path).map_err(|e| LabError::Usage(format!("cannot read {}: {e}", path.display())))?;
        self.hasher.update(&bytes);
        String::from_utf8(bytes).map_err(|_| LabError::Format(format!("{} is not UTF-8", path.display())))
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(&versioned(value)?).map_err(|e| LabError::Format(e.to_string()))?;
        let path = self.path(name);
        fs::write(path, text + "\n")?;
        Ok(())
    }

    fn write_jsonl(&mut self, name: &str, lines: &[Value]) -> Result<()> {
        let mut text = String::new();
        for line in lines {
            text += &serde_json::to_string(&versioned(line)?).map_err(|e| LabError::Format(e.to_string()))?;
            text.push('\n');
        }
        let path = self.path(name);
        fs::write(path, text)?;
        Ok(())
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        w.write_record(header).map_err(csv_error)?;
        for row in rows {
            w.write_record(row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    fn finish(mut self) -> Result<RunManifest> {
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            command: self.command.to_string(),
            argv: self.argv.clone(),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.outputs.clone(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            input_checksum: format!("{:x}", self.hasher.clone().finalize()),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| LabError::Format(e.to_string()))?;
        let path = self.path("manifest.json");
        fs::write(path, text + "\n")?;
        Ok(manifest)
    }
}

fn csv_error(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e.to_string()))
}

fn versioned(value: &impl Serialize) -> Result<Value> {
    let v = serde_json::to_value(value).map_err(|e| LabError::Format(e.to_string()))?;
    Ok(match v {
        Value::Object(mut map) => {
            map.insert("schema_version".into(), json!(SCHEMA_VERSION));
            Value::Object(map)
        }
        other => json!({ "schema_version": SCHEMA_VERSION, "data": other }),
    })
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let name = cli.command.name();
    let out = cli
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(name));
    let mut run = Run::new(name, argv, out)?;
    let result = match cli.command {
        Command::Constants { n } => constants(&mut run, n),
        Command::Construct { config } => construct(&mut run, &config),
        Command::Radial { config } => radial(&mut run, &config),
        Command::Fit { family } => fit(&mut run, &family),
        Command::VerifyRate {
            family,
            slope_tolerance,
            rate_tolerance,
            gamma_threshold,
        } => verify_rate(
            &mut run,
            &family,
            VerifyOptions {
                slope_tolerance,
                rate_tolerance,
                gamma_threshold,
            },
        ),
        Command::Lemmas { n, small, large, seed } => lemmas(&mut run, n, small, large, seed),
    };
    // partial outputs are kept and listed even when the pipeline fails
    let manifest_path = run.out.join("manifest.json");
    run.finish()?;
    println!("manifest: {}", manifest_path.display());
    result
}

fn load_config(run: &mut Run, path: &Path) -> Result<RunConfig> {
    let text = run.read_input(path)?;
    let cfg = RunConfig::parse(&text)?;
    run.config = serde_json::to_value(&cfg).map_err(|e| LabError::Format(e.to_string()))?;
    Ok(cfg)
}

fn constants(run: &mut Run, n: usize) -> Result<()> {
    if n < 3 {
        return Err(LabError::Usage(format!("--n must be at least 3, got {n}")));
    }
    run.config = json!({ "n": n });
    let c = compute_all(n)?;
    run.write_json("constants.json", &c)?;
    println!("{}", serde_json::to_string_pretty(&versioned(&c)?).map_err(|e| LabError::Format(e.to_string()))?);
    Ok(())
}

fn construct(run: &mut Run, path: &Path) -> Result<()> {
    let cfg = load_config(run, path)?;
    let (omega, curvature) = cfg.fields()?;
    let targets: Vec<SpherePoint> = cfg
        .construct
        .targets
        .iter()
        .map(|t| match t {
            Target::Pole => cfg.pole(),
            Target::Antipode => cfg.pole().antipode(),
        })
        .collect();
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    let mut start = None;
    let mut failure = None;
    for tau in cfg.schedule.values()? {
        let s = match solve_reduced(tau, &targets, &omega, &curvature, start.clone(), &ReducedOptions::default()) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        start = Some(s.state.clone());
        for (i, (wb, y)) in s.configuration.bubbles.iter().zip(&targets).enumerate() {
            let lam = wb.bubble.lambda;
            rows.push(vec![num(tau), i.to_string(), num(lam), num(wb.alpha), num(predicted_lambda(tau, y, &curvature)?), num(tau * lam * lam)]);
        }
        lines.push(json!({
            "tau": tau,
            "configuration": s.configuration,
            "box_check": s.box_check,
            "schedule_met": s.schedule_met,
            "newton_errors": s.errors,
            "error_ratios": s.error_ratios,
        }));
    }
    run.write_jsonl("family.jsonl", &lines)?;
    run.write_csv("construct.csv", &["tau", "bubble", "lambda", "alpha", "predicted_lambda", "tau_lambda_sq"], &rows)?;
    println!("construct: {} of {} members", lines.len(), cfg.schedule.values()?.len());
    failure.map_or(Ok(()), Err)
}

fn radial(run: &mut Run, path: &Path) -> Result<()> {
    let cfg = load_config(run, path)?;
    let (omega, curvature) = cfg.fields()?;
    match (cfg.radial.branch, omega.is_zero()) {
        (Branch::Pure, false) => return Err(LabError::Format("branch \"pure\" needs an empty omega".into())),
        (Branch::ResidualMass, true) => return Err(LabError::Format("branch \"residual-mass\" needs a non-empty omega".into())),
        _ => {}
    }
    let schedule = cfg.schedule.values()?;
    let lambda = match cfg.radial.seed_lambda {
        Some(l) => l,
        None => predicted_lambda(schedule[0], &cfg.pole(), &curvature)?,
    };
    let seed = bubble_seed(&curvature, &omega, schedule[0], lambda, cfg.radial.nodes)?;
    let options = ContinuationOptions {
        solver: RadialOptions::default(),
        ..Default::default()
    };
    let family = continue_in_tau(&curvature, &omega, &schedule, &seed, &options)?;
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    for m in &family.members {
        let f = m.fit.as_ref().ok_or_else(|| LabError::FitFailure(format!("no fit at τ = {}", m.tau)))?;
        rows.push(vec![
            num(m.tau),
            num(f.lambda),
            num(f.alpha),
            num(f.v_norm),
            num(m.tau * f.lambda * f.lambda),
            num(f.energy),
            num(predicted_lambda(m.tau, &cfg.pole(), &curvature)?),
            num(f.alpha0),
            num(f.omega_error),
            num(f.remainder),
        ]);
        lines.push(json!({
            "tau": m.tau,
            "configuration": f.configuration,
            "fit": f,
            "residual": m.solution.residual,
            "iterations": m.solution.iterations,
            "roundoff_limited": m.solution.roundoff_limited,
            "function": m.solution.function,
        }));
    }
    run.write_jsonl("family.jsonl", &lines)?;
    run.write_csv(
        "fit.csv",
        &["tau", "lambda", "alpha", "v_norm", "tau_lambda_sq", "energy", "predicted_lambda", "alpha0", "omega_error", "remainder"],
        &rows,
    )?;
    println!("radial: {} of {} members", family.members.len(), schedule.len());
    match family.stall {
        Some(s) => {
            run.write_json("stall.json", &s)?;
            Err(LabError::Divergence(format!("continuation stalled at τ = {:e} (target {:e}): {}", s.reached_tau, s.target_tau, s.reason)))
        }
        None => Ok(()),
    }
}

#[derive(Deserialize)]
struct FamilyLine {
    tau: f64,
    configuration: Configuration,
    function: Option<RadialFunction>,
}

fn read_family(run: &mut Run, path: &Path) -> Result<Vec<FamilyLine>> {
    let text = run.read_input(path)?;
    run.config = json!({ "family": path.display().to_string() });
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| LabError::Format(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn fit(run: &mut Run, path: &Path) -> Result<()> {
    let family = read_family(run, path)?;
    let mut previous: Option<Configuration> = None;
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    for (i, m) in family.iter().enumerate() {
        let u = m
            .function
            .as_ref()
            .ok_or_else(|| LabError::Format(format!("line {} carries no radial function", i + 1)))?;
        let c = &m.configuration;
        let f = fit_radial(u, &c.curvature, &c.omega, m.tau, previous.as_ref())?;
        rows.push(vec![num(m.tau), num(f.lambda), num(f.alpha), num(f.v_norm), num(m.tau * f.lambda * f.lambda), num(f.energy)]);
        previous = Some(f.configuration.clone());
        lines.push(json!({ "tau": m.tau, "configuration": f.configuration, "fit": f }));
    }
    run.write_jsonl("fits.jsonl", &lines)?;
    run.write_csv("fits.csv", &["tau", "lambda", "alpha", "v_norm", "tau_lambda_sq", "energy"], &rows)?;
    println!("fit: {} members", lines.len());
    Ok(())
}

fn verify_rate(run: &mut Run, path: &Path, options: VerifyOptions) -> Result<()> {
    let family: Vec<(f64, Configuration)> = read_family(run, path)?.into_iter().map(|m| (m.tau, m.configuration)).collect();
    run.config = json!({ "family": path.display().to_string(), "options": options });
    let report = verify_blowup(&family, &options)?;
    let verdicts = [
        ("concentration", &report.concentration),
        ("localisation", &report.localisation),
        ("separation", &report.separation),
        ("rate_law", &report.rate_law),
    ];
    let passed = verdicts.iter().all(|(_, v)| v.passed);
    run.write_json("verdict.json", &json!({ "passed": passed, "report": report }))?;
    for (name, v) in verdicts {
        println!("{name}: {} ({})", if v.passed { "pass" } else { "fail" }, v.detail);
    }
    println!("verify-rate: {}", if passed { "pass" } else { "fail" });
    Ok(())
}

fn lemmas(run: &mut Run, n: usize, small: usize, large: usize, seed: u64) -> Result<()> {
    run.config = json!({ "n": n, "small": small, "large": large, "seed": seed });
    run.seeds.push(seed);
    let power = power_lemma_suite(n)?;
    let inequalities = inequality_suite(small, large, seed)?;
    let passed = power.passed && inequalities.all_finite_and_stable();
    run.write_json("lemmas.json", &json!({ "passed": passed, "power": power, "inequalities": inequalities }))?;
    println!("lemmas: expansion {}, inequalities {}", power.passed, inequalities.all_finite_and_stable());
    Ok(())
}
