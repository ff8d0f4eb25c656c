//! `driftdiffuse` command-line frontend.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical abort or
//! failed check, 3 I/O error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use driftdiffuse::analysis::{
    convergence_study, decay_diagnostic, effective_diffusivity, residual_sweep, ConvergenceSpec, Estimator,
};
use driftdiffuse::config::{parse_config_file, parse_config_with, ParsedConfig};
use driftdiffuse::ensemble::{run_ensemble, ExperimentConfig};
use driftdiffuse::fieldcheck::run_fieldcheck;
use driftdiffuse::output::{
    convergence_csv, decay_csv, diffusivity_csv, modes_csv, raw_moments_csv, residual_csv, RunManifest,
};
use driftdiffuse::{Error, SchemeConfig, SchemeKind, SpectralFlow, VelocityField};

const THREADS_ENV: &str = "DRIFTDIFFUSE_THREADS";
const MANIFEST_NAME: &str = "manifest.cfg";

#[derive(Parser, Debug)]
#[command(name = "driftdiffuse", version, about = "Effective diffusivity of passive tracers in random flows")]
struct Cli {
    /// Worker threads (falls back to DRIFTDIFFUSE_THREADS). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Effective-diffusivity curve D^E(t) from one ensemble.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the raw moment sums.
        #[arg(long)]
        raw_moments: bool,
    },
    /// Error of D^E_11(T) against a finer reference, per time step.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Comma-separated time steps (at least three).
        #[arg(long)]
        dt_list: Option<String>,
        /// Reference step; defaults to min(dt)/4.
        #[arg(long)]
        dt_ref: Option<f64>,
        /// Comma-separated schemes to study; defaults to the configured scheme.
        #[arg(long)]
        schemes: Option<String>,
        /// Scheme of the reference run; defaults to the first studied scheme.
        #[arg(long)]
        reference_scheme: Option<String>,
    },
    /// Variance decay of the velocity seen by tracers.
    Decay {
        #[command(flatten)]
        common: Common,
        /// Number of fixed initial field states.
        #[arg(long)]
        states: Option<usize>,
        /// Inner paths per state.
        #[arg(long)]
        inner_paths: Option<usize>,
        /// Steps to follow.
        #[arg(long)]
        horizon_steps: Option<usize>,
    },
    /// D^E_11(T) against molecular diffusivity.
    Residual {
        #[command(flatten)]
        common: Common,
        /// Comma-separated descending sigma values.
        #[arg(long)]
        sigmas: Option<String>,
    },
    /// Divergence, spectrum, OU covariance and isotropy checks.
    Fieldcheck {
        #[command(flatten)]
        common: Common,
        /// Write the first path's modes and OU amplitudes to this CSV.
        #[arg(long)]
        dump_modes: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file (`key = value`); a run manifest also works.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    modes: Option<String>,
    #[arg(long)]
    cutoff_k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    paths: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    #[arg(long)]
    drift_correct: Option<String>,
    /// Any other config key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let named = [
            ("dim", &self.dim),
            ("modes", &self.modes),
            ("cutoff_k", &self.cutoff_k),
            ("alpha", &self.alpha),
            ("theta", &self.theta),
            ("sigma", &self.sigma),
            ("dt", &self.dt),
            ("horizon", &self.horizon),
            ("paths", &self.paths),
            ("scheme", &self.scheme),
            ("seed", &self.seed),
            ("stride", &self.stride),
            ("drift_correct", &self.drift_correct),
        ];
        let mut out: Vec<(String, String)> = named
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config("--set", format!("expected KEY=VALUE, got `{kv}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    fn load(&self) -> Result<ParsedConfig, Error> {
        let overrides = self.overrides()?;
        match &self.config {
            Some(path) => parse_config_file(path, &overrides),
            None => parse_config_with("", &overrides),
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{s}`")))
        })
        .collect()
}

/// Flag value, else the manifest's `run.<key>`, else `default`.
fn arg_or(flag: Option<String>, run: &BTreeMap<String, String>, key: &str, default: Option<&str>) -> Option<String> {
    flag.or_else(|| run.get(key).cloned()).or_else(|| default.map(str::to_string))
}

fn write_file(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<(), Error> {
    std::fs::write(dir.join(name), contents)?;
    outputs.push(name.to_string());
    Ok(())
}

struct Run {
    config: ExperimentConfig,
    out: PathBuf,
    command: &'static str,
    args: BTreeMap<String, String>,
    outputs: Vec<String>,
    failed: usize,
    started: Instant,
}

impl Run {
    fn new(common: &Common, command: &'static str) -> Result<(Self, BTreeMap<String, String>), Error> {
        let parsed = common.load()?;
        std::fs::create_dir_all(&common.out)?;
        Ok((
            Run {
                config: parsed.config,
                out: common.out.clone(),
                command,
                args: BTreeMap::new(),
                outputs: Vec::new(),
                failed: 0,
                started: Instant::now(),
            },
            parsed.run,
        ))
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), Error> {
        write_file(&self.out, name, contents, &mut self.outputs)
    }

    fn finish(mut self) -> Result<(), Error> {
        self.outputs.push(MANIFEST_NAME.to_string());
        let manifest = RunManifest {
            config: self.config.clone(),
            command: self.command.to_string(),
            args: self.args,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            failed_paths: self.failed,
            outputs: self.outputs,
        };
        std::fs::write(self.out.join(MANIFEST_NAME), manifest.render())?;
        println!("wrote {}", self.out.join(MANIFEST_NAME).display());
        Ok(())
    }
}

macro_rules! with_flow_dim {
    ($cfg:expr, $flow:ident, $D:ident, $body:expr) => {{
        let $flow: SpectralFlow = $cfg.spectral_flow()?;
        match $cfg.dim {
            2 => {
                const $D: usize = 2;
                $body
            }
            _ => {
                const $D: usize = 3;
                $body
            }
        }
    }};
}

fn cmd_simulate(common: &Common, raw_moments: bool) -> Result<(), Error> {
    let (mut run, prior) = Run::new(common, "simulate")?;
    let raw_moments = raw_moments || prior.get("raw_moments").is_some_and(|v| v == "true");
    let acc = run_ensemble(&run.config)?;
    let curve = effective_diffusivity(&acc, Estimator::from_flag(run.config.drift_correct))?;
    run.failed = acc.failed();
    run.write("diffusivity.csv", &diffusivity_csv(&curve))?;
    if raw_moments {
        run.args.insert("raw_moments".into(), "true".into());
        run.write("raw_moments.csv", &raw_moments_csv(&acc))?;
    }
    let (d11, se) = curve.last_d11();
    println!(
        "D11(T = {}) = {:.6} +/- {:.6} ({} estimator, {} paths, {} failed)",
        run.config.horizon,
        d11,
        se,
        curve.estimator.as_str(),
        acc.count(),
        acc.failed()
    );
    if let Some(f) = acc.solver_fraction_within(5) {
        println!("implicit solves within 5 evaluations: {:.4}%", 100.0 * f);
    }
    run.finish()
}

fn cmd_convergence(
    common: &Common,
    dt_list: Option<String>,
    dt_ref: Option<f64>,
    schemes: Option<String>,
    reference_scheme: Option<String>,
) -> Result<(), Error> {
    let (mut run, prior) = Run::new(common, "convergence")?;
    let dt_text = arg_or(dt_list, &prior, "dt_list", None)
        .ok_or_else(|| Error::config("dt_list", "convergence needs --dt-list"))?;
    let dts: Vec<f64> = parse_list("dt_list", &dt_text)?;
    let dt_ref = match dt_ref {
        Some(v) => Some(v),
        None => prior.get("dt_ref").map(|s| parse_list::<f64>("dt_ref", s)).transpose()?.map(|v| v[0]),
    };
    let scheme_text = arg_or(schemes, &prior, "schemes", None);
    let studied: Vec<SchemeConfig> = match &scheme_text {
        Some(text) => parse_list::<SchemeKind>("schemes", text)?
            .into_iter()
            .map(|kind| SchemeConfig { kind, ..run.config.scheme })
            .collect(),
        None => vec![run.config.scheme],
    };
    let ref_text = arg_or(reference_scheme, &prior, "reference_scheme", None);
    let ref_scheme = ref_text
        .as_deref()
        .map(|s| s.parse::<SchemeKind>().map(|kind| SchemeConfig { kind, ..run.config.scheme }))
        .transpose()?;
    for s in studied.iter().chain(ref_scheme.iter()) {
        s.validate(run.config.dim)?;
    }
    run.args.insert("dt_list".into(), dt_text);
    if let Some(v) = dt_ref {
        run.args.insert("dt_ref".into(), v.to_string());
    }
    if let Some(t) = scheme_text {
        run.args.insert("schemes".into(), t);
    }
    if let Some(t) = ref_text {
        run.args.insert("reference_scheme".into(), t);
    }
    let spec = ConvergenceSpec {
        dts,
        reference_dt: dt_ref,
        reference_scheme: ref_scheme,
        schemes: studied,
    };
    let reports = with_flow_dim!(run.config, flow, D, convergence_study::<D, _>(&run.config, &flow, &spec)?);
    for report in &reports {
        let name = format!("convergence_{}.csv", report.scheme.kind);
        run.write(&name, &convergence_csv(report))?;
        println!(
            "{}: reference D11 = {:.6} +/- {:.6} at dt_ref = {}",
            report.scheme.kind, report.reference_d11, report.reference_stderr, report.reference_dt
        );
        for w in &report.warnings {
            println!("  warning: {w}");
        }
        match &report.fit {
            Some(fit) => println!("  fitted slope = {:.4} (intercept {:.4})", fit.slope, fit.intercept),
            None => println!("  fitted slope = unfit"),
        }
    }
    run.failed = reports.first().map_or(0, |r| run.config.paths - r.paths);
    run.finish()
}

fn cmd_decay(
    common: &Common,
    states: Option<usize>,
    inner: Option<usize>,
    horizon_steps: Option<usize>,
) -> Result<(), Error> {
    let (mut run, prior) = Run::new(common, "decay")?;
    let pick = |flag: Option<usize>, key: &str, default: &str| -> Result<usize, Error> {
        let text = arg_or(flag.map(|v| v.to_string()), &prior, key, Some(default)).unwrap();
        text.parse().map_err(|_| Error::config(key, format!("cannot parse `{text}`")))
    };
    let states = pick(states, "states", "100")?;
    let inner = pick(inner, "inner_paths", "2000")?;
    let horizon_steps = pick(horizon_steps, "horizon_steps", "40")?;
    run.args.insert("states".into(), states.to_string());
    run.args.insert("inner_paths".into(), inner.to_string());
    run.args.insert("horizon_steps".into(), horizon_steps.to_string());
    let curve = with_flow_dim!(
        run.config,
        flow,
        D,
        decay_diagnostic::<D, _>(&run.config, &flow, states, inner, horizon_steps)?
    );
    run.failed = curve.failed_paths;
    run.write("decay.csv", &decay_csv(&curve))?;
    let show = |r: Option<f64>| r.map_or("unfit".to_string(), |v| format!("{v:.4}"));
    println!(
        "variance decay rate = {} (amplitude rate = {}), fitted over steps {:?}",
        show(curve.variance_rate),
        show(curve.amplitude_rate),
        curve.fit_steps
    );
    run.finish()
}

fn cmd_residual(common: &Common, sigmas: Option<String>) -> Result<(), Error> {
    let (mut run, prior) = Run::new(common, "residual")?;
    let text = arg_or(sigmas, &prior, "sigmas", Some("0.3,0.1,0.03,0.01")).unwrap();
    let sigmas: Vec<f64> = parse_list("sigmas", &text)?;
    run.args.insert("sigmas".into(), text);
    let table = with_flow_dim!(run.config, flow, D, residual_sweep::<D, _>(&run.config, &flow, &sigmas)?);
    run.write("residual.csv", &residual_csv(&table))?;
    for r in &table.rows {
        println!("kappa = {:<10.3e} D11 = {:.6} +/- {:.6}", r.kappa, r.d11, r.stderr);
    }
    println!(
        "plateau (two smallest kappa) = {:.6}, relative gap = {:.4}",
        table.plateau, table.plateau_gap
    );
    run.finish()
}

fn cmd_fieldcheck(common: &Common, dump_modes: Option<PathBuf>) -> Result<bool, Error> {
    let (mut run, _) = Run::new(common, "fieldcheck")?;
    let report = run_fieldcheck(&run.config)?;
    let mut text = String::new();
    for check in &report.checks {
        println!("{check}");
        text.push_str(&format!("{check}\n"));
    }
    run.write("fieldcheck.txt", &text)?;
    if let Some(path) = dump_modes {
        let policy = run.config.seed_policy();
        let mut s = policy.path_streams(0);
        let flow = run.config.spectral_flow()?;
        let csv = if run.config.dim == 2 {
            let f: VelocityField<2> = flow.sample_field(run.config.dt, &mut s.modes, &mut s.ou_init)?;
            modes_csv(&f)
        } else {
            let f: VelocityField<3> = flow.sample_field(run.config.dt, &mut s.modes, &mut s.ou_init)?;
            modes_csv(&f)
        };
        std::fs::write(&path, csv)?;
        run.args.insert("dump_modes".into(), path.display().to_string());
    }
    let pass = report.all_pass();
    run.finish()?;
    Ok(pass)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 1,
        Error::NonConvergence { .. } | Error::EnsembleAbort { .. } | Error::Estimation(_) => 2,
        Error::Io(_) => 3,
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), Error> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::config(THREADS_ENV, format!("expected a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("threads", e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Simulate { common, raw_moments } => cmd_simulate(&common, raw_moments).map(|_| true),
        Command::Convergence {
            common,
            dt_list,
            dt_ref,
            schemes,
            reference_scheme,
        } => cmd_convergence(&common, dt_list, dt_ref, schemes, reference_scheme).map(|_| true),
        Command::Decay {
            common,
            states,
            inner_paths,
            horizon_steps,
        } => cmd_decay(&common, states, inner_paths, horizon_steps).map(|_| true),
        Command::Residual { common, sigmas } => cmd_residual(&common, sigmas).map(|_| true),
        Command::Fieldcheck { common, dump_modes } => cmd_fieldcheck(&common, dump_modes),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more field checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
