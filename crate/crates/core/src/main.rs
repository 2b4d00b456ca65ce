use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use orthofit::error::{Error, Result};
use orthofit::io::{quasar_workflow, read_config, write_boot_draws, QuasarOutputs};
use orthofit::{
    ingest_csv, run_study, run_test, BootstrapConfig, CrossMoment, Family, GridConfig, GridRule,
    MleOptions, Multiplier, QuasarDataset, Report, Scheme, SimulationConfig, Study, TestOptions,
    Theta,
};

#[derive(Parser, Debug)]
#[command(name = "orthofit", version, about = "Orthogonal-score kernel goodness-of-fit tests")]
#[command(args_override_self = true)]
struct Cli {
    /// File of `key = value` lines using the flag names; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a parametric family against a CSV sample.
    Test(TestArgs),
    /// Run a Monte Carlo size/power study.
    Simulate(SimulateArgs),
    /// Exponential double-truncation test on the quasar luminosity data.
    Quasar(QuasarArgs),
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long = "grid-size", default_value_t = 256)]
    grid_size: usize,
    #[arg(long = "grid-rule", default_value = "gl")]
    grid_rule: GridRule,
    /// Use the plain grid instead of splitting at data breakpoints.
    #[arg(long = "no-refine")]
    no_refine: bool,
}

impl GridArgs {
    fn config(&self) -> GridConfig {
        GridConfig {
            m: self.grid_size,
            rule: self.grid_rule,
            refine: !self.no_refine,
        }
    }
}

#[derive(Args, Debug)]
struct BootArgs {
    #[arg(long = "B", default_value_t = 499)]
    b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "mammen")]
    multiplier: Multiplier,
}

impl BootArgs {
    fn config(&self) -> BootstrapConfig {
        BootstrapConfig {
            b: self.b,
            multiplier: self.multiplier,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long)]
    scheme: Scheme,
    #[arg(long, default_value = "exponential")]
    family: Family,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    boot: BootArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "emit-boot-draws")]
    emit_boot_draws: Option<PathBuf>,
    /// Known parameter, e.g. `theta=1.5` or `theta=2,0.5`.
    #[arg(long = "simple-null", conflicts_with_all = ["max_iter", "tol", "force_newton", "cross_moment"])]
    simple_null: Option<String>,
    #[arg(long = "cross-moment", value_parser = parse_cross_moment)]
    cross_moment: Option<CrossMoment>,
    /// Weight current status scores by `{F(1 − F)}^{-1/2}`.
    #[arg(long = "cs-weight")]
    cs_weight: bool,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "force-newton")]
    force_newton: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value = "dt")]
    study: Study,
    #[arg(long, default_value_t = 1.0)]
    nu: f64,
    /// Trials per cell; sets both null and alternative cells.
    #[arg(long)]
    trials: Option<usize>,
    /// Trials for alternative cells only.
    #[arg(long = "trials-alt")]
    trials_alt: Option<usize>,
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    multiplier: Option<Multiplier>,
    /// Comma-separated shape grid.
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Paper-scale trial counts and B.
    #[arg(long)]
    full: bool,
    #[arg(long = "grid-size")]
    grid_size: Option<usize>,
    /// Table CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full per-cell JSON including p-values.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QuasarArgs {
    /// Defaults to $ORTHOFIT_QUASAR_DATA, then data/quasars.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    boot: BootArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "emit-boot-draws")]
    emit_boot_draws: Option<PathBuf>,
    /// CSV of x, empirical cdf and fitted exponential cdf.
    #[arg(long = "emit-cdf")]
    emit_cdf: Option<PathBuf>,
}

fn parse_cross_moment(s: &str) -> std::result::Result<CrossMoment, String> {
    match s {
        "projection" => Ok(CrossMoment::Projection),
        "jacobian" => Ok(CrossMoment::Jacobian),
        other => Err(format!("unknown cross moment '{other}' (projection|jacobian)")),
    }
}

fn parse_simple_null(s: &str, family: Family) -> Result<Theta> {
    let body = s.strip_prefix("theta=").unwrap_or(s);
    let values = body
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("--simple-null: '{v}' is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != family.dim() {
        return Err(Error::Config(format!(
            "--simple-null needs {} value(s) for {family}",
            family.dim()
        )));
    }
    Ok(Theta::new(values))
}

fn emit_report(report: &Report, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(p) => report.write(p),
        None => {
            println!("{}", report.to_json()?);
            Ok(())
        }
    }
}

fn cmd_test(a: TestArgs) -> Result<()> {
    if !a.scheme.supports(a.family) {
        return Err(Error::UnsupportedPairing {
            scheme: a.scheme.name(),
            family: a.family.name(),
        });
    }
    let sample = ingest_csv(&a.data, a.scheme)?;
    let defaults = MleOptions::default();
    let opts = TestOptions {
        grid: a.grid.config(),
        simple_null: a
            .simple_null
            .as_deref()
            .map(|s| parse_simple_null(s, a.family))
            .transpose()?,
        cross_moment: a.cross_moment.unwrap_or_default(),
        cs_weight: a.cs_weight,
        mle: MleOptions {
            max_iter: a.max_iter.unwrap_or(defaults.max_iter),
            tol: a.tol.unwrap_or(defaults.tol),
            force_newton: a.force_newton,
        },
    };
    let boot = a.boot.config();
    let result = run_test(&sample, a.family, &boot, &opts)?;
    if let Some(p) = &a.emit_boot_draws {
        write_boot_draws(p, &result.boot_draws)?;
    }
    emit_report(&Report::new(&result, a.boot.alpha, &opts), a.out.as_ref())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = if a.full {
        SimulationConfig::full(a.study)
    } else {
        SimulationConfig::desk(a.study)
    };
    cfg.nu = a.nu;
    if let Some(t) = a.trials {
        cfg.trials_null = t;
        cfg.trials_alt = t;
    }
    if let Some(t) = a.trials_alt {
        cfg.trials_alt = t;
    }
    if let Some(b) = a.b {
        cfg.b = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    if let Some(m) = a.multiplier {
        cfg.multiplier = m;
    }
    if let Some(t) = a.theta {
        cfg.thetas = t;
    }
    if let Some(n) = a.n {
        cfg.ns = n;
    }
    if let Some(m) = a.grid_size {
        cfg.grid.m = m;
    }
    let report = run_study(&cfg)?;
    match &a.out {
        Some(p) => report.write_csv(BufWriter::new(File::create(p)?))?,
        None => report.write_csv(std::io::stdout().lock())?,
    }
    if let Some(p) = &a.json {
        let mut f = BufWriter::new(File::create(p)?);
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

fn cmd_quasar(a: QuasarArgs) -> Result<()> {
    let path = a.data.clone().unwrap_or_else(QuasarDataset::default_path);
    let opts = TestOptions {
        grid: a.grid.config(),
        ..Default::default()
    };
    let outputs = QuasarOutputs {
        report: a.out.clone(),
        boot_draws: a.emit_boot_draws.clone(),
        cdf: a.emit_cdf.clone(),
    };
    let (_, report) = quasar_workflow(&path, &a.boot.config(), &opts, a.boot.alpha, &outputs)?;
    if a.out.is_none() {
        emit_report(&report, None)?;
    }
    Ok(())
}

/// Splice `--config` file contents in ahead of the explicit flags.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let (path, width) = match args[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => match args.get(pos + 1) {
            Some(p) => (p.clone(), 2),
            None => return Ok(args),
        },
    };
    let from_file = read_config(&PathBuf::from(path))?;
    let mut rest: Vec<String> = args.into_iter().enumerate()
        .filter(|(i, _)| *i < pos || *i >= pos + width)
        .map(|(_, a)| a)
        .collect();
    // subcommand sits right after the binary name
    let at = rest
        .iter()
        .position(|a| matches!(a.as_str(), "test" | "simulate" | "quasar"))
        .map_or(rest.len(), |i| i + 1);
    rest.splice(at..at, from_file);
    Ok(rest)
}

fn run() -> Result<()> {
    let args = expand_config(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Quasar(a) => cmd_quasar(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
