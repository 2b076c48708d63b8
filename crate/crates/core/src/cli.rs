//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE` with `key=value` lines (`#` starts
//! a comment). Config entries are spliced in ahead of the command-line flags,
//! and since every flag overrides itself, explicit flags win. The fully
//! resolved configuration is echoed to stderr in the same `key=value` form.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cheby::{approx_error_bound, exact_psi, ChebyshevSeries, EvalPoint};
use crate::error::{Error, Result};
use crate::grid::uniform_grid;
use crate::landscape::{derivative_gap, export_curves, export_surfaces};
use crate::losses::{
    loss_grad_check, CosineBatch, LossKind, LossSpec, DEFAULT_AM_SOFTMAX_MARGIN,
    DEFAULT_A_SOFTMAX_MARGIN, DEFAULT_DEGREE, DEFAULT_MARGIN, DEFAULT_SCALE,
};
use crate::metrics::{compute_eer, compute_min_dcf, parse_trials, DcfParams};
use crate::toytrain::{train, TrainConfig};

pub const SEED_ENV: &str = "CHEBYAAM_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

const LOSS_MARGIN_HELP: &str =
    "Margin; radians for aamsoftmax/chebyaam, cosine offset for amsoftmax, integer multiplier for asoftmax \
     [default: 0.3; 0.2 for amsoftmax; 2 for asoftmax]";

#[derive(Debug, Parser)]
#[command(
    name = "chebyaam",
    version,
    about = "Chebyshev angular margin loss toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the series coefficients as `k,a_k`.
    Coeffs(CoeffsArgs),
    /// Tabulate the exact transform against the series.
    EvalPsi(EvalPsiArgs),
    /// Finite-difference check of a loss gradient; exits 2 above tolerance.
    Gradcheck(GradcheckArgs),
    /// Sup of the series derivative over [-1, 1].
    Lipschitz(LipschitzArgs),
    /// Write transform curves and loss-derivative surfaces as CSV.
    Landscape(LandscapeArgs),
    /// Train the toy cosine classifier and write its telemetry.
    Train(TrainArgs),
    /// EER and minDCF from a trial list and a score file.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// File of `key=value` defaults; command-line flags take precedence [default: none]
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct CoeffsArgs {
    /// Angular margin in radians
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Truncation degree
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalPsiArgs {
    /// Angular margin in radians
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Truncation degree
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    /// Comma-separated points in [-1, 1] [default: none, the --grid points are used]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Vec<f64>,
    /// Number of uniform points over [-1, 1] when --x is absent
    #[arg(long, default_value_t = 11)]
    pub grid: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    /// Loss kind: nsoftmax, asoftmax, amsoftmax, aamsoftmax, chebyaam
    #[arg(long, default_value_t = LossKind::ChebyAam)]
    pub loss: LossKind,
    #[arg(long, help = LOSS_MARGIN_HELP)]
    pub margin: Option<f64>,
    /// Truncation degree (chebyaam only)
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    /// Logit scale
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    pub scale: f64,
    /// Seed of the first random batch
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Number of random batches; batch i uses seed + i
    #[arg(long, default_value_t = 1)]
    pub batches: u64,
    /// Rows per batch
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    /// Classes per batch
    #[arg(long, default_value_t = 16)]
    pub classes: usize,
    /// Cosines are drawn uniformly from [-bound, bound]
    #[arg(long, default_value_t = 0.95)]
    pub bound: f64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct LipschitzArgs {
    /// Angular margin in radians
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Truncation degree
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    /// Number of scan points over [-1, 1]
    #[arg(long, default_value_t = 100_001)]
    pub grid: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct LandscapeArgs {
    /// Angular margin in radians
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Comma-separated series degrees for the curve export
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 5, 10, 30])]
    pub degrees: Vec<usize>,
    /// Series degree of the chebyaam surface
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    /// Logit scale for the surfaces
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    pub scale: f64,
    /// Curve grid points over [-1, 1]
    #[arg(long, default_value_t = 2001)]
    pub grid: usize,
    /// Surface grid points per axis over [-1, 1]
    #[arg(long, default_value_t = 201)]
    pub surface_grid: usize,
    /// Output directory; receives curves.csv and surfaces.csv
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Loss kind: nsoftmax, asoftmax, amsoftmax, aamsoftmax, chebyaam
    #[arg(long, default_value_t = LossKind::ChebyAam)]
    pub loss: LossKind,
    #[arg(long, help = LOSS_MARGIN_HELP)]
    pub margin: Option<f64>,
    /// Truncation degree (chebyaam only)
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    pub degree: usize,
    /// Logit scale
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    pub scale: f64,
    /// Seed for data, initialization and shuffling
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Peak learning rate
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    /// Fraction of steps spent in linear warmup
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub classes: usize,
    /// Embedding dimension
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 200)]
    pub samples_per_class: usize,
    /// Standard deviation of the per-coordinate noise around each prototype
    #[arg(long, default_value_t = 0.1)]
    pub spread: f64,
    /// Output directory; receives telemetry.csv and summary.txt
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ScoreArgs {
    /// Trial list: `label enroll test` per line
    #[arg(long)]
    pub trials: PathBuf,
    /// Score file: `enroll test score` per line
    #[arg(long)]
    pub scores: PathBuf,
    /// Target prior for minDCF
    #[arg(long, default_value_t = crate::metrics::DEFAULT_P_TARGET)]
    pub p_target: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_fa: f64,
    #[command(flatten)]
    pub config: ConfigArg,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match splice_config(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{rendered}");
                EXIT_OK
            };
        }
    };
    match dispatch(&cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

/// Reads a config file into `(key, value)` pairs with `_` normalized to `-`.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected key=value"))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
        {
            return Err(parse_err("invalid key"));
        }
        if key == "config" {
            return Err(parse_err("config files cannot include other config files"));
        }
        entries.push((key, value.trim().to_string()));
    }
    Ok(entries)
}

/// Inserts `--key=value` for each config entry directly after the
/// subcommand name, so later command-line flags override them.
fn splice_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(sub) = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 1)
    else {
        return Ok(args);
    };
    let mut path = None;
    let mut iter = args[sub + 1..].iter();
    while let Some(a) = iter.next() {
        let a = a.to_string_lossy();
        if a == "--" {
            break;
        } else if a == "--config" {
            path = iter.next().map(PathBuf::from);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let injected: Vec<OsString> = read_config(&path)?
        .into_iter()
        .map(|(k, v)| OsString::from(format!("--{k}={v}")))
        .collect();
    args.splice(sub + 1..sub + 1, injected);
    Ok(args)
}

fn dispatch(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Coeffs(a) => cmd_coeffs(a, out, err),
        Command::EvalPsi(a) => cmd_eval_psi(a, out, err),
        Command::Gradcheck(a) => cmd_gradcheck(a, out, err),
        Command::Lipschitz(a) => cmd_lipschitz(a, out, err),
        Command::Landscape(a) => cmd_landscape(a, out, err),
        Command::Train(a) => cmd_train(a, out, err),
        Command::Score(a) => cmd_score(a, out, err),
    }
}

fn emit(w: &mut dyn Write, text: &str) -> Result<()> {
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io("<output>", e))
}

struct Resolved(String);

impl Resolved {
    fn new(subcommand: &str) -> Self {
        Resolved(format!("# chebyaam {subcommand}\n"))
    }

    fn kv(mut self, key: &str, value: impl Display) -> Self {
        self.0.push_str(&format!("{key}={value}\n"));
        self
    }

    fn print(self, err: &mut dyn Write) -> Result<()> {
        emit(err, &self.0)
    }
}

fn join<T: Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn resolve_margin(loss: LossKind, margin: Option<f64>) -> f64 {
    margin.unwrap_or(match loss {
        LossKind::ASoftmax => DEFAULT_A_SOFTMAX_MARGIN as f64,
        LossKind::AmSoftmax => DEFAULT_AM_SOFTMAX_MARGIN,
        LossKind::NSoftmax => 0.0,
        LossKind::AamSoftmax | LossKind::ChebyAam => DEFAULT_MARGIN,
    })
}

fn cmd_coeffs(a: &CoeffsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    Resolved::new("coeffs")
        .kv("margin", a.margin)
        .kv("degree", a.degree)
        .print(err)?;
    let series = ChebyshevSeries::new(a.margin, a.degree)?;
    let mut table = String::from("k,a_k\n");
    for (k, c) in series.coefficients().iter().enumerate() {
        // `+ 0.0` turns a negative zero into a plain zero
        table.push_str(&format!("{k},{}\n", c + 0.0));
    }
    emit(out, &table)?;
    Ok(EXIT_OK)
}

fn cmd_eval_psi(a: &EvalPsiArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let points = if a.x.is_empty() {
        uniform_grid(-1.0, 1.0, a.grid)?
    } else {
        a.x.clone()
    };
    let mut resolved = Resolved::new("eval-psi")
        .kv("margin", a.margin)
        .kv("degree", a.degree);
    resolved = if a.x.is_empty() {
        resolved.kv("grid", a.grid)
    } else {
        resolved.kv("x", join(&a.x))
    };
    resolved.print(err)?;

    let series = ChebyshevSeries::new(a.margin, a.degree)?;
    let mut table = String::from("x,psi,cheb,abs_err,cheb_d1,cheb_d2\n");
    for x in points {
        let p = EvalPoint::new(x)?;
        let (exact, approx) = (exact_psi(p, a.margin), series.eval(p));
        table.push_str(&format!(
            "{x},{exact},{approx},{},{},{}\n",
            (exact - approx).abs(),
            series.derivative(p),
            series.hessian(p)
        ));
    }
    emit(out, &table)?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let margin = resolve_margin(a.loss, a.margin);
    Resolved::new("gradcheck")
        .kv("loss", a.loss)
        .kv("margin", margin)
        .kv("degree", a.degree)
        .kv("scale", a.scale)
        .kv("seed", a.seed)
        .kv("batches", a.batches)
        .kv("rows", a.rows)
        .kv("classes", a.classes)
        .kv("bound", a.bound)
        .kv("step", a.step)
        .kv("tol", a.tol)
        .print(err)?;
    if a.tol.is_nan() || a.tol < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be non-negative, got {}",
            a.tol
        )));
    }
    if a.batches == 0 {
        return Err(Error::InvalidArgument("need at least one batch".into()));
    }

    let spec = LossSpec::new(a.loss, margin, a.scale, a.degree)?;
    let mut worst = 0.0f64;
    let mut worst_at = (a.seed, 0, 0);
    let mut large = 0usize;
    for i in 0..a.batches {
        let seed = a.seed.wrapping_add(i);
        let batch = CosineBatch::random(seed, a.rows, a.classes, a.bound)?;
        let report = loss_grad_check(&spec, &batch, a.step)?;
        large += report.large_gradients.len();
        if report.max_relative_error > worst || report.max_relative_error.is_nan() {
            worst = report.max_relative_error;
            worst_at = (seed, report.worst_entry.0, report.worst_entry.1);
        }
    }
    let pass = worst <= a.tol;
    emit(
        out,
        &format!(
            "loss {}\nmax_relative_error {worst:e}\nworst_entry seed={} row={} col={}\nlarge_gradients {large}\nresult {}\n",
            spec.label(),
            worst_at.0,
            worst_at.1,
            worst_at.2,
            if pass { "pass" } else { "fail" }
        ),
    )?;
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_lipschitz(a: &LipschitzArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    Resolved::new("lipschitz")
        .kv("margin", a.margin)
        .kv("degree", a.degree)
        .kv("grid", a.grid)
        .print(err)?;
    let series = ChebyshevSeries::new(a.margin, a.degree)?;
    let lip = series.lipschitz_constant(a.grid)?;
    let bound = approx_error_bound(a.margin, a.degree)?;
    emit(out, &format!("lipschitz {lip}\nerror_bound {bound}\n"))?;
    Ok(EXIT_OK)
}

fn cmd_landscape(a: &LandscapeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    Resolved::new("landscape")
        .kv("margin", a.margin)
        .kv("degrees", join(&a.degrees))
        .kv("degree", a.degree)
        .kv("scale", a.scale)
        .kv("grid", a.grid)
        .kv("surface-grid", a.surface_grid)
        .kv("out", a.out.display())
        .print(err)?;
    let specs = [
        LossSpec::n_softmax(a.scale)?,
        LossSpec::aam_softmax(a.margin, a.scale)?,
        LossSpec::cheby_aam(a.margin, a.degree, a.scale)?,
    ];
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    export_curves(a.margin, &a.degrees, a.grid, &a.out.join("curves.csv"))?;
    export_surfaces(&specs, a.surface_grid, &a.out.join("surfaces.csv"))?;

    let mut table = String::from("loss,grad_a,grad_b,ratio\n");
    for spec in &specs {
        let g = derivative_gap(spec)?;
        table.push_str(&format!(
            "{},{},{},{}\n",
            spec.label(),
            g.grad_a,
            g.grad_b,
            g.ratio
        ));
    }
    emit(out, &table)?;
    Ok(EXIT_OK)
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let margin = resolve_margin(a.loss, a.margin);
    Resolved::new("train")
        .kv("loss", a.loss)
        .kv("margin", margin)
        .kv("degree", a.degree)
        .kv("scale", a.scale)
        .kv("seed", a.seed)
        .kv("epochs", a.epochs)
        .kv("batch-size", a.batch_size)
        .kv("lr", a.lr)
        .kv("warmup", a.warmup)
        .kv("momentum", a.momentum)
        .kv("classes", a.classes)
        .kv("dim", a.dim)
        .kv("samples-per-class", a.samples_per_class)
        .kv("spread", a.spread)
        .kv("out", a.out.display())
        .print(err)?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        peak_lr: a.lr,
        warmup_fraction: a.warmup,
        momentum: a.momentum,
        seed: a.seed,
        dim: a.dim,
        num_classes: a.classes,
        samples_per_class: a.samples_per_class,
        spread: a.spread,
        ..TrainConfig::new(LossSpec::new(a.loss, margin, a.scale, a.degree)?)
    };
    config.validate()?;
    let telemetry = train(&config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    telemetry.write(&config, &a.out)?;
    emit(out, &telemetry.summary(&config))?;
    Ok(EXIT_OK)
}

fn cmd_score(a: &ScoreArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    Resolved::new("score")
        .kv("trials", a.trials.display())
        .kv("scores", a.scores.display())
        .kv("p-target", a.p_target)
        .kv("c-miss", a.c_miss)
        .kv("c-fa", a.c_fa)
        .print(err)?;
    let params = DcfParams::new(a.p_target, a.c_miss, a.c_fa)?;
    let trials = parse_trials(&a.trials, &a.scores)?;
    let eer = compute_eer(&trials)?;
    let min_dcf = compute_min_dcf(&trials, &params)?;
    emit(
        out,
        &format!("EER% {:.4}\nminDCF {:.4}\n", 100.0 * eer.eer, min_dcf),
    )?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("chebyaam").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_lines() {
        let p = Path::new("c.cfg");
        let entries = parse_config(
            "# header\nmargin = 0.2\n\ndegree=4  # trailing\nsamples_per_class=3\n",
            p,
        )
        .unwrap();
        assert_eq!(
            entries,
            vec![
                ("margin".to_string(), "0.2".to_string()),
                ("degree".to_string(), "4".to_string()),
                ("samples-per-class".to_string(), "3".to_string()),
            ]
        );
        assert!(matches!(
            parse_config("margin 0.2\n", p),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_config("config=x\n", p).is_err());
    }

    #[test]
    fn coeffs_table() {
        let (code, out, err) = run_capture(&["coeffs", "--margin", "0", "--degree", "3"]);
        assert_eq!(code, 0);
        assert_eq!(out, "k,a_k\n0,0\n1,1\n2,0\n3,0\n");
        assert!(err.contains("margin=0\n") && err.contains("degree=3\n"));
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "margin=0.2\ndegree=4\n").unwrap();
        let cfg = cfg.to_str().unwrap();
        let (code, _, err) = run_capture(&["coeffs", "--config", cfg]);
        assert_eq!(code, 0);
        assert!(err.contains("margin=0.2\n") && err.contains("degree=4\n"));
        let (code, _, err) = run_capture(&["coeffs", "--degree", "6", "--config", cfg]);
        assert_eq!(code, 0);
        assert!(err.contains("margin=0.2\n") && err.contains("degree=6\n"));
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, "epochs=3\n").unwrap();
        let (code, _, _) = run_capture(&["coeffs", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = run_capture(&["coeffs", "--config", "/nonexistent/x.cfg"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn usage_errors_and_help() {
        assert_eq!(run_capture(&["coeffs", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&[]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["coeffs", "--margin", "2"]).0, EXIT_USAGE);
        let (code, out, _) = run_capture(&["coeffs", "--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("[default: 0.3]") && out.contains("[default: 30]"));
    }

    #[test]
    fn every_flag_lists_a_default() {
        let mut cmd = Cli::command();
        for sub in cmd.get_subcommands_mut() {
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                let id = arg.get_id().as_str();
                if matches!(id, "help" | "version" | "config") || arg.is_required_set() {
                    continue;
                }
                let flag = format!("--{} <", arg.get_long().unwrap());
                let block = help.split(&flag).nth(1).unwrap();
                let block = block.split("\n  -").next().unwrap();
                assert!(
                    block.contains("default"),
                    "{} {flag} has no default in help",
                    sub.get_name()
                );
            }
        }
    }

    #[test]
    fn eval_psi_table() {
        let (code, out, _) = run_capture(&[
            "eval-psi",
            "--margin",
            "0",
            "--degree",
            "4",
            "--x",
            "-0.5,0.25",
        ]);
        assert_eq!(code, 0);
        let rows: Vec<&str> = out.lines().collect();
        assert_eq!(rows[0], "x,psi,cheb,abs_err,cheb_d1,cheb_d2");
        assert!(rows[1].starts_with("-0.5,-0.5,"));
        assert_eq!(rows.len(), 3);
        assert_eq!(run_capture(&["eval-psi", "--x", "1.5"]).0, EXIT_USAGE);
    }

    #[test]
    fn gradcheck_exit_codes() {
        assert_eq!(run_capture(&["gradcheck", "--loss", "nsoftmax"]).0, EXIT_OK);
        let (code, out, _) = run_capture(&["gradcheck", "--tol", "0"]);
        assert_eq!(code, EXIT_CHECK_FAILED);
        assert!(out.contains("result fail"));
        assert_eq!(run_capture(&["gradcheck", "--loss", "nope"]).0, EXIT_USAGE);
    }

    #[test]
    fn loss_dependent_margin_default() {
        let (code, _, err) = run_capture(&["gradcheck", "--loss", "asoftmax"]);
        assert_eq!(code, 0);
        assert!(err.contains("margin=2\n"));
        let (_, _, err) = run_capture(&["gradcheck", "--loss", "amsoftmax"]);
        assert!(err.contains("margin=0.2\n"));
    }

    #[test]
    fn lipschitz_value() {
        let (code, out, _) = run_capture(&["lipschitz", "--margin", "0.3", "--degree", "30"]);
        assert_eq!(code, 0);
        let lip: f64 = out
            .lines()
            .next()
            .unwrap()
            .strip_prefix("lipschitz ")
            .unwrap()
            .parse()
            .unwrap();
        assert!((lip - 6.78).abs() < 5e-3);
    }

    #[test]
    fn score_prints_four_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.txt");
        let s = dir.path().join("s.txt");
        fs::write(&t, "1 a x\n0 a y\n1 b x\n0 b y\n").unwrap();
        fs::write(&s, "a x 0.9\na y 0.1\nb x 0.8\nb y 0.2\n").unwrap();
        let (code, out, _) = run_capture(&[
            "score",
            "--trials",
            t.to_str().unwrap(),
            "--scores",
            s.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert_eq!(out, "EER% 0.0000\nminDCF 0.0000\n");
        let missing = dir.path().join("missing.txt");
        let (code, _, err) = run_capture(&[
            "score",
            "--trials",
            missing.to_str().unwrap(),
            "--scores",
            s.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("missing.txt"));
    }

    #[test]
    fn seed_from_environment_is_overridden_by_flag() {
        let mut cmd = Cli::command();
        let m = cmd
            .try_get_matches_from_mut(["chebyaam", "gradcheck", "--seed", "9"])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        assert_eq!(sub.get_one::<u64>("seed"), Some(&9));
    }
}
