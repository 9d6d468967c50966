use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use iclasso::datagen::{read_csv, sample_new_user, write_csv, DataGenerator, DgpConfig};
use iclasso::diagnostics::{
    check_events, check_ic_condition, compute_max_stats, estimate_exception_probability,
    estimate_moment_bounds_multi, write_records_json, DiagnosticRecord, DiagnosticsSettings,
    SparsityExponent, DEFAULT_CONE_SAMPLES,
};
use iclasso::experiment::{
    emit_table, run_experiment, ExperimentConfig, OutputFormat, FULL_ITERATIONS,
};
use iclasso::tuning::{
    build_grid, fit_estimator, gic_select, ic_lower_bound, write_scores_csv, Estimator,
    GicSettings, IcRule, DEFAULT_C2_VALUES,
};
use iclasso::Error;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "iclasso",
    version,
    about = "Lasso / Conservative Lasso incentive-compatibility toolkit"
)]
struct Cli {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the misreporting experiment and emit a Truth/Report table.
    Simulate(SimulateArgs),
    /// Fit one estimator to a CSV dataset (`y,x1,...,xp`) and print a JSON report.
    Fit(FitArgs),
    /// Print the GIC score table over the tuning grid.
    Tune(FitArgs),
    /// Event, moment and incentive-compatibility diagnostics as JSON records.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Args, Debug, Default)]
struct SimulateArgs {
    /// Comma-separated dimensions.
    #[arg(long)]
    p: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated report shifts.
    #[arg(long)]
    lie: Option<String>,
    /// `lasso`, `conservative` or a comma-separated list.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated C2 values of the tuning grid.
    #[arg(long = "c2-grid")]
    c2_grid: Option<String>,
    /// Grid exponent for every estimator.
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long = "lambda-prec-mult")]
    lambda_prec_mult: Option<f64>,
    /// `csv`, `json` or `text`.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use 1000 iterations unless `--iterations` is given.
    #[arg(long = "paper-scale")]
    paper_scale: bool,
    /// Select λ on the first iteration only.
    #[arg(long = "freeze-lambda")]
    freeze_lambda: bool,
}

#[derive(Args, Debug, Default)]
struct FitArgs {
    /// CSV with header `y,x1,...,xp`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<String>,
    /// Fixed λ; without it λ is selected by GIC.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "c2-grid")]
    c2_grid: Option<String>,
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long = "lambda-prec-mult")]
    lambda_prec_mult: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct DiagnoseArgs {
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    estimator: Option<String>,
    /// λ for all diagnostics; defaults to the grid value at the smallest C2.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lie: Option<f64>,
    /// Replicates for probability and moment estimates.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long = "cone-samples")]
    cone_samples: Option<usize>,
    #[arg(long = "c2-grid")]
    c2_grid: Option<String>,
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long = "lambda-prec-mult")]
    lambda_prec_mult: Option<f64>,
    /// Precision-matrix row-sum rate used by the lower-bound rule.
    #[arg(long)]
    s1: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct GenerateArgs {
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate index within the seed.
    #[arg(long)]
    index: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::Parse(_)
            | Error::DimensionMismatch(_)
            | Error::Csv(_) => Failure::Config(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

/// Values from the config file, consumed key by key so leftovers can be reported.
struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        let Some(path) = path else {
            return Ok(FileConfig { values });
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Failure::Config(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    i + 1
                ))
            })?;
            let key = k.trim().trim_start_matches("--").replace('_', "-");
            values.insert(key, v.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Failure::Config(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    fn pick<T: FromStr>(&mut self, flag: Option<T>, key: &str) -> CliResult<Option<T>> {
        let from_file = self.take(key)?;
        Ok(flag.or(from_file))
    }

    fn pick_bool(&mut self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.take::<bool>(key)?.unwrap_or(false))
    }

    fn finish(self) -> CliResult<()> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(k) => Err(Failure::Config(format!("unknown config key `{k}`"))),
        }
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Failure::Config(format!("invalid {what} value `{t}`")))
        })
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(Failure::Config(format!("empty {what} list")));
    }
    Ok(items)
}

fn parse_estimators(s: &str) -> CliResult<Vec<Estimator>> {
    if s.trim().eq_ignore_ascii_case("both") || s.trim().eq_ignore_ascii_case("all") {
        return Ok(vec![Estimator::Lasso, Estimator::Conservative]);
    }
    let mut out: Vec<Estimator> = Vec::new();
    for e in parse_list::<String>(s, "estimator")? {
        let e: Estimator = e.parse()?;
        if !out.contains(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

fn single_estimator(s: Option<String>) -> CliResult<Estimator> {
    match s {
        None => Ok(Estimator::Lasso),
        Some(s) => Ok(s.parse()?),
    }
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, bytes)
            .map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn gic_settings(mult: Option<f64>) -> GicSettings {
    GicSettings {
        lambda_prec_multiplier: mult.unwrap_or(1.0),
        ..GicSettings::default()
    }
}

fn simulate(args: SimulateArgs, mut file: FileConfig) -> CliResult<bool> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = file.pick(args.p, "p")? {
        cfg.p_values = parse_list(&p, "p")?;
    }
    if let Some(n) = file.pick(args.n, "n")? {
        cfg.n_values = parse_list(&n, "n")?;
    }
    if let Some(l) = file.pick(args.lie, "lie")? {
        cfg.lies = parse_list(&l, "lie")?;
    }
    if let Some(e) = file.pick(args.estimator, "estimator")? {
        cfg.estimators = parse_estimators(&e)?;
    }
    if let Some(c) = file.pick(args.c2_grid, "c2-grid")? {
        cfg.c2_values = parse_list(&c, "c2")?;
    }
    cfg.exponent = file.pick(args.exponent, "exponent")?;
    if let Some(m) = file.pick(args.lambda_prec_mult, "lambda-prec-mult")? {
        cfg.lambda_prec_multiplier = m;
    }
    if let Some(s) = file.pick(args.seed, "seed")? {
        cfg.master_seed = s;
    }
    let paper_scale = file.pick_bool(args.paper_scale, "paper-scale")?;
    cfg.freeze_lambda = file.pick_bool(args.freeze_lambda, "freeze-lambda")?;
    cfg.iterations = match file.pick(args.iterations, "iterations")? {
        Some(i) => i,
        None if paper_scale => FULL_ITERATIONS,
        None => cfg.iterations,
    };
    let format: OutputFormat = file
        .pick(args.format, "format")?
        .unwrap_or_else(|| "csv".to_string())
        .parse()?;
    let out = file.pick(args.out, "out")?;
    file.finish()?;
    cfg.validate()?;

    log::info!(
        "simulate: {} cells, {} iterations, seed {}",
        cfg.cell_count(),
        cfg.iterations,
        cfg.master_seed
    );
    let outcome = run_experiment(&cfg)?;
    for f in &outcome.failures {
        eprintln!(
            "cell failed: estimator={} p={} n={} lie={}: {}",
            f.estimator, f.p, f.n, f.lie, f.message
        );
    }
    if !outcome.cells.is_empty() {
        let table = emit_table(&outcome.cells, format)?;
        write_output(out.as_deref(), table.as_bytes())?;
    }
    Ok(outcome.is_success())
}

struct FitSetup {
    data: iclasso::ObservedData,
    estimator: Estimator,
    lambda: Option<f64>,
    c2: Vec<f64>,
    exponent: Option<f64>,
    settings: GicSettings,
    out: Option<PathBuf>,
}

fn fit_setup(args: FitArgs, mut file: FileConfig) -> CliResult<FitSetup> {
    let path: PathBuf = file
        .pick(args.data, "data")?
        .ok_or_else(|| Failure::Config("--data is required".into()))?;
    let estimator = single_estimator(file.pick(args.estimator, "estimator")?)?;
    let lambda = file.pick(args.lambda, "lambda")?;
    let c2 = match file.pick(args.c2_grid, "c2-grid")? {
        Some(c) => parse_list(&c, "c2")?,
        None => DEFAULT_C2_VALUES.to_vec(),
    };
    let exponent = file.pick(args.exponent, "exponent")?;
    let settings = gic_settings(file.pick(args.lambda_prec_mult, "lambda-prec-mult")?);
    let out = file.pick(args.out, "out")?;
    file.finish()?;
    let reader = fs::File::open(&path)
        .map_err(|e| Failure::Config(format!("cannot open {}: {e}", path.display())))?;
    let data = read_csv(reader)?;
    Ok(FitSetup {
        data,
        estimator,
        lambda,
        c2,
        exponent,
        settings,
        out,
    })
}

fn fit(args: FitArgs, file: FileConfig) -> CliResult<bool> {
    let s = fit_setup(args, file)?;
    let (n, p) = s.data.x.dim();
    let (lambda, fit, scores) = match s.lambda {
        Some(lambda) => {
            let f = fit_estimator(&s.data.x, &s.data.y, s.estimator, lambda, &s.settings, None)?;
            (lambda, f, None)
        }
        None => {
            let exponent = s.exponent.unwrap_or_else(|| s.estimator.default_exponent());
            let grid = build_grid(p, exponent, &s.c2)?;
            let sel = gic_select(&s.data.x, &s.data.y, &grid, s.estimator, &s.settings)?;
            (sel.lambda_star, sel.fit, Some(sel.scores))
        }
    };
    let support: Vec<usize> = fit
        .beta_hat
        .iter()
        .enumerate()
        .filter(|(_, b)| b.abs() > s.settings.solver.support_tol)
        .map(|(j, _)| j)
        .collect();
    let report = json!({
        "estimator": s.estimator,
        "n": n,
        "p": p,
        "lambda": lambda,
        "beta_hat": fit.beta_hat,
        "support": support,
        "objective": fit.objective,
        "kkt_violation": fit.kkt_violation,
        "converged": fit.converged,
        "first_step": fit.first_step,
        "gic_scores": scores,
    });
    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Run(e.to_string()))?;
    text.push('\n');
    write_output(s.out.as_deref(), text.as_bytes())?;
    Ok(fit.converged)
}

fn tune(args: FitArgs, file: FileConfig) -> CliResult<bool> {
    let s = fit_setup(args, file)?;
    if s.lambda.is_some() {
        return Err(Failure::Config(
            "tune selects λ; do not pass --lambda".into(),
        ));
    }
    let p = s.data.x.ncols();
    let exponent = s.exponent.unwrap_or_else(|| s.estimator.default_exponent());
    let grid = build_grid(p, exponent, &s.c2)?;
    let sel = gic_select(&s.data.x, &s.data.y, &grid, s.estimator, &s.settings)?;
    let mut buf = Vec::new();
    write_scores_csv(&sel, &mut buf)?;
    write_output(s.out.as_deref(), &buf)?;
    Ok(true)
}

fn diagnose(args: DiagnoseArgs, mut file: FileConfig) -> CliResult<bool> {
    let p = file.pick(args.p, "p")?.unwrap_or(100);
    let n = file.pick(args.n, "n")?.unwrap_or(200);
    let seed = file.pick(args.seed, "seed")?.unwrap_or(1);
    let estimator = single_estimator(file.pick(args.estimator, "estimator")?)?;
    let lie = file.pick(args.lie, "lie")?.unwrap_or(2.0);
    let reps = file.pick(args.reps, "reps")?.unwrap_or(200);
    let cone_samples = file
        .pick(args.cone_samples, "cone-samples")?
        .unwrap_or(DEFAULT_CONE_SAMPLES);
    let c2 = match file.pick(args.c2_grid, "c2-grid")? {
        Some(c) => parse_list(&c, "c2")?,
        None => DEFAULT_C2_VALUES.to_vec(),
    };
    let exponent = file
        .pick(args.exponent, "exponent")?
        .unwrap_or_else(|| estimator.default_exponent());
    let fit = gic_settings(file.pick(args.lambda_prec_mult, "lambda-prec-mult")?);
    let s1 = file.pick(args.s1, "s1")?.unwrap_or(1.0);
    let lambda_flag = file.pick(args.lambda, "lambda")?;
    let out = file.pick(args.out, "out")?;
    file.finish()?;

    let grid = build_grid(p, exponent, &c2)?;
    let lambda = match lambda_flag {
        Some(l) => l,
        None => grid.lambdas.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let dgp = DgpConfig::new(p, n, seed);
    dgp.validate()?;
    let settings = DiagnosticsSettings { cone_samples, fit };
    let config = json!({
        "p": p, "n": n, "estimator": estimator, "lambda": lambda, "lie": lie,
        "reps": reps, "cone_samples": cone_samples, "c2": c2, "exponent": exponent,
        "lambda_prec_multiplier": fit.lambda_prec_multiplier, "s1": s1,
    });

    let dataset = DataGenerator::new(dgp)?.sample(0);
    let user = sample_new_user(p, 3, lie, seed)?;
    let max_stats = compute_max_stats(&dataset, &user)?;
    let events = check_events(&dataset, lambda, cone_samples, seed, &settings)?;
    let p_fc = estimate_exception_probability(&dgp, lambda, reps, seed, &settings)?;
    let rule = match estimator {
        Estimator::Lasso => IcRule::Lasso,
        Estimator::Conservative => IcRule::Conservative,
    };
    let bound = ic_lower_bound(p_fc, dgp.s0, s1, rule);
    let moments = estimate_moment_bounds_multi(
        &dgp,
        estimator,
        lambda,
        &[1, 2],
        reps.max(30),
        seed,
        &settings,
    )?;
    let ic = json!({
        "three_halves": check_ic_condition(dgp.s0, n, p, max_stats.m3, max_stats.m4, SparsityExponent::ThreeHalves)?,
        "two": check_ic_condition(dgp.s0, n, p, max_stats.m3, max_stats.m4, SparsityExponent::Two)?,
    });
    let grid_probs = grid
        .lambdas
        .iter()
        .zip(&grid.c2_values)
        .map(|(&l, &c)| {
            Ok(json!({"c2": c, "lambda": l,
                "exception_probability": estimate_exception_probability(&dgp, l, reps, seed, &settings)?}))
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let records = vec![
        DiagnosticRecord::new("compute_max_stats", &config, seed, &max_stats)?,
        DiagnosticRecord::new("check_events", &config, seed, &events)?,
        DiagnosticRecord::new(
            "estimate_exception_probability",
            &config,
            seed,
            &json!({"lambda": lambda, "probability": p_fc, "grid": grid_probs}),
        )?,
        DiagnosticRecord::new(
            "ic_lower_bound",
            &config,
            seed,
            &json!({"rule": rule, "bound": bound, "lambda": lambda, "satisfied": lambda >= bound}),
        )?,
        DiagnosticRecord::new("estimate_moment_bounds", &config, seed, &moments)?,
        DiagnosticRecord::new("check_ic_condition", &config, seed, &ic)?,
    ];
    let mut buf = Vec::new();
    write_records_json(&records, &mut buf)?;
    write_output(out.as_deref(), &buf)?;
    Ok(true)
}

fn generate(args: GenerateArgs, mut file: FileConfig) -> CliResult<bool> {
    let p = file.pick(args.p, "p")?.unwrap_or(100);
    let n = file.pick(args.n, "n")?.unwrap_or(200);
    let seed = file.pick(args.seed, "seed")?.unwrap_or(1);
    let index = file.pick(args.index, "index")?.unwrap_or(0);
    let out = file.pick(args.out, "out")?;
    file.finish()?;
    let data = DataGenerator::new(DgpConfig::new(p, n, seed))?.sample(index);
    let mut buf = Vec::new();
    write_csv(&data.x, &data.y, &mut buf)?;
    write_output(out.as_deref(), &buf)?;
    Ok(true)
}

fn run(cli: Cli) -> CliResult<bool> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, file),
        Command::Fit(a) => fit(a, file),
        Command::Tune(a) => tune(a, file),
        Command::Diagnose(a) => diagnose(a, file),
        Command::Generate(a) => generate(a, file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
