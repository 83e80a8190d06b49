//! `reidrisk` command-line front end.
//!
//! Every subcommand prints one JSON envelope
//! `{command, params, seed, backend, result, timing}` to stdout or `--out`.
//! Exit status: 0 on success, 2 on usage errors and domain violations, 1 on
//! I/O and parse failures.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reidrisk::analytic::{risk_sweep, single_risk, single_risk_closed};
use reidrisk::anonymizer::{class_histogram, k_anonymize, parse_dataset, verify_k_anonymity, RecordSchema, UndersizedPolicy};
use reidrisk::calibrate::{calibrate_k, CalibrationRequest, LeakSpec, Solver};
use reidrisk::recursive::{RecursionState, RecursiveSolver};
use reidrisk::report::{compare_class_distributions, figure_data, CompareOptions, FigureId, FigureParams, FigureRow};
use reidrisk::simulation::{simulate_multi, simulate_single, CiMethod, SimulationConfig};
use reidrisk::{AttackScenario, Backend, ClassSizeDistribution, ClassStructure, Error, Execution};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "reidrisk", version, about = "Re-identification risk for k-anonymised datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-patient risk from the hypergeometric sum.
    Analytic(AnalyticArgs),
    /// Multi-patient risk from the memoized recursion.
    Recursive(RecursiveArgs),
    /// Monte Carlo leak attacks.
    Simulate(SimulateArgs),
    /// k-anonymise a delimited table and report its class-size histogram.
    Anonymize(AnonymizeArgs),
    /// Smallest k meeting a risk threshold.
    Calibrate(CalibrateArgs),
    /// Risk over a (k, L) grid, or the data behind one figure with --figure.
    Sweep(SweepArgs),
    /// Homogeneous vs sampled heterogeneous class sizes.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// Master seed for stochastic steps.
    #[arg(long, env = "REIDRISK_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = BackendArg::Auto)]
    backend: BackendArg,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Disable data parallelism.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn backend(&self) -> Backend {
        match self.backend {
            BackendArg::Auto => Backend::Auto,
            BackendArg::Exact => Backend::Exact,
            BackendArg::Log => Backend::Log,
        }
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum BackendArg {
    Auto,
    Exact,
    Log,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum PolicyArg {
    Suppress,
    Drop,
    Strict,
}

#[derive(Args, Debug, Serialize)]
#[group(required = true, multiple = false)]
struct Leak {
    /// Leaked patients L.
    #[arg(short = 'L', long)]
    leak_size: Option<u64>,
    /// Leaked patients as a fraction of D.
    #[arg(long)]
    leak_fraction: Option<f64>,
}

impl Leak {
    fn spec(&self) -> LeakSpec {
        match (self.leak_size, self.leak_fraction) {
            (Some(l), _) => LeakSpec::Absolute(l),
            (None, Some(f)) => LeakSpec::Fraction(f),
            (None, None) => unreachable!("clap requires one leak flag"),
        }
    }

    /// Validated leak size against `D`.
    fn size(&self, d: u64) -> reidrisk::Result<u64> {
        match self.spec() {
            LeakSpec::Absolute(l) => Ok(l),
            LeakSpec::Fraction(f) if f > 0.0 && f <= 1.0 => Ok(LeakSpec::Fraction(f).resolve(d)),
            LeakSpec::Fraction(f) => Err(domain(format!("leak fraction {f} must lie in (0, 1]"))),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct Population {
    /// Patients in the dataset, D.
    #[arg(short = 'D', long)]
    dataset_size: Option<u64>,
    /// Homogeneous class size.
    #[arg(long, conflicts_with = "classes")]
    k: Option<u64>,
    /// Class-size histogram as a JSON array: entry i counts classes of i patients.
    #[arg(long)]
    classes: Option<String>,
}

impl Population {
    /// `(D, structure)`; `D` comes from the histogram when not given.
    fn resolve(&self) -> reidrisk::Result<(u64, ClassStructure)> {
        match (&self.classes, self.k, self.dataset_size) {
            (Some(json), _, d) => {
                let dist: ClassSizeDistribution = serde_json::from_str(json)?;
                let implied = dist.implied_population();
                if d.is_some_and(|d| d != implied) {
                    return Err(domain(format!("--classes covers {implied} patients, --dataset-size says {}", d.unwrap())));
                }
                Ok((implied, ClassStructure::Heterogeneous(dist)))
            }
            (None, Some(k), Some(d)) => Ok((d, ClassStructure::Homogeneous { k })),
            _ => Err(domain("give --dataset-size with --k, or --classes")),
        }
    }

    fn scenario(&self, leak: &Leak) -> reidrisk::Result<AttackScenario> {
        let (d, classes) = self.resolve()?;
        AttackScenario::new(d, leak.size(d)?, classes)
    }
}

#[derive(Args, Debug, Serialize)]
struct AnalyticArgs {
    #[command(flatten)]
    population: Population,
    #[command(flatten)]
    leak: Leak,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct RecursiveArgs {
    #[command(flatten)]
    population: Population,
    #[command(flatten)]
    leak: Leak,
    /// Patients the adversary re-identifies, n.
    #[arg(short = 'n', long, default_value_t = 1)]
    targets: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    population: Population,
    #[command(flatten)]
    leak: Leak,
    /// Run the multi-patient attack with this many targets.
    #[arg(short = 'n', long)]
    targets: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    /// Collect the per-patient risk histogram (single-patient only).
    #[arg(long)]
    histogram: bool,
    /// Percentile bootstrap interval with this many resamples instead of the normal interval.
    #[arg(long)]
    bootstrap: Option<u32>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct AnonymizeArgs {
    /// Delimited table with a header row.
    #[arg(long)]
    input: PathBuf,
    /// JSON schema: column -> {role, rule, scope}.
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long, value_enum, default_value_t = PolicyArg::Suppress)]
    policy: PolicyArg,
    /// Write the anonymised table here.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct CalibrateArgs {
    #[arg(short = 'D', long)]
    dataset_size: u64,
    #[command(flatten)]
    leak: Leak,
    #[arg(long, default_value_t = 0.33)]
    threshold: f64,
    /// Calibrate the multi-patient risk for this many targets.
    #[arg(short = 'n', long)]
    targets: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    /// Emit the data behind a figure (fig2, fig3a, fig3b, fig4a, fig4b, fig5).
    #[arg(long)]
    figure: Option<String>,
    #[arg(short = 'D', long)]
    dataset_size: Option<u64>,
    #[arg(short = 'L', long, value_delimiter = ',')]
    leak_size: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<u64>,
    #[arg(short = 'n', long, value_delimiter = ',')]
    targets: Vec<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// Heterogeneous samples (fig5).
    #[arg(long)]
    samples: Option<usize>,
    /// Truncated-normal spread (fig5); defaults to k/2.
    #[arg(long)]
    std_dev: Option<f64>,
    /// Skip Monte Carlo series.
    #[arg(long)]
    analytic_only: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    #[arg(short = 'D', long, default_value_t = 10_000)]
    dataset_size: u64,
    /// Minimum (and mean) class size.
    #[arg(long, default_value_t = 5)]
    k: u64,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// Largest number of targets.
    #[arg(short = 'n', long, default_value_t = 10)]
    targets: u64,
    /// Truncated-normal spread; defaults to k/2.
    #[arg(long)]
    std_dev: Option<f64>,
    #[command(flatten)]
    common: Common,
}

fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

enum Output {
    Json(Value),
    Csv(Vec<String>, Vec<Vec<String>>),
}

struct Run<'a> {
    command: &'static str,
    params: Value,
    common: &'a Common,
    stochastic: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_domain_violation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> reidrisk::Result<()> {
    let start = Instant::now();
    let (meta, output) = match &command {
        Command::Analytic(a) => (meta("analytic", a, &a.common, false), analytic(a)?),
        Command::Recursive(a) => (meta("recursive", a, &a.common, false), recursive(a)?),
        Command::Simulate(a) => (meta("simulate", a, &a.common, true), simulate(a)?),
        Command::Anonymize(a) => (meta("anonymize", a, &a.common, true), anonymize(a)?),
        Command::Calibrate(a) => (meta("calibrate", a, &a.common, false), calibrate(a)?),
        Command::Sweep(a) => (meta("sweep", a, &a.common, a.figure.is_some()), sweep(a)?),
        Command::Compare(a) => (meta("compare", a, &a.common, true), compare(a)?),
    };
    let elapsed = start.elapsed();
    let mut sink: Box<dyn Write> = match &meta.common.out {
        Some(path) => Box::new(File::create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    match output {
        Output::Json(result) => {
            let envelope = json!({
                "command": meta.command,
                "params": meta.params,
                "seed": meta.stochastic.then_some(meta.common.seed),
                "backend": meta.common.backend,
                "result": result,
                "timing": { "elapsed_ms": elapsed.as_secs_f64() * 1e3 },
            });
            serde_json::to_writer_pretty(&mut sink, &envelope)?;
            writeln!(sink)?;
        }
        Output::Csv(header, rows) => {
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(&header)?;
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn meta<'a, T: Serialize>(command: &'static str, args: &T, common: &'a Common, stochastic: bool) -> Run<'a> {
    let mut params = serde_json::to_value(args).unwrap_or(Value::Null);
    if let Some(obj) = params.as_object_mut() {
        obj.remove("common");
    }
    Run {
        command,
        params,
        common,
        stochastic,
    }
}

fn json_only(common: &Common, value: impl Serialize) -> reidrisk::Result<Output> {
    if common.format == Format::Csv {
        return Err(domain("this command only produces JSON"));
    }
    Ok(Output::Json(serde_json::to_value(value)?))
}

fn analytic(a: &AnalyticArgs) -> reidrisk::Result<Output> {
    let s = a.population.scenario(&a.leak)?;
    let backend = a.common.backend();
    let probability = single_risk(&s, backend)?;
    let closed = match s.homogeneous_k() {
        Some(_) => Some(single_risk_closed(&s, backend)?),
        None => None,
    };
    json_only(
        &a.common,
        json!({
            "dataset_size": s.dataset_size(),
            "leak_size": s.leak_size(),
            "resolved_backend": backend.resolve(s.dataset_size()),
            "probability": probability,
            "closed_form": closed,
        }),
    )
}

fn recursive(a: &RecursiveArgs) -> reidrisk::Result<Output> {
    let s = a.population.scenario(&a.leak)?;
    let backend = a.common.backend();
    let mut solver = RecursiveSolver::new(backend);
    let probability = solver.probability(&RecursionState::new(s.distribution(), s.leak_size(), a.targets)?)?;
    json_only(
        &a.common,
        json!({
            "dataset_size": s.dataset_size(),
            "leak_size": s.leak_size(),
            "targets": a.targets,
            "resolved_backend": backend.resolve(s.dataset_size()),
            "probability": probability,
            "memo_states": solver.memo_len(),
        }),
    )
}

fn simulate(a: &SimulateArgs) -> reidrisk::Result<Output> {
    let s = a.population.scenario(&a.leak)?;
    let mut cfg = SimulationConfig::new(a.trials, a.common.seed)
        .with_execution(a.common.execution())
        .with_histogram(a.histogram || a.common.format == Format::Csv);
    if let Some(resamples) = a.bootstrap {
        cfg = cfg.with_ci(CiMethod::Bootstrap { resamples });
    }
    let est = match a.targets {
        Some(n) => {
            if a.common.format == Format::Csv {
                return Err(domain("histograms are only collected for the single-patient attack"));
            }
            simulate_multi(&s, n, &cfg)?
        }
        None => simulate_single(&s, &cfg)?,
    };
    if a.common.format == Format::Csv {
        let rows = est
            .histogram
            .iter()
            .flatten()
            .map(|b| vec![b.low.to_string(), b.high.to_string(), b.frequency.to_string()])
            .collect();
        return Ok(Output::Csv(vec!["bin_low".into(), "bin_high".into(), "frequency".into()], rows));
    }
    Ok(Output::Json(json!({
        "dataset_size": s.dataset_size(),
        "leak_size": s.leak_size(),
        "targets": a.targets.unwrap_or(1),
        "estimate": est,
        "ln_mean": finite(est.mean.ln()),
    })))
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn anonymize(a: &AnonymizeArgs) -> reidrisk::Result<Output> {
    if !a.delimiter.is_ascii() {
        return Err(Error::Schema(format!("delimiter `{}` is not a single byte", a.delimiter)));
    }
    let delimiter = a.delimiter as u8;
    let schema = RecordSchema::from_path(&a.schema)?;
    let dataset = parse_dataset(File::open(&a.input)?, &schema, delimiter)?;
    let policy = match a.policy {
        PolicyArg::Suppress => UndersizedPolicy::Suppress,
        PolicyArg::Drop => UndersizedPolicy::Drop,
        PolicyArg::Strict => UndersizedPolicy::Strict,
    };
    let out = k_anonymize(&dataset, &schema, a.k, policy, a.common.seed)?;
    if let Some(path) = &a.table {
        out.write_table(File::create(path)?, delimiter)?;
    }
    let classes: Vec<Value> = out
        .classes
        .iter()
        .map(|c| json!({ "id": c.id, "key": c.key, "patients": c.patients.len(), "suppressed": c.suppressed }))
        .collect();
    json_only(
        &a.common,
        json!({
            "histogram": class_histogram(&out),
            "classes": classes,
            "audit": out.audit,
            "violations": verify_k_anonymity(&out, a.k),
        }),
    )
}

fn calibrate(a: &CalibrateArgs) -> reidrisk::Result<Output> {
    let request = CalibrationRequest {
        dataset_size: a.dataset_size,
        leak: a.leak.spec(),
        threshold: a.threshold,
        solver: match a.targets {
            Some(targets) => Solver::Recursive { targets },
            None => Solver::Analytic,
        },
        backend: a.common.backend(),
    };
    let cal = calibrate_k(&request)?;
    if a.common.format == Format::Csv {
        let rows = cal
            .trace
            .iter()
            .map(|p| {
                vec![
                    p.k.to_string(),
                    p.dataset_size.to_string(),
                    p.leak_size.to_string(),
                    p.probability.value().to_string(),
                    p.probability.ln().to_string(),
                    p.relaxed.to_string(),
                ]
            })
            .collect();
        let header = ["k", "dataset_size", "leak_size", "probability", "ln_probability", "relaxed"];
        return Ok(Output::Csv(header.map(String::from).to_vec(), rows));
    }
    Ok(Output::Json(serde_json::to_value(&cal)?))
}

fn rows_output(common: &Common, rows: &[FigureRow]) -> reidrisk::Result<Output> {
    if common.format == Format::Json {
        return Ok(Output::Json(serde_json::to_value(rows)?));
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let records = rows
        .iter()
        .map(|r| {
            vec![
                r.series.clone(),
                r.x.to_string(),
                r.y.to_string(),
                opt(r.ln_y),
                opt(r.ci_low),
                opt(r.ci_high),
                r.trials.map(|t| t.to_string()).unwrap_or_default(),
                r.seed.map(|t| t.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let header = ["series", "x", "y", "ln_y", "ci_low", "ci_high", "trials", "seed"];
    Ok(Output::Csv(header.map(String::from).to_vec(), records))
}

fn some_vec(v: &[u64]) -> Option<Vec<u64>> {
    (!v.is_empty()).then(|| v.to_vec())
}

fn sweep(a: &SweepArgs) -> reidrisk::Result<Output> {
    if let Some(name) = &a.figure {
        let id: FigureId = name.parse()?;
        let params = FigureParams {
            dataset_size: a.dataset_size,
            leak_sizes: some_vec(&a.leak_size),
            ks: some_vec(&a.k),
            targets: some_vec(&a.targets),
            trials: a.trials,
            samples: a.samples,
            std_dev: a.std_dev,
            analytic_only: a.analytic_only,
            backend: a.common.backend(),
            execution: a.common.execution(),
        };
        return rows_output(&a.common, &figure_data(id, &params, a.common.seed)?);
    }
    let d = a.dataset_size.ok_or_else(|| domain("--dataset-size is required without --figure"))?;
    if a.leak_size.is_empty() || a.k.is_empty() {
        return Err(domain("--leak-size and --k lists are required without --figure"));
    }
    let rows = risk_sweep(d, &a.leak_size, &a.k, a.common.backend(), a.common.execution())?;
    let rows: Vec<FigureRow> = rows
        .into_iter()
        .map(|r| FigureRow {
            series: format!("analytic k={}", r.k),
            x: r.leak_size as f64,
            y: r.probability.value(),
            ln_y: Some(r.probability.ln()),
            ci_low: None,
            ci_high: None,
            trials: None,
            seed: None,
        })
        .collect();
    rows_output(&a.common, &rows)
}

fn compare(a: &CompareArgs) -> reidrisk::Result<Output> {
    let opts = CompareOptions {
        std_dev: a.std_dev,
        backend: a.common.backend(),
        execution: a.common.execution(),
    };
    let cmp = compare_class_distributions(a.dataset_size, a.k, a.samples, a.targets, a.common.seed, &opts)?;
    if a.common.format == Format::Csv {
        return rows_output(&a.common, &cmp.rows);
    }
    Ok(Output::Json(json!({
        "homogeneous": cmp.homogeneous,
        "heterogeneous": cmp.heterogeneous,
        "distributions": cmp.distributions,
        "violations": cmp.violations,
        "dominates": cmp.violations.is_empty(),
    })))
}
