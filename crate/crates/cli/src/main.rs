//! `hddr` command-line front end.
//!
//! `hddr test` runs one test on a CSV dataset; `hddr simulate` runs the
//! Type I error simulation. Exit status is 0 on success, 2 for usage or
//! validation errors and 3 when the numerics fail.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hddr::simulation::{simulate_cells, Cell, SimOptions, Table1, TABLE1_CELLS, TABLE1_METHODS};
use hddr::{run_test, Dataset, KnownPropensity, Link, Method, TestOptions, TestResult};
use nalgebra::DMatrix;
use serde::Serialize;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "hddr", version, about = "Doubly robust score tests of conditional independence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test whether the exposure is associated with the outcome given the
    /// remaining columns.
    Test(TestArgs),
    /// Estimate Type I error rates by simulation.
    Simulate(SimulateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum LinkArg {
    Identity,
    Logit,
}

impl From<LinkArg> for Link {
    fn from(l: LinkArg) -> Link {
        match l {
            LinkArg::Identity => Link::Identity,
            LinkArg::Logit => Link::Logit,
        }
    }
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long)]
    input_path: PathBuf,
    #[arg(long)]
    outcome_col: String,
    #[arg(long)]
    exposure_col: String,
    /// pmle-dr, br-dr, known-propensity, naive-forced, naive-unforced or pds-cv.
    #[arg(long, default_value = "pmle-dr")]
    method: Method,
    #[arg(long, value_enum, default_value = "identity")]
    outcome_link: LinkArg,
    /// Column of known propensity scores (excluded from the covariates).
    #[arg(long, conflicts_with = "propensity_value")]
    propensity_col: Option<String>,
    /// A known constant propensity score.
    #[arg(long)]
    propensity_value: Option<f64>,
    #[arg(long, default_value_t = 10)]
    k_folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = hddr::nuisance::DEFAULT_MAX_OUTER)]
    max_outer: usize,
    #[arg(long)]
    output_path: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Run a single method. Without it, all of the table's methods run.
    #[arg(long)]
    method: Option<Method>,
    /// Sample size of a single cell.
    #[arg(long)]
    n: Option<usize>,
    /// Number of covariates of a single cell (at least 100).
    #[arg(long)]
    p: Option<usize>,
    /// Use the misspecified outcome model in a single cell.
    #[arg(long)]
    misspecified: bool,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    k_folds: usize,
    #[arg(long, env = "HDDR_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    output_path: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<hddr::Error> for Failure {
    fn from(e: hddr::Error) -> Self {
        if e.is_validation() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Numeric(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Test(a) => cmd_test(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

/// Reads a comma-separated numeric table with a header row. Rows with an
/// empty or `NA` cell are counted and reported together.
fn read_csv(path: &Path) -> Result<Table, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Failure::Usage(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    let mut missing = 0usize;
    let mut first_missing = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::Usage(format!("parse error: {e}")))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().any(|c| c.is_empty() || c.eq_ignore_ascii_case("na")) {
            missing += 1;
            first_missing.get_or_insert(line);
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Failure::Usage(format!(
                    "parse error at line {line}, column {} ('{}'): not a number: '{cell}'",
                    col + 1,
                    header.get(col).map(String::as_str).unwrap_or("?")
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if missing > 0 {
        return Err(Failure::Usage(format!(
            "{missing} row(s) have missing values (first at line {}); remove or impute them first",
            first_missing.unwrap_or(0)
        )));
    }
    if rows.is_empty() {
        return Err(Failure::Usage("the file has no data rows".into()));
    }
    Ok(Table { header, rows })
}

fn column_index(header: &[String], name: &str) -> Result<usize, Failure> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Failure::Usage(format!("column '{name}' not found in the header")))
}

fn build_dataset(t: &Table, args: &TestArgs) -> Result<(Dataset, Option<Vec<f64>>), Failure> {
    let yi = column_index(&t.header, &args.outcome_col)?;
    let ai = column_index(&t.header, &args.exposure_col)?;
    if yi == ai {
        return Err(Failure::Usage("outcome and exposure columns must differ".into()));
    }
    let pi = match &args.propensity_col {
        Some(name) => {
            let k = column_index(&t.header, name)?;
            if k == yi || k == ai {
                return Err(Failure::Usage("the propensity column must differ from the outcome and exposure".into()));
            }
            Some(k)
        }
        None => None,
    };
    let cov: Vec<usize> = (0..t.header.len()).filter(|&k| k != yi && k != ai && Some(k) != pi).collect();
    let n = t.rows.len();
    let x = DMatrix::from_fn(n, cov.len(), |i, j| t.rows[i][cov[j]]);
    let y = t.rows.iter().map(|r| r[yi]).collect();
    let a = t.rows.iter().map(|r| r[ai]).collect();
    let names = cov.iter().map(|&k| t.header[k].clone()).collect();
    let d = Dataset::new(y, a, x)?.with_column_names(names)?;
    let probs = pi.map(|k| t.rows.iter().map(|r| r[k]).collect());
    Ok((d, probs))
}

#[derive(Serialize)]
struct TestOutput<'a> {
    schema_version: u32,
    result: &'a TestResult,
    exposure_support_names: Option<Vec<String>>,
    outcome_support_names: Option<Vec<String>>,
}

fn names(d: &Dataset, idx: &Option<Vec<usize>>) -> Option<Vec<String>> {
    let cols = d.column_names.as_ref()?;
    idx.as_ref().map(|v| v.iter().map(|&j| cols[j].clone()).collect())
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn render_test(r: &TestResult, d: &Dataset, format: Format) -> Result<String, Failure> {
    let es = names(d, &r.diagnostics.exposure_support);
    let os = names(d, &r.diagnostics.outcome_support);
    let df = match r.reference {
        hddr::score::Reference::Normal => None,
        hddr::score::Reference::StudentT { df } => Some(df),
    };
    let iterations = r.diagnostics.algorithm1_trace.as_ref().map(|t| t.len() - 1);
    Ok(match format {
        Format::Json => {
            let out = TestOutput {
                schema_version: SCHEMA_VERSION,
                result: r,
                exposure_support_names: es,
                outcome_support_names: os,
            };
            serde_json::to_string_pretty(&out).map_err(|e| Failure::Numeric(e.to_string()))? + "\n"
        }
        Format::Csv => {
            let header = "method,n,t_n,p_value,score_mean,score_sd,reference_df,lambda_gamma,lambda_beta,\
exposure_support,outcome_support,converged,algorithm1_iterations,estimate,std_error";
            format!(
                "{header}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.n,
                r.t_n,
                r.p_value,
                r.score_mean,
                r.score_sd,
                opt_num(df),
                opt_num(r.diagnostics.lambda_gamma),
                opt_num(r.diagnostics.lambda_beta),
                es.map(|v| v.join(";")).unwrap_or_default(),
                os.map(|v| v.join(";")).unwrap_or_default(),
                r.diagnostics.converged,
                iterations.map(|k| k.to_string()).unwrap_or_default(),
                opt_num(r.diagnostics.estimate),
                opt_num(r.diagnostics.std_error),
            )
        }
        Format::Text => {
            let mut s = String::new();
            s += &format!("method          {}\n", r.method);
            s += &format!("n               {}\n", r.n);
            s += &format!("T_n             {:.6}\n", r.t_n);
            match df {
                Some(df) => s += &format!("p-value         {:.6}  (t, {df} df)\n", r.p_value),
                None => s += &format!("p-value         {:.6}\n", r.p_value),
            }
            s += &format!("score mean      {:.6e}\n", r.score_mean);
            s += &format!("score sd        {:.6e}\n", r.score_sd);
            if let Some(l) = r.diagnostics.lambda_gamma {
                s += &format!("lambda (exp.)   {l:.6e}\n");
            }
            if let Some(l) = r.diagnostics.lambda_beta {
                s += &format!("lambda (out.)   {l:.6e}\n");
            }
            if let Some(v) = es {
                s += &format!("exposure model  {} covariate(s): {}\n", v.len(), v.join(", "));
            }
            if let Some(v) = os {
                s += &format!("outcome model   {} covariate(s): {}\n", v.len(), v.join(", "));
            }
            if let Some(k) = iterations {
                s += &format!("outer iterations {k}\n");
            }
            if let (Some(e), Some(se)) = (r.diagnostics.estimate, r.diagnostics.std_error) {
                s += &format!("estimate        {e:.6} (se {se:.6})\n");
            }
            s += &format!("converged       {}\n", r.diagnostics.converged);
            s
        }
    })
}

fn write_output(text: &str, path: &Option<PathBuf>) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| Failure::Usage(format!("cannot write output: {e}")))
        }
    }
}

fn cmd_test(args: &TestArgs) -> Result<(), Failure> {
    if !args.input_path.exists() {
        return Err(Failure::Usage(format!("file not found: {}", args.input_path.display())));
    }
    let table = read_csv(&args.input_path)?;
    let (d, col_probs) = build_dataset(&table, args)?;
    let known = match (col_probs, args.propensity_value) {
        (Some(p), None) => Some(KnownPropensity::Probabilities(p)),
        (None, Some(v)) => Some(KnownPropensity::Probabilities(vec![v; d.n()])),
        (None, None) => None,
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    if args.method == Method::KnownPropensity && known.is_none() {
        return Err(Failure::Usage(
            "known-propensity needs --propensity-col or --propensity-value".into(),
        ));
    }
    let opts = TestOptions {
        outcome_link: args.outcome_link.into(),
        k_folds: args.k_folds,
        seed: args.seed,
        max_outer: args.max_outer,
        known_propensity: known,
    };
    let r = run_test(&d, args.method, &opts)?;
    write_output(&render_test(&r, &d, args.format)?, &args.output_path)
}

#[derive(Serialize)]
struct SimOutput<'a> {
    schema_version: u32,
    table: &'a Table1,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    if args.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Failure::Usage("--alpha must lie in [0, 1]".into()));
    }
    let workers = match args.workers {
        Some(0) => return Err(Failure::Usage("--workers must be at least 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let single = args.n.is_some() || args.p.is_some() || args.method.is_some() || args.misspecified;
    let cells: Vec<Cell> = if single {
        vec![Cell::new(args.n.unwrap_or(200), args.p.unwrap_or(200), args.misspecified)]
    } else {
        TABLE1_CELLS.to_vec()
    };
    let methods: Vec<Method> = match args.method {
        Some(m) => vec![m],
        None => TABLE1_METHODS.to_vec(),
    };
    let opts = SimOptions {
        alpha: args.alpha,
        k_folds: args.k_folds,
        workers,
        ..SimOptions::default()
    };
    let progress = |cell: &Cell, k: usize, total: usize| {
        let step = (total / 20).max(1);
        if k % step == 0 || k == total {
            eprintln!(
                "[n={} p={} {}] {k}/{total}",
                cell.n,
                cell.p,
                cell.model_label()
            );
        }
    };
    let table = simulate_cells(&cells, &methods, args.reps, args.seed, &opts, Some(&progress))?;
    let text = match args.format {
        Format::Csv => table.to_csv(),
        Format::Text => table.to_text(),
        Format::Json => {
            let out = SimOutput {
                schema_version: SCHEMA_VERSION,
                table: &table,
            };
            serde_json::to_string_pretty(&out).map_err(|e| Failure::Numeric(e.to_string()))? + "\n"
        }
    };
    write_output(&text, &args.output_path)?;
    if table.cells.iter().any(|c| c.report.is_none()) {
        for c in table.cells.iter().filter(|c| c.report.is_none()) {
            eprintln!(
                "cell n={} p={} not run: {}",
                c.cell.n,
                c.cell.p,
                c.error.as_deref().unwrap_or("unknown error")
            );
        }
        if table.cells.iter().all(|c| c.report.is_none()) {
            return Err(Failure::Usage("no cell could be run".into()));
        }
    }
    Ok(())
}
