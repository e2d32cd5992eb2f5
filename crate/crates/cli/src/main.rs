//! `survcontour`: fit a survival model from a CSV file and write contour
//! surface, quantile curve and metrics JSON, optionally with a 3D payload
//! and a self-contained HTML report.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use survcontour_core::contour::{
    build_quantile_curves, build_surface, to_json_bytes, to_surface3d, ContourOptions,
};
use survcontour_core::cox::Ties;
use survcontour_core::data::{default_adjuster_profile, ingest_csv, ColumnRoles, IngestOptions};
use survcontour_core::parametric::Distribution;
use survcontour_core::registry::{fit, Family, ModelOptions, ModelSpec};
use survcontour_core::Error;

#[derive(Debug, Parser)]
#[command(name = "survcontour", version, about = "Survival contour surfaces from CSV data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write contour.json, quantiles.json and metrics.json.
    Fit(FitArgs),
    /// Ingest the data and print the ingestion report.
    Validate(DataArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    time: String,
    #[arg(long)]
    status: String,
    #[arg(long)]
    predictor: String,
    /// Comma-separated adjuster columns.
    #[arg(long, value_delimiter = ',')]
    adjusters: Vec<String>,
    #[arg(long)]
    strata: Option<String>,
    /// Columns to treat as categorical even if numeric.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Fail on malformed time or status cells instead of dropping rows.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum FamilyArg {
    KaplanMeier,
    Cox,
    StratifiedCox,
    Parametric,
    FineGray,
    Rsf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DistArg {
    Exponential,
    Weibull,
    Lognormal,
    Loglogistic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TiesArg {
    Efron,
    Breslow,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Distribution for --family parametric.
    #[arg(long, value_enum)]
    dist: Option<DistArg>,
    /// Event code of interest for --family fine_gray.
    #[arg(long, default_value_t = 1)]
    cause: u32,
    #[arg(long, value_enum, default_value = "efron")]
    ties: TiesArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Bootstrap confidence bands.
    #[arg(long)]
    ci: bool,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 200)]
    n_trees: usize,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long, default_value_t = 15)]
    nodesize: usize,
    #[arg(long, default_value_t = 50)]
    n_pred: usize,
    #[arg(long, default_value_t = 200)]
    n_time: usize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Adjuster override as name=value; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Also write surface3d.json.
    #[arg(long)]
    surface3d: bool,
    /// Also write report.html.
    #[arg(long)]
    html: bool,
}

enum Failure {
    Validation(String),
    Nonconvergence(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Nonconvergence(_) => 3,
            Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Nonconvergence(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_nonconvergence() {
            Failure::Nonconvergence(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

impl DataArgs {
    fn roles(&self) -> ColumnRoles {
        let mut roles = ColumnRoles::new(&self.time, &self.status, &self.predictor).with_adjusters(&self.adjusters);
        roles.strata = self.strata.clone();
        roles
    }

    fn options(&self) -> IngestOptions {
        IngestOptions {
            strict: self.strict,
            categorical: self.categorical.clone(),
        }
    }

    fn read(&self) -> Result<Vec<u8>, Failure> {
        fs::read(&self.data).map_err(|e| Failure::Validation(format!("{}: {e}", self.data.display())))
    }
}

fn family(args: &FitArgs) -> Result<Family, Failure> {
    Ok(match args.family {
        FamilyArg::KaplanMeier => Family::KaplanMeier,
        FamilyArg::Cox => Family::Cox,
        FamilyArg::StratifiedCox => Family::StratifiedCox,
        FamilyArg::Parametric => Family::Parametric {
            dist: match args.dist {
                Some(DistArg::Exponential) => Distribution::Exponential,
                Some(DistArg::Weibull) => Distribution::Weibull,
                Some(DistArg::Lognormal) => Distribution::LogNormal,
                Some(DistArg::Loglogistic) => Distribution::LogLogistic,
                None => return Err(Failure::Validation("--family parametric needs --dist".into())),
            },
        },
        FamilyArg::FineGray => Family::FineGray { cause: args.cause },
        FamilyArg::Rsf => Family::Rsf,
    })
}

fn run_fit(args: &FitArgs) -> Result<(), Failure> {
    let bytes = args.data.read()?;
    let spec = ModelSpec {
        family: family(args)?,
        roles: args.data.roles(),
        options: ModelOptions {
            ties: match args.ties {
                TiesArg::Efron => Ties::Efron,
                TiesArg::Breslow => Ties::Breslow,
            },
            replicates: args.replicates,
            level: args.level,
            seed: args.seed,
            n_trees: args.n_trees,
            mtry: args.mtry,
            nodesize: args.nodesize,
            ..ModelOptions::default()
        },
    };
    let (data, report) = ingest_csv(&bytes, &spec.roles, &args.data.options())?;
    if report.dropped() > 0 {
        eprintln!("dropped {} of {} rows", report.dropped(), report.rows_in);
    }
    let model = fit(&spec, &data)?;
    let overrides = args
        .set
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Failure::Validation(format!("--set expects NAME=VALUE, got '{s}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let profile = default_adjuster_profile(&data).with_overrides(&data, &overrides)?;
    let options = ContourOptions {
        n_pred: args.n_pred,
        n_time: args.n_time,
        ci: args.ci,
        bins: args.bins,
    };
    let surface = build_surface(&model, &data, &profile, &options)?;
    let quantiles = build_quantile_curves(&model, &data, &profile, &options)?;
    let metrics = model.metrics(&data)?;

    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let write = |name: &str, bytes: &[u8]| -> Result<(), Failure> {
        let path = args.out.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
    };
    let contour_json = to_json_bytes(&surface)?;
    let quantiles_json = to_json_bytes(&quantiles)?;
    let metrics_json = to_json_bytes(&metrics)?;
    write("contour.json", &contour_json)?;
    write("quantiles.json", &quantiles_json)?;
    write("metrics.json", &metrics_json)?;
    if args.surface3d {
        write("surface3d.json", &to_json_bytes(&to_surface3d(&surface))?)?;
    }
    if args.html {
        let html = report::render(&spec, &contour_json, &quantiles_json, &metrics_json);
        write("report.html", html.as_bytes())?;
    }
    eprintln!(
        "{}: C-index {:.4}, integrated Brier {:.4} on [0, {}]",
        spec.family.tag(),
        metrics.c_index,
        metrics.integrated_brier,
        metrics.tau
    );
    Ok(())
}

fn run_validate(args: &DataArgs) -> Result<(), Failure> {
    let bytes = args.read()?;
    let (_, report) = ingest_csv(&bytes, &args.roles(), &args.options())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Io(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
