use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use casecohort::data::validate_cohort;
use casecohort::design::{apply_design, DesignConfig, WeightScheme};
use casecohort::harness::{compare_schemes, emit_report, run_study, ReportFormat, StudyConfig, StudyReport};
use casecohort::io::{load_cohort, save_cohort};
use casecohort::{
    fit_additive, fit_cox, simulate_cohort, CensoringSpec, CovariateGenerator, CovariatePath, Error, Family,
    FitOptions, ModelSpec, Result, DEFAULT_PI_FLOOR,
};

#[derive(Parser)]
#[command(name = "casecohort", version, about = "Weighted estimators for case-cohort survival designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Cox,
    Additive,
}

impl From<Model> for Family {
    fn from(m: Model) -> Self {
        match m {
            Model::Cox => Family::Cox,
            Model::Additive => Family::Additive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Md,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Md => ReportFormat::Md,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a fully observed cohort and write it as CSV.
    Simulate(SimulateArgs),
    /// Draw a subcohort and attach weights to a cohort CSV.
    Design(DesignArgs),
    /// Check a cohort CSV and list every violation.
    Validate(ValidateArgs),
    /// Fit the Cox or additive model to a cohort CSV.
    Fit(FitArgs),
    /// Run a Monte Carlo study.
    Mc(McArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum)]
    family: Model,
    /// Comma-separated coefficients; their number sets the dimension.
    #[arg(long, allow_hyphen_values = true)]
    theta0: String,
    /// A constant rate or a path as JSON (`{"breakpoints":[..],"values":[[..],..]}`).
    #[arg(long, default_value = "1")]
    baseline: String,
    /// `none`, `exponential:RATE`, `uniform:UPPER` or JSON.
    #[arg(long, default_value = "none")]
    censoring: String,
    /// `binary:P`, `switch:P:RATE`, `gaussian:MEAN:SD:BOUND` or JSON.
    #[arg(long)]
    covgen: String,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    data: PathBuf,
    /// Design as JSON text or a file: `{"plan": {...}, "scheme": {...}}`.
    #[arg(long)]
    design: String,
    #[arg(long, default_value_t = DEFAULT_PI_FLOOR)]
    pi_floor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PI_FLOOR)]
    pi_floor: f64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long)]
    data: PathBuf,
    /// Weight scheme (or full design) as JSON text or a file. Without it
    /// the weights stored in the CSV are used.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_PI_FLOOR)]
    pi_floor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    jobs: Option<usize>,
    /// JSON list of weight schemes to compare on paired replicates.
    #[arg(long)]
    schemes: Option<String>,
}

/// Inline JSON, or the contents of the named file.
fn json_arg<T: serde::de::DeserializeOwned>(arg: &str) -> Result<T> {
    let text = if arg.trim_start().starts_with(['{', '[']) {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg)?
    };
    Ok(serde_json::from_str(&text)?)
}

fn numbers(spec: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = spec
        .split(':')
        .skip(1)
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("cannot parse {what} {spec:?}")))?;
    if values.len() != expected {
        return Err(Error::Config(format!("{what} {spec:?} needs {expected} numbers")));
    }
    Ok(values)
}

fn parse_censoring(spec: &str) -> Result<CensoringSpec> {
    match spec.split(':').next().unwrap_or_default() {
        "none" => Ok(CensoringSpec::Exponential { rate: 0.0 }),
        "exponential" | "exp" => Ok(CensoringSpec::Exponential {
            rate: numbers(spec, 1, "censoring")?[0],
        }),
        "uniform" => Ok(CensoringSpec::Uniform {
            upper: numbers(spec, 1, "censoring")?[0],
        }),
        _ => json_arg(spec),
    }
}

fn parse_covgen(spec: &str) -> Result<CovariateGenerator> {
    match spec.split(':').next().unwrap_or_default() {
        "binary" => Ok(CovariateGenerator::FixedBinary {
            p: numbers(spec, 1, "covariate generator")?[0],
            levels: [0.0, 1.0],
        }),
        "switch" => {
            let v = numbers(spec, 2, "covariate generator")?;
            Ok(CovariateGenerator::PiecewiseSwitch {
                p: v[0],
                rate: v[1],
                levels: [0.0, 1.0],
            })
        }
        "gaussian" => {
            let v = numbers(spec, 3, "covariate generator")?;
            Ok(CovariateGenerator::FixedGaussianTruncated {
                mean: v[0],
                sd: v[1],
                bound: v[2],
            })
        }
        _ => json_arg(spec),
    }
}

fn parse_baseline(spec: &str) -> Result<CovariatePath> {
    match spec.trim().parse::<f64>() {
        Ok(rate) => Ok(CovariatePath::scalar(rate)),
        Err(_) => json_arg(spec),
    }
}

/// Accepts either a bare weight scheme or a full design block.
fn parse_design(spec: &str) -> Result<DesignConfig> {
    let value: Value = json_arg(spec)?;
    if value.get("scheme").is_some() {
        Ok(serde_json::from_value(value)?)
    } else {
        Ok(DesignConfig {
            plan: None,
            scheme: serde_json::from_value(value)?,
        })
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let SimulateArgs {
        n,
        family,
        theta0,
        baseline,
        censoring,
        covgen,
        tau,
        seed,
        out,
    } = args;
    let theta0 = theta0
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Config(format!("cannot parse --theta0 {theta0:?}")))?;
    let model = ModelSpec {
        family: family.into(),
        theta0,
        baseline: parse_baseline(&baseline)?,
        tau,
    };
    let cohort = simulate_cohort(n, &model, &parse_censoring(&censoring)?, &parse_covgen(&covgen)?, seed)?;
    save_cohort(&cohort, &out)
}

fn fit(args: FitArgs) -> Result<()> {
    let FitArgs {
        model,
        data,
        scheme,
        tol,
        max_iter,
        pi_floor,
        out,
    } = args;
    let cohort = load_cohort(&data)?;
    let design = match scheme {
        Some(s) => parse_design(&s)?,
        None => DesignConfig {
            plan: None,
            scheme: WeightScheme::Custom,
        },
    };
    let weighted = apply_design(&cohort, &design, pi_floor)?;
    let opts = FitOptions {
        tol,
        max_iter,
        ..FitOptions::default()
    };
    let mut value = match model {
        Model::Cox => serde_json::to_value(fit_cox(&weighted, &opts)?)?,
        Model::Additive => {
            let mut v = serde_json::to_value(fit_additive(&weighted)?)?;
            v["iterations"] = json!(0);
            v["converged"] = json!(true);
            v
        }
    };
    value["model"] = json!(match model {
        Model::Cox => "cox",
        Model::Additive => "additive",
    });
    value["scheme"] = json!(design.scheme.to_string());
    write_json(&out, &value)
}

fn design(args: DesignArgs) -> Result<()> {
    let DesignArgs {
        data,
        design,
        pi_floor,
        out,
    } = args;
    let cohort = load_cohort(&data)?;
    let design = parse_design(&design)?;
    if design.plan.is_none() && !matches!(design.scheme, WeightScheme::FullData | WeightScheme::Custom) {
        return Err(Error::Config(format!("scheme {} needs a sampling plan", design.scheme)));
    }
    save_cohort(&apply_design(&cohort, &design, pi_floor)?, &out)
}

fn validate(data: &Path, pi_floor: f64) -> Result<bool> {
    let cohort = load_cohort(data)?;
    let report = validate_cohort(&cohort, pi_floor);
    for v in &report.violations {
        println!("{v}");
    }
    if report.is_valid() {
        println!("ok: {} subjects, {} failures", cohort.len(), cohort.events());
    }
    Ok(report.is_valid())
}

fn mc(args: McArgs) -> Result<Vec<StudyReport>> {
    let McArgs {
        config,
        out,
        format,
        jobs,
        schemes,
    } = args;
    let config: StudyConfig = serde_json::from_str(&std::fs::read_to_string(&config)?)?;
    let schemes: Option<Vec<WeightScheme>> = schemes.map(|s| json_arg(&s)).transpose()?;
    let run = || -> Result<Vec<StudyReport>> {
        match &schemes {
            Some(list) => Ok(compare_schemes(&config, list)?.reports),
            None => Ok(vec![run_study(&config)?]),
        }
    };
    let reports = match jobs {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    emit_report(&reports, format.into(), &out)?;
    Ok(reports)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args).map(|_| ExitCode::SUCCESS),
        Command::Fit(args) => fit(args).map(|_| ExitCode::SUCCESS),
        Command::Design(args) => design(args).map(|_| ExitCode::SUCCESS),
        Command::Validate(args) => {
            validate(&args.data, args.pi_floor).map(|ok| if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Mc(args) => mc(args).map(|reports| {
            if reports.iter().any(|r| r.unstable) {
                eprintln!("unstable scenario: more than 20% of replicates were excluded");
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
