use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use structmix::certify::{certify, certify_mv, K0_MC_SAMPLES};
use structmix::estimate::{fit, mv_fit, FitConfig};
use structmix::experiment::{
    persist_records, persist_summary, run_experiment_with_jobs, summarize, write_summary_csv, ExperimentPlan,
    Format,
};
use structmix::io::{self, AnyDataset, MixingSpec, ModelSpec};
use structmix::mixing::{distance, distance_star, DStarMethod, StepCdf};
use structmix::{DensityGenerator, Error, FamilyKind};

const SCHEMAS: &str = "\
JSON formats (all carry \"schema\": 1):
  model        {\"family\": \"normal\" | \"logistic\" | \"gumbel\" | {\"student_t\": nu},
                \"mixing\": {\"support\": [..], \"weights\": [..]}, \"sigma\": s}
  mv model     {\"generator\": \"multivariate_normal\",
                \"mixing\": {\"support\": [[..], ..], \"weights\": [..]}, \"Sigma\": [row-major]}
  mixing       {\"support\": [..], \"weights\": [..]} or {\"gamma\": g, \"rho\": r, \"inner\": mixing}
  fit result   a model plus loglik, iterations, converged, restart_index, trace, events
  plan         {\"true_model\": model, \"fit_order\": m, \"n_grid\": [..], \"replications\": r,
                \"base_seed\": s, \"fit_config\": {\"restarts\", \"max_iter\", \"ll_tol\", \"sigma_bounds\"}}
Datasets are CSV with one observation per line (p comma-separated values when multivariate).
Exit codes: 0 success, 1 domain error or failed certification, 2 usage error.";

#[derive(Parser)]
#[command(name = "structmix", version, about = "Finite mixtures with a shared structural scale", after_help = SCHEMAS)]
struct Cli {
    /// Base random seed
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Suppress progress messages on stderr
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum likelihood fit of a mixture to a CSV dataset
    Fit(FitArgs),
    /// Draw a dataset from a model spec
    Sample(SampleArgs),
    /// Compute and check the theory constants of a true model
    Certify(CertifyArgs),
    /// Distance between two mixing distributions (or the mixings of two models)
    Distance(DistanceArgs),
    /// Run a consistency experiment from a plan
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct FitArgs {
    /// normal, logistic, gumbel, student_t:NU, or multivariate_normal for multi-column data
    #[arg(long)]
    family: String,
    /// Number of mixture components
    #[arg(long = "order", short = 'm')]
    order: usize,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    ll_tol: f64,
    #[arg(long, requires = "sigma_hi")]
    sigma_lo: Option<f64>,
    #[arg(long, requires = "sigma_lo")]
    sigma_hi: Option<f64>,
    /// Output fit result JSON (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, short)]
    n: usize,
    /// Output CSV (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Declared order m (defaults to the number of atoms in the model)
    #[arg(long)]
    order: Option<usize>,
    /// Monte Carlo size for the multivariate entropy
    #[arg(long, default_value_t = K0_MC_SAMPLES)]
    samples: usize,
    /// Output report JSON (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DMethod {
    Auto,
    Product,
    MonteCarlo,
}

#[derive(Args)]
struct DistanceArgs {
    #[arg(long)]
    psi1: PathBuf,
    #[arg(long)]
    psi2: PathBuf,
    /// Multivariate method
    #[arg(long, value_enum, default_value_t = DMethod::Auto)]
    method: DMethod,
    /// Monte Carlo size for the multivariate method
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out_records: Option<PathBuf>,
    /// Summary output (CSV summary on stdout if neither output is given)
    #[arg(long)]
    out_summary: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Worker threads
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Failure that maps to exit code 1.
enum Failure {
    Domain(Error),
    /// Certification ran but a check failed; the report goes to stderr.
    Certification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

struct Ctx {
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => io::write_text(p, text),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn run_fit(ctx: &Ctx, a: FitArgs) -> Result<(), Failure> {
    let config = FitConfig {
        order: a.order,
        restarts: a.restarts,
        max_iter: a.max_iter,
        ll_tol: a.ll_tol,
        sigma_bounds: a.sigma_lo.zip(a.sigma_hi),
        seed: ctx.seed,
    };
    let text = match io::read_dataset(&a.data)? {
        AnyDataset::Univariate(d) => {
            let family: FamilyKind = a.family.parse()?;
            let r = fit(family, &d, &config)?;
            ctx.note(format!(
                "fit: loglik {:.6}, sigma {:.6}, {} iterations, converged {}, restart {}",
                r.loglik, r.sigma, r.iterations, r.converged, r.restart_index
            ));
            io::fit_result_json(&r)?
        }
        AnyDataset::Multivariate(d) => {
            if !matches!(a.family.as_str(), "multivariate_normal" | "mvn" | "normal") {
                return Err(Error::UnsupportedGenerator(a.family).into());
            }
            let r = mv_fit(DensityGenerator::multivariate_normal(d.dim)?, &d, &config)?;
            ctx.note(format!(
                "fit: loglik {:.6}, {} iterations, converged {}, restart {}",
                r.loglik, r.iterations, r.converged, r.restart_index
            ));
            io::mv_fit_result_json(&r)?
        }
    };
    emit(a.out.as_deref(), &text)?;
    Ok(())
}

fn run_sample(ctx: &Ctx, a: SampleArgs) -> Result<(), Failure> {
    let data = match io::read_model(&a.model)? {
        ModelSpec::Univariate(m) => AnyDataset::Univariate(m.sample_dataset(a.n, ctx.seed)?),
        ModelSpec::Multivariate(m) => AnyDataset::Multivariate(m.sample_dataset(a.n, ctx.seed)?),
    };
    emit(a.out.as_deref(), &io::format_dataset(&data))?;
    ctx.note(format!("sample: {} observations, seed {}", a.n, ctx.seed));
    Ok(())
}

fn run_certify(ctx: &Ctx, a: CertifyArgs) -> Result<(), Failure> {
    let report = match io::read_model(&a.model)? {
        ModelSpec::Univariate(m) => certify(&m, a.order.unwrap_or(m.order()))?,
        ModelSpec::Multivariate(m) => certify_mv(&m, a.order.unwrap_or(m.mixing.len()), a.samples, ctx.seed)?,
    };
    let text = io::to_versioned_json(&report)?;
    if report.all_pass() {
        emit(a.out.as_deref(), &text)?;
        ctx.note("certify: all checks pass");
        Ok(())
    } else {
        Err(Failure::Certification(text))
    }
}

fn run_distance(ctx: &Ctx, a: DistanceArgs) -> Result<(), Failure> {
    let p1 = io::read_mixing(&a.psi1)?;
    let p2 = io::read_mixing(&a.psi2)?;
    let as_cdf = |m: &MixingSpec| -> Option<Box<dyn StepCdf>> {
        match m {
            MixingSpec::Plain(x) => Some(Box::new(x.clone())),
            MixingSpec::Extended(x) => Some(Box::new(x.clone())),
            MixingSpec::Multivariate(x) => x.to_univariate().map(|u| Box::new(u) as Box<dyn StepCdf>),
        }
    };
    let value = match (&p1, &p2) {
        (MixingSpec::Multivariate(x), MixingSpec::Multivariate(y)) if x.dim() > 1 || y.dim() > 1 => {
            let method = match a.method {
                DMethod::Auto => DStarMethod::default_for(x.dim(), ctx.seed),
                DMethod::Product => DStarMethod::Product,
                DMethod::MonteCarlo => DStarMethod::MonteCarlo {
                    samples: a.samples,
                    seed: ctx.seed,
                },
            };
            let d = distance_star(x, y, method)?;
            if d.std_error > 0.0 {
                ctx.note(format!("distance: monte carlo standard error {:?}", d.std_error));
            }
            d.value
        }
        _ => match (as_cdf(&p1), as_cdf(&p2)) {
            (Some(x), Some(y)) => distance(x.as_ref(), y.as_ref()),
            _ => return Err(Error::invalid("cannot compare mixing distributions of different dimension").into()),
        },
    };
    println!("{value:?}");
    Ok(())
}

fn run_experiment_cmd(ctx: &Ctx, a: ExperimentArgs) -> Result<(), Failure> {
    let text = io::read_text(&a.plan)?;
    let plan: ExperimentPlan = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: a.plan.display().to_string(),
        source,
    })?;
    let records = run_experiment_with_jobs(&plan, a.jobs)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let format = match a.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    };
    if let Some(p) = &a.out_records {
        persist_records(p, &records, format)?;
    }
    let summary = summarize(&records)?;
    match &a.out_summary {
        Some(p) => persist_summary(p, &summary, format)?,
        None if a.out_records.is_none() => {
            let mut buf = Vec::new();
            write_summary_csv(&mut buf, &summary)?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
        None => {}
    }
    ctx.note(format!("experiment: {} records, {failed} failed", records.len()));
    if failed > 0 {
        ctx.note("experiment: failed records carry D = NaN and converged = false");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Fit(a) => run_fit(&ctx, a),
        Command::Sample(a) => run_sample(&ctx, a),
        Command::Certify(a) => run_certify(&ctx, a),
        Command::Distance(a) => run_distance(&ctx, a),
        Command::Experiment(a) => run_experiment_cmd(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Certification(report)) => {
            eprintln!("{report}");
            eprintln!("error: certification failed");
            ExitCode::from(1)
        }
    }
}
