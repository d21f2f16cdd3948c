//! Monte Carlo harness for the consistency theorems: simulate from a known
//! truth, fit, and measure how far the estimate lands from it across a
//! grid of sample sizes.
//!
//! Label switching cannot affect the results: the distance compares the
//! mixing distribution functions, not labelled parameter vectors.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit, mv_fit, FitConfig};
use crate::mixing::{distance, distance_star, DStarMethod};
use crate::mixture::{MixtureModel, MultivariateMixtureModel};
use crate::numeric::{mix64, quantile};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrueModel {
    Univariate(MixtureModel),
    Multivariate(MultivariateMixtureModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default = "schema_one")]
    pub schema: u32,
    pub true_model: TrueModel,
    pub fit_order: usize,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub fit_config: FitConfig,
}

fn schema_one() -> u32 {
    SCHEMA
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Format(format!("unsupported plan schema {}", self.schema)));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_grid must be non-empty and strictly increasing"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be >= 1"));
        }
        if self.fit_order == 0 {
            return Err(Error::invalid("fit_order must be >= 1"));
        }
        let mut cfg = self.fit_config.clone();
        cfg.order = self.fit_order;
        cfg.validate()
    }
}

/// One (n, replication) outcome. Failed fits carry `D = NaN`,
/// `converged = false` and the error message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    #[serde(rename = "D", deserialize_with = "nullable")]
    pub d: f64,
    #[serde(deserialize_with = "nullable")]
    pub sigma_err: f64,
    #[serde(deserialize_with = "nullable")]
    pub loglik_gap: f64,
    pub converged: bool,
    #[serde(deserialize_with = "nullable")]
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Bitwise float equality, so failed records (NaN) compare equal to themselves.
impl PartialEq for ExperimentRecord {
    fn eq(&self, o: &Self) -> bool {
        self.n == o.n
            && self.rep == o.rep
            && self.seed == o.seed
            && self.d.to_bits() == o.d.to_bits()
            && self.sigma_err.to_bits() == o.sigma_err.to_bits()
            && self.loglik_gap.to_bits() == o.loglik_gap.to_bits()
            && self.converged == o.converged
            && self.wall_time.to_bits() == o.wall_time.to_bits()
            && self.error == o.error
    }
}

impl ExperimentRecord {
    /// Copy with the wall time zeroed; what determinism comparisons use.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

/// JSON writes non-finite floats as `null`; read them back as NaN.
fn nullable<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Seed for replication `rep` at sample size `n`.
pub fn record_seed(base_seed: u64, n: usize, rep: usize) -> u64 {
    base_seed ^ mix64(mix64(n as u64) ^ rep as u64)
}

fn run_one(plan: &ExperimentPlan, n: usize, rep: usize) -> ExperimentRecord {
    let seed = record_seed(plan.base_seed, n, rep);
    let start = Instant::now();
    let mut config = plan.fit_config.clone();
    config.order = plan.fit_order;
    config.seed = mix64(seed);
    let outcome = match &plan.true_model {
        TrueModel::Univariate(truth) => (|| {
            let data = truth.sample_dataset(n, seed)?;
            let r = fit(truth.family, &data, &config)?;
            let gap = truth.log_likelihood(&data).map_or(f64::NAN, |l| r.loglik - l);
            Ok::<_, Error>((distance(&r.mixing, &truth.mixing), (r.sigma - truth.sigma).abs(), gap, r.converged))
        })(),
        TrueModel::Multivariate(truth) => (|| {
            let data = truth.sample_dataset(n, seed)?;
            let r = mv_fit(truth.generator, &data, &config)?;
            let gap = truth.log_likelihood(&data).map_or(f64::NAN, |l| r.loglik - l);
            let d = distance_star(&r.mixing, &truth.mixing, DStarMethod::default_for(truth.dim(), seed))?.value;
            let err = (r.sigma.matrix() - truth.sigma.matrix()).norm();
            Ok((d, err, gap, r.converged))
        })(),
    };
    let wall_time = start.elapsed().as_secs_f64();
    match outcome {
        Ok((d, sigma_err, loglik_gap, converged)) => ExperimentRecord {
            n,
            rep,
            seed,
            d,
            sigma_err,
            loglik_gap,
            converged,
            wall_time,
            error: None,
        },
        Err(e) => ExperimentRecord {
            n,
            rep,
            seed,
            d: f64::NAN,
            sigma_err: f64::NAN,
            loglik_gap: f64::NAN,
            converged: false,
            wall_time,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every (n, rep) cell, in parallel when the `parallel` feature is on.
/// Records come back ordered by (n, rep).
pub fn run_experiment(plan: &ExperimentPlan) -> Result<Vec<ExperimentRecord>> {
    plan.validate()?;
    let cells: Vec<(usize, usize)> = plan
        .n_grid
        .iter()
        .flat_map(|&n| (0..plan.replications).map(move |r| (n, r)))
        .collect();
    #[cfg(feature = "parallel")]
    let records = {
        use rayon::prelude::*;
        cells.par_iter().map(|&(n, r)| run_one(plan, n, r)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records = cells.iter().map(|&(n, r)| run_one(plan, n, r)).collect();
    Ok(records)
}

/// As [`run_experiment`], on a dedicated pool of `jobs` threads.
#[cfg(feature = "parallel")]
pub fn run_experiment_with_jobs(plan: &ExperimentPlan, jobs: usize) -> Result<Vec<ExperimentRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_experiment(plan))
}

#[cfg(not(feature = "parallel"))]
pub fn run_experiment_with_jobs(plan: &ExperimentPlan, _jobs: usize) -> Result<Vec<ExperimentRecord>> {
    run_experiment(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    #[serde(rename = "median_D", deserialize_with = "nullable")]
    pub median_d: f64,
    #[serde(rename = "p10_D", deserialize_with = "nullable")]
    pub p10_d: f64,
    #[serde(rename = "p90_D", deserialize_with = "nullable")]
    pub p90_d: f64,
    #[serde(deserialize_with = "nullable")]
    pub median_sigma_err: f64,
    #[serde(deserialize_with = "nullable")]
    pub p10_sigma_err: f64,
    #[serde(deserialize_with = "nullable")]
    pub p90_sigma_err: f64,
    pub convergence_rate: f64,
    #[serde(deserialize_with = "nullable")]
    pub mean_wall_time: f64,
}

pub const RECORD_COLUMNS: [&str; 8] = ["n", "rep", "seed", "D", "sigma_err", "loglik_gap", "converged", "wall_time"];
pub const SUMMARY_COLUMNS: [&str; 9] = [
    "n",
    "median_D",
    "p10_D",
    "p90_D",
    "median_sigma_err",
    "p10_sigma_err",
    "p90_sigma_err",
    "convergence_rate",
    "mean_wall_time",
];

fn percentiles(values: &[f64]) -> (f64, f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    (quantile(&finite, 0.5), quantile(&finite, 0.1), quantile(&finite, 0.9))
}

/// Per-n medians and 10th/90th percentiles (failed records excluded),
/// convergence rate and mean wall time, in increasing n.
pub fn summarize(records: &[ExperimentRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::invalid("cannot summarize an empty record list"));
    }
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    Ok(ns
        .into_iter()
        .map(|n| {
            let group: Vec<&ExperimentRecord> = records.iter().filter(|r| r.n == n).collect();
            let k = group.len() as f64;
            let d: Vec<f64> = group.iter().map(|r| r.d).collect();
            let s: Vec<f64> = group.iter().map(|r| r.sigma_err).collect();
            let (median_d, p10_d, p90_d) = percentiles(&d);
            let (median_sigma_err, p10_sigma_err, p90_sigma_err) = percentiles(&s);
            SummaryRow {
                n,
                median_d,
                p10_d,
                p90_d,
                median_sigma_err,
                p10_sigma_err,
                p90_sigma_err,
                convergence_rate: group.iter().filter(|r| r.converged).count() as f64 / k,
                mean_wall_time: group.iter().map(|r| r.wall_time).sum::<f64>() / k,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::invalid(format!("unknown format {other:?}, expected csv or json"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RecordsDoc {
    schema: u32,
    records: Vec<ExperimentRecord>,
}

#[derive(Serialize, Deserialize)]
struct SummaryDoc {
    schema: u32,
    summary: Vec<SummaryRow>,
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

fn csv_err(context: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        context: context.to_string(),
        source,
    }
}

pub fn write_records_csv<W: Write>(out: W, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let e = csv_err("writing records");
    w.write_record(RECORD_COLUMNS).map_err(&e)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            f(r.d),
            f(r.sigma_err),
            f(r.loglik_gap),
            r.converged.to_string(),
            f(r.wall_time),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<records>".into(),
        source,
    })
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<ExperimentRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let e = csv_err("reading records");
    let headers = rd.headers().map_err(&e)?.clone();
    if headers.iter().ne(RECORD_COLUMNS) {
        return Err(Error::Format(format!("unexpected record columns {headers:?}")));
    }
    rd.deserialize().map(|r| r.map_err(&e)).collect()
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let e = csv_err("writing summary");
    w.write_record(SUMMARY_COLUMNS).map_err(&e)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            f(r.median_d),
            f(r.p10_d),
            f(r.p90_d),
            f(r.median_sigma_err),
            f(r.p10_sigma_err),
            f(r.p90_sigma_err),
            f(r.convergence_rate),
            f(r.mean_wall_time),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<summary>".into(),
        source,
    })
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let e = csv_err("reading summary");
    let headers = rd.headers().map_err(&e)?.clone();
    if headers.iter().ne(SUMMARY_COLUMNS) {
        return Err(Error::Format(format!("unexpected summary columns {headers:?}")));
    }
    rd.deserialize().map(|r| r.map_err(&e)).collect()
}

fn json_err(context: &str) -> impl Fn(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        context: context.to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        Error::Csv { source, .. } => Error::Csv {
            context: path.display().to_string(),
            source,
        },
        Error::Json { source, .. } => Error::Json {
            context: path.display().to_string(),
            source,
        },
        other => other,
    }
}

pub fn persist_records(path: &Path, records: &[ExperimentRecord], format: Format) -> Result<()> {
    let mut out = create(path)?;
    let r = match format {
        Format::Csv => write_records_csv(&mut out, records),
        Format::Json => serde_json::to_writer_pretty(
            &mut out,
            &RecordsDoc {
                schema: SCHEMA,
                records: records.to_vec(),
            },
        )
        .map_err(json_err("writing records")),
    };
    r.and_then(|_| {
        out.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
    .map_err(|e| with_path(path, e))
}

pub fn load_records(path: &Path, format: Format) -> Result<Vec<ExperimentRecord>> {
    let input = open(path)?;
    match format {
        Format::Csv => read_records_csv(input),
        Format::Json => {
            let doc: RecordsDoc = serde_json::from_reader(input).map_err(json_err("reading records"))?;
            check_schema(doc.schema)?;
            Ok(doc.records)
        }
    }
    .map_err(|e| with_path(path, e))
}

pub fn persist_summary(path: &Path, rows: &[SummaryRow], format: Format) -> Result<()> {
    let mut out = create(path)?;
    let r = match format {
        Format::Csv => write_summary_csv(&mut out, rows),
        Format::Json => serde_json::to_writer_pretty(
            &mut out,
            &SummaryDoc {
                schema: SCHEMA,
                summary: rows.to_vec(),
            },
        )
        .map_err(json_err("writing summary")),
    };
    r.and_then(|_| {
        out.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
    .map_err(|e| with_path(path, e))
}

pub fn load_summary(path: &Path, format: Format) -> Result<Vec<SummaryRow>> {
    let input = open(path)?;
    match format {
        Format::Csv => read_summary_csv(input),
        Format::Json => {
            let doc: SummaryDoc = serde_json::from_reader(input).map_err(json_err("reading summary"))?;
            check_schema(doc.schema)?;
            Ok(doc.summary)
        }
    }
    .map_err(|e| with_path(path, e))
}

fn check_schema(schema: u32) -> Result<()> {
    if schema == SCHEMA {
        Ok(())
    } else {
        Err(Error::Format(format!("unsupported schema {schema}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::FamilyKind;
    use crate::mixing::MixingDistribution;

    fn plan(n_grid: Vec<usize>, replications: usize) -> ExperimentPlan {
        ExperimentPlan {
            schema: 1,
            true_model: TrueModel::Univariate(
                MixtureModel::new(
                    FamilyKind::Normal,
                    MixingDistribution::new(vec![-2.0, 2.0], vec![0.5, 0.5]).unwrap(),
                    1.0,
                )
                .unwrap(),
            ),
            fit_order: 2,
            n_grid,
            replications,
            base_seed: 42,
            fit_config: FitConfig {
                restarts: 3,
                ..FitConfig::default()
            },
        }
    }

    fn record(n: usize, d: f64) -> ExperimentRecord {
        ExperimentRecord {
            n,
            rep: 0,
            seed: 1,
            d,
            sigma_err: d / 2.0,
            loglik_gap: 0.5,
            converged: true,
            wall_time: 0.01,
            error: None,
        }
    }

    #[test]
    fn single_cell() {
        let r = run_experiment(&plan(vec![100], 1)).unwrap();
        assert_eq!(r.len(), 1);
        assert!((0.0..=4.0).contains(&r[0].d));
        assert!(r[0].loglik_gap >= -1e-8);
    }

    #[test]
    fn deterministic_and_ordered() {
        let p = plan(vec![50, 80], 3);
        let a: Vec<_> = run_experiment(&p).unwrap().iter().map(|r| r.without_timing()).collect();
        let b: Vec<_> = run_experiment_with_jobs(&p, 1).unwrap().iter().map(|r| r.without_timing()).collect();
        assert_eq!(a, b);
        let keys: Vec<_> = a.iter().map(|r| (r.n, r.rep)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seeds: Vec<u64> = (0..50).flat_map(|r| [100, 400].map(|n| record_seed(7, n, r))).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 100);
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(run_experiment(&plan(vec![100, 100], 1)).is_err());
        assert!(run_experiment(&plan(vec![], 1)).is_err());
        assert!(run_experiment(&plan(vec![10], 0)).is_err());
    }

    #[test]
    fn failed_cells_are_recorded() {
        // n = 2 is too small for an order-2 fit; the run continues
        let r = run_experiment(&plan(vec![2, 50], 1)).unwrap();
        assert!(r[0].d.is_nan() && !r[0].converged && r[0].error.is_some());
        assert!(r[1].d.is_finite());
    }

    #[test]
    fn summary_of_single_and_identical_records() {
        let s = summarize(&[record(10, 0.3)]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].median_d, s[0].p10_d, s[0].p90_d), (0.3, 0.3, 0.3));
        assert_eq!(s[0].median_sigma_err, 0.15);
        let same: Vec<_> = (0..50).map(|_| record(10, 0.7)).collect();
        let s = summarize(&same).unwrap();
        assert_eq!((s[0].median_d, s[0].p10_d, s[0].p90_d), (0.7, 0.7, 0.7));
        assert_eq!(s[0].convergence_rate, 1.0);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_and_header() {
        let mut recs: Vec<_> = (0..5).map(|i| record(10 + i, 0.1 * i as f64 + 1e-17)).collect();
        recs[2].d = f64::NAN;
        recs[3].wall_time = 1.0 / 3.0;
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,rep,seed,D,sigma_err,loglik_gap,converged,wall_time\n"));
        assert_eq!(read_records_csv(&buf[..]).unwrap(), recs);

        let mut empty = Vec::new();
        write_records_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }

    #[test]
    fn json_and_summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs: Vec<_> = (0..4).map(|i| record(10, 0.123456789 * i as f64)).collect();
        recs[1].d = f64::NAN;
        recs[1].error = Some("boom".into());
        let path = dir.path().join("r.json");
        persist_records(&path, &recs, Format::Json).unwrap();
        assert_eq!(load_records(&path, Format::Json).unwrap(), recs);

        let rows = summarize(&recs).unwrap();
        for fmt in [Format::Csv, Format::Json] {
            let p = dir.path().join("s");
            persist_summary(&p, &rows, fmt).unwrap();
            assert_eq!(load_summary(&p, fmt).unwrap(), rows);
        }
        let head = std::fs::read_to_string(dir.path().join("s")).unwrap();
        assert!(head.contains("\"schema\": 1"));
    }

    #[test]
    fn io_errors_carry_the_path() {
        let e = load_records(Path::new("/nonexistent/dir/r.csv"), Format::Csv).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/dir/r.csv"));
    }
}
