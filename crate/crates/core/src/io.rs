//! Model-spec JSON and dataset CSV.
//!
//! Model files carry `"schema": 1`. A univariate model is
//! `{"family", "mixing": {"support", "weights"}, "sigma"}`; a multivariate
//! one is `{"generator": "multivariate_normal", "mixing", "Sigma"}` with
//! `Sigma` row-major. Unknown keys are ignored, so a saved fit result is
//! itself a valid model file.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimate::{FitResult, MvFitResult};
use crate::mixing::{ExtendedMixing, MixingDistribution, MultivariateMixing};
use crate::mixture::{Dataset, MixtureModel, MultivariateMixtureModel, MvDataset};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Univariate(MixtureModel),
    Multivariate(MultivariateMixtureModel),
}

fn json_err(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Error {
    let context = context.into();
    move |source| Error::Json { context, source }
}

fn check_schema(v: &Value) -> Result<()> {
    match v.get("schema") {
        None => Ok(()),
        Some(s) if s.as_u64() == Some(SCHEMA as u64) => Ok(()),
        Some(s) => Err(Error::Format(format!("unsupported schema {s}"))),
    }
}

fn is_multivariate(v: &Value) -> bool {
    v.get("generator").is_some() || v.get("Sigma").is_some()
}

pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let v: Value = serde_json::from_str(text).map_err(json_err("model spec"))?;
    model_from_value(v)
}

pub fn model_from_value(v: Value) -> Result<ModelSpec> {
    if !v.is_object() {
        return Err(Error::Format("model spec must be a JSON object".into()));
    }
    check_schema(&v)?;
    if is_multivariate(&v) {
        serde_json::from_value(v)
            .map(ModelSpec::Multivariate)
            .map_err(json_err("multivariate model spec"))
    } else {
        serde_json::from_value(v)
            .map(ModelSpec::Univariate)
            .map_err(json_err("model spec"))
    }
}

/// Serialises `value` as a JSON object with `"schema": 1` first.
pub fn to_versioned_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(json_err("serialising"))?;
    let Value::Object(fields) = v else {
        return Err(Error::Format("expected an object".into()));
    };
    let mut out = serde_json::Map::new();
    out.insert("schema".into(), SCHEMA.into());
    for (k, val) in fields {
        if k != "schema" {
            out.insert(k, val);
        }
    }
    serde_json::to_string_pretty(&Value::Object(out)).map_err(json_err("serialising"))
}

pub fn model_to_json(spec: &ModelSpec) -> Result<String> {
    match spec {
        ModelSpec::Univariate(m) => to_versioned_json(m),
        ModelSpec::Multivariate(m) => to_versioned_json(m),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn at_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Json { source, .. } => Error::Json {
            context: path.display().to_string(),
            source,
        },
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub fn read_model(path: &Path) -> Result<ModelSpec> {
    parse_model(&read_text(path)?).map_err(|e| at_path(path, e))
}

pub fn write_model(path: &Path, spec: &ModelSpec) -> Result<()> {
    write_text(path, &model_to_json(spec)?)
}

/// Fit result JSON: the fitted model fields plus diagnostics.
pub fn fit_result_json(r: &FitResult) -> Result<String> {
    to_versioned_json(r)
}

pub fn mv_fit_result_json(r: &MvFitResult) -> Result<String> {
    let mut v = serde_json::to_value(r.model()).map_err(json_err("serialising"))?;
    let extra = serde_json::json!({
        "loglik": r.loglik,
        "iterations": r.iterations,
        "converged": r.converged,
        "restart_index": r.restart_index,
        "trace": r.trace,
        "log_det_trace": r.log_det_trace,
        "events": r.events,
    });
    if let (Value::Object(map), Value::Object(more)) = (&mut v, extra) {
        map.extend(more);
    }
    to_versioned_json(&v)
}

/// A mixing distribution read for the distance command.
#[derive(Debug, Clone, PartialEq)]
pub enum MixingSpec {
    Plain(MixingDistribution),
    Extended(ExtendedMixing),
    Multivariate(MultivariateMixing),
}

/// Accepts a bare mixing object, an extended `{gamma, rho, inner}` object,
/// or any document with a `"mixing"` field (model files, fit results).
pub fn parse_mixing(text: &str) -> Result<MixingSpec> {
    let v: Value = serde_json::from_str(text).map_err(json_err("mixing spec"))?;
    mixing_from_value(v)
}

pub fn mixing_from_value(v: Value) -> Result<MixingSpec> {
    check_schema(&v)?;
    if let Some(inner) = v.get("mixing") {
        return mixing_from_value(inner.clone());
    }
    if v.get("gamma").is_some() || v.get("inner").is_some() {
        return serde_json::from_value(v)
            .map(MixingSpec::Extended)
            .map_err(json_err("extended mixing"));
    }
    let nested = v
        .get("support")
        .and_then(Value::as_array)
        .and_then(|a| a.first())
        .is_some_and(Value::is_array);
    if nested {
        serde_json::from_value(v)
            .map(MixingSpec::Multivariate)
            .map_err(json_err("multivariate mixing"))
    } else {
        serde_json::from_value(v)
            .map(MixingSpec::Plain)
            .map_err(json_err("mixing"))
    }
}

pub fn read_mixing(path: &Path) -> Result<MixingSpec> {
    parse_mixing(&read_text(path)?).map_err(|e| at_path(path, e))
}

/// Rows of one (univariate) or more (multivariate) columns.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyDataset {
    Univariate(Dataset),
    Multivariate(MvDataset),
}

/// Parses one observation per line, comma-separated coordinates. Blank
/// lines and lines starting with `#` are skipped, as is a non-numeric
/// first line (a header).
pub fn parse_dataset(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if rows.is_empty() && width.is_none() => {
                width = Some(line.split(',').count());
                continue;
            }
            Err(e) => return Err(Error::Format(format!("line {}: {e}", lineno + 1))),
        };
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Format(format!(
                    "line {}: expected {w} columns, found {}",
                    lineno + 1,
                    row.len()
                )));
            }
        }
        width = Some(row.len());
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("dataset has no observations".into()));
    }
    Ok(rows)
}

pub fn dataset_from_rows(rows: Vec<Vec<f64>>) -> Result<AnyDataset> {
    if rows[0].len() == 1 {
        Ok(AnyDataset::Univariate(Dataset::new(rows.into_iter().map(|r| r[0]).collect())?))
    } else {
        Ok(AnyDataset::Multivariate(MvDataset::new(rows)?))
    }
}

pub fn read_dataset(path: &Path) -> Result<AnyDataset> {
    let rows = parse_dataset(&read_text(path)?).map_err(|e| at_path(path, e))?;
    dataset_from_rows(rows)
}

/// Shortest round-trip formatting, one row per line.
pub fn format_rows<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I) -> String {
    let mut out = String::new();
    for row in rows {
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{x:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn format_dataset(data: &AnyDataset) -> String {
    match data {
        AnyDataset::Univariate(d) => format_rows(d.values().iter().map(std::slice::from_ref)),
        AnyDataset::Multivariate(d) => format_rows(d.observations.iter().map(Vec::as_slice)),
    }
}

pub fn write_dataset(path: &Path, data: &AnyDataset) -> Result<()> {
    write_text(path, &format_dataset(data))
}
