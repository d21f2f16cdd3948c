//! Browser bindings: a mixture density curve, the distance between two
//! mixing distributions, and a simulate-then-fit round trip.
//!
//! Each export is a thin wrapper over a plain function so the logic is
//! testable natively.

use wasm_bindgen::prelude::*;

use structmix::estimate::{fit, FitConfig};
use structmix::io::{self, MixingSpec, ModelSpec};
use structmix::mixing::{distance, StepCdf};
use structmix::MixtureModel;

fn univariate(model_json: &str) -> Result<MixtureModel, String> {
    match io::parse_model(model_json).map_err(|e| e.to_string())? {
        ModelSpec::Univariate(m) => Ok(m),
        ModelSpec::Multivariate(_) => Err("the demo handles univariate models only".into()),
    }
}

/// Mixture density at `points` equally spaced abscissae over `[lo, hi]`.
pub fn density_curve_impl(model_json: &str, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, String> {
    let m = univariate(model_json)?;
    if points < 2 || !(lo < hi) {
        return Err("need at least two points and lo < hi".into());
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| m.density(lo + step * i as f64)).collect())
}

/// `D(Ψ1, Ψ2)` for two univariate mixing (or model) documents.
pub fn mixing_distance_impl(a: &str, b: &str) -> Result<f64, String> {
    let cdf = |text: &str| -> Result<Box<dyn StepCdf>, String> {
        match io::parse_mixing(text).map_err(|e| e.to_string())? {
            MixingSpec::Plain(m) => Ok(Box::new(m)),
            MixingSpec::Extended(m) => Ok(Box::new(m)),
            MixingSpec::Multivariate(_) => Err("the demo handles univariate mixings only".into()),
        }
    };
    Ok(distance(cdf(a)?.as_ref(), cdf(b)?.as_ref()))
}

/// Draws `n` points from the model, fits an order-`order` mixture of the
/// same family and returns `{fit, distance, sigma_error, data}` as JSON.
pub fn sample_and_fit_impl(model_json: &str, n: usize, order: usize, seed: u64) -> Result<String, String> {
    let truth = univariate(model_json)?;
    let data = truth.sample_dataset(n, seed).map_err(|e| e.to_string())?;
    let config = FitConfig {
        order,
        restarts: 8,
        seed,
        ..FitConfig::default()
    };
    let r = fit(truth.family, &data, &config).map_err(|e| e.to_string())?;
    let out = serde_json::json!({
        "fit": r,
        "distance": distance(&r.mixing, &truth.mixing),
        "sigma_error": (r.sigma - truth.sigma).abs(),
        "data": data.values(),
    });
    Ok(out.to_string())
}

#[wasm_bindgen]
pub fn density_curve(model_json: &str, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, JsError> {
    density_curve_impl(model_json, lo, hi, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mixing_distance(a: &str, b: &str) -> Result<f64, JsError> {
    mixing_distance_impl(a, b).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sample_and_fit(model_json: &str, n: usize, order: usize, seed: u64) -> Result<String, JsError> {
    sample_and_fit_impl(model_json, n, order, seed).map_err(|e| JsError::new(&e))
}
