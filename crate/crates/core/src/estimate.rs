//! Maximum likelihood by EM with a single structural scale, globalised
//! by multiple seeded restarts.
//!
//! The E-step computes responsibilities `w_ij ∝ α_j f(X_i; μ_j, σ)`. The
//! M-step sets `α_j = Σ_i w_ij / n` and then updates locations and the
//! shared scale: in closed form for the normal family, otherwise by
//! bracketed one-dimensional ascent on the expected complete-data
//! log-likelihood, one block at a time. A candidate is only accepted when
//! the observed log-likelihood does not decrease, so every trace is
//! monotone.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{DensityGenerator, FamilyKind};
use crate::mixing::{MixingDistribution, MultivariateMixing};
use crate::mixture::{Dataset, MixtureModel, MultivariateMixtureModel, MvDataset, ScaleMatrix};
use crate::numeric::{pairwise_sum, quantile_sorted};
use crate::optimize::brent_max;

/// Weights below this are floored (then renormalised).
pub const WEIGHT_FLOOR: f64 = 1e-10;
/// Lower scale guard as a fraction of the data range.
pub const SIGMA_RANGE_GUARD: f64 = 1e-8;
const LINE_SEARCH_ITERS: usize = 40;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub order: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Iteration stops once the log-likelihood gain of a step is below this.
    pub ll_tol: f64,
    pub sigma_bounds: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            order: 1,
            restarts: 20,
            max_iter: 500,
            ll_tol: 1e-8,
            sigma_bounds: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::invalid("order must be >= 1"));
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::invalid("restarts and max_iter must be >= 1"));
        }
        if !(self.ll_tol > 0.0) {
            return Err(Error::invalid("ll_tol must be positive"));
        }
        if let Some((lo, hi)) = self.sigma_bounds {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::invalid(format!("sigma bounds must satisfy 0 < lo < hi, got ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

/// Outcome of one EM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Improved,
    /// No candidate raised the log-likelihood; the model is returned unchanged.
    Stalled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitEvents {
    /// Times σ was pushed back into its admissible interval.
    pub sigma_clamps: usize,
    /// Times a component weight was floored at [`WEIGHT_FLOOR`].
    pub weight_floors: usize,
    /// Candidates rejected because the observed log-likelihood fell.
    pub rejected_steps: usize,
}

impl FitEvents {
    fn absorb(&mut self, other: FitEvents) {
        self.sigma_clamps += other.sigma_clamps;
        self.weight_floors += other.weight_floors;
        self.rejected_steps += other.rejected_steps;
    }
}

#[derive(Debug, Clone)]
pub struct EmStep {
    pub model: MixtureModel,
    pub loglik: f64,
    pub status: StepStatus,
    pub events: FitEvents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: FamilyKind,
    pub mixing: MixingDistribution,
    pub sigma: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart_index: usize,
    pub trace: Vec<f64>,
    pub sigma_trace: Vec<f64>,
    pub events: FitEvents,
}

impl FitResult {
    pub fn model(&self) -> MixtureModel {
        MixtureModel {
            family: self.family,
            mixing: self.mixing.clone(),
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvFitResult {
    pub generator: DensityGenerator,
    pub mixing: MultivariateMixing,
    pub sigma: ScaleMatrix,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart_index: usize,
    pub trace: Vec<f64>,
    /// `log|Σ|` at every recorded iterate.
    pub log_det_trace: Vec<f64>,
    pub events: FitEvents,
}

impl MvFitResult {
    pub fn model(&self) -> MultivariateMixtureModel {
        MultivariateMixtureModel {
            generator: self.generator,
            mixing: self.mixing.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// univariate engine

#[derive(Debug, Clone)]
struct State {
    locs: Vec<f64>,
    weights: Vec<f64>,
    sigma: f64,
}

struct Engine<'a> {
    family: FamilyKind,
    x: &'a [f64],
    lo: f64,
    hi: f64,
    x_min: f64,
    x_max: f64,
}

struct Responsibilities {
    /// Row-major `n × m`.
    w: Vec<f64>,
    loglik: f64,
}

impl<'a> Engine<'a> {
    fn new(family: FamilyKind, x: &'a [f64], bounds: Option<(f64, f64)>) -> Self {
        let x_min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let x_max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let guard = SIGMA_RANGE_GUARD * (x_max - x_min).max(f64::MIN_POSITIVE);
        let (lo, hi) = match bounds {
            Some((lo, hi)) => (lo.max(guard), hi),
            None => (guard, f64::INFINITY),
        };
        Self {
            family,
            x,
            lo,
            hi,
            x_min,
            x_max,
        }
    }

    fn clamp_sigma(&self, sigma: f64, events: &mut FitEvents) -> f64 {
        if sigma < self.lo {
            events.sigma_clamps += 1;
            self.lo
        } else if sigma > self.hi {
            events.sigma_clamps += 1;
            self.hi
        } else {
            sigma
        }
    }

    fn e_step(&self, s: &State) -> Responsibilities {
        let m = s.locs.len();
        let n = self.x.len();
        let ln_sigma = s.sigma.ln();
        let ln_w: Vec<f64> = s.weights.iter().map(|w| w.ln()).collect();
        let mut w = vec![0.0; n * m];
        let mut ll = vec![0.0; n];
        for (i, &xi) in self.x.iter().enumerate() {
            let row = &mut w[i * m..(i + 1) * m];
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                let t = ln_w[j] + self.family.log_std_density((xi - s.locs[j]) / s.sigma) - ln_sigma;
                row[j] = t;
                if t > max {
                    max = t;
                }
            }
            if !max.is_finite() {
                ll[i] = if max.is_nan() { f64::NAN } else { f64::NEG_INFINITY };
                row.iter_mut().for_each(|r| *r = 1.0 / m as f64);
                continue;
            }
            let mut total = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                total += *r;
            }
            for r in row.iter_mut() {
                *r /= total;
            }
            ll[i] = max + total.ln();
        }
        Responsibilities {
            w,
            loglik: pairwise_sum(&ll),
        }
    }

    fn update_weights(&self, resp: &Responsibilities, m: usize, events: &mut FitEvents) -> Vec<f64> {
        let n = self.x.len();
        let mut alpha = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                alpha[j] += resp.w[i * m + j];
            }
        }
        let mut floored = false;
        for a in alpha.iter_mut() {
            *a /= n as f64;
            if !(*a >= WEIGHT_FLOOR) {
                *a = WEIGHT_FLOOR;
                floored = true;
            }
        }
        if floored {
            events.weight_floors += 1;
        }
        let total: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a /= total);
        alpha
    }

    /// Expected complete-data log-likelihood of component `j` at location `mu`.
    fn q_location(&self, resp: &Responsibilities, m: usize, j: usize, mu: f64, sigma: f64) -> f64 {
        let mut q = 0.0;
        for (i, &xi) in self.x.iter().enumerate() {
            let w = resp.w[i * m + j];
            if w > 0.0 {
                q += w * self.family.log_std_density((xi - mu) / sigma);
            }
        }
        q
    }

    fn q_scale(&self, resp: &Responsibilities, locs: &[f64], sigma: f64) -> f64 {
        let m = locs.len();
        let mut q = 0.0;
        for (i, &xi) in self.x.iter().enumerate() {
            for (j, &mu) in locs.iter().enumerate() {
                let w = resp.w[i * m + j];
                if w > 0.0 {
                    q += w * self.family.log_std_density((xi - mu) / sigma);
                }
            }
        }
        q - self.x.len() as f64 * sigma.ln()
    }

    /// Full M-step (weights, locations, scale) from the current responsibilities.
    fn m_step(&self, s: &State, resp: &Responsibilities, events: &mut FitEvents) -> (State, State) {
        let m = s.locs.len();
        let n = self.x.len();
        let weights = self.update_weights(resp, m, events);
        let mut locs = s.locs.clone();
        let sigma;
        match self.family {
            FamilyKind::Normal => {
                for j in 0..m {
                    let (mut sw, mut swx) = (0.0, 0.0);
                    for (i, &xi) in self.x.iter().enumerate() {
                        let w = resp.w[i * m + j];
                        sw += w;
                        swx += w * xi;
                    }
                    if sw > f64::MIN_POSITIVE * 1e10 {
                        locs[j] = swx / sw;
                    }
                }
                let mut ss = vec![0.0; n];
                for (i, &xi) in self.x.iter().enumerate() {
                    ss[i] = (0..m)
                        .map(|j| {
                            let d = xi - locs[j];
                            resp.w[i * m + j] * d * d
                        })
                        .sum();
                }
                sigma = (pairwise_sum(&ss) / n as f64).sqrt();
            }
            _ => {
                for j in 0..m {
                    let current = self.q_location(resp, m, j, s.locs[j], s.sigma);
                    let best = brent_max(
                        |mu| self.q_location(resp, m, j, mu, s.sigma),
                        self.x_min,
                        self.x_max,
                        1e-12,
                        1e-12 * s.sigma,
                        LINE_SEARCH_ITERS,
                    );
                    if best.value > current {
                        locs[j] = best.x;
                    }
                }
                let lo = self.lo.max(s.sigma / 10.0).ln();
                let hi = self.hi.min(s.sigma * 10.0).ln();
                let current = self.q_scale(resp, &locs, s.sigma);
                let best = brent_max(
                    |u| self.q_scale(resp, &locs, u.exp()),
                    lo,
                    hi,
                    0.0,
                    1e-12,
                    LINE_SEARCH_ITERS,
                );
                sigma = if best.value > current { best.x.exp() } else { s.sigma };
            }
        }
        let partial = State {
            locs: locs.clone(),
            weights: weights.clone(),
            sigma: s.sigma,
        };
        let sigma = self.clamp_sigma(sigma, events);
        (State { locs, weights, sigma }, partial)
    }

    /// One accepted-or-rejected EM iteration.
    fn step(&self, s: &State, resp: &Responsibilities) -> (State, Responsibilities, StepStatus, FitEvents) {
        let mut events = FitEvents::default();
        let (full, partial) = self.m_step(s, resp, &mut events);
        for cand in [full, partial] {
            let r = self.e_step(&cand);
            if r.loglik >= resp.loglik {
                return (cand, r, StepStatus::Improved, events);
            }
            events.rejected_steps += 1;
        }
        let same = Responsibilities {
            w: resp.w.clone(),
            loglik: resp.loglik,
        };
        (s.clone(), same, StepStatus::Stalled, events)
    }

    fn initial_state(&self, m: usize, seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sorted = self.x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sd = crate::numeric::variance(self.x).sqrt();
        let locs = (0..m)
            .map(|j| {
                let q = (j as f64 + 0.5) / m as f64;
                quantile_sorted(&sorted, q) + (rng.random::<f64>() - 0.5) * sd
            })
            .collect();
        let factor = (0.3f64.ln() * rng.random::<f64>()).exp();
        let mut events = FitEvents::default();
        let sigma = self.clamp_sigma((sd * factor).max(self.lo), &mut events);
        State {
            locs,
            weights: vec![1.0 / m as f64; m],
            sigma,
        }
    }

    fn run_chain(&self, init: State, max_iter: usize, ll_tol: f64) -> Result<Chain> {
        let mut state = init;
        let mut resp = self.e_step(&state);
        if !resp.loglik.is_finite() {
            return Err(Error::invalid(format!(
                "initial log-likelihood is not finite ({})",
                resp.loglik
            )));
        }
        let mut trace = vec![resp.loglik];
        let mut sigma_trace = vec![state.sigma];
        let mut events = FitEvents::default();
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iter {
            let (next, next_resp, status, ev) = self.step(&state, &resp);
            iterations += 1;
            events.absorb(ev);
            if status == StepStatus::Stalled {
                converged = true;
                break;
            }
            let gain = next_resp.loglik - resp.loglik;
            state = next;
            resp = next_resp;
            trace.push(resp.loglik);
            sigma_trace.push(state.sigma);
            if gain < ll_tol {
                converged = true;
                break;
            }
        }
        Ok(Chain {
            state,
            iterations,
            converged,
            trace,
            sigma_trace,
            events,
        })
    }
}

struct Chain {
    state: State,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    sigma_trace: Vec<f64>,
    events: FitEvents,
}

fn state_of(model: &MixtureModel) -> State {
    State {
        locs: model.mixing.support().to_vec(),
        weights: model.mixing.weights().to_vec(),
        sigma: model.sigma,
    }
}

fn model_of(family: FamilyKind, s: &State) -> Result<MixtureModel> {
    MixtureModel::new(family, MixingDistribution::new(s.locs.clone(), s.weights.clone())?, s.sigma)
}

/// A single EM iteration with the default scale guard.
pub fn em_step(model: &MixtureModel, data: &Dataset) -> Result<EmStep> {
    if data.is_empty() {
        return Err(Error::invalid("em_step needs at least one observation"));
    }
    let engine = Engine::new(model.family, data.values(), None);
    let state = state_of(model);
    let resp = engine.e_step(&state);
    if !resp.loglik.is_finite() {
        return Err(Error::invalid("model has non-finite log-likelihood on this data"));
    }
    let (next, next_resp, status, events) = engine.step(&state, &resp);
    Ok(EmStep {
        model: if status == StepStatus::Improved {
            model_of(model.family, &next)?
        } else {
            model.clone()
        },
        loglik: next_resp.loglik,
        status,
        events,
    })
}

/// Posterior component probabilities `w_ij`, row-major `n × m`.
pub fn responsibilities(model: &MixtureModel, data: &Dataset) -> Vec<f64> {
    let engine = Engine::new(model.family, data.values(), None);
    engine.e_step(&state_of(model)).w
}

fn map_chains<T: Send, F: Fn(usize) -> T + Sync + Send>(restarts: usize, f: F) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..restarts).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..restarts).map(f).collect()
    }
}

/// Index of the best chain; ties within `1e-12` go to the lowest index.
fn select_best<T>(chains: &[Result<T>], loglik: impl Fn(&T) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in chains.iter().enumerate() {
        if let Ok(c) = c {
            let l = loglik(c);
            if !l.is_finite() {
                continue;
            }
            match best {
                Some((_, b)) if l <= b + TIE_TOL => {}
                _ => best = Some((i, l)),
            }
        }
    }
    best.map(|b| b.0)
}

fn chains_failed<T>(chains: &[Result<T>]) -> Error {
    let last = chains
        .iter()
        .rev()
        .find_map(|c| c.as_ref().err().map(|e| e.to_string()))
        .unwrap_or_else(|| "no finite log-likelihood".into());
    Error::AllChainsFailed {
        restarts: chains.len(),
        last,
    }
}

/// Multi-start maximum likelihood fit of a univariate mixture.
pub fn fit(family: FamilyKind, data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let n = data.len();
    if n <= config.order {
        return Err(Error::TooFewObservations {
            required: config.order,
            found: n,
        });
    }
    let engine = Engine::new(family, data.values(), config.sigma_bounds);
    let chains = map_chains(config.restarts, |r| {
        let init = engine.initial_state(config.order, config.seed.wrapping_add(r as u64));
        engine.run_chain(init, config.max_iter, config.ll_tol)
    });
    let best = select_best(&chains, |c| *c.trace.last().unwrap()).ok_or_else(|| chains_failed(&chains))?;
    let chain = chains.into_iter().nth(best).unwrap()?;
    let model = model_of(family, &chain.state)?;
    let loglik = model.log_likelihood(data)?;
    Ok(FitResult {
        family,
        mixing: model.mixing,
        sigma: model.sigma,
        loglik,
        iterations: chain.iterations,
        converged: chain.converged,
        restart_index: best,
        trace: chain.trace,
        sigma_trace: chain.sigma_trace,
        events: chain.events,
    })
}

/// Runs EM from a caller-supplied starting model (no restarts).
pub fn fit_from(model: &MixtureModel, data: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let engine = Engine::new(model.family, data.values(), config.sigma_bounds);
    let chain = engine.run_chain(state_of(model), config.max_iter, config.ll_tol)?;
    let fitted = model_of(model.family, &chain.state)?;
    let loglik = fitted.log_likelihood(data)?;
    Ok(FitResult {
        family: model.family,
        mixing: fitted.mixing,
        sigma: fitted.sigma,
        loglik,
        iterations: chain.iterations,
        converged: chain.converged,
        restart_index: 0,
        trace: chain.trace,
        sigma_trace: chain.sigma_trace,
        events: chain.events,
    })
}

// ---------------------------------------------------------------------------
// multivariate normal engine

#[derive(Debug, Clone)]
struct MvState {
    locs: Vec<Vec<f64>>,
    weights: Vec<f64>,
    sigma: ScaleMatrix,
}

struct MvEngine<'a> {
    generator: DensityGenerator,
    x: &'a [Vec<f64>],
    p: usize,
}

impl<'a> MvEngine<'a> {
    fn e_step(&self, s: &MvState) -> Responsibilities {
        let m = s.locs.len();
        let n = self.x.len();
        let p = self.p;
        let ln_w: Vec<f64> = s.weights.iter().map(|w| w.ln()).collect();
        let half_logdet = 0.5 * s.sigma.log_det();
        let mut w = vec![0.0; n * m];
        let mut ll = vec![0.0; n];
        let mut diff = vec![0.0; p];
        for (i, xi) in self.x.iter().enumerate() {
            let row = &mut w[i * m..(i + 1) * m];
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                for l in 0..p {
                    diff[l] = xi[l] - s.locs[j][l];
                }
                let q = s.sigma.quadratic_form(&diff);
                let t = ln_w[j] - half_logdet + self.generator.log_f0(q);
                row[j] = t;
                if t > max {
                    max = t;
                }
            }
            if !max.is_finite() {
                ll[i] = if max.is_nan() { f64::NAN } else { f64::NEG_INFINITY };
                row.iter_mut().for_each(|r| *r = 1.0 / m as f64);
                continue;
            }
            let mut total = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                total += *r;
            }
            for r in row.iter_mut() {
                *r /= total;
            }
            ll[i] = max + total.ln();
        }
        Responsibilities {
            w,
            loglik: pairwise_sum(&ll),
        }
    }

    fn m_step(&self, s: &MvState, resp: &Responsibilities, events: &mut FitEvents) -> Result<MvState> {
        let m = s.locs.len();
        let n = self.x.len();
        let p = self.p;
        let mut alpha = vec![0.0; m];
        let mut locs = s.locs.clone();
        for j in 0..m {
            let mut sw = 0.0;
            let mut sx = vec![0.0; p];
            for (i, xi) in self.x.iter().enumerate() {
                let w = resp.w[i * m + j];
                sw += w;
                for l in 0..p {
                    sx[l] += w * xi[l];
                }
            }
            alpha[j] = sw / n as f64;
            if sw > f64::MIN_POSITIVE * 1e10 {
                locs[j] = sx.iter().map(|v| v / sw).collect();
            }
        }
        let mut floored = false;
        for a in alpha.iter_mut() {
            if !(*a >= WEIGHT_FLOOR) {
                *a = WEIGHT_FLOOR;
                floored = true;
            }
        }
        if floored {
            events.weight_floors += 1;
        }
        let total: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a /= total);

        let mut cov = DMatrix::<f64>::zeros(p, p);
        for (i, xi) in self.x.iter().enumerate() {
            for j in 0..m {
                let w = resp.w[i * m + j];
                if w == 0.0 {
                    continue;
                }
                for a in 0..p {
                    let da = xi[a] - locs[j][a];
                    for b in 0..=a {
                        cov[(a, b)] += w * da * (xi[b] - locs[j][b]);
                    }
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov /= n as f64;
        let sigma = floor_eigenvalues(cov, events)?;
        Ok(MvState {
            locs,
            weights: alpha,
            sigma,
        })
    }

    fn step(&self, s: &MvState, resp: &Responsibilities) -> Result<(MvState, Responsibilities, StepStatus, FitEvents)> {
        let mut events = FitEvents::default();
        let cand = self.m_step(s, resp, &mut events)?;
        let r = self.e_step(&cand);
        if r.loglik >= resp.loglik {
            return Ok((cand, r, StepStatus::Improved, events));
        }
        events.rejected_steps += 1;
        let same = Responsibilities {
            w: resp.w.clone(),
            loglik: resp.loglik,
        };
        Ok((s.clone(), same, StepStatus::Stalled, events))
    }

    fn sample_covariance(&self) -> DMatrix<f64> {
        let n = self.x.len() as f64;
        let p = self.p;
        let mut mean = vec![0.0; p];
        for xi in self.x {
            for l in 0..p {
                mean[l] += xi[l] / n;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for xi in self.x {
            for a in 0..p {
                for b in 0..p {
                    cov[(a, b)] += (xi[a] - mean[a]) * (xi[b] - mean[b]) / n;
                }
            }
        }
        cov
    }

    fn initial_state(&self, m: usize, restart: usize, seed: u64) -> Result<MvState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = self.p;
        let n = self.x.len();
        let locs: Vec<Vec<f64>> = if restart % 2 == 0 {
            let cols: Vec<Vec<f64>> = (0..p)
                .map(|l| {
                    let mut c: Vec<f64> = self.x.iter().map(|r| r[l]).collect();
                    c.sort_by(f64::total_cmp);
                    c
                })
                .collect();
            let sds: Vec<f64> = (0..p)
                .map(|l| crate::numeric::variance(&cols[l]).sqrt())
                .collect();
            (0..m)
                .map(|j| {
                    let q = (j as f64 + 0.5) / m as f64;
                    (0..p)
                        .map(|l| quantile_sorted(&cols[l], q) + (rng.random::<f64>() - 0.5) * sds[l])
                        .collect()
                })
                .collect()
        } else {
            rand::seq::index::sample(&mut rng, n, m)
                .into_iter()
                .map(|i| self.x[i].clone())
                .collect()
        };
        let factor = (0.3f64.ln() * rng.random::<f64>()).exp();
        let mut events = FitEvents::default();
        let sigma = floor_eigenvalues(self.sample_covariance() * factor, &mut events)?;
        Ok(MvState {
            locs,
            weights: vec![1.0 / m as f64; m],
            sigma,
        })
    }

    fn run_chain(&self, init: MvState, max_iter: usize, ll_tol: f64) -> Result<MvChain> {
        let mut state = init;
        let mut resp = self.e_step(&state);
        if !resp.loglik.is_finite() {
            return Err(Error::invalid("initial log-likelihood is not finite"));
        }
        let mut trace = vec![resp.loglik];
        let mut log_det_trace = vec![state.sigma.log_det()];
        let mut events = FitEvents::default();
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iter {
            let (next, next_resp, status, ev) = self.step(&state, &resp)?;
            iterations += 1;
            events.absorb(ev);
            if status == StepStatus::Stalled {
                converged = true;
                break;
            }
            let gain = next_resp.loglik - resp.loglik;
            state = next;
            resp = next_resp;
            trace.push(resp.loglik);
            log_det_trace.push(state.sigma.log_det());
            if gain < ll_tol {
                converged = true;
                break;
            }
        }
        Ok(MvChain {
            state,
            iterations,
            converged,
            trace,
            log_det_trace,
            events,
        })
    }
}

struct MvChain {
    state: MvState,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    log_det_trace: Vec<f64>,
    events: FitEvents,
}

/// Symmetrises and floors eigenvalues at `1e-10·trace/p`.
fn floor_eigenvalues(cov: DMatrix<f64>, events: &mut FitEvents) -> Result<ScaleMatrix> {
    let p = cov.nrows();
    let sym = (&cov + cov.transpose()) * 0.5;
    let floor = 1e-10 * sym.trace() / p as f64;
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(Error::SingularCovariance);
    }
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return ScaleMatrix::new(sym).map_err(|_| Error::SingularCovariance);
    }
    events.sigma_clamps += 1;
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    ScaleMatrix::new(rebuilt).map_err(|_| Error::SingularCovariance)
}

/// Multi-start maximum likelihood fit of a multivariate normal mixture
/// with one shared covariance matrix.
pub fn mv_fit(generator: DensityGenerator, data: &MvDataset, config: &FitConfig) -> Result<MvFitResult> {
    config.validate()?;
    if data.dim != generator.dim {
        return Err(Error::DimensionMismatch {
            expected: generator.dim,
            found: data.dim,
        });
    }
    let n = data.len();
    if n <= data.dim * config.order {
        return Err(Error::TooFewObservations {
            required: data.dim * config.order,
            found: n,
        });
    }
    let engine = MvEngine {
        generator,
        x: &data.observations,
        p: data.dim,
    };
    let chains = map_chains(config.restarts, |r| {
        let init = engine.initial_state(config.order, r, config.seed.wrapping_add(r as u64))?;
        engine.run_chain(init, config.max_iter, config.ll_tol)
    });
    let best = select_best(&chains, |c| *c.trace.last().unwrap()).ok_or_else(|| chains_failed(&chains))?;
    let chain = chains.into_iter().nth(best).unwrap()?;
    let mixing = MultivariateMixing::new(chain.state.locs.clone(), chain.state.weights.clone())?;
    let model = MultivariateMixtureModel::new(generator, mixing, chain.state.sigma.clone())?;
    let loglik = model.log_likelihood(data)?;
    Ok(MvFitResult {
        generator,
        mixing: model.mixing,
        sigma: model.sigma,
        loglik,
        iterations: chain.iterations,
        converged: chain.converged,
        restart_index: best,
        trace: chain.trace,
        log_det_trace: chain.log_det_trace,
        events: chain.events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn normal_pair() -> MixtureModel {
        MixtureModel::new(
            FamilyKind::Normal,
            MixingDistribution::new(vec![-2.0, 2.0], vec![0.5, 0.5]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_mle_is_a_fixed_point() {
        let d = normal_pair().sample_dataset(300, 8).unwrap();
        let mean = crate::numeric::mean(d.values());
        let sd = crate::numeric::variance(d.values()).sqrt();
        let m = MixtureModel::new(FamilyKind::Normal, MixingDistribution::point_mass(mean), sd).unwrap();
        let step = em_step(&m, &d).unwrap();
        assert!((step.model.mixing.support()[0] - mean).abs() < 1e-12);
        assert!((step.model.sigma - sd).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_component_gets_no_responsibility() {
        let m = MixtureModel::new(
            FamilyKind::Logistic,
            MixingDistribution::new(vec![0.0, 3.0], vec![1.0, 0.0]).unwrap(),
            1.0,
        )
        .unwrap();
        let d = Dataset::new(vec![-1.0, 0.5, 2.0, 4.0]).unwrap();
        // the zero-weight atom is dropped by canonicalisation, leaving one column
        let w = responsibilities(&m, &d);
        assert!(w.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn toy_pooled_scale() {
        let d = Dataset::new(vec![-2.1, -1.9, 1.9, 2.1]).unwrap();
        let start = normal_pair();
        let before = start.log_likelihood(&d).unwrap();
        let one = em_step(&start, &d).unwrap();
        assert_eq!(one.status, StepStatus::Improved);
        assert!(one.loglik > before);
        let cfg = FitConfig {
            max_iter: 1000,
            ll_tol: 1e-14,
            ..FitConfig::new(2)
        };
        let r = fit_from(&start, &d, &cfg).unwrap();
        assert!((r.sigma - 0.1).abs() < 1e-6, "sigma {}", r.sigma);
    }

    #[test]
    fn single_normal_fit_is_closed_form() {
        let d = normal_pair().sample_dataset(500, 1).unwrap();
        let r = fit(FamilyKind::Normal, &d, &FitConfig::new(1)).unwrap();
        let mean = crate::numeric::mean(d.values());
        let sd = crate::numeric::variance(d.values()).sqrt();
        assert!((r.mixing.support()[0] - mean).abs() < 1e-6);
        assert!((r.sigma - sd).abs() < 1e-6);
    }

    #[test]
    fn fit_beats_truth_on_simulated_data() {
        let truth = normal_pair();
        let d = truth.sample_dataset(2000, 12).unwrap();
        let r = fit(FamilyKind::Normal, &d, &FitConfig { seed: 5, ..FitConfig::new(2) }).unwrap();
        assert!(r.loglik >= truth.log_likelihood(&d).unwrap());
        assert!(r.converged);
        assert_relative_eq!(r.loglik, r.model().log_likelihood(&d).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn traces_are_monotone_for_every_family() {
        for fam in [FamilyKind::Normal, FamilyKind::Logistic, FamilyKind::Gumbel, FamilyKind::StudentT(3)] {
            let truth = MixtureModel::new(fam, normal_pair().mixing, 0.8).unwrap();
            let d = truth.sample_dataset(150, 3).unwrap();
            let r = fit(fam, &d, &FitConfig { restarts: 4, ..FitConfig::new(2) }).unwrap();
            for w in r.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10, "{fam}");
            }
            for (l, s) in r.trace.iter().zip(&r.sigma_trace) {
                assert!(*l <= d.len() as f64 * (fam.constants().v0.ln() - s.ln()));
            }
            assert!(r.loglik >= truth.log_likelihood(&d).unwrap() - 1e-8, "{fam}");
        }
    }

    #[test]
    fn clamped_fit_respects_bounds() {
        let d = normal_pair().sample_dataset(200, 2).unwrap();
        let cfg = FitConfig {
            sigma_bounds: Some((1.5, 3.0)),
            restarts: 3,
            ..FitConfig::new(2)
        };
        let r = fit(FamilyKind::Normal, &d, &cfg).unwrap();
        assert!(r.sigma_trace.iter().all(|s| (1.5..=3.0).contains(s)));
        assert!(r.events.sigma_clamps > 0);
        let healthy = fit(FamilyKind::Normal, &d, &FitConfig::new(2)).unwrap();
        assert_eq!(healthy.events.sigma_clamps, 0);
    }

    #[test]
    fn rejects_small_samples_and_bad_config() {
        let d = Dataset::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            fit(FamilyKind::Normal, &d, &FitConfig::new(2)),
            Err(Error::TooFewObservations { .. })
        ));
        let cfg = FitConfig {
            sigma_bounds: Some((2.0, 1.0)),
            ..FitConfig::new(1)
        };
        assert!(fit(FamilyKind::Normal, &d, &cfg).is_err());
    }

    #[test]
    fn output_is_canonical_regardless_of_labels() {
        let d = normal_pair().sample_dataset(400, 17).unwrap();
        let a = MixtureModel::new(
            FamilyKind::Normal,
            MixingDistribution::new(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap(),
            1.0,
        )
        .unwrap();
        let r = fit_from(&a, &d, &FitConfig::new(2)).unwrap();
        assert!(r.mixing.support().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn deterministic_given_seed() {
        let d = normal_pair().sample_dataset(300, 4).unwrap();
        let cfg = FitConfig {
            seed: 99,
            restarts: 6,
            ..FitConfig::new(2)
        };
        let a = fit(FamilyKind::Gumbel, &d, &cfg).unwrap();
        let b = fit(FamilyKind::Gumbel, &d, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mv_single_component_is_closed_form() {
        let model = MultivariateMixtureModel::new(
            DensityGenerator::multivariate_normal(2).unwrap(),
            MultivariateMixing::point_mass(vec![1.0, -1.0]).unwrap(),
            ScaleMatrix::from_row_major(2, &[1.0, 0.4, 0.4, 2.0]).unwrap(),
        )
        .unwrap();
        let d = model.sample_dataset(400, 6).unwrap();
        let r = mv_fit(model.generator, &d, &FitConfig::new(1)).unwrap();
        let n = d.len() as f64;
        let mean: Vec<f64> = (0..2)
            .map(|l| d.observations.iter().map(|x| x[l]).sum::<f64>() / n)
            .collect();
        for l in 0..2 {
            assert!((r.mixing.support()[0][l] - mean[l]).abs() < 1e-8);
        }
        for a in 0..2 {
            for b in 0..2 {
                let c: f64 = d
                    .observations
                    .iter()
                    .map(|x| (x[a] - mean[a]) * (x[b] - mean[b]))
                    .sum::<f64>()
                    / n;
                assert!((r.sigma.matrix()[(a, b)] - c).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn mv_trace_is_monotone() {
        let model = MultivariateMixtureModel::new(
            DensityGenerator::multivariate_normal(2).unwrap(),
            MultivariateMixing::new(vec![vec![-3.0, -3.0], vec![3.0, 3.0]], vec![0.5, 0.5]).unwrap(),
            ScaleMatrix::identity(2),
        )
        .unwrap();
        let d = model.sample_dataset(1000, 10).unwrap();
        let r = mv_fit(model.generator, &d, &FitConfig { restarts: 4, ..FitConfig::new(2) }).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
        assert!(r.loglik >= model.log_likelihood(&d).unwrap());
    }
}
