//! Discrete mixing distributions and the exponentially weighted L1 metric
//! between their distribution functions.
//!
//! For univariate step functions the metric
//! `D(Ψ1, Ψ2) = ∫ |Ψ1(μ) − Ψ2(μ)| e^{−|μ|} dμ` is evaluated exactly: the
//! merged jump locations cut the line into intervals on which the integrand
//! is a constant times `e^{−|μ|}`, and each piece is integrated in closed
//! form. The multivariate version integrates over `R^p` with
//! `|μ| = Σ |μ_l|`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Quadrature;

/// Atoms closer than this are merged when canonicalising.
pub const MERGE_TOL: f64 = 1e-12;
/// Weights below this are dropped when canonicalising.
pub const DROP_TOL: f64 = 1e-15;
/// Accepted deviation of the raw weight total from one before renormalising.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A finite mixing distribution `Ψ(μ) = Σ α_j I(μ_j ≤ μ)` in canonical
/// form: strictly increasing support, positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixing")]
pub struct MixingDistribution {
    support: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMixing {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<RawMixing> for MixingDistribution {
    type Error = Error;
    fn try_from(r: RawMixing) -> Result<Self> {
        MixingDistribution::new(r.support, r.weights)
    }
}

fn check_weights(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::invalid("mixing distribution needs at least one atom"));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::invalid(format!("mixing weights must be finite and >= 0, got {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::invalid(format!("mixing weights sum to {total}, expected 1")));
    }
    Ok(total)
}

/// Divides by the total unless it is already one up to rounding, so that
/// canonical weights survive a second pass bit for bit.
fn renormalise(mut weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 4.0 * f64::EPSILON * weights.len() as f64 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    weights
}

impl MixingDistribution {
    /// Builds the canonical representative of `Σ weights[j] I(support[j] ≤ μ)`.
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                found: weights.len(),
            });
        }
        check_weights(&weights)?;
        if let Some(m) = support.iter().find(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("support points must be finite, got {m}")));
        }
        let mut atoms: Vec<(f64, f64)> = support.into_iter().zip(weights).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (loc, w) in atoms {
            match merged.last_mut() {
                Some(last) if (loc - last.0).abs() < MERGE_TOL => {
                    let total = last.1 + w;
                    if total > 0.0 {
                        last.0 = (last.0 * last.1 + loc * w) / total;
                    }
                    last.1 = total;
                }
                _ => merged.push((loc, w)),
            }
        }
        merged.retain(|&(_, w)| w >= DROP_TOL);
        if merged.is_empty() {
            return Err(Error::invalid("all mixing weights are negligible"));
        }
        Ok(Self {
            weights: renormalise(merged.iter().map(|a| a.1).collect()),
            support: merged.into_iter().map(|a| a.0).collect(),
        })
    }

    /// Normalises arbitrary non-negative weights before canonicalising.
    pub fn from_unnormalized(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid("weights must have a positive finite total"));
        }
        Self::new(support, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn point_mass(location: f64) -> Self {
        Self {
            support: vec![location],
            weights: vec![1.0],
        }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    /// Right-continuous CDF value `Σ α_j I(μ_j ≤ mu)`.
    pub fn evaluate(&self, mu: f64) -> f64 {
        self.atoms().filter(|&(loc, _)| loc <= mu).map(|(_, w)| w).sum()
    }

    /// Image under `μ ↦ a·μ + c` (`a > 0`).
    pub fn relocate(&self, a: f64, c: f64) -> Self {
        Self {
            support: self.support.iter().map(|m| a * m + c).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(m, w)| m * w).sum()
    }
}

/// Element of the compactified space `{γ + ρΨ}`: mass `γ` escaped to `−∞`,
/// `1 − γ − ρ` escaped to `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExtended")]
pub struct ExtendedMixing {
    gamma: f64,
    rho: f64,
    inner: MixingDistribution,
}

#[derive(Deserialize)]
struct RawExtended {
    gamma: f64,
    rho: f64,
    inner: MixingDistribution,
}

impl TryFrom<RawExtended> for ExtendedMixing {
    type Error = Error;
    fn try_from(r: RawExtended) -> Result<Self> {
        ExtendedMixing::new(r.gamma, r.rho, r.inner)
    }
}

impl ExtendedMixing {
    pub fn new(gamma: f64, rho: f64, inner: MixingDistribution) -> Result<Self> {
        if !(gamma >= 0.0 && rho >= 0.0 && gamma + rho <= 1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "extended mixing needs gamma, rho >= 0 and gamma + rho <= 1 (got {gamma}, {rho})"
            )));
        }
        Ok(Self { gamma, rho, inner })
    }

    /// The limit object with every atom escaped to `+∞` (identically zero).
    pub fn all_mass_at_infinity() -> Self {
        Self {
            gamma: 0.0,
            rho: 0.0,
            inner: MixingDistribution::point_mass(0.0),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn inner(&self) -> &MixingDistribution {
        &self.inner
    }

    pub fn evaluate(&self, mu: f64) -> f64 {
        self.gamma + self.rho * self.inner.evaluate(mu)
    }
}

impl From<MixingDistribution> for ExtendedMixing {
    fn from(inner: MixingDistribution) -> Self {
        Self {
            gamma: 0.0,
            rho: 1.0,
            inner,
        }
    }
}

/// A univariate right-continuous step function with finitely many jumps.
pub trait StepCdf {
    /// Limit at `−∞`.
    fn base(&self) -> f64;
    /// `(location, jump size)` pairs, locations strictly increasing.
    fn jumps(&self) -> Vec<(f64, f64)>;
    fn value_at(&self, mu: f64) -> f64;
}

impl StepCdf for MixingDistribution {
    fn base(&self) -> f64 {
        0.0
    }
    fn jumps(&self) -> Vec<(f64, f64)> {
        self.atoms().collect()
    }
    fn value_at(&self, mu: f64) -> f64 {
        self.evaluate(mu)
    }
}

impl StepCdf for ExtendedMixing {
    fn base(&self) -> f64 {
        self.gamma
    }
    fn jumps(&self) -> Vec<(f64, f64)> {
        self.inner.atoms().map(|(m, w)| (m, self.rho * w)).collect()
    }
    fn value_at(&self, mu: f64) -> f64 {
        self.evaluate(mu)
    }
}

/// `∫_a^b e^{−|μ|} dμ` for `a ≤ b`, either end possibly infinite.
pub fn exp_abs_integral(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a >= 0.0 {
        -(-a).exp() * (-(b - a)).exp_m1()
    } else if b <= 0.0 {
        -b.exp() * (-(b - a)).exp_m1()
    } else {
        -a.exp_m1() - (-b).exp_m1()
    }
}

/// Closed-form `D(Ψ1, Ψ2)`.
pub fn distance<A: StepCdf + ?Sized, B: StepCdf + ?Sized>(psi1: &A, psi2: &B) -> f64 {
    let j1 = psi1.jumps();
    let j2 = psi2.jumps();
    let (mut i1, mut i2) = (0, 0);
    let (mut c1, mut c2) = (psi1.base(), psi2.base());
    let mut left = f64::NEG_INFINITY;
    let mut total = 0.0;
    loop {
        let next1 = j1.get(i1).map_or(f64::INFINITY, |j| j.0);
        let next2 = j2.get(i2).map_or(f64::INFINITY, |j| j.0);
        let right = next1.min(next2);
        let diff = (c1 - c2).abs();
        if diff > 0.0 && left < right {
            total += diff * exp_abs_integral(left, right);
        }
        if right == f64::INFINITY {
            break;
        }
        if next1 == right {
            c1 += j1[i1].1;
            i1 += 1;
        }
        if next2 == right {
            c2 += j2[i2].1;
            i2 += 1;
        }
        left = right;
    }
    total
}

/// Numerical `D(Ψ1, Ψ2)` on a truncated domain, accurate to `tol`.
///
/// This path evaluates both step functions pointwise and never uses the
/// closed-form antiderivative, so it serves as an oracle for [`distance`].
pub fn distance_quadrature<A: StepCdf + ?Sized, B: StepCdf + ?Sized>(
    psi1: &A,
    psi2: &B,
    tol: f64,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    // |Ψ1 − Ψ2| ≤ 1, so each discarded tail contributes at most e^{−L}.
    let half_width = (4.0 / tol).ln();
    let mut cuts: Vec<f64> = vec![-half_width, 0.0, half_width];
    for (loc, _) in psi1.jumps().into_iter().chain(psi2.jumps()) {
        if loc.abs() < half_width {
            cuts.push(loc);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let pieces = cuts.len() - 1;
    let quad = Quadrature::with_tolerance(0.25 * tol / pieces as f64);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let r = quad.integrate(
            |mu| (psi1.value_at(mu) - psi2.value_at(mu)).abs() * (-mu.abs()).exp(),
            w[0],
            w[1],
        )?;
        total += r.value;
    }
    Ok(total)
}

/// A finite mixing distribution on `R^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMvMixing")]
pub struct MultivariateMixing {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMvMixing {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawMvMixing> for MultivariateMixing {
    type Error = Error;
    fn try_from(r: RawMvMixing) -> Result<Self> {
        MultivariateMixing::new(r.support, r.weights)
    }
}

impl MultivariateMixing {
    /// Canonical form: atoms merged when every coordinate is within
    /// [`MERGE_TOL`], negligible weights dropped, atoms in lexicographic order.
    pub fn new(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: support.len(),
                found: weights.len(),
            });
        }
        check_weights(&weights)?;
        let dim = support[0].len();
        if dim == 0 {
            return Err(Error::invalid("support points need at least one coordinate"));
        }
        for p in &support {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("support points must be finite"));
            }
        }
        let mut merged: Vec<(Vec<f64>, f64)> = Vec::new();
        for (p, w) in support.into_iter().zip(weights) {
            match merged
                .iter_mut()
                .find(|(q, _)| q.iter().zip(&p).all(|(a, b)| (a - b).abs() < MERGE_TOL))
            {
                Some((_, acc)) => *acc += w,
                None => merged.push((p, w)),
            }
        }
        merged.retain(|(_, w)| *w >= DROP_TOL);
        if merged.is_empty() {
            return Err(Error::invalid("all mixing weights are negligible"));
        }
        merged.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(Self {
            weights: renormalise(merged.iter().map(|a| a.1).collect()),
            support: merged.into_iter().map(|a| a.0).collect(),
        })
    }

    pub fn from_unnormalized(support: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid("weights must have a positive finite total"));
        }
        Self::new(support, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn point_mass(location: Vec<f64>) -> Result<Self> {
        Self::new(vec![location], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ α_j I(μ_j ≤ mu)` with the componentwise order.
    pub fn evaluate(&self, mu: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| p.iter().zip(mu).all(|(a, b)| a <= b))
            .map(|(_, w)| w)
            .sum()
    }

    /// The univariate mixing distribution when `dim() == 1`.
    pub fn to_univariate(&self) -> Option<MixingDistribution> {
        if self.dim() != 1 {
            return None;
        }
        MixingDistribution::new(self.support.iter().map(|p| p[0]).collect(), self.weights.clone()).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DStarMethod {
    /// Exact integration over the product grid of atom coordinates.
    Product,
    MonteCarlo { samples: usize, seed: u64 },
}

impl DStarMethod {
    /// Product grid up to three dimensions, Monte Carlo with 10^6 draws above.
    pub fn default_for(dim: usize, seed: u64) -> Self {
        if dim <= 3 {
            DStarMethod::Product
        } else {
            DStarMethod::MonteCarlo {
                samples: 1_000_000,
                seed,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DStar {
    pub value: f64,
    /// Zero for the product method.
    pub std_error: f64,
}

/// `D*(Ψ1, Ψ2) = ∫_{R^p} |Ψ1(μ) − Ψ2(μ)| e^{−Σ|μ_l|} dμ`.
pub fn distance_star(psi1: &MultivariateMixing, psi2: &MultivariateMixing, method: DStarMethod) -> Result<DStar> {
    if psi1.dim() != psi2.dim() {
        return Err(Error::DimensionMismatch {
            expected: psi1.dim(),
            found: psi2.dim(),
        });
    }
    match method {
        DStarMethod::Product => Ok(DStar {
            value: dstar_product(psi1, psi2),
            std_error: 0.0,
        }),
        DStarMethod::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::invalid("monte carlo needs at least two samples"));
            }
            Ok(dstar_monte_carlo(psi1, psi2, samples, seed))
        }
    }
}

fn dstar_product(psi1: &MultivariateMixing, psi2: &MultivariateMixing) -> f64 {
    let p = psi1.dim();
    // Per-axis cut points; cell k on axis l is [cuts[l][k-1], cuts[l][k]).
    let cuts: Vec<Vec<f64>> = (0..p)
        .map(|l| {
            let mut c: Vec<f64> = psi1
                .support()
                .iter()
                .chain(psi2.support())
                .map(|pt| pt[l])
                .collect();
            c.sort_by(f64::total_cmp);
            c.dedup();
            c
        })
        .collect();
    let axis_weights: Vec<Vec<f64>> = cuts
        .iter()
        .map(|c| {
            let mut w = Vec::with_capacity(c.len() + 1);
            w.push(exp_abs_integral(f64::NEG_INFINITY, c[0]));
            for pair in c.windows(2) {
                w.push(exp_abs_integral(pair[0], pair[1]));
            }
            w.push(exp_abs_integral(*c.last().unwrap(), f64::INFINITY));
            w
        })
        .collect();
    // Atom j is below cell index k on axis l iff its coordinate is <= cuts[l][k-1].
    let covers = |psi: &MultivariateMixing, cell: &[usize]| -> f64 {
        psi.support()
            .iter()
            .zip(psi.weights())
            .filter(|(pt, _)| (0..p).all(|l| cell[l] > 0 && pt[l] <= cuts[l][cell[l] - 1]))
            .map(|(_, w)| w)
            .sum()
    };
    let sizes: Vec<usize> = axis_weights.iter().map(Vec::len).collect();
    let mut cell = vec![0usize; p];
    let mut total = 0.0;
    'cells: loop {
        let diff = (covers(psi1, &cell) - covers(psi2, &cell)).abs();
        if diff > 0.0 {
            let vol: f64 = (0..p).map(|l| axis_weights[l][cell[l]]).product();
            total += diff * vol;
        }
        for l in 0..p {
            cell[l] += 1;
            if cell[l] < sizes[l] {
                continue 'cells;
            }
            cell[l] = 0;
        }
        break;
    }
    total
}

fn dstar_monte_carlo(psi1: &MultivariateMixing, psi2: &MultivariateMixing, samples: usize, seed: u64) -> DStar {
    let p = psi1.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mu = vec![0.0; p];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        for x in mu.iter_mut() {
            let e: f64 = rng.sample(Exp1);
            *x = if rng.random::<bool>() { e } else { -e };
        }
        let d = (psi1.evaluate(&mu) - psi2.evaluate(&mu)).abs();
        sum += d;
        sum_sq += d * d;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let scale = 2f64.powi(p as i32);
    DStar {
        value: scale * mean,
        std_error: scale * (var / n).sqrt(),
    }
}
