//! Numerical certificates for the regularity constants behind the
//! consistency argument: the entropy `K0`, the scale guards `ε` and `Δ`,
//! the Lemma-1 constants `a`, `b`, `ε0`, their multivariate analogues, and
//! grid checks of the tail envelope and the finite-entropy condition.
//!
//! All margins are oriented so that a non-negative value means the check
//! passed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{DensityGenerator, FamilyConstants, FamilyKind, GeneratorKind};
use crate::mixture::{MixtureModel, MultivariateMixtureModel};
use crate::numeric::{ln_gamma_half, pairwise_sum, LN_2PI};
use crate::quadrature::Quadrature;

/// Absolute tolerance used for the entropy integral.
pub const K0_QUAD_TOL: f64 = 1e-8;
/// Default Monte Carlo size for `K0*`.
pub const K0_MC_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum K0Method {
    Quadrature,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct K0Estimate {
    pub value: f64,
    /// Quadrature error bound, or Monte Carlo standard error.
    pub error: f64,
    pub method: K0Method,
}

/// `K0 = ∫ log g(x) g(x) dx`, the negative differential entropy of the true mixture.
pub fn compute_k0(model: &MixtureModel, method: K0Method) -> Result<K0Estimate> {
    match method {
        K0Method::Quadrature => {
            let quad = Quadrature::with_tolerance(K0_QUAD_TOL);
            let integrand = |x: f64| {
                let lg = model.log_density(x);
                if lg == f64::NEG_INFINITY {
                    0.0
                } else {
                    lg.exp() * lg
                }
            };
            let r = quad.integrate_real_line(integrand, model.mixing.support(), model.sigma)?;
            if !r.value.is_finite() {
                return Err(Error::QuadratureDiverged {
                    estimate: r.value,
                    error: r.error,
                });
            }
            Ok(K0Estimate {
                value: r.value,
                error: r.error,
                method,
            })
        }
        K0Method::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::invalid("monte carlo K0 needs at least 2 samples"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logs: Vec<f64> = model.sample(samples, &mut rng).into_iter().map(|x| model.log_density(x)).collect();
            let (value, error) = mean_and_se(&logs);
            Ok(K0Estimate { value, error, method })
        }
    }
}

/// Monte Carlo `K0*` over `R^p`.
pub fn compute_mv_k0(model: &MultivariateMixtureModel, samples: usize, seed: u64) -> Result<K0Estimate> {
    if samples < 2 {
        return Err(Error::invalid("monte carlo K0 needs at least 2 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = model.sample(samples, &mut rng);
    let logs: Vec<f64> = draws.iter().map(|x| model.log_density(x)).collect();
    let (value, error) = mean_and_se(&logs);
    Ok(K0Estimate {
        value,
        error,
        method: K0Method::MonteCarlo { samples, seed },
    })
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Constants of the univariate lemmas for a declared true model and order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub family: FamilyKind,
    pub m: usize,
    pub sigma0: f64,
    pub v0: f64,
    pub v1: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub eps0: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    #[serde(rename = "K0_error")]
    pub k0_error: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub eps: f64,
    /// The three upper bounds on `ε` from D1, D2 and D3.
    pub eps_bounds: [f64; 3],
}

impl TheoryConstants {
    /// Margins of D1–D3 at the stored `ε`, each `>= 0` when satisfied.
    /// D1 and D2 are compared on the log scale.
    pub fn d_margins(&self) -> [f64; 3] {
        self.d_margins_at(self.eps)
    }

    pub fn d_margins_at(&self, eps: f64) -> [f64; 3] {
        [
            self.eps0.ln() - eps.ln(),
            d2_bound(self.v0, self.v1, self.beta).ln() - eps.ln(),
            (self.k0 - 1.0) - d3_lhs(self.v0, self.v1, self.b, 0.25 * (self.beta - 1.0), eps),
        ]
    }
}

fn d2_bound(v0: f64, v1: f64, beta: f64) -> f64 {
    (v1 / v0).powf(-2.0 / (beta + 1.0))
}

fn d3_lhs(v0: f64, v1: f64, b: f64, coef: f64, eps: f64) -> f64 {
    v0.ln() / b + (1.0 - 1.0 / b) * v1.ln() + coef * eps.ln()
}

/// Largest `ε <= eps` at which `margin(ε) >= 0`, stepping down a few ulps
/// to absorb rounding in the closed-form D3 solve.
fn settle(mut eps: f64, margin: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..64 {
        if margin(eps) >= 0.0 {
            break;
        }
        eps = f64::from_bits(eps.to_bits() - 1);
    }
    eps
}

pub fn lemma_a(beta: f64) -> f64 {
    (1.0 + beta) / (2.0 * beta)
}

pub fn lemma_b(beta: f64) -> f64 {
    2.0 * (beta + 1.0) / (beta - 1.0)
}

/// `ε0 = (3 m b v0 / σ0)^{-1/(1-a)}`.
pub fn eps0(m: usize, c: &FamilyConstants, sigma0: f64) -> f64 {
    let a = lemma_a(c.beta);
    let b = lemma_b(c.beta);
    (3.0 * m as f64 * b * c.v0 / sigma0).powf(-1.0 / (1.0 - a))
}

pub fn compute_constants(model: &MixtureModel, m: usize) -> Result<TheoryConstants> {
    compute_constants_with(model, m, K0Method::Quadrature)
}

pub fn compute_constants_with(model: &MixtureModel, m: usize, method: K0Method) -> Result<TheoryConstants> {
    if m == 0 {
        return Err(Error::invalid("order must be >= 1"));
    }
    let c = model.family.constants();
    if !(c.beta > 1.0) {
        return Err(Error::invalid(format!("tail exponent must exceed 1, got {}", c.beta)));
    }
    let k0 = compute_k0(model, method)?;
    let a = lemma_a(c.beta);
    let b = lemma_b(c.beta);
    let e0 = eps0(m, &c, model.sigma);
    let e2 = d2_bound(c.v0, c.v1, c.beta);
    let coef = 0.25 * (c.beta - 1.0);
    let e3 = ((k0.value - 1.0 - c.v0.ln() / b - (1.0 - 1.0 / b) * c.v1.ln()) / coef).exp();
    let mut out = TheoryConstants {
        family: model.family,
        m,
        sigma0: model.sigma,
        v0: c.v0,
        v1: c.v1,
        beta: c.beta,
        a,
        b,
        eps0: e0,
        k0: k0.value,
        k0_error: k0.error,
        delta: c.v0 / (k0.value - 1.0).exp(),
        eps: 0.0,
        eps_bounds: [e0, e2, e3],
    };
    let eps = e0.min(e2).min(e3);
    out.eps = settle(eps, |e| out.d_margins_at(e).into_iter().fold(f64::INFINITY, f64::min));
    Ok(out)
}

/// Starred constants for a `p`-variate elliptical mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvTheoryConstants {
    pub generator: GeneratorKind,
    pub p: usize,
    pub m: usize,
    pub log_det_sigma0: f64,
    pub v0: f64,
    pub v1: f64,
    pub beta: f64,
    pub a_star: f64,
    pub b_star: f64,
    pub eps0_star: f64,
    #[serde(rename = "K0_star")]
    pub k0_star: f64,
    #[serde(rename = "K0_star_se")]
    pub k0_star_se: f64,
    #[serde(rename = "Delta_star")]
    pub delta_star: f64,
    pub eps_star: f64,
    pub eps_star_bounds: [f64; 3],
}

impl MvTheoryConstants {
    pub fn d_margins(&self) -> [f64; 3] {
        self.d_margins_at(self.eps_star)
    }

    pub fn d_margins_at(&self, eps: f64) -> [f64; 3] {
        let p = self.p as f64;
        [
            self.eps0_star.ln() - eps.ln(),
            mv_d2_bound(self.v0, self.v1, self.beta, p).ln() - eps.ln(),
            (self.k0_star - 1.0) - d3_lhs(self.v0, self.v1, self.b_star, (self.beta - p) / 8.0, eps),
        ]
    }

    /// Left side of the defining equation of `ε0*` minus its right side.
    pub fn eps0_equation(&self, eps: f64) -> f64 {
        ball_coefficient(self.v0, self.p, self.log_det_sigma0) * eps.powf((1.0 - self.a_star) / 2.0)
            - 1.0 / (2.0 * self.m as f64 * self.b_star)
    }
}

fn mv_d2_bound(v0: f64, v1: f64, beta: f64, p: f64) -> f64 {
    (v1 / v0).powf(-4.0 / (beta - p + 2.0))
}

/// `v0 π^{p/2} / (|Σ0|^{1/2} Γ(p/2 + 1))`.
fn ball_coefficient(v0: f64, p: usize, log_det: f64) -> f64 {
    let pf = p as f64;
    (v0.ln() + 0.5 * pf * std::f64::consts::PI.ln() - 0.5 * log_det - ln_gamma_half(p as u32 + 2)).exp()
}

pub fn mv_lemma_a(beta: f64, p: usize) -> f64 {
    (beta + p as f64) / (2.0 * beta)
}

pub fn mv_lemma_b(beta: f64, p: usize) -> f64 {
    let p = p as f64;
    2.0 * (beta - p + 2.0) / (beta - p)
}

pub fn compute_mv_constants(model: &MultivariateMixtureModel, m: usize) -> Result<MvTheoryConstants> {
    compute_mv_constants_with(model, m, K0_MC_SAMPLES, 0)
}

pub fn compute_mv_constants_with(
    model: &MultivariateMixtureModel,
    m: usize,
    samples: usize,
    seed: u64,
) -> Result<MvTheoryConstants> {
    if m == 0 {
        return Err(Error::invalid("order must be >= 1"));
    }
    let p = model.dim();
    let c = model.generator.constants();
    if !(c.beta > p as f64) {
        return Err(Error::invalid(format!(
            "tail exponent must exceed the dimension ({} <= {p})",
            c.beta
        )));
    }
    let k0 = compute_mv_k0(model, samples, seed)?;
    let a = mv_lemma_a(c.beta, p);
    let b = mv_lemma_b(c.beta, p);
    let log_det = model.sigma.log_det();
    let coef = ball_coefficient(c.v0, p, log_det);
    let e0 = (1.0 / (2.0 * m as f64 * b * coef)).powf(2.0 / (1.0 - a));
    let e2 = mv_d2_bound(c.v0, c.v1, c.beta, p as f64);
    let lin = (c.beta - p as f64) / 8.0;
    let e3 = ((k0.value - 1.0 - c.v0.ln() / b - (1.0 - 1.0 / b) * c.v1.ln()) / lin).exp();
    let mut out = MvTheoryConstants {
        generator: model.generator.kind,
        p,
        m,
        log_det_sigma0: log_det,
        v0: c.v0,
        v1: c.v1,
        beta: c.beta,
        a_star: a,
        b_star: b,
        eps0_star: e0,
        k0_star: k0.value,
        k0_star_se: k0.error,
        delta_star: (c.v0 / (k0.value - 1.0).exp()).powi(2),
        eps_star: 0.0,
        eps_star_bounds: [e0, e2, e3],
    };
    let eps = e0.min(e2).min(e3);
    out.eps_star = settle(eps, |e| out.d_margins_at(e).into_iter().fold(f64::INFINITY, f64::min));
    Ok(out)
}

/// Log-spaced grid over `|x| ∈ [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    /// Points per sign.
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: 1e-6,
            hi: 1e6,
            points: 10_000,
        }
    }
}

impl GridSpec {
    pub fn abscissae(&self) -> impl Iterator<Item = f64> + '_ {
        let (l0, l1) = (self.lo.ln(), self.hi.ln());
        let k = self.points.max(2) - 1;
        (0..=k).map(move |i| (l0 + (l1 - l0) * i as f64 / k as f64).exp())
    }
}

/// One named check in a certification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// Worst-case slack; `None` for purely qualitative checks.
    pub margin: Option<f64>,
    /// Where the worst case occurred, when meaningful.
    pub location: Option<f64>,
}

impl Check {
    fn from_margin(name: &str, margin: f64, location: Option<f64>) -> Self {
        Self {
            name: name.into(),
            pass: margin >= 0.0,
            margin: Some(margin).filter(|m| m.is_finite()),
            location,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// `max (f − envelope)` over the grid; `<= 0` means no violation.
    pub max_violation: f64,
    pub location: f64,
    pub violations: usize,
    pub points: usize,
}

impl EnvelopeReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }

    pub fn check(&self, name: &str) -> Check {
        Check {
            name: name.into(),
            pass: self.pass(),
            margin: Some(-self.max_violation),
            location: Some(self.location),
        }
    }
}

fn scan(points: impl Iterator<Item = f64>, f: impl Fn(f64) -> f64, env: impl Fn(f64) -> f64) -> EnvelopeReport {
    let mut report = EnvelopeReport {
        max_violation: f64::NEG_INFINITY,
        location: f64::NAN,
        violations: 0,
        points: 0,
    };
    for x in points {
        let v = f(x) - env(x);
        report.points += 1;
        if v > 0.0 || v.is_nan() {
            report.violations += 1;
        }
        if v > report.max_violation || v.is_nan() {
            report.max_violation = if v.is_nan() { f64::INFINITY } else { v };
            report.location = x;
        }
    }
    report
}

/// Checks `f(x; 0, 1) <= min{v0, v1 |x|^{-β}}` on both signs of the grid.
pub fn verify_c3(family: FamilyKind, constants: &FamilyConstants, grid: &GridSpec) -> EnvelopeReport {
    let pts = grid.abscissae().flat_map(|x| [-x, x]).chain(std::iter::once(0.0));
    scan(pts, |z| family.std_density(z), |z| constants.envelope(z))
}

/// Checks `f0(q) <= min{v0, v1 q^{-β/2}}` for `q >= 0` on the grid.
pub fn verify_c3_generator(generator: &DensityGenerator, constants: &FamilyConstants, grid: &GridSpec) -> EnvelopeReport {
    let pts = grid.abscissae().chain(std::iter::once(0.0));
    scan(pts, |q| generator.f0(q), |q| DensityGenerator::envelope(constants, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Report {
    /// `Σ_j Σ_h α_j α_h ∫ log f(t; (μ_j − μ_h)/σ0, 1) f(t; 0, 1) dt`.
    pub value: f64,
    pub finite: bool,
    /// `K0 + log σ0 − value`, non-negative by Jensen's inequality.
    pub jensen_margin: Option<f64>,
}

/// Pairwise cross-entropy sum behind the finite-entropy condition.
pub fn verify_c2(model: &MixtureModel) -> Result<C2Report> {
    let quad = Quadrature::default();
    let atoms: Vec<(f64, f64)> = model.mixing.atoms().collect();
    let mut terms = Vec::with_capacity(atoms.len() * atoms.len());
    for &(mj, aj) in &atoms {
        for &(mh, ah) in &atoms {
            let delta = (mj - mh) / model.sigma;
            let ce = match model.family {
                FamilyKind::Normal | FamilyKind::Gumbel => model.family.cross_entropy_closed_form(delta)?.value,
                _ => model.family.cross_entropy_quadrature(delta, &quad)?,
            };
            terms.push(aj * ah * ce);
        }
    }
    let value = pairwise_sum(&terms);
    Ok(C2Report {
        value,
        finite: value.is_finite(),
        jensen_margin: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReportConstants {
    Univariate(TheoryConstants),
    Multivariate(MvTheoryConstants),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub schema: u32,
    pub constants: ReportConstants,
    pub checks: Vec<Check>,
}

impl CertificationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Slack allowed in the Jensen comparison for quadrature error.
const JENSEN_SLACK: f64 = 1e-7;

/// Full certificate for a univariate true model at order `m`.
pub fn certify(model: &MixtureModel, m: usize) -> Result<CertificationReport> {
    let k = compute_constants(model, m)?;
    let mut checks = vec![Check {
        name: "C1".into(),
        pass: true,
        margin: None,
        location: None,
    }];
    let mut c2 = verify_c2(model)?;
    let jensen = k.k0 + model.sigma.ln() - c2.value + JENSEN_SLACK;
    c2.jensen_margin = Some(jensen);
    checks.push(Check {
        name: "C2".into(),
        pass: c2.finite && jensen >= 0.0,
        margin: Some(jensen).filter(|m| m.is_finite()),
        location: None,
    });
    let c = model.family.constants();
    checks.push(verify_c3(model.family, &c, &GridSpec::default()).check("C3"));
    let d = k.d_margins();
    checks.push(Check::from_margin("D1", d[0], None));
    checks.push(Check::from_margin("D2", d[1], None));
    checks.push(Check::from_margin("D3", d[2], None));
    checks.push(Check::from_margin("eps_below_Delta", k.delta.ln() - k.eps.ln(), None));
    Ok(CertificationReport {
        schema: 1,
        constants: ReportConstants::Univariate(k),
        checks,
    })
}

/// Full certificate for a multivariate true model; `K0*` by Monte Carlo.
pub fn certify_mv(model: &MultivariateMixtureModel, m: usize, samples: usize, seed: u64) -> Result<CertificationReport> {
    let k = compute_mv_constants_with(model, m, samples, seed)?;
    let p = model.dim() as f64;
    let mut checks = vec![Check {
        name: "C1*".into(),
        pass: true,
        margin: None,
        location: None,
    }];
    // Pairwise normal cross entropies in closed form, compared with K0* by Jensen.
    let atoms = model.mixing.support();
    let w = model.mixing.weights();
    let mut terms = Vec::new();
    for (j, mj) in atoms.iter().enumerate() {
        for (h, mh) in atoms.iter().enumerate() {
            let diff: Vec<f64> = mj.iter().zip(mh).map(|(a, b)| a - b).collect();
            let ce = -0.5 * p * LN_2PI - 0.5 * k.log_det_sigma0 - 0.5 * (p + model.sigma.quadratic_form(&diff));
            terms.push(w[j] * w[h] * ce);
        }
    }
    let value = pairwise_sum(&terms);
    let jensen = k.k0_star - value + 4.0 * k.k0_star_se;
    checks.push(Check {
        name: "C2*".into(),
        pass: value.is_finite() && jensen >= 0.0,
        margin: Some(jensen).filter(|m| m.is_finite()),
        location: None,
    });
    let c = model.generator.constants();
    checks.push(verify_c3_generator(&model.generator, &c, &GridSpec::default()).check("C3*"));
    let d = k.d_margins();
    checks.push(Check::from_margin("D1*", d[0], None));
    checks.push(Check::from_margin("D2*", d[1], None));
    checks.push(Check::from_margin("D3*", d[2], None));
    checks.push(Check::from_margin("eps_below_Delta*", k.delta_star.ln() - k.eps_star.ln(), None));
    Ok(CertificationReport {
        schema: 1,
        constants: ReportConstants::Multivariate(k),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::{MixingDistribution, MultivariateMixing};
    use crate::mixture::ScaleMatrix;
    use crate::numeric::EULER_GAMMA;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn point(family: FamilyKind, sigma: f64) -> MixtureModel {
        MixtureModel::new(family, MixingDistribution::point_mass(0.0), sigma).unwrap()
    }

    fn pair(family: FamilyKind) -> MixtureModel {
        MixtureModel::new(
            family,
            MixingDistribution::new(vec![-2.0, 2.0], vec![0.5, 0.5]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    /// Plain composite Simpson on a wide finite window.
    fn simpson_k0(model: &MixtureModel, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let g = |x: f64| {
            let d = model.density(x);
            if d > 0.0 {
                d * d.ln()
            } else {
                0.0
            }
        };
        let mut s = g(lo) + g(hi);
        for i in 1..n {
            s += g(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn k0_matches_known_entropies() {
        let cases = [
            (FamilyKind::Normal, -0.5 * (2.0 * PI * std::f64::consts::E).ln()),
            (FamilyKind::Gumbel, -(EULER_GAMMA + 1.0)),
            (FamilyKind::Logistic, -2.0),
            (FamilyKind::StudentT(1), -(4.0 * PI).ln()),
        ];
        for (fam, want) in cases {
            let k = compute_k0(&point(fam, 1.0), K0Method::Quadrature).unwrap();
            assert!((k.value - want).abs() < 1e-8, "{fam}: {} vs {want}", k.value);
        }
    }

    #[test]
    fn k0_agrees_with_simpson_oracle() {
        let m = pair(FamilyKind::Gumbel);
        let k = compute_k0(&m, K0Method::Quadrature).unwrap();
        let s = simpson_k0(&m, -30.0, 60.0, 200_000);
        assert!((k.value - s).abs() < 1e-8, "{} vs {s}", k.value);
    }

    #[test]
    fn k0_scale_shift() {
        for fam in [FamilyKind::Normal, FamilyKind::Logistic, FamilyKind::Gumbel, FamilyKind::StudentT(3)] {
            let base = pair(fam);
            let scaled = base.affine(2.0, 0.0).unwrap();
            let k1 = compute_k0(&base, K0Method::Quadrature).unwrap().value;
            let k2 = compute_k0(&scaled, K0Method::Quadrature).unwrap().value;
            assert!((k2 - (k1 - 2f64.ln())).abs() < 1e-7, "{fam}");
        }
    }

    #[test]
    fn monte_carlo_k0_within_four_standard_errors() {
        for fam in [FamilyKind::Normal, FamilyKind::Logistic, FamilyKind::Gumbel, FamilyKind::StudentT(2)] {
            let m = pair(fam);
            let q = compute_k0(&m, K0Method::Quadrature).unwrap().value;
            let mc = compute_k0(&m, K0Method::MonteCarlo { samples: 200_000, seed: 3 }).unwrap();
            assert!((mc.value - q).abs() < 4.0 * mc.error, "{fam}: {} ± {} vs {q}", mc.value, mc.error);
        }
    }

    #[test]
    fn normal_constants() {
        let k = compute_constants(&point(FamilyKind::Normal, 1.0), 2).unwrap();
        assert_eq!(k.a, 0.75);
        assert_eq!(k.b, 6.0);
        let v0 = (2.0 * PI).powf(-0.5);
        let want = (36.0 * v0).powi(-4);
        assert!((k.eps0 - want).abs() <= 1e-12 * want);
        assert!((k.eps0 - 2.35e-5).abs() < 1e-7);
        let k0 = -0.5 * (2.0 * PI * std::f64::consts::E).ln();
        assert!((k.delta - v0 / (k0 - 1.0).exp()).abs() < 1e-6);
        assert!((k.delta - 4.4817).abs() < 1e-3);
        let margins = k.d_margins();
        assert!(margins.iter().all(|&d| d >= 0.0));
        assert!(margins.iter().any(|&d| d.abs() < 1e-12));
        assert!(k.eps <= k.eps0 && k.eps < k.delta);
    }

    #[test]
    fn tight_bound_is_d3_for_heavy_entropy() {
        // A very wide logistic has a very negative K0, making D3 the binding bound.
        let k = compute_constants(&point(FamilyKind::Logistic, 1e-3), 1).unwrap();
        let d = k.d_margins();
        assert!(d.iter().all(|&x| x >= 0.0));
        assert!(d.iter().any(|&x| x.abs() < 1e-12), "{d:?}");
    }

    #[test]
    fn mv_constants_p2() {
        let model = MultivariateMixtureModel::new(
            DensityGenerator::multivariate_normal(2).unwrap(),
            MultivariateMixing::point_mass(vec![0.0, 0.0]).unwrap(),
            ScaleMatrix::identity(2),
        )
        .unwrap();
        let k = compute_mv_constants_with(&model, 2, 200_000, 1).unwrap();
        assert!((k.a_star - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(k.b_star, 6.0);
        let want = (1.0f64 / 12.0).powi(12);
        assert!((k.eps0_star - want).abs() < 1e-12 * want);
        // bisection on the defining equation, in log space
        let (mut lo, mut hi) = (-200.0f64, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if k.eps0_equation(mid.exp()) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((lo.exp() - k.eps0_star).abs() < 1e-10 * k.eps0_star);
        let k0 = -(2.0 * PI).ln() - 1.0;
        assert!((k.k0_star - k0).abs() < 4.0 * k.k0_star_se);
        let delta = ((2.0 * PI).recip() / (k0 - 1.0).exp()).powi(2);
        assert!((k.delta_star - delta).abs() / delta < 0.01);
        assert!((delta - 54.60).abs() < 0.01);
        assert!(k.d_margins().iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn c3_passes_for_paper_constants() {
        for fam in [
            FamilyKind::Normal,
            FamilyKind::Logistic,
            FamilyKind::Gumbel,
            FamilyKind::StudentT(1),
            FamilyKind::StudentT(2),
            FamilyKind::StudentT(7),
        ] {
            let r = verify_c3(fam, &fam.constants(), &GridSpec::default());
            assert!(r.pass(), "{fam}: {r:?}");
            assert!(r.points >= 10_000);
        }
        for p in 1..=3 {
            let g = DensityGenerator::multivariate_normal(p).unwrap();
            assert!(verify_c3_generator(&g, &g.constants(), &GridSpec::default()).pass());
        }
    }

    #[test]
    fn c3_flags_wrong_exponent() {
        let mut c = FamilyKind::Normal.constants();
        c.beta = 3.0;
        let r = verify_c3(FamilyKind::Normal, &c, &GridSpec::default());
        assert!(!r.pass());
        assert!(r.location.abs() > 1.0);
        let ones = FamilyConstants { v0: 1.0, v1: 1.0, beta: 2.0 };
        assert!(verify_c3(FamilyKind::StudentT(1), &ones, &GridSpec::default()).pass());
    }

    #[test]
    fn c2_normal_example() {
        let r = verify_c2(&pair(FamilyKind::Normal)).unwrap();
        let want = 0.5 * (-0.5 * LN_2PI - 0.5) + 0.5 * (-0.5 * LN_2PI - 8.5);
        assert!((r.value - want).abs() < 1e-12);
        assert!((r.value + 5.4189).abs() < 1e-4);
    }

    #[test]
    fn c2_single_atom_reduces_to_cross_entropy() {
        for fam in [FamilyKind::Normal, FamilyKind::Gumbel, FamilyKind::Logistic] {
            let r = verify_c2(&point(fam, 1.0)).unwrap();
            let q = fam.cross_entropy_quadrature(0.0, &Quadrature::default()).unwrap();
            assert!((r.value - q).abs() < 1e-8);
        }
        let g = MixtureModel::new(
            FamilyKind::Gumbel,
            MixingDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(verify_c2(&g).unwrap().finite);
    }

    #[test]
    fn reports_pass_for_healthy_models() {
        for fam in [FamilyKind::Normal, FamilyKind::Logistic, FamilyKind::Gumbel, FamilyKind::StudentT(4)] {
            let r = certify(&pair(fam), 2).unwrap();
            assert!(r.all_pass(), "{fam}: {:?}", r.checks);
        }
        let model = MultivariateMixtureModel::new(
            DensityGenerator::multivariate_normal(2).unwrap(),
            MultivariateMixing::new(vec![vec![-3.0, -3.0], vec![3.0, 3.0]], vec![0.5, 0.5]).unwrap(),
            ScaleMatrix::identity(2),
        )
        .unwrap();
        let r = certify_mv(&model, 2, 100_000, 0).unwrap();
        assert!(r.all_pass(), "{:?}", r.checks);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"checks\""));
    }

    proptest! {
        #[test]
        fn lemma_constants_in_range(beta in 1.0001f64..50.0, p in 1usize..6, extra in 0.001f64..20.0) {
            let a = lemma_a(beta);
            let b = lemma_b(beta);
            prop_assert!(a > 0.5 && a < 1.0);
            prop_assert!(b > 2.0);
            let bs = p as f64 + extra;
            let a = mv_lemma_a(bs, p);
            let b = mv_lemma_b(bs, p);
            prop_assert!(a > 0.5 && a < 1.0);
            prop_assert!(b > 2.0);
        }
    }
}
