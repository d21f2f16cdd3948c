//! Component families: standard densities, location-scale densities,
//! samplers, and tail-envelope constants.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ln_gamma_half, EULER_GAMMA, LN_2PI};
use crate::quadrature::Quadrature;

const T_TABLE_MAX: u32 = 256;

/// A univariate location-scale component family.
///
/// Serialized as `"normal"`, `"logistic"`, `"gumbel"` or `{"student_t": ν}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "FamilyRepr")]
pub enum FamilyKind {
    Normal,
    Logistic,
    Gumbel,
    StudentT(u32),
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyRepr {
    Normal,
    Logistic,
    Gumbel,
    StudentT(u32),
}

impl TryFrom<FamilyRepr> for FamilyKind {
    type Error = String;

    fn try_from(r: FamilyRepr) -> std::result::Result<Self, String> {
        Ok(match r {
            FamilyRepr::Normal => FamilyKind::Normal,
            FamilyRepr::Logistic => FamilyKind::Logistic,
            FamilyRepr::Gumbel => FamilyKind::Gumbel,
            FamilyRepr::StudentT(0) => return Err("student_t degrees of freedom must be >= 1".into()),
            FamilyRepr::StudentT(nu) => FamilyKind::StudentT(nu),
        })
    }
}

/// Envelope constants `(v0, v1, beta)` with `f(z) <= min{v0, v1 |z|^-beta}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyConstants {
    pub v0: f64,
    pub v1: f64,
    pub beta: f64,
}

impl FamilyConstants {
    pub fn envelope(&self, z: f64) -> f64 {
        let tail = self.v1 * z.abs().powf(-self.beta);
        self.v0.min(tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossEntropyKind {
    Exact,
    LowerBound,
    Quadrature,
}

/// Value of `∫ log f(x; μ, 1) f(x; 0, 1) dx`, or a bound on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropy {
    pub value: f64,
    pub kind: CrossEntropyKind,
}

impl FamilyKind {
    pub fn student_t(nu: u32) -> Result<Self> {
        if nu == 0 {
            return Err(Error::invalid("student_t degrees of freedom must be >= 1"));
        }
        Ok(FamilyKind::StudentT(nu))
    }

    pub const ALL_FIXED: [FamilyKind; 3] = [FamilyKind::Normal, FamilyKind::Logistic, FamilyKind::Gumbel];

    /// `log C_ν` for the Student-t normalising constant.
    fn ln_t_const(nu: u32) -> f64 {
        static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
        let table = TABLE.get_or_init(|| (0..=T_TABLE_MAX).map(Self::ln_t_const_direct).collect());
        match table.get(nu as usize) {
            Some(&c) if nu > 0 => c,
            _ => Self::ln_t_const_direct(nu),
        }
    }

    fn ln_t_const_direct(nu: u32) -> f64 {
        if nu == 0 {
            return f64::NAN;
        }
        ln_gamma_half(nu + 1) - ln_gamma_half(nu) - 0.5 * (nu as f64 * PI).ln()
    }

    /// `log f(z; 0, 1)`, finite wherever the density is representable.
    #[inline]
    pub fn log_std_density(&self, z: f64) -> f64 {
        match *self {
            FamilyKind::Normal => -0.5 * z * z - 0.5 * LN_2PI,
            FamilyKind::Logistic => {
                let a = z.abs();
                -a - 2.0 * (-a).exp().ln_1p()
            }
            FamilyKind::Gumbel => -z - (-z).exp(),
            FamilyKind::StudentT(nu) => {
                let c = Self::ln_t_const(nu);
                let nu = nu as f64;
                c - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
            }
        }
    }

    #[inline]
    pub fn std_density(&self, z: f64) -> f64 {
        self.log_std_density(z).exp()
    }

    /// `log f(x; μ, σ) = log f((x − μ)/σ; 0, 1) − log σ`; `sigma` is assumed positive.
    #[inline]
    pub fn log_density_unchecked(&self, x: f64, mu: f64, sigma: f64) -> f64 {
        self.log_std_density((x - mu) / sigma) - sigma.ln()
    }

    pub fn density(&self, x: f64, mu: f64, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(self.std_density((x - mu) / sigma) / sigma)
    }

    pub fn log_density(&self, x: f64, mu: f64, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(self.log_density_unchecked(x, mu, sigma))
    }

    /// Inverse CDF of the standard law, where it has a closed form.
    pub fn std_quantile(&self, u: f64) -> Option<f64> {
        match self {
            FamilyKind::Logistic => Some((u / (1.0 - u)).ln()),
            FamilyKind::Gumbel => Some(-(-u.ln()).ln()),
            FamilyKind::StudentT(1) => Some((PI * (u - 0.5)).tan()),
            _ => None,
        }
    }

    pub fn sample_std<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            FamilyKind::Normal => rng.sample(StandardNormal),
            FamilyKind::Logistic | FamilyKind::Gumbel => {
                let u: f64 = rng.sample(Open01);
                self.std_quantile(u).expect("closed-form quantile")
            }
            FamilyKind::StudentT(nu) => {
                let z: f64 = rng.sample(StandardNormal);
                let chi2: f64 = (0..nu)
                    .map(|_| {
                        let g: f64 = rng.sample(StandardNormal);
                        g * g
                    })
                    .sum();
                z / (chi2 / nu as f64).sqrt()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, mu: f64, sigma: f64, rng: &mut R) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(mu + sigma * self.sample_std(rng))
    }

    pub fn constants(&self) -> FamilyConstants {
        match *self {
            FamilyKind::Normal => {
                let v = (2.0 * PI).powf(-0.5);
                FamilyConstants { v0: v, v1: v, beta: 2.0 }
            }
            FamilyKind::Logistic | FamilyKind::Gumbel => FamilyConstants {
                v0: 1.0,
                v1: 1.0,
                beta: 2.0,
            },
            FamilyKind::StudentT(nu) => FamilyConstants {
                v0: 1.0,
                v1: nu as f64,
                beta: 2.0,
            },
        }
    }

    /// Closed-form cross entropy where one exists; the analytic lower bound
    /// for the logistic; quadrature for Student-t.
    pub fn cross_entropy_closed_form(&self, mu: f64) -> Result<CrossEntropy> {
        Ok(match self {
            FamilyKind::Normal => CrossEntropy {
                value: -0.5 * LN_2PI - 0.5 * (mu * mu + 1.0),
                kind: CrossEntropyKind::Exact,
            },
            FamilyKind::Gumbel => CrossEntropy {
                value: mu - EULER_GAMMA - mu.exp(),
                kind: CrossEntropyKind::Exact,
            },
            FamilyKind::Logistic => CrossEntropy {
                value: -mu - 2.0 * 2f64.ln() - (1.0 + mu * mu + PI * PI / 3.0),
                kind: CrossEntropyKind::LowerBound,
            },
            FamilyKind::StudentT(_) => CrossEntropy {
                value: self.cross_entropy_quadrature(mu, &Quadrature::default())?,
                kind: CrossEntropyKind::Quadrature,
            },
        })
    }

    /// `∫ log f(x; μ, 1) f(x; 0, 1) dx` by adaptive quadrature.
    pub fn cross_entropy_quadrature(&self, mu: f64, quad: &Quadrature) -> Result<f64> {
        let integrand = |x: f64| {
            let f = self.std_density(x);
            if f == 0.0 {
                return 0.0;
            }
            let lf = self.log_std_density(x - mu);
            if lf == f64::NEG_INFINITY {
                return 0.0;
            }
            lf * f
        };
        Ok(quad.integrate_real_line(integrand, &[0.0, mu], 1.0)?.value)
    }

    pub fn name(&self) -> String {
        match self {
            FamilyKind::Normal => "normal".into(),
            FamilyKind::Logistic => "logistic".into(),
            FamilyKind::Gumbel => "gumbel".into(),
            FamilyKind::StudentT(nu) => format!("student_t:{nu}"),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    /// Accepts `normal`, `logistic`, `gumbel`, `student_t:ν` (or `t:ν`).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "normal" => Ok(FamilyKind::Normal),
            "logistic" => Ok(FamilyKind::Logistic),
            "gumbel" => Ok(FamilyKind::Gumbel),
            other => {
                let nu = other
                    .strip_prefix("student_t:")
                    .or_else(|| other.strip_prefix("student-t:"))
                    .or_else(|| other.strip_prefix("t:"))
                    .ok_or_else(|| Error::invalid(format!("unknown family '{s}'")))?;
                let nu: u32 = nu
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad degrees of freedom in '{s}'")))?;
                FamilyKind::student_t(nu)
            }
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("scale must be positive and finite, got {sigma}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    MultivariateNormal,
}

/// Radial profile `f0` of an elliptical density `|Σ|^{-1/2} f0((x−μ)ᵀΣ⁻¹(x−μ))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityGenerator {
    pub kind: GeneratorKind,
    pub dim: usize,
}

impl DensityGenerator {
    pub fn multivariate_normal(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        Ok(Self {
            kind: GeneratorKind::MultivariateNormal,
            dim,
        })
    }

    #[inline]
    pub fn log_f0(&self, q: f64) -> f64 {
        match self.kind {
            GeneratorKind::MultivariateNormal => -0.5 * self.dim as f64 * LN_2PI - 0.5 * q,
        }
    }

    pub fn f0(&self, q: f64) -> f64 {
        self.log_f0(q).exp()
    }

    pub fn constants(&self) -> FamilyConstants {
        match self.kind {
            GeneratorKind::MultivariateNormal => {
                let p = self.dim as f64;
                let v0 = (2.0 * PI).powf(-p / 2.0);
                FamilyConstants {
                    v0,
                    v1: v0 * (p + 1.0).powf((p + 1.0) / 2.0),
                    beta: p + 1.0,
                }
            }
        }
    }

    /// Generator envelope `min{v0, v1 q^{-β/2}}` for `q >= 0`.
    pub fn envelope(c: &FamilyConstants, q: f64) -> f64 {
        c.v0.min(c.v1 * q.powf(-c.beta / 2.0))
    }
}

/// Parses a generator name; only `multivariate_normal` (alias `mvn`) exists.
pub fn generator_constants(name: &str, dim: usize) -> Result<FamilyConstants> {
    match name {
        "multivariate_normal" | "mvn" => Ok(DensityGenerator::multivariate_normal(dim)?.constants()),
        other => Err(Error::UnsupportedGenerator(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ALL: [FamilyKind; 6] = [
        FamilyKind::Normal,
        FamilyKind::Logistic,
        FamilyKind::Gumbel,
        FamilyKind::StudentT(1),
        FamilyKind::StudentT(2),
        FamilyKind::StudentT(5),
    ];

    #[test]
    fn standard_densities_at_zero() {
        assert_relative_eq!(FamilyKind::Normal.std_density(0.0), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(FamilyKind::Logistic.std_density(0.0), 0.25, epsilon = 1e-16);
        assert_relative_eq!(FamilyKind::Gumbel.std_density(0.0), (-1f64).exp(), epsilon = 1e-16);
        assert_relative_eq!(FamilyKind::StudentT(1).std_density(0.0), 1.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn t_constant_matches_direct_gamma_values() {
        // ν = 3: Γ(2) / (√(3π) Γ(3/2)) = 2 / (π√3)
        let c3 = FamilyKind::ln_t_const(3).exp();
        assert_relative_eq!(c3, 2.0 / (PI * 3f64.sqrt()), epsilon = 1e-15);
        // ν = 2: Γ(3/2) / (√(2π) Γ(1)) = 1 / (2√2)
        assert_relative_eq!(FamilyKind::ln_t_const(2).exp(), 1.0 / (2.0 * 2f64.sqrt()), epsilon = 1e-15);
    }

    #[test]
    fn location_scale_evaluations() {
        let s = 1.7;
        assert_relative_eq!(
            FamilyKind::Normal.density(0.3, 0.3, s).unwrap(),
            (2.0 * PI * s * s).powf(-0.5),
            epsilon = 1e-15
        );
        assert_relative_eq!(FamilyKind::Gumbel.density(2.0, 2.0, 1.0).unwrap(), (-1f64).exp(), epsilon = 1e-16);
        let e = 1f64.exp();
        let direct = 0.5 * e / ((1.0 + e) * (1.0 + e));
        assert_relative_eq!(FamilyKind::Logistic.density(3.0, 1.0, 2.0).unwrap(), direct, epsilon = 1e-15);
        assert_relative_eq!(direct, 0.098_305_97, epsilon = 1e-8);
    }

    #[test]
    fn rejects_nonpositive_scale() {
        assert!(FamilyKind::Normal.density(0.0, 0.0, 0.0).is_err());
        assert!(FamilyKind::Gumbel.density(0.0, 0.0, -1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(FamilyKind::Logistic.sample(0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn quantiles_at_median() {
        assert_relative_eq!(FamilyKind::Gumbel.std_quantile(0.5).unwrap(), -(2f64.ln()).ln(), epsilon = 1e-15);
        assert_relative_eq!(FamilyKind::Gumbel.std_quantile(0.5).unwrap(), 0.366_512_920_581_664_3, epsilon = 1e-15);
        assert_eq!(FamilyKind::Logistic.std_quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn normal_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(20240901);
        let n = 1_000_000;
        let s: f64 = (0..n)
            .map(|_| FamilyKind::Normal.sample(3.0, 2.0, &mut rng).unwrap())
            .sum();
        assert!((s / n as f64 - 3.0).abs() < 0.01);
    }

    #[test]
    fn sampler_medians_match_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for fam in ALL {
            let mut xs: Vec<f64> = (0..200_001).map(|_| fam.sample_std(&mut rng)).collect();
            xs.sort_by(f64::total_cmp);
            let med = xs[100_000];
            let want = match fam {
                FamilyKind::Gumbel => -(2f64.ln()).ln(),
                _ => 0.0,
            };
            assert!((med - want).abs() < 0.02, "{fam}: median {med}");
        }
    }

    #[test]
    fn paper_constants() {
        let c = FamilyKind::Normal.constants();
        assert_relative_eq!(c.v0, 0.398_942_3, epsilon = 1e-7);
        assert_eq!(c.v0, c.v1);
        assert_eq!(c.beta, 2.0);
        assert_eq!(
            FamilyKind::StudentT(5).constants(),
            FamilyConstants { v0: 1.0, v1: 5.0, beta: 2.0 }
        );
        assert_eq!(
            FamilyKind::Logistic.constants(),
            FamilyConstants { v0: 1.0, v1: 1.0, beta: 2.0 }
        );
    }

    #[test]
    fn generator_constant_values() {
        let c2 = DensityGenerator::multivariate_normal(2).unwrap().constants();
        assert_relative_eq!(c2.v0, 0.159_154_9, epsilon = 1e-7);
        assert_relative_eq!(c2.v1, 0.826_993_3, epsilon = 1e-7);
        assert_eq!(c2.beta, 3.0);
        let c1 = DensityGenerator::multivariate_normal(1).unwrap().constants();
        assert_relative_eq!(c1.v1, 0.797_884_6, epsilon = 1e-7);
        assert_eq!(c1.beta, 2.0);
        assert!(matches!(generator_constants("student", 2), Err(Error::UnsupportedGenerator(_))));
    }

    #[test]
    fn generator_tail_on_grid() {
        let g = DensityGenerator::multivariate_normal(2).unwrap();
        let c = g.constants();
        for i in 0..=10_000 {
            let q = 10f64.powf(-3.0 + 7.0 * i as f64 / 10_000.0);
            assert!(g.f0(q) <= c.v1 * q.powf(-c.beta / 2.0));
        }
    }

    #[test]
    fn cross_entropy_values() {
        let n = FamilyKind::Normal.cross_entropy_closed_form(0.0).unwrap();
        assert_eq!(n.kind, CrossEntropyKind::Exact);
        assert_relative_eq!(n.value, -1.418_938_5, epsilon = 1e-7);
        let g = FamilyKind::Gumbel.cross_entropy_closed_form(0.0).unwrap();
        assert_relative_eq!(g.value, -1.577_215_7, epsilon = 1e-7);
        let l = FamilyKind::Logistic.cross_entropy_closed_form(0.0).unwrap();
        assert_eq!(l.kind, CrossEntropyKind::LowerBound);
        assert_relative_eq!(l.value, -5.676_162_494_816, epsilon = 1e-9);
        let lq = FamilyKind::Logistic
            .cross_entropy_quadrature(0.0, &Quadrature::default())
            .unwrap();
        assert!((lq + 2.0).abs() < 1e-6);
        let t = FamilyKind::StudentT(3).cross_entropy_closed_form(1.0).unwrap();
        assert_eq!(t.kind, CrossEntropyKind::Quadrature);
        assert!(t.value.is_finite());
    }

    #[test]
    fn densities_integrate_to_one() {
        let q = Quadrature::with_tolerance(1e-11);
        for fam in ALL {
            let r = q
                .integrate_real_line(|x| fam.density(x, 0.7, 1.3).unwrap(), &[0.7], 1.3)
                .unwrap();
            assert!((r.value - 1.0).abs() < 1e-8, "{fam}: {}", r.value);
        }
    }

    #[test]
    fn envelope_holds_on_log_grid() {
        for fam in ALL {
            let c = fam.constants();
            for i in 0..=10_000 {
                let a = 10f64.powf(-6.0 + 12.0 * i as f64 / 10_000.0);
                for z in [a, -a] {
                    assert!(fam.std_density(z) <= c.envelope(z), "{fam} at {z}");
                }
            }
        }
    }

    #[test]
    fn continuity_with_small_step() {
        // |f'| is bounded by 1 for every family here, so a step of h moves f by at most h.
        let h = 1e-6;
        for fam in ALL {
            for i in -200..=200 {
                let z = i as f64 * 0.05;
                let d = (fam.std_density(z + h) - fam.std_density(z)).abs();
                assert!(d <= h, "{fam} at {z}: {d}");
            }
        }
    }

    #[test]
    fn json_representation() {
        assert_eq!(serde_json::to_string(&FamilyKind::Normal).unwrap(), "\"normal\"");
        assert_eq!(serde_json::to_string(&FamilyKind::StudentT(4)).unwrap(), "{\"student_t\":4}");
        let t: FamilyKind = serde_json::from_str("{\"student_t\":7}").unwrap();
        assert_eq!(t, FamilyKind::StudentT(7));
        assert!(serde_json::from_str::<FamilyKind>("{\"student_t\":0}").is_err());
        assert_eq!("t:3".parse::<FamilyKind>().unwrap(), FamilyKind::StudentT(3));
        assert!("cauchy".parse::<FamilyKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn family() -> impl Strategy<Value = FamilyKind> {
            prop_oneof![
                Just(FamilyKind::Normal),
                Just(FamilyKind::Logistic),
                Just(FamilyKind::Gumbel),
                (1u32..10).prop_map(FamilyKind::StudentT),
            ]
        }

        proptest! {
            #[test]
            fn location_scale_identity(
                fam in family(),
                x in -5.0f64..5.0,
                mu in -3.0f64..3.0,
                sigma in 0.1f64..4.0,
                a in 0.1f64..10.0,
                c in -10.0f64..10.0,
            ) {
                let lhs = fam.density(a * x + c, a * mu + c, a * sigma).unwrap();
                let rhs = fam.density(x, mu, sigma).unwrap() / a;
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs + 1e-300);
            }
        }
    }
}
