//! Mixture densities with a structural scale shared by all components,
//! their log-likelihoods, and simulation from them.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{DensityGenerator, FamilyKind, GeneratorKind};
use crate::mixing::{MixingDistribution, MultivariateMixing};
use crate::numeric::pairwise_sum;

/// Where a simulated dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(observations: Vec<f64>) -> Result<Self> {
        if let Some((i, x)) = observations.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(Error::invalid(format!("observation {i} is not finite ({x})")));
        }
        Ok(Self {
            observations,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.observations
    }

    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut observations = self.observations.clone();
        observations.extend_from_slice(&other.observations);
        Dataset {
            observations,
            provenance: None,
        }
    }

    /// `a·x + c` applied to every observation.
    pub fn affine(&self, a: f64, c: f64) -> Dataset {
        Dataset {
            observations: self.observations.iter().map(|x| a * x + c).collect(),
            provenance: None,
        }
    }
}

/// Rows of `p`-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvDataset {
    pub dim: usize,
    pub observations: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl MvDataset {
    pub fn new(observations: Vec<Vec<f64>>) -> Result<Self> {
        let dim = observations.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::invalid("multivariate dataset needs at least one non-empty row"));
        }
        for (i, row) in observations.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a non-finite value")));
            }
        }
        Ok(Self {
            dim,
            observations,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// `g(x; Ψ, σ) = Σ α_j σ⁻¹ f((x − μ_j)/σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct MixtureModel {
    pub family: FamilyKind,
    pub mixing: MixingDistribution,
    pub sigma: f64,
}

#[derive(Deserialize)]
struct RawModel {
    family: FamilyKind,
    mixing: MixingDistribution,
    sigma: f64,
}

impl TryFrom<RawModel> for MixtureModel {
    type Error = Error;
    fn try_from(r: RawModel) -> Result<Self> {
        MixtureModel::new(r.family, r.mixing, r.sigma)
    }
}

impl MixtureModel {
    pub fn new(family: FamilyKind, mixing: MixingDistribution, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive and finite, got {sigma}")));
        }
        Ok(Self { family, mixing, sigma })
    }

    pub fn order(&self) -> usize {
        self.mixing.len()
    }

    /// Stabilised `log g(x)`; `-inf` only if every component underflows.
    #[inline]
    pub fn log_density(&self, x: f64) -> f64 {
        log_mixture_density(self.family, self.mixing.support(), self.mixing.weights(), self.sigma, x)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.atoms_density(x)
    }

    fn atoms_density(&self, x: f64) -> f64 {
        self.mixing
            .atoms()
            .map(|(mu, w)| w * self.family.std_density((x - mu) / self.sigma) / self.sigma)
            .sum()
    }

    /// `ℓ_n(Ψ, σ) = Σ_i log g(X_i)`, summed pairwise in observation order.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("log-likelihood needs at least one observation"));
        }
        let mut terms = Vec::with_capacity(data.len());
        for (index, &x) in data.values().iter().enumerate() {
            let l = self.log_density(x);
            if l == f64::NEG_INFINITY {
                return Err(Error::ZeroDensity { index });
            }
            terms.push(l);
        }
        Ok(pairwise_sum(&terms))
    }

    /// `n (log v0 − log σ)`, an upper bound on `ℓ_n` for any data of size `n`.
    pub fn likelihood_upper_bound(&self, n: usize) -> f64 {
        n as f64 * (self.family.constants().v0.ln() - self.sigma.ln())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let cum = cumulative(self.mixing.weights());
        (0..n)
            .map(|_| {
                let j = pick(&cum, rng.random::<f64>());
                self.mixing.support()[j] + self.sigma * self.family.sample_std(rng)
            })
            .collect()
    }

    /// Draws `n` observations with a fresh `ChaCha8` stream seeded by `seed`.
    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("sample size must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Dataset {
            observations: self.sample(n, &mut rng),
            provenance: Some(Provenance { seed, model_id: None }),
        })
    }

    /// The model for `a·X + c`: atoms `a·μ_j + c`, scale `a·σ`.
    pub fn affine(&self, a: f64, c: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::invalid("affine scale must be positive"));
        }
        Self::new(self.family, self.mixing.relocate(a, c), a * self.sigma)
    }
}

#[inline]
pub(crate) fn log_mixture_density(family: FamilyKind, locs: &[f64], weights: &[f64], sigma: f64, x: f64) -> f64 {
    let ln_sigma = sigma.ln();
    let mut max = f64::NEG_INFINITY;
    let mut buf = [0.0f64; 16];
    let m = locs.len();
    let mut heap;
    let terms: &mut [f64] = if m <= buf.len() {
        &mut buf[..m]
    } else {
        heap = vec![0.0; m];
        &mut heap
    };
    for j in 0..m {
        let t = weights[j].ln() + family.log_std_density((x - locs[j]) / sigma) - ln_sigma;
        terms[j] = t;
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    let s: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + s.ln()
}

pub(crate) fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

pub(crate) fn pick(cum: &[f64], u: f64) -> usize {
    let target = u * cum[cum.len() - 1];
    cum.iter().position(|&c| target < c).unwrap_or(cum.len() - 1)
}

/// Returns `(ℓ_n(Ψ, σ; x), ℓ_n(Ψ_{a,c}, aσ; a·x + c) + n log a)`, equal up
/// to rounding for every location-scale family.
pub fn affine_transform_loglik_identity(model: &MixtureModel, data: &Dataset, a: f64, c: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) {
        return Err(Error::invalid(format!("affine scale must be positive, got {a}")));
    }
    let lhs = model.log_likelihood(data)?;
    let moved = model.affine(a, c)?;
    let rhs = moved.log_likelihood(&data.affine(a, c))? + data.len() as f64 * a.ln();
    Ok((lhs, rhs))
}

/// Symmetric positive definite scale matrix with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct ScaleMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl PartialEq for ScaleMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl ScaleMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if p == 0 || matrix.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: matrix.ncols(),
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("scale matrix has non-finite entries"));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        for i in 0..p {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::invalid("scale matrix is not symmetric"));
                }
            }
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let log_det = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { matrix, chol, log_det })
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity is positive definite")
    }

    /// Row-major entries.
    pub fn from_row_major(p: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(p, p, entries))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let p = self.dim();
        (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|ij| self.matrix[ij]).collect()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)` by a triangular solve.
    pub fn quadratic_form(&self, diff: &[f64]) -> f64 {
        let mut v = DVector::from_column_slice(diff);
        let l = self.chol.l_dirty();
        // forward substitution on the lower factor
        let p = v.len();
        for i in 0..p {
            let mut s = v[i];
            for k in 0..i {
                s -= l[(i, k)] * v[k];
            }
            v[i] = s / l[(i, i)];
        }
        v.norm_squared()
    }
}

/// `g(x; Ψ, Σ) = Σ α_j |Σ|^{-1/2} f0((x − μ_j)ᵀ Σ⁻¹ (x − μ_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMvModel", into = "RawMvModel")]
pub struct MultivariateMixtureModel {
    pub generator: DensityGenerator,
    pub mixing: MultivariateMixing,
    pub sigma: ScaleMatrix,
}

/// JSON form: the scale matrix is stored row-major under `"Sigma"`.
#[derive(Serialize, Deserialize)]
struct RawMvModel {
    generator: GeneratorKind,
    mixing: MultivariateMixing,
    #[serde(rename = "Sigma")]
    sigma: Vec<f64>,
}

impl TryFrom<RawMvModel> for MultivariateMixtureModel {
    type Error = Error;
    fn try_from(r: RawMvModel) -> Result<Self> {
        let p = r.mixing.dim();
        let generator = match r.generator {
            GeneratorKind::MultivariateNormal => DensityGenerator::multivariate_normal(p)?,
        };
        MultivariateMixtureModel::new(generator, r.mixing, ScaleMatrix::from_row_major(p, &r.sigma)?)
    }
}

impl From<MultivariateMixtureModel> for RawMvModel {
    fn from(m: MultivariateMixtureModel) -> Self {
        RawMvModel {
            generator: m.generator.kind,
            sigma: m.sigma.to_row_major(),
            mixing: m.mixing,
        }
    }
}

impl MultivariateMixtureModel {
    pub fn new(generator: DensityGenerator, mixing: MultivariateMixing, sigma: ScaleMatrix) -> Result<Self> {
        if mixing.dim() != generator.dim {
            return Err(Error::DimensionMismatch {
                expected: generator.dim,
                found: mixing.dim(),
            });
        }
        if sigma.dim() != generator.dim {
            return Err(Error::DimensionMismatch {
                expected: generator.dim,
                found: sigma.dim(),
            });
        }
        Ok(Self {
            generator,
            mixing,
            sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.generator.dim
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let p = self.dim();
        let mut diff = vec![0.0; p];
        let mut terms = Vec::with_capacity(self.mixing.len());
        for (mu, w) in self.mixing.support().iter().zip(self.mixing.weights()) {
            for l in 0..p {
                diff[l] = x[l] - mu[l];
            }
            let q = self.sigma.quadratic_form(&diff);
            terms.push(w.ln() - 0.5 * self.sigma.log_det() + self.generator.log_f0(q));
        }
        crate::numeric::log_sum_exp(&terms)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    pub fn log_likelihood(&self, data: &MvDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("log-likelihood needs at least one observation"));
        }
        if data.dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.dim,
            });
        }
        let mut terms = Vec::with_capacity(data.len());
        for (index, x) in data.observations.iter().enumerate() {
            let l = self.log_density(x);
            if l == f64::NEG_INFINITY {
                return Err(Error::ZeroDensity { index });
            }
            terms.push(l);
        }
        Ok(pairwise_sum(&terms))
    }

    /// `n (log v0 − ½ log|Σ|)`.
    pub fn likelihood_upper_bound(&self, n: usize) -> f64 {
        n as f64 * (self.generator.constants().v0.ln() - 0.5 * self.sigma.log_det())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let p = self.dim();
        let cum = cumulative(self.mixing.weights());
        let l = self.sigma.lower();
        (0..n)
            .map(|_| {
                let j = pick(&cum, rng.random::<f64>());
                let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                let mu = &self.mixing.support()[j];
                (0..p)
                    .map(|i| mu[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<MvDataset> {
        if n == 0 {
            return Err(Error::invalid("sample size must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(MvDataset {
            dim: self.dim(),
            observations: self.sample(n, &mut rng),
            provenance: Some(Provenance { seed, model_id: None }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::Quadrature;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn normal_pair() -> MixtureModel {
        MixtureModel::new(
            FamilyKind::Normal,
            MixingDistribution::new(vec![-2.0, 2.0], vec![0.5, 0.5]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn single_component_is_the_family_density() {
        for fam in [FamilyKind::Normal, FamilyKind::Gumbel, FamilyKind::StudentT(3)] {
            let m = MixtureModel::new(fam, MixingDistribution::point_mass(0.4), 1.3).unwrap();
            for x in [-2.0, 0.0, 0.4, 3.5] {
                assert_relative_eq!(m.density(x), fam.density(x, 0.4, 1.3).unwrap(), max_relative = 1e-14);
                assert_relative_eq!(m.log_density(x).exp(), m.density(x), max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn two_component_normal_at_origin() {
        let phi2 = (-2.0f64).exp() / (2.0 * PI).sqrt();
        assert_relative_eq!(normal_pair().density(0.0), phi2, epsilon = 1e-15);
        assert_relative_eq!(phi2, 0.053_990_97, epsilon = 1e-8);
    }

    #[test]
    fn densities_integrate_to_one() {
        let q = Quadrature::with_tolerance(1e-11);
        for fam in [FamilyKind::Normal, FamilyKind::Logistic, FamilyKind::Gumbel, FamilyKind::StudentT(2)] {
            let m = MixtureModel::new(
                fam,
                MixingDistribution::new(vec![-3.0, 0.5, 4.0], vec![0.2, 0.5, 0.3]).unwrap(),
                0.8,
            )
            .unwrap();
            let r = q.integrate_real_line(|x| m.density(x), m.mixing.support(), 0.8).unwrap();
            assert!((r.value - 1.0).abs() < 1e-8, "{fam}: {}", r.value);
        }
    }

    #[test]
    fn log_likelihood_basics() {
        let m = MixtureModel::new(FamilyKind::Normal, MixingDistribution::point_mass(1.5), 1.0).unwrap();
        let d = Dataset::new(vec![1.5]).unwrap();
        assert_relative_eq!(m.log_likelihood(&d).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-14);
        let d1 = Dataset::new(vec![0.1, 2.0, -1.0]).unwrap();
        let d2 = Dataset::new(vec![3.0, 0.7]).unwrap();
        let whole = m.log_likelihood(&d1.concat(&d2)).unwrap();
        assert_relative_eq!(whole, m.log_likelihood(&d1).unwrap() + m.log_likelihood(&d2).unwrap(), epsilon = 1e-12);
        assert!(m.log_likelihood(&Dataset::new(vec![]).unwrap()).is_err());
    }

    #[test]
    fn underflow_is_flagged() {
        let m = MixtureModel::new(FamilyKind::Gumbel, MixingDistribution::point_mass(0.0), 1.0).unwrap();
        let d = Dataset::new(vec![0.0, -800.0]).unwrap();
        assert!(matches!(m.log_likelihood(&d), Err(Error::ZeroDensity { index: 1 })));
        // far-apart normal atoms: the naive sum underflows but log-sum-exp does not
        let n = normal_pair();
        assert!(n.density(60.0) == 0.0);
        assert!(n.log_density(60.0).is_finite());
    }

    #[test]
    fn stable_matches_naive_where_representable() {
        let m = normal_pair();
        for x in [-6.0, -1.0, 0.0, 0.3, 5.0] {
            assert_relative_eq!(m.log_density(x), m.density(x).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_weights_sample_single_component() {
        let m = MixtureModel::new(
            FamilyKind::Normal,
            MixingDistribution::new(vec![-100.0, 100.0], vec![1.0, 0.0]).unwrap(),
            1.0,
        )
        .unwrap();
        let d = m.sample_dataset(1000, 4).unwrap();
        assert!(d.values().iter().all(|x| *x < 0.0));
    }

    #[test]
    fn sample_moments() {
        let d = normal_pair().sample_dataset(1_000_000, 77).unwrap();
        let mean = crate::numeric::mean(d.values());
        let var = crate::numeric::variance(d.values());
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 5.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = normal_pair().sample_dataset(100, 9).unwrap();
        let b = normal_pair().sample_dataset(100, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance.as_ref().unwrap().seed, 9);
    }

    #[test]
    fn affine_identity_examples() {
        let m = normal_pair();
        let d = m.sample_dataset(100, 3).unwrap();
        let (l, r) = affine_transform_loglik_identity(&m, &d, 1.0, 0.0).unwrap();
        assert_eq!(l, r);
        let (l, r) = affine_transform_loglik_identity(&m, &d, 2.0, 3.0).unwrap();
        assert!((l - r).abs() < 1e-10);
        let g = MixtureModel::new(FamilyKind::Gumbel, m.mixing.clone(), 1.2).unwrap();
        let dg = g.sample_dataset(100, 5).unwrap();
        let (l, r) = affine_transform_loglik_identity(&g, &dg, 0.5, -1.0).unwrap();
        assert!((l - r).abs() < 1e-10);
        assert!(affine_transform_loglik_identity(&m, &d, 0.0, 1.0).is_err());
    }

    #[test]
    fn permuted_atoms_give_identical_likelihood() {
        let a = MixtureModel::new(
            FamilyKind::Logistic,
            MixingDistribution::new(vec![1.0, -2.0, 0.5], vec![0.2, 0.3, 0.5]).unwrap(),
            0.9,
        )
        .unwrap();
        let b = MixtureModel::new(
            FamilyKind::Logistic,
            MixingDistribution::new(vec![0.5, 1.0, -2.0], vec![0.5, 0.2, 0.3]).unwrap(),
            0.9,
        )
        .unwrap();
        let d = a.sample_dataset(50, 1).unwrap();
        assert_eq!(a.log_likelihood(&d).unwrap(), b.log_likelihood(&d).unwrap());
    }

    fn mvn(mu: Vec<Vec<f64>>, w: Vec<f64>, s: &[f64]) -> MultivariateMixtureModel {
        let p = mu[0].len();
        MultivariateMixtureModel::new(
            DensityGenerator::multivariate_normal(p).unwrap(),
            MultivariateMixing::new(mu, w).unwrap(),
            ScaleMatrix::from_row_major(p, s).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn mv_density_at_center() {
        let s = [2.0, 0.3, 0.3, 1.0];
        let m = mvn(vec![vec![1.0, -1.0]], vec![1.0], &s);
        let det: f64 = 2.0 - 0.09;
        assert_relative_eq!(m.density(&[1.0, -1.0]), 1.0 / (2.0 * PI * det.sqrt()), max_relative = 1e-14);
    }

    #[test]
    fn rejects_bad_scale_matrices() {
        assert!(matches!(
            ScaleMatrix::from_row_major(2, &[1.0, 2.0, 2.0, 1.0]),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(ScaleMatrix::from_row_major(2, &[1.0, 0.5, 0.0, 1.0]).is_err());
        assert!(ScaleMatrix::from_row_major(2, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn mv_density_integrates_to_one_in_the_plane() {
        let m = mvn(vec![vec![-1.0, 0.0], vec![1.0, 0.5]], vec![0.4, 0.6], &[1.0, 0.3, 0.3, 0.8]);
        let q = Quadrature::with_tolerance(1e-9);
        let inner = |x: f64| {
            q.integrate_real_line(|y| m.density(&[x, y]), &[0.0], 1.0)
                .map(|r| r.value)
                .unwrap_or(f64::NAN)
        };
        let outer = Quadrature::with_tolerance(1e-7)
            .integrate_real_line(inner, &[-1.0, 1.0], 1.0)
            .unwrap();
        assert!((outer.value - 1.0).abs() < 1e-5, "{}", outer.value);
    }

    #[test]
    fn mv_sample_covariance() {
        let s = [1.5, -0.4, -0.4, 0.7];
        let m = mvn(vec![vec![2.0, -1.0]], vec![1.0], &s);
        let d = m.sample_dataset(1_000_000, 21).unwrap();
        let n = d.len() as f64;
        let mut mean = [0.0; 2];
        for x in &d.observations {
            mean[0] += x[0] / n;
            mean[1] += x[1] / n;
        }
        let mut cov = [0.0; 4];
        for x in &d.observations {
            let e = [x[0] - mean[0], x[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[2 * i + j] += e[i] * e[j] / n;
                }
            }
        }
        let err: f64 = cov.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = s.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 0.01, "relative Frobenius error {}", err / norm);
    }

    #[test]
    fn mv_likelihood_bound() {
        let m = mvn(vec![vec![0.0, 0.0], vec![3.0, 3.0]], vec![0.5, 0.5], &[0.5, 0.1, 0.1, 0.4]);
        let d = m.sample_dataset(500, 2).unwrap();
        assert!(m.log_likelihood(&d).unwrap() <= m.likelihood_upper_bound(d.len()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn family() -> impl Strategy<Value = FamilyKind> {
            prop_oneof![
                Just(FamilyKind::Normal),
                Just(FamilyKind::Logistic),
                Just(FamilyKind::Gumbel),
                (1u32..8).prop_map(FamilyKind::StudentT),
            ]
        }

        fn model() -> impl Strategy<Value = MixtureModel> {
            (family(), prop::collection::vec((-5.0f64..5.0, 0.05f64..1.0), 1..5), 0.05f64..5.0).prop_map(
                |(fam, atoms, sigma)| {
                    let (s, w): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
                    MixtureModel::new(fam, MixingDistribution::from_unnormalized(s, w).unwrap(), sigma).unwrap()
                },
            )
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn likelihood_never_exceeds_bound(
                m in model(),
                data in prop::collection::vec(-20.0f64..20.0, 1..40),
            ) {
                let d = Dataset::new(data).unwrap();
                if let Ok(l) = m.log_likelihood(&d) {
                    prop_assert!(l <= m.likelihood_upper_bound(d.len()) + 1e-12);
                }
            }
        }

        proptest! {
            #[test]
            fn affine_identity_holds(
                m in model(),
                data in prop::collection::vec(-10.0f64..10.0, 1..60),
                a in 0.1f64..10.0,
                c in -10.0f64..10.0,
            ) {
                let d = Dataset::new(data).unwrap();
                let (l, r) = affine_transform_loglik_identity(&m, &d, a, c).unwrap();
                prop_assert!((l - r).abs() <= 1e-10 * l.abs().max(1.0));
            }
        }
    }
}
