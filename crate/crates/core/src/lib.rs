//! Maximum likelihood for finite location-scale mixtures with one
//! structural scale shared by every component, the exponential-weighted
//! distance between mixing distributions, numerical certificates for the
//! constants in the consistency argument, and a Monte Carlo harness that
//! checks consistency empirically.

pub mod certify;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod families;
pub mod io;
pub mod mixing;
pub mod mixture;
pub mod numeric;
pub mod optimize;
pub mod quadrature;

pub use error::{Error, Result};
pub use estimate::{fit, mv_fit, FitConfig, FitResult, MvFitResult};
pub use families::{DensityGenerator, FamilyConstants, FamilyKind};
pub use mixing::{distance, ExtendedMixing, MixingDistribution, MultivariateMixing};
pub use mixture::{Dataset, MixtureModel, MultivariateMixtureModel, MvDataset, ScaleMatrix};
