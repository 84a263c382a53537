//! Gaussian-copula covariate generator: an AR(1) latent vector mapped to
//! uniform numeric margins or to binary Y/N categories by thresholding at 0.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateColumn, Covariates};
use crate::error::{Error, Result};
use crate::stats::normal_cdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateModel {
    pub p: usize,
    /// 0-based positions of the categorical covariates.
    pub categorical: Vec<usize>,
    pub rho: f64,
}

impl Default for CovariateModel {
    fn default() -> Self {
        CovariateModel {
            p: 30,
            categorical: (0..8).collect(),
            rho: 0.3,
        }
    }
}

/// Level order of every simulated categorical covariate.
pub const CATEGORY_LEVELS: [&str; 2] = ["N", "Y"];

pub fn covariate_name(j: usize) -> String {
    format!("X{}", j + 1)
}

impl CovariateModel {
    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::param("covariate model needs p >= 1"));
        }
        if !(-1.0 < self.rho && self.rho < 1.0) {
            return Err(Error::param("latent correlation must lie in (-1, 1)"));
        }
        if self.categorical.iter().any(|&j| j >= self.p) {
            return Err(Error::param("categorical position beyond p"));
        }
        Ok(())
    }

    /// Draws `n` rows. Every categorical column keeps both levels in its
    /// level list even if one is unobserved.
    pub fn generate<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Covariates> {
        self.validate()?;
        let p = self.p;
        let innovation = (1.0 - self.rho * self.rho).sqrt();
        let mut latent = vec![vec![0.0; n]; p];
        for i in 0..n {
            let mut z: f64 = StandardNormal.sample(rng);
            latent[0][i] = z;
            for col in latent.iter_mut().skip(1) {
                let e: f64 = StandardNormal.sample(rng);
                z = self.rho * z + innovation * e;
                col[i] = z;
            }
        }
        let columns = latent
            .into_iter()
            .enumerate()
            .map(|(j, z)| {
                if self.categorical.contains(&j) {
                    CovariateColumn::categorical(
                        covariate_name(j),
                        z.iter().map(|&v| u32::from(v > 0.0)).collect(),
                        CATEGORY_LEVELS.iter().map(|s| s.to_string()).collect(),
                    )
                } else {
                    CovariateColumn::numeric(covariate_name(j), z.iter().map(|&v| normal_cdf(v)).collect())
                }
            })
            .collect();
        Covariates::new(columns)
    }
}
