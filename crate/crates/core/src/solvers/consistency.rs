use crate::error::Result;
use crate::grid::{Sinogram, Volume};
use crate::operators::{Axis, Projector};

use super::{specialized_admm_with, standard_admm_with, AdmmParams, SplitAxes};

/// Pulls an image estimate towards agreement with measurements `y`.
pub trait Consistency: Send + Sync {
    fn apply(&self, proj: &Projector, y: &Sinogram, x_init: &Volume) -> Result<Volume>;
}

/// Returns its input untouched. Useful for isolating the sampler arithmetic.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityConsistency;

impl Consistency for IdentityConsistency {
    fn apply(&self, _proj: &Projector, _y: &Sinogram, x_init: &Volume) -> Result<Volume> {
        Ok(x_init.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AdmmVariant {
    Split(SplitAxes),
    Standard(Vec<Axis>),
}

/// A fresh ADMM run (zero duals) started from `x_init`.
#[derive(Clone, Debug)]
pub struct AdmmConsistency {
    pub params: AdmmParams,
    pub variant: AdmmVariant,
}

impl AdmmConsistency {
    pub fn split(params: AdmmParams, axes: SplitAxes) -> Self {
        AdmmConsistency {
            params,
            variant: AdmmVariant::Split(axes),
        }
    }

    pub fn standard(params: AdmmParams, axes: Vec<Axis>) -> Self {
        AdmmConsistency {
            params,
            variant: AdmmVariant::Standard(axes),
        }
    }
}

impl Consistency for AdmmConsistency {
    fn apply(&self, proj: &Projector, y: &Sinogram, x_init: &Volume) -> Result<Volume> {
        proj.geometry().check_sinogram(y)?;
        proj.geometry().check_volume(x_init)?;
        match &self.variant {
            AdmmVariant::Split(axes) => {
                specialized_admm_with(proj, y.data(), &self.params, x_init, axes, None)
            }
            AdmmVariant::Standard(axes) => {
                standard_admm_with(proj, y.data(), &self.params, x_init, axes, None)
            }
        }
    }
}
