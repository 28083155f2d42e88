//! The Gibbs map `T(rho) = exp(-(K*rho + V)/nu) / Z` with running offset
//! normalization.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyBreakdown;
use crate::error::{invalid, Error, Result};
use crate::grid::{l1_distance, ConvolutionOperator, Density, Grid};
use crate::potentials::{ExternalPotential, InteractionKernel};

pub const DEFAULT_CLAMP_FLOOR: f64 = -700.0;

/// Constant added to `K*rho + V` before exponentiation, and the last partition value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    pub kernel_offset: f64,
    pub last_z: f64,
}

impl Default for GibbsState {
    fn default() -> Self {
        GibbsState {
            kernel_offset: 0.0,
            last_z: 1.0,
        }
    }
}

impl GibbsState {
    /// Multiplier estimate `-offset`; meaningful only once `last_z` is near 1.
    pub fn lambda(&self) -> f64 {
        -self.kernel_offset
    }
}

/// One evaluation of the map.
#[derive(Debug, Clone)]
pub struct GibbsOutput {
    pub density: Density,
    pub state: GibbsState,
    pub lambda: f64,
}

/// A prepared map for a fixed grid, kernel, potential and `nu`.
#[derive(Debug, Clone)]
pub struct GibbsMap {
    op: ConvolutionOperator,
    v: Vec<f64>,
    nu: f64,
    clamp_floor: f64,
}

impl GibbsMap {
    pub fn new(
        grid: Arc<Grid>,
        kernel: &InteractionKernel,
        potential: &ExternalPotential,
        nu: f64,
    ) -> Result<Self> {
        let op = ConvolutionOperator::new(grid, kernel)?;
        Self::from_operator(op, potential, nu)
    }

    pub fn from_operator(
        op: ConvolutionOperator,
        potential: &ExternalPotential,
        nu: f64,
    ) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("nu", format!("must be positive, got {nu}")));
        }
        let v = potential.sample(op.grid().nodes())?;
        Ok(GibbsMap {
            op,
            v,
            nu,
            clamp_floor: DEFAULT_CLAMP_FLOOR,
        })
    }

    pub fn with_clamp_floor(mut self, floor: f64) -> Result<Self> {
        if !(-745.0..0.0).contains(&floor) {
            return Err(invalid(
                "clamp_floor",
                format!("must lie in [-745, 0), got {floor}"),
            ));
        }
        self.clamp_floor = floor;
        Ok(self)
    }

    /// Same operator at a different `nu`.
    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("nu", format!("must be positive, got {nu}")));
        }
        Ok(GibbsMap { nu, ..self.clone() })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.op.grid()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn clamp_floor(&self) -> f64 {
        self.clamp_floor
    }

    pub fn potential_values(&self) -> &[f64] {
        &self.v
    }

    pub fn operator(&self) -> &ConvolutionOperator {
        &self.op
    }

    pub fn convolve(&self, rho: &[f64]) -> Vec<f64> {
        self.op.apply_unchecked(rho)
    }

    pub fn energy(&self, rho: &[f64], conv: &[f64]) -> EnergyBreakdown {
        EnergyBreakdown::from_fields(self.grid(), rho, conv, &self.v, self.nu)
    }

    /// `T` given the field `conv = K*rho`.
    pub fn map_field(&self, conv: &[f64], state: GibbsState) -> Result<(Vec<f64>, GibbsState)> {
        let nu = self.nu;
        let offset = state.kernel_offset;
        let mut expo: Vec<f64> = conv
            .iter()
            .zip(&self.v)
            .map(|(c, v)| -(c + v + offset) / nu)
            .collect();
        let peak = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::PartitionFailure { z: peak });
        }
        // exponentials relative to the peak; the floor is relative too
        let w = self.grid().weights();
        let mut z_rel = 0.0;
        for (e, wi) in expo.iter_mut().zip(w) {
            *e = (*e - peak).max(self.clamp_floor).exp();
            z_rel += wi * *e;
        }
        if !(z_rel.is_finite() && z_rel > 0.0) {
            return Err(Error::PartitionFailure { z: z_rel });
        }
        expo.iter_mut().for_each(|e| *e /= z_rel);
        let log_z = peak + z_rel.ln();
        let state = GibbsState {
            kernel_offset: offset + nu * log_z,
            last_z: log_z.exp().clamp(f64::MIN_POSITIVE, f64::MAX),
        };
        Ok((expo, state))
    }

    pub fn apply(&self, rho: &Density, state: GibbsState) -> Result<GibbsOutput> {
        self.grid().check_len(rho.values())?;
        let conv = self.convolve(rho.values());
        let (values, state) = self.map_field(&conv, state)?;
        Ok(GibbsOutput {
            density: Density::from_normalized(self.grid().clone(), values),
            state,
            lambda: state.lambda(),
        })
    }
}

/// One application of the Gibbs map, returning the new density, state and
/// multiplier estimate.
pub fn apply_t(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    nu: f64,
    rho: &Density,
    state: GibbsState,
) -> Result<(Density, GibbsState, f64)> {
    let map = GibbsMap::new(rho.grid().clone(), kernel, potential, nu)?;
    let out = map.apply(rho, state)?;
    Ok((out.density, out.state, out.lambda))
}

/// `sum w_i |rho_i - T(rho)_i|`.
pub fn fixed_point_residual(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    nu: f64,
    rho: &Density,
    state: GibbsState,
) -> Result<f64> {
    let (t, _, _) = apply_t(kernel, potential, nu, rho, state)?;
    Ok(l1_distance(rho.grid(), rho.values(), t.values()))
}
