//! The free energy `E = K[rho] + nu S[rho] + V[rho]` on a grid.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{convolve_kernel, Density, Grid};
use crate::potentials::{ExternalPotential, InteractionKernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub interaction: f64,
    pub entropy: f64,
    pub potential: f64,
    pub nu: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(interaction: f64, entropy: f64, potential: f64, nu: f64) -> Self {
        EnergyBreakdown {
            interaction,
            entropy,
            potential,
            nu,
            total: interaction + nu * entropy + potential,
        }
    }

    /// Assembles the energy from a precomputed `u = K*rho` and sampled `V`.
    pub(crate) fn from_fields(grid: &Grid, rho: &[f64], conv: &[f64], v: &[f64], nu: f64) -> Self {
        let w = grid.weights();
        let mut interaction = 0.0;
        let mut entropy = 0.0;
        let mut potential = 0.0;
        for i in 0..rho.len() {
            let wr = w[i] * rho[i];
            interaction += wr * conv[i];
            entropy += entropy_term(w[i], rho[i]);
            potential += wr * v[i];
        }
        EnergyBreakdown::new(0.5 * interaction, entropy, potential, nu)
    }

    /// The multiplier `E + K[rho]` expected in `K*rho + nu log rho + V = lambda`.
    pub fn lambda(&self) -> f64 {
        self.total + self.interaction
    }
}

fn entropy_term(w: f64, r: f64) -> f64 {
    if r > 0.0 {
        w * r * r.ln()
    } else {
        0.0
    }
}

pub fn interaction_energy(kernel: &InteractionKernel, rho: &Density) -> Result<f64> {
    let grid = rho.grid();
    let u = convolve_kernel(grid, kernel, rho)?;
    let pairs: Vec<f64> = u.iter().zip(rho.values()).map(|(a, b)| a * b).collect();
    Ok(0.5 * grid.integrate_unchecked(&pairs))
}

/// `sum w_i rho_i log rho_i` with `0 log 0 = 0`.
pub fn entropy(rho: &Density) -> f64 {
    let w = rho.grid().weights();
    rho.values()
        .iter()
        .zip(w)
        .map(|(&r, &w)| entropy_term(w, r))
        .sum()
}

pub fn potential_energy(potential: &ExternalPotential, rho: &Density) -> Result<f64> {
    let grid = rho.grid();
    let v = potential.sample(grid.nodes())?;
    let f: Vec<f64> = v.iter().zip(rho.values()).map(|(a, b)| a * b).collect();
    Ok(grid.integrate_unchecked(&f))
}

pub fn total_energy(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    nu: f64,
    rho: &Density,
) -> Result<EnergyBreakdown> {
    if !(nu > 0.0) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    Ok(EnergyBreakdown::new(
        interaction_energy(kernel, rho)?,
        entropy(rho),
        potential_energy(potential, rho)?,
        nu,
    ))
}
