//! Residual checks for computed equilibria.

use serde::{Deserialize, Serialize};

use crate::energy::EnergyBreakdown;
use crate::error::{invalid, Error, Result};
use crate::gibbs::DEFAULT_CLAMP_FLOOR;
use crate::grid::{ConvolutionOperator, Density, Grid};
use crate::potentials::{ExternalPotential, InteractionKernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m1: f64,
    pub m2: f64,
    pub com: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub lambda_inf: f64,
    /// Relative boundary error; only defined for `V = g x` with `g > 0`.
    pub e0: Option<f64>,
    pub com_drift: f64,
    pub lambda: f64,
    pub moments: Moments,
    /// Nodes left out of `lambda_inf` because they sit at the exponent floor.
    pub clamped_nodes: usize,
}

// Nodes within this many exponent units of the floor count as clamped.
const CLAMP_MARGIN: f64 = 1.0;

/// `max_i |K*rho + nu log rho + V - (E + K[rho])|` over the nodes not held
/// at the default exponent floor.
pub fn euler_lagrange_residual(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    nu: f64,
    rho: &Density,
) -> Result<f64> {
    Ok(diagnose(kernel, potential, nu, rho)?.lambda_inf)
}

pub(crate) fn lambda_inf_from_fields(
    rho: &[f64],
    conv: &[f64],
    v: &[f64],
    nu: f64,
    lambda: f64,
    clamp_floor: f64,
) -> Result<(f64, usize)> {
    if let Some((i, &r)) = rho.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
        return Err(Error::NonPositiveDensity { index: i, value: r });
    }
    let log_max = rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ln();
    let mut worst: f64 = 0.0;
    let mut clamped = 0;
    for (i, &r) in rho.iter().enumerate() {
        let log_r = r.ln();
        if log_r - log_max < clamp_floor + CLAMP_MARGIN {
            clamped += 1;
            continue;
        }
        worst = worst.max((conv[i] + nu * log_r + v[i] - lambda).abs());
    }
    Ok((worst, clamped))
}

/// `|rho(0) - g/nu| / (g/nu)` for `V = g x`.
pub fn boundary_condition_error(
    rho: &Density,
    potential: &ExternalPotential,
    nu: f64,
) -> Result<f64> {
    match potential.gravity() {
        Some(g) if g > 0.0 => {
            let target = g / nu;
            Ok((rho.values()[0] - target).abs() / target)
        }
        _ => Err(invalid(
            "potential",
            "boundary error needs V = g x with g > 0; use com_drift otherwise",
        )),
    }
}

/// Time derivative of the centre of mass, `-∫ V' rho + nu (rho(0) - rho(L))`.
pub fn com_drift(rho: &Density, potential: &ExternalPotential, nu: f64) -> Result<f64> {
    let grid = rho.grid();
    let r = rho.values();
    let mut force = 0.0;
    for ((&x, &w), &ri) in grid.nodes().iter().zip(grid.weights()).zip(r) {
        force += w * potential.derivative(x)? * ri;
    }
    Ok(-force + nu * (r[0] - r[r.len() - 1]))
}

pub fn moments(rho: &Density) -> Moments {
    let grid = rho.grid();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for ((&x, &w), &r) in grid.nodes().iter().zip(grid.weights()).zip(rho.values()) {
        m1 += w * x * r;
        m2 += w * x * x * r;
    }
    Moments { m1, m2, com: m1 }
}

pub(crate) fn report_from_fields(
    rho: &Density,
    conv: &[f64],
    v: &[f64],
    potential: &ExternalPotential,
    energy: &EnergyBreakdown,
    clamp_floor: f64,
) -> Result<DiagnosticsReport> {
    let nu = energy.nu;
    let lambda = energy.lambda();
    let (lambda_inf, clamped_nodes) =
        lambda_inf_from_fields(rho.values(), conv, v, nu, lambda, clamp_floor)?;
    let e0 = match potential.gravity() {
        Some(g) if g > 0.0 => Some(boundary_condition_error(rho, potential, nu)?),
        _ => None,
    };
    Ok(DiagnosticsReport {
        lambda_inf,
        e0,
        com_drift: com_drift(rho, potential, nu)?,
        lambda,
        moments: moments(rho),
        clamped_nodes,
    })
}

pub fn diagnose(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    nu: f64,
    rho: &Density,
) -> Result<DiagnosticsReport> {
    if !(nu > 0.0) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    let grid: &Grid = rho.grid();
    let op = ConvolutionOperator::new(rho.grid().clone(), kernel)?;
    let conv = op.apply(rho.values())?;
    let v = potential.sample(grid.nodes())?;
    let energy = EnergyBreakdown::from_fields(grid, rho.values(), &conv, &v, nu);
    report_from_fields(rho, &conv, &v, potential, &energy, DEFAULT_CLAMP_FLOOR)
}
