//! Relaxed fixed-point iteration `rho <- (1 - tau) rho + tau T(rho)`.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{report_from_fields, DiagnosticsReport};
use crate::energy::EnergyBreakdown;
use crate::error::{invalid, Error, Result};
use crate::gibbs::{GibbsMap, GibbsState, DEFAULT_CLAMP_FLOOR};
use crate::grid::{l1_distance, Density};
use crate::potentials::{ExternalPotential, InteractionKernel};

const TAU_CAP: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Fixed conservative step; `None` means `min(5 nu, 0.95)`.
    pub tau_c: Option<f64>,
    pub tol: f64,
    pub n_max: usize,
    pub clamp_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau_c: None,
            tol: 1e-6,
            n_max: 2000,
            clamp_floor: DEFAULT_CLAMP_FLOOR,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tau_c {
            if !(t > 0.0 && t < 1.0) {
                return Err(invalid("tau_c", format!("must lie in (0, 1), got {t}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(invalid(
                "tol",
                format!("must be positive, got {}", self.tol),
            ));
        }
        if self.n_max == 0 {
            return Err(invalid("n_max", "must be at least 1"));
        }
        if !(self.clamp_floor < 0.0 && self.clamp_floor >= -745.0) {
            return Err(invalid(
                "clamp_floor",
                format!("must lie in [-745, 0), got {}", self.clamp_floor),
            ));
        }
        Ok(())
    }

    pub fn tau_for(&self, nu: f64) -> f64 {
        self.tau_c.unwrap_or_else(|| default_tau(nu))
    }
}

pub fn default_tau(nu: f64) -> f64 {
    (5.0 * nu).min(TAU_CAP)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSchedule {
    nus: Vec<f64>,
}

impl ContinuationSchedule {
    pub fn new(nus: Vec<f64>) -> Result<Self> {
        if nus.is_empty() {
            return Err(invalid("schedule", "needs at least one value"));
        }
        if nus.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
            return Err(invalid("schedule", "values must be positive and finite"));
        }
        if !nus.windows(2).all(|p| p[1] < p[0]) {
            return Err(invalid("schedule", "values must be strictly decreasing"));
        }
        Ok(ContinuationSchedule { nus })
    }

    /// `stages` values spaced geometrically from `nu0` down to `nu`.
    pub fn geometric(nu0: f64, nu: f64, stages: usize) -> Result<Self> {
        if stages == 0 {
            return Err(invalid("stages", "must be at least 1"));
        }
        if stages == 1 {
            return ContinuationSchedule::new(vec![nu]);
        }
        if !(nu0 > nu) {
            return Err(invalid(
                "schedule",
                format!("start {nu0} must exceed target {nu}"),
            ));
        }
        let ratio = (nu / nu0).powf(1.0 / (stages - 1) as f64);
        let mut nus: Vec<f64> = (0..stages).map(|k| nu0 * ratio.powi(k as i32)).collect();
        nus[stages - 1] = nu;
        ContinuationSchedule::new(nus)
    }

    pub fn nus(&self) -> &[f64] {
        &self.nus
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub density: Option<Density>,
    pub nu: f64,
    pub tau_c: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Cumulative-offset estimate of the multiplier.
    pub lambda: f64,
    pub energy: EnergyBreakdown,
    pub diagnostics: DiagnosticsReport,
    pub converged: bool,
    /// `E(rho^n)` for every iterate, starting with the initial guess.
    pub energy_trace: Vec<f64>,
    /// Step taken from iterate `n` to `n + 1`.
    pub steps: Vec<f64>,
}

impl SolveReport {
    pub fn density(&self) -> &Density {
        self.density.as_ref().expect("report carries its density")
    }

    pub fn lambda_inf(&self) -> f64 {
        self.diagnostics.lambda_inf
    }

    pub fn e0(&self) -> Option<f64> {
        self.diagnostics.e0
    }

    /// True when every full step lowered the energy.
    pub fn full_steps_descend(&self) -> bool {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == 1.0)
            .all(|(n, _)| self.energy_trace[n + 1] < self.energy_trace[n])
    }
}

pub fn solve(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    nu: f64,
    rho0: &Density,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let map = GibbsMap::new(rho0.grid().clone(), kernel, potential, nu)?
        .with_clamp_floor(cfg.clamp_floor)?;
    solve_with_map(&map, potential, rho0, cfg)
}

/// Runs the iteration with a prepared map; `potential` must be the one the map was built with.
pub fn solve_with_map(
    map: &GibbsMap,
    potential: &ExternalPotential,
    rho0: &Density,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let grid = map.grid().clone();
    grid.check_len(rho0.values())?;
    let nu = map.nu();
    let tau_c = cfg.tau_for(nu);
    let at = |iteration: usize| {
        move |e: Error| Error::SolveFailed {
            iteration,
            source: Box::new(e),
        }
    };

    let mut rho = rho0.values().to_vec();
    let mut conv = map.convolve(&rho);
    let mut energy = map.energy(&rho, &conv);
    let mut state = GibbsState::default();
    let mut trace = vec![energy.total];
    let mut steps = Vec::new();
    let mut n = 0usize;

    let (t, t_state) = map.map_field(&conv, state).map_err(at(0))?;
    let mut next = (t, t_state);
    let mut residual = l1_distance(&grid, &rho, &next.0);
    check_energy(0, energy.total)?;

    while residual >= cfg.tol && n < cfg.n_max {
        let (t, t_state) = next;
        let conv_t = map.convolve(&t);
        let energy_t = map.energy(&t, &conv_t);
        check_energy(n + 1, energy_t.total)?;
        if energy_t.total < energy.total {
            steps.push(1.0);
            rho = t;
            conv = conv_t;
            energy = energy_t;
        } else {
            steps.push(tau_c);
            for i in 0..rho.len() {
                rho[i] += tau_c * (t[i] - rho[i]);
                conv[i] += tau_c * (conv_t[i] - conv[i]);
            }
            energy = map.energy(&rho, &conv);
            check_energy(n + 1, energy.total)?;
        }
        state = t_state;
        n += 1;
        trace.push(energy.total);
        next = map.map_field(&conv, state).map_err(at(n))?;
        residual = l1_distance(&grid, &rho, &next.0);
    }

    let converged = residual < cfg.tol;
    if converged {
        // prefer T(rho^n) when it is itself within tolerance
        let (t, t_state) = next;
        let conv_t = map.convolve(&t);
        let (tt, tt_state) = map.map_field(&conv_t, t_state).map_err(at(n))?;
        let r_t = l1_distance(&grid, &t, &tt);
        if r_t < cfg.tol {
            rho = t;
            conv = conv_t;
            energy = map.energy(&rho, &conv);
            residual = r_t;
            state = tt_state;
        } else {
            state = t_state;
        }
    } else {
        state = next.1;
    }

    let density = Density::from_normalized(grid, rho);
    let diagnostics = report_from_fields(
        &density,
        &conv,
        map.potential_values(),
        potential,
        &energy,
        map.clamp_floor(),
    )?;
    Ok(SolveReport {
        density: Some(density),
        nu,
        tau_c,
        iterations: n,
        residual,
        lambda: state.lambda(),
        energy,
        diagnostics,
        converged,
        energy_trace: trace,
        steps,
    })
}

fn check_energy(iteration: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteEnergy { iteration, value })
    }
}

/// Solves at each `nu` of the schedule, warm-starting from the previous stage.
///
/// `cfg.tau_c`, when set, overrides the per-stage default for every stage.
pub fn solve_with_continuation(
    kernel: &InteractionKernel,
    potential: &ExternalPotential,
    schedule: &ContinuationSchedule,
    rho0: &Density,
    cfg: &SolverConfig,
) -> Result<Vec<SolveReport>> {
    cfg.validate()?;
    let nus = schedule.nus();
    let base = GibbsMap::new(rho0.grid().clone(), kernel, potential, nus[0])?
        .with_clamp_floor(cfg.clamp_floor)?;
    let mut reports: Vec<SolveReport> = Vec::with_capacity(nus.len());
    for (stage, &nu) in nus.iter().enumerate() {
        let wrap = |e: Error| Error::StageFailed {
            stage,
            nu,
            source: Box::new(e),
        };
        let map = base.with_nu(nu).map_err(wrap)?;
        let start = match reports.last() {
            Some(prev) => prev.density(),
            None => rho0,
        };
        let report = solve_with_map(&map, potential, start, cfg).map_err(wrap)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Number of local maxima whose prominence is at least `prominence * max(rho)`.
///
/// Prominence is measured topographically: a peak's base on each side is the
/// lowest value between it and the nearest strictly higher point (or the
/// boundary), and the higher of the two bases is subtracted from the peak.
/// Boundary nodes count when they strictly exceed their only neighbour.
pub fn count_aggregates(rho: &Density, prominence: f64) -> usize {
    count_peaks(rho.values(), prominence)
}

pub(crate) fn count_peaks(v: &[f64], prominence: f64) -> usize {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = prominence * top;
    let mut count = 0;
    let mut i = 0;
    while i < n {
        // plateau [i, j]
        let mut j = i;
        while j + 1 < n && v[j + 1] == v[i] {
            j += 1;
        }
        let h = v[i];
        let left_lower = i == 0 || v[i - 1] < h;
        let right_lower = j == n - 1 || v[j + 1] < h;
        let whole = i == 0 && j == n - 1;
        if left_lower && right_lower && !whole {
            // ties are broken leftwards: equal peaks to the left block the scan
            let base = |range: &mut dyn Iterator<Item = usize>, inclusive: bool| {
                let mut lo = h;
                let mut bounded = false;
                for k in range {
                    if v[k] > h || (inclusive && v[k] == h) {
                        break;
                    }
                    lo = lo.min(v[k]);
                    bounded = true;
                }
                bounded.then_some(lo)
            };
            let left = base(&mut (0..i).rev(), true);
            let right = base(&mut (j + 1..n), false);
            let key = match (left, right) {
                (Some(a), Some(b)) => a.max(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => h,
            };
            if h - key >= threshold {
                count += 1;
            }
        }
        i = j + 1;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, SpacingMode};
    use std::sync::Arc;

    fn grid(l: f64, n: usize, mode: SpacingMode) -> Arc<Grid> {
        Arc::new(Grid::new(l, n, mode).unwrap())
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            tau_c: Some(1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            n_max: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(SolverConfig::default().tau_for(2f64.powi(-6)), 5.0 / 64.0);
        assert_eq!(SolverConfig::default().tau_for(1.0), 0.95);
    }

    #[test]
    fn schedule_validation() {
        assert!(ContinuationSchedule::new(vec![]).is_err());
        assert!(ContinuationSchedule::new(vec![1.0, 1.0]).is_err());
        assert!(ContinuationSchedule::new(vec![1.0, -0.5]).is_err());
        let s = ContinuationSchedule::geometric(10.0, 1.0, 8).unwrap();
        assert_eq!(s.nus().len(), 8);
        assert_eq!(s.nus()[0], 10.0);
        assert_eq!(s.nus()[7], 1.0);
    }

    #[test]
    fn zero_potentials_converge_immediately() {
        let g = grid(2.0, 64, SpacingMode::Uniform);
        let rho0 = Density::indicator(g, 0.2, 0.9, 1.0).unwrap();
        let r = solve(
            &InteractionKernel::Zero,
            &ExternalPotential::Zero,
            0.05,
            &rho0,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!(r.residual < 1e-12);
        assert!(r
            .density()
            .values()
            .iter()
            .all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let g = grid(1.0, 64, SpacingMode::Uniform);
        let rho0 = Density::indicator(g, 0.0, 0.25, 4.0).unwrap();
        let cfg = SolverConfig {
            n_max: 1,
            tol: 1e-14,
            ..Default::default()
        };
        let r = solve(
            &InteractionKernel::PowerLaw { p: 2.0 },
            &ExternalPotential::Linear { g: 0.2 },
            2f64.powi(-6),
            &rho0,
            &cfg,
        )
        .unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.energy_trace.len(), 2);
    }

    #[test]
    fn single_stage_continuation_is_solve() {
        let g = grid(1.5, 128, SpacingMode::QuadraticClustered);
        let rho0 = Density::indicator(g, 0.0, 0.25, 4.0).unwrap();
        let k = InteractionKernel::PowerLaw { p: 2.0 };
        let v = ExternalPotential::Linear { g: 0.1 };
        let nu = 2f64.powi(-5);
        let cfg = SolverConfig::default();
        let a = solve(&k, &v, nu, &rho0, &cfg).unwrap();
        let b = solve_with_continuation(
            &k,
            &v,
            &ContinuationSchedule::new(vec![nu]).unwrap(),
            &rho0,
            &cfg,
        )
        .unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(a.iterations, b[0].iterations);
        assert_eq!(a.density().values(), b[0].density().values());
    }

    #[test]
    fn peak_counting() {
        assert_eq!(count_peaks(&[1.0; 10], 0.05), 0);
        assert_eq!(count_peaks(&[0.1, 0.5, 1.0, 0.5, 0.1], 0.05), 1);
        assert_eq!(count_peaks(&[1.0, 0.5, 0.1, 0.5, 0.9], 0.05), 2);
        // a shallow dimple on top of one bump is not a second aggregate
        assert_eq!(count_peaks(&[0.0, 1.0, 0.99, 1.0, 0.0], 0.05), 1);
        assert_eq!(count_peaks(&[0.0, 1.0, 0.2, 1.0, 0.0], 0.05), 2);
        assert_eq!(count_peaks(&[0.0, 1.0, 1.0, 1.0, 0.0], 0.05), 1);
    }

    #[test]
    fn gaussian_counts_once() {
        let g = grid(2.0, 257, SpacingMode::Uniform);
        let rho = Density::from_fn(g, |x| (-(x - 0.8f64).powi(2) / 0.05).exp()).unwrap();
        assert_eq!(count_aggregates(&rho, 0.05), 1);
    }
}
