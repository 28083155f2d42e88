//! Named numerical experiments and their serialized results.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{critical_gravity, energy_on_gamma, exact_minimizer, p_infinity_state};
use crate::diagnostics::moments;
use crate::error::{invalid, Error, Result};
use crate::geometry::{
    estimate_effective_dimension, estimate_volume_profile, log_spaced, DomainSpec,
};
use crate::grid::{Density, Grid, SpacingMode};
use crate::potentials::{ExternalPotential, InteractionKernel, Table};
use crate::solver::{
    count_aggregates, solve, solve_with_continuation, ContinuationSchedule, SolveReport,
    SolverConfig,
};

/// Density below which the value at `x = L` counts as a negligible tail.
pub const TAIL_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    Kp2,
    KpSmall,
    KpLarge,
    Multistate,
    GammaEnergy,
    Effdim,
    Custom,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Kp2,
        ExperimentKind::KpSmall,
        ExperimentKind::KpLarge,
        ExperimentKind::Multistate,
        ExperimentKind::GammaEnergy,
        ExperimentKind::Effdim,
        ExperimentKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Kp2 => "kp2",
            ExperimentKind::KpSmall => "kpsmall",
            ExperimentKind::KpLarge => "kplarge",
            ExperimentKind::Multistate => "multistate",
            ExperimentKind::GammaEnergy => "gamma-energy",
            ExperimentKind::Effdim => "effdim",
            ExperimentKind::Custom => "custom",
        }
    }

    /// Override keys this experiment understands.
    pub fn allowed_keys(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Kp2 => &["nu", "L", "N", "grid", "tol", "N_max", "tau_c", "g"],
            ExperimentKind::KpSmall | ExperimentKind::KpLarge => {
                &["nu", "L", "N", "grid", "tol", "N_max", "tau_c", "g", "p"]
            }
            ExperimentKind::Multistate => &[
                "nu",
                "L",
                "N",
                "grid",
                "tol",
                "N_max",
                "tau_c",
                "eps",
                "schedule",
                "stages",
                "prominence",
            ],
            ExperimentKind::GammaEnergy => &["nu", "g", "c_min", "c_max", "points"],
            ExperimentKind::Effdim => &["seed", "samples", "r_min", "r_max", "radii"],
            ExperimentKind::Custom => &[
                "nu",
                "L",
                "N",
                "grid",
                "tol",
                "N_max",
                "tau_c",
                "kernel",
                "p",
                "eps",
                "kernel_file",
                "potential",
                "g",
                "potential_file",
                "init",
                "schedule",
                "prominence",
            ],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid("experiment", format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(invalid(
                "format",
                format!("expected csv or json, got `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub overrides: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            overrides: BTreeMap::new(),
        }
    }

    /// Adds an override, rejecting keys the experiment does not use.
    pub fn set(&mut self, key: &str, value: &str) -> Result<&mut Self> {
        if !self.kind.allowed_keys().contains(&key) {
            return Err(Error::UnknownOverride(format!(
                "`{key}`; `{}` accepts {}",
                self.kind,
                self.kind.allowed_keys().join(", ")
            )));
        }
        self.overrides
            .insert(key.to_string(), value.trim().to_string());
        Ok(self)
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<&mut Self> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| invalid("override", format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    pub fn validate(&self) -> Result<()> {
        for k in self.overrides.keys() {
            if !self.kind.allowed_keys().contains(&k.as_str()) {
                return Err(Error::UnknownOverride(format!("`{k}`")));
            }
        }
        Ok(())
    }

    fn num(&self, key: &'static str, default: f64) -> Result<f64> {
        match self.overrides.get(key) {
            None => Ok(default),
            Some(s) => parse_num(key, s),
        }
    }

    fn count(&self, key: &'static str, default: usize) -> Result<usize> {
        match self.overrides.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse::<usize>()
                .map_err(|_| invalid(key, format!("expected a nonnegative integer, got `{s}`"))),
        }
    }

    fn list(&self, key: &'static str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.overrides.get(key) {
            None => Ok(default),
            Some(s) => s.split(',').map(|t| parse_num(key, t.trim())).collect(),
        }
    }

    fn text(&self, key: &'static str, default: &str) -> String {
        self.overrides
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }
}

fn short(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Accepts decimals and `2^k` powers of two.
fn parse_num(key: &'static str, s: &str) -> Result<f64> {
    let s = s.trim();
    let v = if let Some(exp) = s.strip_prefix("2^") {
        exp.parse::<i32>().ok().map(|e| 2f64.powi(e))
    } else {
        s.parse::<f64>().ok()
    };
    match v {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(invalid(key, format!("expected a finite number, got `{s}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Num(v) => write!(f, "{v:?}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Num(v)
    }
}

impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        ParamValue::Num(v as f64)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        ParamValue::Text(v.to_string())
    }
}

impl From<String> for ParamValue {
    fn from(v: String) -> Self {
        ParamValue::Text(v)
    }
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub label: String,
    pub parameters: BTreeMap<String, ParamValue>,
    pub metrics: BTreeMap<String, f64>,
    pub converged: bool,
    /// Non-convergence here is expected and does not fail the run.
    pub tolerated: bool,
    pub flags: Vec<String>,
    pub error: Option<String>,
    /// Column names for `samples`.
    pub sample_columns: [String; 2],
    pub samples: Vec<[f64; 2]>,
    pub wall_time_s: f64,
}

impl ResultRecord {
    fn new(kind: ExperimentKind, label: impl Into<String>, columns: [&str; 2]) -> Self {
        ResultRecord {
            experiment: kind.name().to_string(),
            label: label.into(),
            parameters: BTreeMap::new(),
            metrics: BTreeMap::new(),
            converged: false,
            tolerated: false,
            flags: Vec::new(),
            error: None,
            sample_columns: [columns[0].to_string(), columns[1].to_string()],
            samples: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    fn param(&mut self, key: &str, v: impl Into<ParamValue>) -> &mut Self {
        self.parameters.insert(key.to_string(), v.into());
        self
    }

    fn metric(&mut self, key: &str, v: f64) -> &mut Self {
        if v.is_finite() {
            self.metrics.insert(key.to_string(), v);
        } else {
            self.flags.push(format!("nonfinite:{key}"));
        }
        self
    }

    pub fn ok(&self) -> bool {
        self.converged || self.tolerated
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }

    pub fn num_param(&self, key: &str) -> Option<f64> {
        match self.parameters.get(key) {
            Some(ParamValue::Num(v)) => Some(*v),
            _ => None,
        }
    }

    fn fail(&mut self, e: &Error) {
        self.converged = false;
        self.error = Some(e.to_string());
    }

    fn absorb_report(&mut self, r: &SolveReport) {
        self.converged = r.converged;
        self.metric("iterations", r.iterations as f64)
            .metric("residual", r.residual)
            .metric("lambda", r.lambda)
            .metric("lambda_el", r.diagnostics.lambda)
            .metric("energy_total", r.energy.total)
            .metric("energy_interaction", r.energy.interaction)
            .metric("energy_entropy", r.energy.entropy)
            .metric("energy_potential", r.energy.potential)
            .metric("lambda_inf", r.diagnostics.lambda_inf)
            .metric("com_drift", r.diagnostics.com_drift)
            .metric("m1", r.diagnostics.moments.m1)
            .metric("m2", r.diagnostics.moments.m2)
            .metric("clamped_nodes", r.diagnostics.clamped_nodes as f64);
        if let Some(e0) = r.diagnostics.e0 {
            self.metric("e0", e0);
        }
        let violations = r
            .steps
            .iter()
            .enumerate()
            .filter(|(n, &t)| t == 1.0 && r.energy_trace[n + 1] >= r.energy_trace[*n])
            .count();
        self.metric("descent_violations", violations as f64);
        self.metric(
            "full_steps",
            r.steps.iter().filter(|&&t| t == 1.0).count() as f64,
        );
        let rho = r.density();
        let tail = *rho.values().last().expect("nonempty grid");
        self.metric("tail", tail);
        if !(tail < TAIL_THRESHOLD) {
            self.flags.push("tail".to_string());
        }
        self.samples = rho
            .grid()
            .nodes()
            .iter()
            .zip(rho.values())
            .map(|(&x, &v)| [x, v])
            .collect();
    }
}

struct GridParams {
    length: f64,
    n: usize,
    mode: SpacingMode,
}

impl GridParams {
    fn read(cfg: &ExperimentConfig, length: f64, n: usize, mode: SpacingMode) -> Result<Self> {
        Ok(GridParams {
            length: cfg.num("L", length)?,
            n: cfg.count("N", n)?,
            mode: cfg.text("grid", &mode.to_string()).parse()?,
        })
    }

    fn build(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::new(self.length, self.n, self.mode)?))
    }

    fn echo(&self, rec: &mut ResultRecord) {
        rec.param("L", self.length)
            .param("N", self.n)
            .param("grid", self.mode.to_string());
    }
}

fn solver_config(cfg: &ExperimentConfig, n_max: usize) -> Result<SolverConfig> {
    let tau_c = match cfg.overrides.get("tau_c") {
        None => None,
        Some(s) => Some(parse_num("tau_c", s)?),
    };
    let sc = SolverConfig {
        tau_c,
        tol: cfg.num("tol", 1e-6)?,
        n_max: cfg.count("N_max", n_max)?,
        ..SolverConfig::default()
    };
    sc.validate()?;
    Ok(sc)
}

fn echo_solver(rec: &mut ResultRecord, sc: &SolverConfig, nu: f64) {
    rec.param("nu", nu)
        .param("tol", sc.tol)
        .param("N_max", sc.n_max)
        .param("tau_c", sc.tau_for(nu))
        .param("clamp_floor", sc.clamp_floor);
}

fn timed(mut f: impl FnMut() -> ResultRecord) -> ResultRecord {
    let t0 = Instant::now();
    let mut rec = f();
    rec.wall_time_s = t0.elapsed().as_secs_f64();
    rec
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Kp2 => run_kp2(cfg),
        ExperimentKind::KpSmall => run_power_sweep(cfg, false),
        ExperimentKind::KpLarge => run_power_sweep(cfg, true),
        ExperimentKind::Multistate => run_multistate(cfg),
        ExperimentKind::GammaEnergy => run_gamma_energy(cfg),
        ExperimentKind::Effdim => run_effdim(cfg),
        ExperimentKind::Custom => run_custom(cfg).map(|r| vec![r]),
    }
}

pub const KP2_DEFAULT_LENGTH: f64 = 1.15;
pub const POWER_SWEEP_DEFAULT_LENGTH: f64 = 4.0;
pub const MULTISTATE_DEFAULT_LENGTH: f64 = 3.0;

fn run_kp2(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let nu = cfg.num("nu", 2f64.powi(-6))?;
    let gc = critical_gravity(nu);
    let gs = cfg.list("g", vec![0.25 * gc, gc, 4.0 * gc])?;
    let gp = GridParams::read(
        cfg,
        KP2_DEFAULT_LENGTH,
        1024,
        SpacingMode::QuadraticClustered,
    )?;
    let sc = solver_config(cfg, 2000)?;
    let grid = gp.build()?;
    let kernel = InteractionKernel::PowerLaw { p: 2.0 };
    Ok(gs
        .par_iter()
        .map(|&g| {
            timed(|| {
                let mut rec = ResultRecord::new(
                    ExperimentKind::Kp2,
                    format!("g={}gc", short(g / gc)),
                    ["x", "rho"],
                );
                gp.echo(&mut rec);
                echo_solver(&mut rec, &sc, nu);
                rec.param("p", 2.0)
                    .param("g", g)
                    .param("g_over_gc", g / gc)
                    .param("init", "4*1[0,0.25]");
                let mut run = || -> Result<()> {
                    let potential = ExternalPotential::linear(g)?;
                    let rho0 = Density::indicator(grid.clone(), 0.0, 0.25, 4.0)?;
                    let report = solve(&kernel, &potential, nu, &rho0, &sc)?;
                    rec.absorb_report(&report);
                    let exact = exact_minimizer(nu, g)?;
                    rec.metric("c_exact", exact.c);
                    rec.metric(
                        "l1_exact",
                        report.density().l1_distance(&exact.sample(&grid))?,
                    );
                    Ok(())
                };
                if let Err(e) = run() {
                    rec.fail(&e);
                }
                rec
            })
        })
        .collect())
}

/// `kpsmall` and `kplarge`: `K = |x|^p / p` over a sweep of `p` and `g`.
fn run_power_sweep(cfg: &ExperimentConfig, large: bool) -> Result<Vec<ResultRecord>> {
    let kind = if large {
        ExperimentKind::KpLarge
    } else {
        ExperimentKind::KpSmall
    };
    let nu = cfg.num("nu", 2f64.powi(-6))?;
    let default_p = if large {
        vec![16.0, 32.0, 64.0, 128.0, 256.0]
    } else {
        vec![1.0625, 1.125, 1.25, 1.5, 2.0, 4.0, 8.0]
    };
    let ps = cfg.list("p", default_p)?;
    let gs = cfg.list("g", vec![0.0, nu])?;
    let gp = GridParams::read(cfg, POWER_SWEEP_DEFAULT_LENGTH, 1024, SpacingMode::Uniform)?;
    let sc = solver_config(cfg, 2000)?;
    let grid = gp.build()?;
    let cases: Vec<(f64, f64)> = ps
        .iter()
        .flat_map(|&p| gs.iter().map(move |&g| (p, g)))
        .collect();
    Ok(cases
        .par_iter()
        .map(|&(p, g)| {
            timed(|| {
                let mut rec = ResultRecord::new(kind, format!("p={p},g={g}"), ["x", "rho"]);
                gp.echo(&mut rec);
                echo_solver(&mut rec, &sc, nu);
                let (a, b, h) = if g == 0.0 {
                    (0.0, 2.0, 0.5)
                } else {
                    (0.0, 1.0, 1.0)
                };
                rec.param("p", p)
                    .param("g", g)
                    .param("init", format!("{h}*1[{a},{b}]"));
                rec.tolerated = large && p >= 256.0;
                let mut run = || -> Result<()> {
                    let kernel = InteractionKernel::power_law(p)?;
                    let potential = ExternalPotential::linear(g)?;
                    let rho0 = Density::indicator(grid.clone(), a, b, h)?;
                    let report = solve(&kernel, &potential, nu, &rho0, &sc)?;
                    rec.absorb_report(&report);
                    if large {
                        let rho = report.density();
                        let start = if g == 0.0 {
                            (moments(rho).m1 - 0.5).clamp(0.0, (gp.length - 1.0).max(0.0))
                        } else {
                            0.0
                        };
                        let limit = p_infinity_state(&potential, nu, start)?;
                        let target = limit.to_density(grid.clone())?;
                        rec.metric("pinf_start", start);
                        rec.metric("l1_pinf", rho.l1_distance(target.values())?);
                    }
                    Ok(())
                };
                if let Err(e) = run() {
                    rec.fail(&e);
                }
                rec
            })
        })
        .collect())
}

fn run_multistate(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let nu = cfg.num("nu", 2f64.powi(-13))?;
    let eps = cfg.num("eps", 0.3)?;
    let starts = cfg.list("schedule", vec![10.0, 2.0])?;
    let stages = cfg.count("stages", 8)?;
    let prominence = cfg.num("prominence", 0.05)?;
    let gp = GridParams::read(cfg, MULTISTATE_DEFAULT_LENGTH, 1024, SpacingMode::Uniform)?;
    let sc = solver_config(cfg, 20000)?;
    let grid = gp.build()?;
    let kernel = InteractionKernel::regularized_qanr(eps)?;
    let schedules = starts
        .iter()
        .map(|&s| ContinuationSchedule::geometric(s * nu, nu, stages))
        .collect::<Result<Vec<_>>>()?;
    Ok(starts
        .par_iter()
        .zip(schedules.par_iter())
        .map(|(&start, schedule)| {
            timed(|| {
                let mut rec = ResultRecord::new(
                    ExperimentKind::Multistate,
                    format!("nu0={start}nu"),
                    ["x", "rho"],
                );
                gp.echo(&mut rec);
                echo_solver(&mut rec, &sc, nu);
                rec.param("eps", eps)
                    .param("nu0_over_nu", start)
                    .param("stages", stages)
                    .param("prominence", prominence)
                    .param("init", "uniform")
                    .param(
                        "schedule",
                        schedule
                            .nus()
                            .iter()
                            .map(|v| format!("{v:?}"))
                            .collect::<Vec<_>>()
                            .join(";"),
                    );
                let mut run = || -> Result<()> {
                    let rho0 = Density::uniform(grid.clone());
                    let reports = solve_with_continuation(
                        &kernel,
                        &ExternalPotential::Zero,
                        schedule,
                        &rho0,
                        &sc,
                    )?;
                    let last = reports.last().expect("nonempty schedule");
                    rec.absorb_report(last);
                    rec.metric(
                        "aggregates",
                        count_aggregates(last.density(), prominence) as f64,
                    );
                    rec.metric(
                        "total_iterations",
                        reports.iter().map(|r| r.iterations).sum::<usize>() as f64,
                    );
                    rec.metric(
                        "descent_violations",
                        reports
                            .iter()
                            .map(|r| if r.full_steps_descend() { 0.0 } else { 1.0 })
                            .sum::<f64>(),
                    );
                    let unconverged = reports.iter().filter(|r| !r.converged).count();
                    rec.metric("unconverged_stages", unconverged as f64);
                    rec.tolerated = true;
                    Ok(())
                };
                if let Err(e) = run() {
                    rec.fail(&e);
                }
                rec
            })
        })
        .collect())
}

fn run_gamma_energy(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let nu = cfg.num("nu", 2f64.powi(-6))?;
    let gc = critical_gravity(nu);
    let gs = cfg.list(
        "g",
        [0.0, 0.25, 1.0, 2.0, 4.0].iter().map(|s| s * gc).collect(),
    )?;
    let c_min = cfg.num("c_min", -0.3)?;
    let c_max = cfg.num("c_max", 1.0)?;
    let points = cfg.count("points", 200)?;
    if !(c_max > c_min) || points < 2 {
        return Err(invalid(
            "c_max",
            "need c_min < c_max and at least two points",
        ));
    }
    if !(nu > 0.0) {
        return Err(invalid("nu", "must be positive"));
    }
    Ok(gs
        .iter()
        .map(|&g| {
            timed(|| {
                let mut rec = ResultRecord::new(
                    ExperimentKind::GammaEnergy,
                    format!("g={}gc", short(g / gc)),
                    ["c", "energy"],
                );
                rec.param("nu", nu)
                    .param("g", g)
                    .param("g_over_gc", g / gc)
                    .param("c_min", c_min)
                    .param("c_max", c_max)
                    .param("points", points);
                rec.samples = (0..points)
                    .map(|k| {
                        let c = c_min + (c_max - c_min) * k as f64 / (points - 1) as f64;
                        [c, energy_on_gamma(c, nu, g)]
                    })
                    .collect();
                let decreasing = rec.samples.windows(2).all(|w| w[1][1] < w[0][1]);
                rec.metric("strictly_decreasing", if decreasing { 1.0 } else { 0.0 });
                let (i_min, e_min) = rec
                    .samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i, s[1]))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("nonempty sweep");
                rec.metric("c_argmin", rec.samples[i_min][0]);
                rec.metric("energy_min", e_min);
                if g > 0.0 {
                    match exact_minimizer(nu, g) {
                        Ok(tg) => {
                            rec.metric("c_critical", tg.c);
                        }
                        Err(e) => rec.fail(&e),
                    }
                }
                rec.converged = rec.error.is_none();
                rec
            })
        })
        .collect())
}

/// The built-in domain list probed by `effdim`.
pub fn builtin_domains() -> Result<Vec<DomainSpec>> {
    Ok(vec![
        DomainSpec::bounded_box(3, 1.0)?,
        DomainSpec::cylinder(1.0)?,
        DomainSpec::slab(vec![1.0], 3)?,
        DomainSpec::full_space_surrogate(3, 1e6)?,
        DomainSpec::half_space(3, 2)?,
        DomainSpec::wedge(std::f64::consts::FRAC_PI_4)?,
        DomainSpec::paraboloid(3)?,
    ])
}

fn run_effdim(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let seed = cfg.count("seed", 0)? as u64;
    let samples = cfg.count("samples", 100_000)?;
    let r_min = cfg.num("r_min", 10.0)?;
    let r_max = cfg.num("r_max", 100.0)?;
    let count = cfg.count("radii", 5)?;
    if count < 3 || !(r_max > r_min && r_min > 0.0) {
        return Err(invalid(
            "radii",
            "need at least three radii with 0 < r_min < r_max",
        ));
    }
    let radii = log_spaced(r_min, r_max, count);
    let domains = builtin_domains()?;
    Ok(domains
        .par_iter()
        .enumerate()
        .map(|(k, d)| {
            timed(|| {
                let mut rec = ResultRecord::new(ExperimentKind::Effdim, d.name(), ["r", "volume"]);
                rec.param("seed", seed as f64)
                    .param("samples", samples)
                    .param("r_min", r_min)
                    .param("r_max", r_max)
                    .param("radii", count)
                    .param("dim", d.dim())
                    .param("probes", d.probe_centers().len());
                let domain_seed = seed.wrapping_add((k as u64) << 32);
                match estimate_volume_profile(d, &radii, samples, domain_seed)
                    .and_then(|p| estimate_effective_dimension(&p).map(|f| (p, f)))
                {
                    Ok((profile, f_d)) => {
                        rec.metric("f_d", f_d);
                        rec.metric(
                            "max_stderr",
                            profile.stderr.iter().cloned().fold(0.0, f64::max),
                        );
                        rec.samples = profile
                            .radii
                            .iter()
                            .zip(&profile.volumes)
                            .map(|(&r, &v)| [r, v])
                            .collect();
                        rec.converged = true;
                    }
                    Err(e) => rec.fail(&e),
                }
                rec
            })
        })
        .collect())
}

fn load_table(key: &'static str, path: &str) -> Result<Table> {
    Table::from_csv_path(path).map_err(|e| invalid(key, e.to_string()))
}

fn run_custom(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let nu = cfg.num("nu", 2f64.powi(-6))?;
    let gp = GridParams::read(cfg, 2.0, 1024, SpacingMode::Uniform)?;
    let sc = solver_config(cfg, 2000)?;
    let grid = gp.build()?;
    let kernel_name = cfg.text(
        "kernel",
        if cfg.overrides.contains_key("kernel_file") {
            "tabulated"
        } else {
            "power"
        },
    );
    let kernel = match kernel_name.as_str() {
        "power" => InteractionKernel::power_law(cfg.num("p", 2.0)?)?,
        "qanr" => InteractionKernel::regularized_qanr(cfg.num("eps", 0.3)?)?,
        "zero" => InteractionKernel::Zero,
        "tabulated" => {
            let path = cfg
                .overrides
                .get("kernel_file")
                .ok_or_else(|| invalid("kernel_file", "required for a tabulated kernel"))?;
            InteractionKernel::Tabulated(load_table("kernel_file", path)?)
        }
        other => {
            return Err(invalid(
                "kernel",
                format!("expected power, qanr, zero or tabulated, got `{other}`"),
            ))
        }
    };
    let potential_name = cfg.text(
        "potential",
        if cfg.overrides.contains_key("potential_file") {
            "tabulated"
        } else if cfg.overrides.contains_key("g") {
            "linear"
        } else {
            "zero"
        },
    );
    let potential = match potential_name.as_str() {
        "zero" => ExternalPotential::Zero,
        "linear" => ExternalPotential::linear(cfg.num("g", 0.0)?)?,
        "tabulated" => {
            let path = cfg
                .overrides
                .get("potential_file")
                .ok_or_else(|| invalid("potential_file", "required for a tabulated potential"))?;
            ExternalPotential::Tabulated(load_table("potential_file", path)?)
        }
        other => {
            return Err(invalid(
                "potential",
                format!("expected zero, linear or tabulated, got `{other}`"),
            ))
        }
    };
    let init = cfg.text("init", "uniform");
    let rho0 = parse_init(&init, grid.clone())?;
    let schedule = match cfg.overrides.get("schedule") {
        Some(_) => Some(ContinuationSchedule::new(cfg.list("schedule", vec![])?)?),
        None => None,
    };
    let final_nu = schedule
        .as_ref()
        .map_or(nu, |s| *s.nus().last().expect("nonempty"));
    let prominence = cfg.num("prominence", 0.05)?;

    Ok(timed(|| {
        let mut rec = ResultRecord::new(ExperimentKind::Custom, "custom", ["x", "rho"]);
        gp.echo(&mut rec);
        echo_solver(&mut rec, &sc, final_nu);
        rec.param("kernel", serde_json::to_string(&kernel).unwrap_or_default())
            .param(
                "potential",
                serde_json::to_string(&potential).unwrap_or_default(),
            )
            .param("init", init.clone())
            .param("prominence", prominence);
        if let Some(s) = &schedule {
            rec.param(
                "schedule",
                s.nus()
                    .iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(";"),
            );
        }
        let mut run = || -> Result<()> {
            let report = match &schedule {
                Some(s) => solve_with_continuation(&kernel, &potential, s, &rho0, &sc)?
                    .pop()
                    .expect("nonempty schedule"),
                None => solve(&kernel, &potential, nu, &rho0, &sc)?,
            };
            rec.absorb_report(&report);
            rec.metric(
                "aggregates",
                count_aggregates(report.density(), prominence) as f64,
            );
            Ok(())
        };
        if let Err(e) = run() {
            rec.fail(&e);
        }
        rec
    }))
}

/// `uniform`, or `a:b` for the normalized indicator of `[a, b]`.
fn parse_init(spec: &str, grid: Arc<Grid>) -> Result<Density> {
    if spec == "uniform" {
        return Ok(Density::uniform(grid));
    }
    let (a, b) = spec
        .split_once(':')
        .ok_or_else(|| invalid("init", format!("expected `uniform` or `a:b`, got `{spec}`")))?;
    Density::indicator(grid, parse_num("init", a)?, parse_num("init", b)?, 1.0)
}

const BASE_COLUMNS: [&str; 9] = [
    "experiment",
    "label",
    "converged",
    "tolerated",
    "flags",
    "error",
    "wall_time_s",
    "samples_file",
    "sample_columns",
];

fn columns(records: &[ResultRecord]) -> (Vec<String>, Vec<String>) {
    let mut params = std::collections::BTreeSet::new();
    let mut metrics = std::collections::BTreeSet::new();
    for r in records {
        params.extend(r.parameters.keys().cloned());
        metrics.extend(r.metrics.keys().cloned());
    }
    (params.into_iter().collect(), metrics.into_iter().collect())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sidecar_name(path: &Path, index: usize) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("results");
    format!("{stem}.samples.{index}.csv")
}

/// Writes the records. CSV output puts one record per row with `param.*` and
/// `metric.*` columns in sorted order, and each record's samples in a sidecar
/// `<stem>.samples.<i>.csv` next to `path`. JSON output is one document.
pub fn emit(records: &[ResultRecord], format: OutputFormat, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    match format {
        OutputFormat::Json => {
            let doc = serde_json::json!({ "records": records });
            let text = serde_json::to_string_pretty(&doc).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            fs::write(path, text).map_err(io_err(path))
        }
        OutputFormat::Csv => write_csv(records, path),
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv(records: &[ResultRecord], path: &Path) -> Result<()> {
    let (params, metrics) = columns(records);
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(params.iter().map(|p| format!("param.{p}")));
    header.extend(metrics.iter().map(|m| format!("metric.{m}")));
    w.write_record(&header).map_err(csv_err(path))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    for (i, r) in records.iter().enumerate() {
        let side = sidecar_name(path, i);
        write_samples(r, &dir.join(&side))?;
        let mut row = vec![
            r.experiment.clone(),
            r.label.clone(),
            r.converged.to_string(),
            r.tolerated.to_string(),
            r.flags.join(";"),
            r.error.clone().unwrap_or_default(),
            format!("{:?}", r.wall_time_s),
            side,
            r.sample_columns.join(";"),
        ];
        for p in &params {
            row.push(match r.parameters.get(p) {
                Some(ParamValue::Num(v)) => format!("{v:?}"),
                Some(ParamValue::Text(s)) => format!("'{s}"),
                None => String::new(),
            });
        }
        for m in &metrics {
            row.push(
                r.metrics
                    .get(m)
                    .map(|v| format!("{v:?}"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_samples(r: &ResultRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(&r.sample_columns).map_err(csv_err(path))?;
    for s in &r.samples {
        w.write_record([format!("{:?}", s[0]), format!("{:?}", s[1])])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn parse_field<T: FromStr>(path: &Path, what: &str, s: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| {
        invalid(
            "csv",
            format!("{}: cannot parse {what} from `{s}`", path.display()),
        )
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(String::from)
        .collect();
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err(path))?;
        let field = |name: &str| -> &str {
            header
                .iter()
                .position(|h| h == name)
                .and_then(|i| row.get(i))
                .unwrap_or("")
        };
        let cols: Vec<&str> = field("sample_columns").split(';').collect();
        let mut rec = ResultRecord {
            experiment: field("experiment").to_string(),
            label: field("label").to_string(),
            parameters: BTreeMap::new(),
            metrics: BTreeMap::new(),
            converged: parse_field(path, "converged", field("converged"))?,
            tolerated: parse_field(path, "tolerated", field("tolerated"))?,
            flags: field("flags")
                .split(';')
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            error: Some(field("error").to_string()).filter(|s| !s.is_empty()),
            sample_columns: [
                cols.first().copied().unwrap_or("").to_string(),
                cols.get(1).copied().unwrap_or("").to_string(),
            ],
            samples: Vec::new(),
            wall_time_s: parse_field(path, "wall_time_s", field("wall_time_s"))?,
        };
        for (h, v) in header.iter().zip(row.iter()) {
            if v.is_empty() {
                continue;
            }
            if let Some(p) = h.strip_prefix("param.") {
                let value = match v.strip_prefix('\'') {
                    Some(text) => ParamValue::Text(text.to_string()),
                    None => ParamValue::Num(parse_field(path, p, v)?),
                };
                rec.parameters.insert(p.to_string(), value);
            } else if let Some(m) = h.strip_prefix("metric.") {
                rec.metrics.insert(m.to_string(), parse_field(path, m, v)?);
            }
        }
        let side: PathBuf = dir.join(field("samples_file"));
        let mut srdr = csv::Reader::from_path(&side).map_err(csv_err(&side))?;
        for s in srdr.records() {
            let s = s.map_err(csv_err(&side))?;
            rec.samples.push([
                parse_field(&side, "sample", s.get(0).unwrap_or(""))?,
                parse_field(&side, "sample", s.get(1).unwrap_or(""))?,
            ]);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_json(path: &Path) -> Result<Vec<ResultRecord>> {
    #[derive(Deserialize)]
    struct Doc {
        records: Vec<ResultRecord>,
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: Doc = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(doc.records)
}

pub fn read_records(path: &Path, format: OutputFormat) -> Result<Vec<ResultRecord>> {
    match format {
        OutputFormat::Csv => read_csv(path),
        OutputFormat::Json => read_json(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("kp3".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn unknown_overrides_are_rejected() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Kp2);
        assert!(cfg.set("nu", "2^-6").is_ok());
        assert!(matches!(
            cfg.set("colour", "red"),
            Err(Error::UnknownOverride(_))
        ));
        assert!(matches!(
            cfg.set("eps", "0.3"),
            Err(Error::UnknownOverride(_))
        ));
        assert!(cfg.set_pair("no-equals").is_err());
        let mut raw = ExperimentConfig::new(ExperimentKind::Effdim);
        raw.overrides.insert("nu".into(), "1".into());
        assert!(run_experiment(&raw).is_err());
    }

    #[test]
    fn numbers_accept_powers_of_two() {
        assert_eq!(parse_num("nu", "2^-6").unwrap(), 2f64.powi(-6));
        assert_eq!(parse_num("nu", "0.5").unwrap(), 0.5);
        assert!(parse_num("nu", "inf").is_err());
        assert!(parse_num("nu", "abc").is_err());
    }

    #[test]
    fn invalid_values_are_errors() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Kp2);
        cfg.set("N", "2").unwrap();
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = ExperimentConfig::new(ExperimentKind::Kp2);
        cfg.set("grid", "hexagonal").unwrap();
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn gamma_energy_without_gravity_is_decreasing() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::GammaEnergy);
        cfg.set("g", "0").unwrap();
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].get("strictly_decreasing"), Some(1.0));
        assert!(recs[0].ok());
    }

    #[test]
    fn custom_solve_reports_aggregates() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Custom);
        cfg.set("nu", "2^-5").unwrap();
        cfg.set("N", "256").unwrap();
        cfg.set("g", "0.1").unwrap();
        cfg.set("init", "0:0.5").unwrap();
        let recs = run_experiment(&cfg).unwrap();
        let r = &recs[0];
        assert!(r.converged, "{:?}", r.error);
        assert_eq!(r.get("aggregates"), Some(1.0));
        assert_eq!(r.samples.len(), 256);
    }
}
