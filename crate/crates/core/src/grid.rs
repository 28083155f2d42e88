//! Quadrature grids on `[0, L]`, grid densities, and the discrete
//! convolution `(K * rho)(x_i)` used by every other module.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::potentials::InteractionKernel;

/// Node placement on `[0, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingMode {
    /// `x_i = L i / (N - 1)`.
    Uniform,
    /// `x_i = L (i / (N - 1))^2`, clustered towards `x = 0`.
    QuadraticClustered,
}

impl std::str::FromStr for SpacingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SpacingMode::Uniform),
            "quadratic" | "quadratic_clustered" => Ok(SpacingMode::QuadraticClustered),
            other => Err(invalid("grid", format!("unknown spacing mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for SpacingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpacingMode::Uniform => f.write_str("uniform"),
            SpacingMode::QuadraticClustered => f.write_str("quadratic"),
        }
    }
}

/// Quadrature nodes and trapezoid weights on `[0, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    length: f64,
    mode: SpacingMode,
}

impl Grid {
    pub fn new(length: f64, n: usize, mode: SpacingMode) -> Result<Grid> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid(
                "L",
                format!("domain length must be positive, got {length}"),
            ));
        }
        if n < 3 {
            return Err(invalid("N", format!("need at least 3 nodes, got {n}")));
        }
        let last = (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n)
            .map(|i| {
                let s = i as f64 / last;
                match mode {
                    SpacingMode::Uniform => length * s,
                    SpacingMode::QuadraticClustered => length * s * s,
                }
            })
            .collect();
        nodes[0] = 0.0;
        nodes[n - 1] = length;

        let mut weights = vec![0.0; n];
        for i in 0..n - 1 {
            let half = 0.5 * (nodes[i + 1] - nodes[i]);
            weights[i] += half;
            weights[i + 1] += half;
        }
        Ok(Grid {
            nodes,
            weights,
            length,
            mode,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn mode(&self) -> SpacingMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Uniform node spacing, if the grid is uniform.
    pub fn uniform_spacing(&self) -> Option<f64> {
        match self.mode {
            SpacingMode::Uniform => Some(self.length / (self.len() - 1) as f64),
            SpacingMode::QuadraticClustered => None,
        }
    }

    /// Trapezoid integral `sum_i w_i f_i`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        Ok(self.integrate_unchecked(f))
    }

    pub(crate) fn integrate_unchecked(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub(crate) fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: f.len(),
            });
        }
        Ok(())
    }
}

pub fn make_grid(length: f64, n: usize, mode: SpacingMode) -> Result<Grid> {
    Grid::new(length, n, mode)
}

pub fn integrate(grid: &Grid, f: &[f64]) -> Result<f64> {
    grid.integrate(f)
}

/// A nonnegative grid function with unit mass under the grid's quadrature.
#[derive(Debug, Clone)]
pub struct Density {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Density {
    /// Validates and renormalizes `values` to unit mass.
    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Density> {
        grid.check_len(&values)?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(invalid(
                "density",
                format!("value at node {i} must be finite and nonnegative, got {v}"),
            ));
        }
        let mass = grid.integrate_unchecked(&values);
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Degenerate(format!("density has mass {mass}")));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(Density { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Density> {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Density::from_values(grid, values)
    }

    pub fn uniform(grid: Arc<Grid>) -> Density {
        let l = grid.length();
        let values = vec![1.0 / l; grid.len()];
        Density { grid, values }
    }

    /// `height * 1_[a, b]`, renormalized on the grid.
    pub fn indicator(grid: Arc<Grid>, a: f64, b: f64, height: f64) -> Result<Density> {
        if !(b > a) || !(height > 0.0) {
            return Err(invalid(
                "indicator",
                format!("need a < b and height > 0, got [{a}, {b}], {height}"),
            ));
        }
        Density::from_fn(grid, |x| if x >= a && x <= b { height } else { 0.0 })
    }

    /// Values already known to be nonnegative with unit mass.
    pub(crate) fn from_normalized(grid: Arc<Grid>, values: Vec<f64>) -> Density {
        debug_assert_eq!(grid.len(), values.len());
        Density { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate_unchecked(&self.values)
    }

    /// `(1 - tau) self + tau other`; both must live on the same grid.
    pub fn relax_towards(&self, other: &Density, tau: f64) -> Result<Density> {
        if !Arc::ptr_eq(&self.grid, &other.grid) && *self.grid != *other.grid {
            return Err(invalid(
                "density",
                "cannot combine densities on different grids",
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - tau) * a + tau * b)
            .collect();
        Ok(Density::from_normalized(self.grid.clone(), values))
    }

    /// Weighted L1 distance `sum_i w_i |a_i - b_i|`.
    pub fn l1_distance(&self, other: &[f64]) -> Result<f64> {
        self.grid.check_len(other)?;
        Ok(l1_distance(&self.grid, &self.values, other))
    }
}

pub(crate) fn l1_distance(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.weights()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * (x - y).abs())
        .sum()
}

enum Layout {
    /// `table[N - 1 + k] = K(k h)` for `k` in `-(N-1)..=(N-1)`.
    Toeplitz(Vec<f64>),
    /// Row-major `K(x_i - x_j)`.
    Dense(Vec<f64>),
}

/// Precomputed kernel samples for repeated evaluation of `(K * rho)(x_i)`.
///
/// On uniform grids the kernel depends only on `i - j`, so only `2N - 1`
/// values are stored; otherwise the full `N x N` matrix is kept.
#[derive(Clone)]
pub struct ConvolutionOperator {
    grid: Arc<Grid>,
    layout: Arc<Layout>,
}

impl std::fmt::Debug for ConvolutionOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match *self.layout {
            Layout::Toeplitz(_) => "toeplitz",
            Layout::Dense(_) => "dense",
        };
        f.debug_struct("ConvolutionOperator")
            .field("nodes", &self.grid.len())
            .field("layout", &kind)
            .finish()
    }
}

const PARALLEL_ROWS: usize = 256;

impl ConvolutionOperator {
    pub fn new(grid: Arc<Grid>, kernel: &InteractionKernel) -> Result<ConvolutionOperator> {
        let n = grid.len();
        let layout = match grid.uniform_spacing() {
            Some(h) => {
                let mut table = vec![0.0; 2 * n - 1];
                for k in 0..n {
                    let d = k as f64 * h;
                    let v = finite_kernel(kernel, d)?;
                    table[n - 1 + k] = v;
                    table[n - 1 - k] = v;
                }
                Layout::Toeplitz(table)
            }
            None => {
                let x = grid.nodes();
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..=i {
                        let v = finite_kernel(kernel, x[i] - x[j])?;
                        m[i * n + j] = v;
                        m[j * n + i] = v;
                    }
                }
                Layout::Dense(m)
            }
        };
        Ok(ConvolutionOperator {
            grid,
            layout: Arc::new(layout),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// `u_i = sum_j w_j K(x_i - x_j) f_j`.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_len(f)?;
        Ok(self.apply_unchecked(f))
    }

    pub(crate) fn apply_unchecked(&self, f: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let wf: Vec<f64> = self
            .grid
            .weights()
            .iter()
            .zip(f)
            .map(|(w, v)| w * v)
            .collect();
        let row = |i: usize| -> f64 {
            let k = match &*self.layout {
                Layout::Toeplitz(t) => &t[n - 1 - i..2 * n - 1 - i],
                Layout::Dense(m) => &m[i * n..(i + 1) * n],
            };
            dot(k, &wf)
        };
        if n >= PARALLEL_ROWS {
            (0..n).into_par_iter().map(row).collect()
        } else {
            (0..n).map(row).collect()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators; lets the compiler vectorize without reassociation flags
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn finite_kernel(kernel: &InteractionKernel, d: f64) -> Result<f64> {
    let v = kernel.eval(d)?;
    if !v.is_finite() {
        return Err(Error::NonFiniteKernel {
            displacement: d,
            value: v,
        });
    }
    Ok(v)
}

/// Direct trapezoid discretization of `(K * rho)(x_i)` over `[0, L]`.
pub fn convolve_kernel(grid: &Grid, kernel: &InteractionKernel, rho: &Density) -> Result<Vec<f64>> {
    grid.check_len(rho.values())?;
    let x = grid.nodes();
    let w = grid.weights();
    let r = rho.values();
    let mut out = Vec::with_capacity(grid.len());
    for &xi in x {
        let mut s = 0.0;
        for j in 0..x.len() {
            s += w[j] * finite_kernel(kernel, xi - x[j])? * r[j];
        }
        out.push(s);
    }
    Ok(out)
}
