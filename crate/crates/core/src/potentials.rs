//! Interaction kernels `K` and external potentials `V`.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Piecewise-linear table `x -> y` with strictly increasing abscissae.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Table {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Table> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                expected: xs.len(),
                found: ys.len(),
            });
        }
        if xs.len() < 2 {
            return Err(invalid("table", "need at least two rows"));
        }
        if !xs.windows(2).all(|p| p[1] > p[0]) {
            return Err(invalid("table", "abscissae must be strictly increasing"));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(invalid("table", "entries must be finite"));
        }
        Ok(Table { xs, ys })
    }

    /// Tabulates `f` at the given abscissae.
    pub fn from_fn(xs: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Table> {
        let ys = xs.iter().map(|&x| f(x)).collect();
        Table::new(xs, ys)
    }

    /// Two-column CSV `x,y`; a non-numeric first row is treated as a header.
    pub fn from_csv_reader(reader: impl Read) -> std::result::Result<Table, csv::Error> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
            match (parse(0), parse(1)) {
                (Some(x), Some(y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                _ if row == 0 => continue,
                _ => {
                    return Err(csv::Error::from(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("row {}: expected two numeric columns", row + 1),
                    )))
                }
            }
        }
        Table::new(xs, ys).map_err(|e| {
            csv::Error::from(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                e.to_string(),
            ))
        })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Table> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Table::from_csv_reader(file).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn segment(&self, x: f64) -> Result<usize> {
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfTableRange { x, lo, hi });
        }
        // index of the segment [xs[k], xs[k+1]] containing x
        let k = self.xs.partition_point(|&t| t <= x).saturating_sub(1);
        Ok(k.min(self.xs.len() - 2))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let k = self.segment(x)?;
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let t = (x - x0) / (x1 - x0);
        Ok(self.ys[k] + t * (self.ys[k + 1] - self.ys[k]))
    }

    /// Slope of the segment containing `x`.
    pub fn slope(&self, x: f64) -> Result<f64> {
        let k = self.segment(x)?;
        Ok((self.ys[k + 1] - self.ys[k]) / (self.xs[k + 1] - self.xs[k]))
    }
}

/// Even interaction kernel `K(x) = K(-x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionKernel {
    Zero,
    /// `|x|^p / p`.
    PowerLaw {
        p: f64,
    },
    /// `x^2/2 - |x|` for `|x| > eps`, `x^2/2 - eps/2 - x^2/(2 eps)` inside:
    /// quadratic attraction with a C^1-smoothed Newtonian repulsion.
    RegularizedQanr {
        eps: f64,
    },
    Shifted {
        base: Box<InteractionKernel>,
        offset: f64,
    },
    /// Linear interpolation in `|x|`.
    Tabulated(Table),
}

impl InteractionKernel {
    pub fn power_law(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(invalid("p", format!("power must be positive, got {p}")));
        }
        Ok(InteractionKernel::PowerLaw { p })
    }

    pub fn regularized_qanr(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(invalid(
                "eps",
                format!("regularization must lie in (0, 1], got {eps}"),
            ));
        }
        Ok(InteractionKernel::RegularizedQanr { eps })
    }

    pub fn shifted(self, offset: f64) -> Self {
        InteractionKernel::Shifted {
            base: Box::new(self),
            offset,
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let r = x.abs();
        match self {
            InteractionKernel::Zero => Ok(0.0),
            InteractionKernel::PowerLaw { p } => {
                if !(*p > 0.0) {
                    return Err(invalid("p", format!("power must be positive, got {p}")));
                }
                Ok(r.powf(*p) / p)
            }
            InteractionKernel::RegularizedQanr { eps } => {
                if !(*eps > 0.0) {
                    return Err(invalid(
                        "eps",
                        format!("regularization must be positive, got {eps}"),
                    ));
                }
                let repulsion = if r > *eps {
                    -r
                } else {
                    -0.5 * eps - r * r / (2.0 * eps)
                };
                Ok(0.5 * r * r + repulsion)
            }
            InteractionKernel::Shifted { base, offset } => Ok(base.eval(r)? + offset),
            InteractionKernel::Tabulated(t) => t.eval(r),
        }
    }
}

pub fn eval_kernel(kernel: &InteractionKernel, x: f64) -> Result<f64> {
    kernel.eval(x)
}

/// External potential on `[0, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExternalPotential {
    Zero,
    /// `g x`.
    Linear {
        g: f64,
    },
    Tabulated(Table),
}

impl ExternalPotential {
    pub fn linear(g: f64) -> Result<Self> {
        if !(g >= 0.0 && g.is_finite()) {
            return Err(invalid(
                "g",
                format!("gravity must be nonnegative, got {g}"),
            ));
        }
        Ok(ExternalPotential::Linear { g })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            ExternalPotential::Zero => Ok(0.0),
            ExternalPotential::Linear { g } => Ok(g * x),
            ExternalPotential::Tabulated(t) => t.eval(x),
        }
    }

    /// `V'(x)`; one-sided (segment) slope for tables.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        match self {
            ExternalPotential::Zero => Ok(0.0),
            ExternalPotential::Linear { g } => Ok(*g),
            ExternalPotential::Tabulated(t) => t.slope(x),
        }
    }

    /// The gravity constant when `V = g x`.
    pub fn gravity(&self) -> Option<f64> {
        match self {
            ExternalPotential::Linear { g } => Some(*g),
            _ => None,
        }
    }

    pub fn sample(&self, nodes: &[f64]) -> Result<Vec<f64>> {
        nodes.iter().map(|&x| self.eval(x)).collect()
    }
}

pub fn eval_external(potential: &ExternalPotential, x: f64) -> Result<f64> {
    potential.eval(x)
}

/// Outcome of comparing the far-field growth of `K` with `2 f_D nu log|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExistenceClass {
    /// Growth below the threshold: the energy is unbounded below.
    DiffusionDominated,
    /// Growth above the threshold.
    GrowthSufficient,
    Inconclusive,
}

pub const DEFAULT_EXISTENCE_BAND: f64 = 0.05;

pub fn classify_existence(
    kernel: &InteractionKernel,
    nu: f64,
    f_d: f64,
    probe_radii: &[f64],
) -> Result<ExistenceClass> {
    classify_existence_with_band(kernel, nu, f_d, probe_radii, DEFAULT_EXISTENCE_BAND)
}

/// Least-squares fit of `K(r) = s log r + C` over the probe radii, with `s`
/// compared against `2 f_D nu` using a relative dead band.
pub fn classify_existence_with_band(
    kernel: &InteractionKernel,
    nu: f64,
    f_d: f64,
    probe_radii: &[f64],
    band: f64,
) -> Result<ExistenceClass> {
    if probe_radii.len() < 2 {
        return Err(invalid("probe_radii", "need at least two radii"));
    }
    if !probe_radii.windows(2).all(|p| p[1] > p[0]) || probe_radii[0] <= 1.0 {
        return Err(invalid("probe_radii", "radii must be increasing and > 1"));
    }
    if !(nu > 0.0) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    let logs: Vec<f64> = probe_radii.iter().map(|r| r.ln()).collect();
    let values = probe_radii
        .iter()
        .map(|&r| kernel.eval(r))
        .collect::<Result<Vec<f64>>>()?;
    let slope = least_squares_slope(&logs, &values);
    let threshold = 2.0 * f_d * nu;
    Ok(if slope < threshold * (1.0 - band) {
        ExistenceClass::DiffusionDominated
    } else if slope > threshold * (1.0 + band) {
        ExistenceClass::GrowthSufficient
    } else {
        ExistenceClass::Inconclusive
    })
}

pub(crate) fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_examples() {
        let k2 = InteractionKernel::PowerLaw { p: 2.0 };
        assert_eq!(k2.eval(3.0).unwrap(), 4.5);
        let q = InteractionKernel::RegularizedQanr { eps: 0.3 };
        assert!((q.eval(0.0).unwrap() - (-0.15)).abs() < 1e-15);
        assert!((q.eval(0.3).unwrap() - (0.045 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn qanr_seam_is_continuous() {
        let eps = 0.3f64;
        let outer = 0.5 * eps * eps - eps;
        let inner = 0.5 * eps * eps - 0.5 * eps - eps * eps / (2.0 * eps);
        assert!((outer - inner).abs() < 1e-14);
    }

    #[test]
    fn qanr_seam_is_c1() {
        let q = InteractionKernel::RegularizedQanr { eps: 0.3 };
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let h = 10f64.powi(-k);
            let left = (q.eval(0.3).unwrap() - q.eval(0.3 - h).unwrap()) / h;
            let right = (q.eval(0.3 + h).unwrap() - q.eval(0.3).unwrap()) / h;
            let gap = (left - right).abs();
            assert!(gap < 5.0 * h, "h={h} gap={gap}");
            assert!(gap < prev);
            prev = gap;
        }
    }

    #[test]
    fn power_law_rejects_nonpositive() {
        assert!(InteractionKernel::power_law(0.0).is_err());
        assert!(InteractionKernel::PowerLaw { p: -1.0 }.eval(1.0).is_err());
    }

    #[test]
    fn tabulated_out_of_range() {
        let t = Table::new(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        let k = InteractionKernel::Tabulated(t.clone());
        assert_eq!(k.eval(-0.5).unwrap(), 1.0);
        assert!(matches!(k.eval(1.5), Err(Error::OutOfTableRange { .. })));
        let v = ExternalPotential::Tabulated(t);
        assert!(v.eval(-0.1).is_err());
    }

    #[test]
    fn external_examples() {
        assert_eq!(ExternalPotential::Zero.eval(3.7).unwrap(), 0.0);
        assert!((ExternalPotential::Linear { g: 0.1 }.eval(2.0).unwrap() - 0.2).abs() < 1e-16);
        for g in [0.0, 0.5, 7.0] {
            assert_eq!(ExternalPotential::Linear { g }.eval(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn csv_with_and_without_header() {
        let with = "displacement,value\n0,1\n1,3\n";
        let t = Table::from_csv_reader(with.as_bytes()).unwrap();
        assert_eq!(t.eval(0.5).unwrap(), 2.0);
        let without = "0,1\n1,3\n2,4\n";
        let t = Table::from_csv_reader(without.as_bytes()).unwrap();
        assert_eq!(t.eval(1.5).unwrap(), 3.5);
        assert!(Table::from_csv_reader("0,1\nx,2\n".as_bytes()).is_err());
    }

    #[test]
    fn classify_examples() {
        let radii = [10.0, 100.0, 1000.0];
        let c =
            classify_existence(&InteractionKernel::PowerLaw { p: 2.0 }, 0.3, 1.0, &radii).unwrap();
        assert_eq!(c, ExistenceClass::GrowthSufficient);

        let nu = 0.1;
        let f_d = 1.0;
        let xs: Vec<f64> = (0..=60).map(|k| 2.0 + k as f64 * 20.0).collect();
        let half = Table::from_fn(xs.clone(), |r| 0.5 * 2.0 * f_d * nu * r.ln()).unwrap();
        let k = InteractionKernel::Tabulated(half).shifted(0.0);
        let radii = [10.0, 100.0, 1000.0];
        assert_eq!(
            classify_existence(&k, nu, f_d, &radii).unwrap(),
            ExistenceClass::DiffusionDominated
        );

        // nodes at the radii themselves so interpolation is exact there
        let exact = Table::from_fn(vec![2.0, 10.0, 100.0, 1000.0, 1200.0], |r| {
            2.0 * f_d * nu * r.ln()
        })
        .unwrap();
        assert_eq!(
            classify_existence(&InteractionKernel::Tabulated(exact), nu, f_d, &radii).unwrap(),
            ExistenceClass::Inconclusive
        );

        assert!(classify_existence(&InteractionKernel::Zero, nu, f_d, &[10.0]).is_err());
    }

    proptest! {
        #[test]
        fn kernels_are_even(x in -8.0f64..8.0, p in 0.1f64..12.0, eps in 0.01f64..1.0) {
            let ks = [
                InteractionKernel::PowerLaw { p },
                InteractionKernel::RegularizedQanr { eps },
                InteractionKernel::PowerLaw { p }.shifted(3.5),
                InteractionKernel::Tabulated(Table::from_fn(vec![0.0, 1.0, 4.0, 9.0], |r| r.sqrt()).unwrap()),
            ];
            for k in &ks {
                prop_assert_eq!(k.eval(x).unwrap(), k.eval(-x).unwrap());
            }
        }

        #[test]
        fn power_law_monotone(a in 0.0f64..5.0, b in 0.0f64..5.0, p in 0.05f64..16.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let k = InteractionKernel::PowerLaw { p };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(k.eval(-lo).unwrap() < k.eval(hi).unwrap());
        }
    }
}
