//! Closed-form equilibria for `K = x^2/2`, `V = g x` on the half-line, and
//! the compactly supported limit state of `|x|^p / p` as `p -> infinity`.
//!
//! The critical points form the family of truncated Gaussians
//! `rho_c(x) = A(c) exp(-(x - c)^2 / (2 nu))` on `[0, inf)`. With
//! `ct = c / sqrt(2 nu)` and `f(ct) = log(1 + erf(ct))`, the energy along the
//! family and the criticality condition reduce to scalar functions of `ct`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Density, Grid};
use crate::potentials::ExternalPotential;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

const SERIES_LIMIT: f64 = 2.0;
const SQRT_PI: f64 = 1.772_453_850_905_516;

/// `exp(-x^2) sum 2^n x^(2n+1) / (2n+1)!!`; all terms positive.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > 1e-17 * sum {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// `exp(x^2) erfc(x)` for `x >= 2` by the Laplace continued fraction
/// `1 / (x + (1/2) / (x + 1 / (x + (3/2) / (x + ...))))`, modified Lentz.
fn erfcx_fraction(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..5000 {
        let a = 0.5 * k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / (SQRT_PI * f)
}

pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    let a = x.abs();
    let v = if a < SERIES_LIMIT {
        erf_series(a)
    } else {
        1.0 - (-a * a).exp() * erfcx_fraction(a)
    };
    v.copysign(x)
}

pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x >= SERIES_LIMIT {
        (-x * x).exp() * erfcx_fraction(x)
    } else if x > -SERIES_LIMIT {
        1.0 - erf(x)
    } else {
        2.0 - erfc(-x)
    }
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x >= SERIES_LIMIT {
        erfcx_fraction(x)
    } else if x > -SERIES_LIMIT {
        (x * x).exp() * (1.0 - erf(x))
    } else {
        2.0 * (x * x).exp() - erfcx_fraction(-x)
    }
}

/// `(f, f', f'')` where `f = log(1 + erf(ct))`.
pub fn f_and_derivatives(ct: f64) -> (f64, f64, f64) {
    let f = if ct >= 0.0 {
        erf(ct).ln_1p()
    } else {
        erfcx(-ct).ln() - ct * ct
    };
    let f1 = FRAC_2_SQRT_PI / erfcx(-ct);
    let f2 = -2.0 * ct * f1 - f1 * f1;
    (f, f1, f2)
}

/// Energy of `rho_c` for `K = x^2/2`, `V = g x`.
pub fn energy_on_gamma(c: f64, nu: f64, g: f64) -> f64 {
    let ct = c / (2.0 * nu).sqrt();
    let (f, f1, _) = f_and_derivatives(ct);
    nu * (2.0 / (2.0 * PI * nu).sqrt()).ln() - nu * (f + 0.25 * f1 * f1)
        + g * ((nu / 2.0).sqrt() * f1 + (2.0 * nu).sqrt() * ct)
}

/// `d/dc energy_on_gamma = (1 + f''/2) (g - sqrt(nu/2) f')`.
pub fn energy_on_gamma_derivative(c: f64, nu: f64, g: f64) -> f64 {
    let ct = c / (2.0 * nu).sqrt();
    let (_, f1, f2) = f_and_derivatives(ct);
    (1.0 + 0.5 * f2) * (g - (nu / 2.0).sqrt() * f1)
}

/// Gravity at which the critical point is exactly a half-Gaussian.
pub fn critical_gravity(nu: f64) -> f64 {
    (2.0 * nu / PI).sqrt()
}

/// Shift `c*` of the unique critical point, from `f'(c*/sqrt(2 nu)) = sqrt(2/nu) g`.
pub fn solve_critical_shift(nu: f64, g: f64) -> Result<f64> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::NoRoot(format!(
            "f' > 0 has no root for g = {g}; the energy has no critical point without confinement"
        )));
    }
    let target = (2.0 / nu).sqrt() * g;
    let h = |ct: f64| f_and_derivatives(ct).1 - target;
    // h is strictly decreasing from +inf to -target
    let (mut lo, mut hi) = (-1.0, 1.0);
    while h(lo) < 0.0 {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::NoRoot(format!("no bracket for g = {g}")));
        }
    }
    while h(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::NoRoot(format!("no bracket for g = {g}")));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = h(mid);
        if v == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ct = if h(lo).abs() <= h(hi).abs() { lo } else { hi };
    Ok((2.0 * nu).sqrt() * ct)
}

/// `A(c) exp(-(x - c)^2 / (2 nu))` on `[0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussian {
    pub c: f64,
    pub nu: f64,
    pub a: f64,
}

impl TruncatedGaussian {
    pub fn new(c: f64, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(invalid("nu", format!("must be positive, got {nu}")));
        }
        if !c.is_finite() {
            return Err(invalid("c", "must be finite"));
        }
        let a = (2.0 / (2.0 * PI * nu).sqrt()) / erfc(-c / (2.0 * nu).sqrt());
        Ok(TruncatedGaussian { c, nu, a })
    }

    pub fn c_tilde(&self) -> f64 {
        self.c / (2.0 * self.nu).sqrt()
    }

    pub fn eval(&self, x: f64) -> f64 {
        // written as erfcx(-ct)^{-1} exp(x (2c - x) / (2 nu)) to avoid overflow for c << 0
        let scale = (2.0 / (2.0 * PI * self.nu).sqrt()) / erfcx(-self.c_tilde());
        scale * (x * (2.0 * self.c - x) / (2.0 * self.nu)).exp()
    }

    pub fn at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// `c + sqrt(nu/2) f'(ct)`.
    pub fn first_moment(&self) -> f64 {
        self.c + (self.nu / 2.0).sqrt() * f_and_derivatives(self.c_tilde()).1
    }

    /// Interval beyond which the density is negligible.
    pub fn support_hint(&self) -> f64 {
        self.c.max(0.0) + 12.0 * self.nu.sqrt()
    }

    /// Point values at the grid nodes, not renormalized.
    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        grid.nodes().iter().map(|&x| self.eval(x)).collect()
    }

    pub fn to_density(&self, grid: Arc<Grid>) -> Result<Density> {
        let values = self.sample(&grid);
        Density::from_values(grid, values)
    }

    /// `T` maps `rho_c` to `rho_{c'}` with `c' = M1(rho_c) - g`.
    pub fn image_shift(&self, g: f64) -> f64 {
        self.first_moment() - g
    }
}

/// Unique critical point for `K = x^2/2`, `V = g x`, `g > 0`.
pub fn exact_minimizer(nu: f64, g: f64) -> Result<TruncatedGaussian> {
    TruncatedGaussian::new(solve_critical_shift(nu, g)?, nu)
}

/// `Z^{-1} exp(-V/nu)` on `[start, start + 1]`, zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PInfinityState {
    pub start: f64,
    pub nu: f64,
    pub potential: ExternalPotential,
    pub z: f64,
}

impl PInfinityState {
    pub fn eval(&self, x: f64) -> Result<f64> {
        if x < self.start || x > self.start + 1.0 {
            return Ok(0.0);
        }
        Ok((-self.potential.eval(x)? / self.nu).exp() / self.z)
    }

    /// Grid samples renormalized under the grid's quadrature.
    pub fn to_density(&self, grid: Arc<Grid>) -> Result<Density> {
        let values = grid
            .nodes()
            .iter()
            .map(|&x| self.eval(x))
            .collect::<Result<Vec<f64>>>()?;
        Density::from_values(grid, values)
    }
}

pub fn p_infinity_state(
    potential: &ExternalPotential,
    nu: f64,
    support_start: f64,
) -> Result<PInfinityState> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    let s = support_start;
    let z = match potential {
        ExternalPotential::Zero => 1.0,
        ExternalPotential::Linear { g } if *g == 0.0 => 1.0,
        ExternalPotential::Linear { g } => {
            let k = g / nu;
            (-k * s).exp() * (-(-k).exp_m1()) / k
        }
        ExternalPotential::Tabulated(_) => {
            let n = 4000;
            let h = 1.0 / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let x = s + i as f64 * h;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * (-potential.eval(x)? / nu).exp();
            }
            acc * h / 3.0
        }
    };
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::PartitionFailure { z });
    }
    Ok(PInfinityState {
        start: s,
        nu,
        potential: potential.clone(),
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpacingMode;
    use proptest::prelude::*;

    fn maclaurin_erf(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut pow = x;
        let mut fact = 1.0;
        for n in 0..30 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * pow / (fact * (2 * n + 1) as f64);
            pow *= x * x;
            fact *= (n + 1) as f64;
        }
        FRAC_2_SQRT_PI * sum
    }

    #[test]
    fn erf_values() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(1.0) - 0.842700792949715).abs() < 1e-14);
        assert!((erf(1.0) - maclaurin_erf(1.0)).abs() < 1e-15);
        for k in 0..=40 {
            let x = -2.0 + 0.1 * k as f64;
            assert!((erf(x) - maclaurin_erf(x)).abs() < 1e-14, "{x}");
        }
    }

    #[test]
    fn erfcx_is_continuous_across_branch() {
        let a = erfcx(2.0 - 1e-12);
        let b = erfcx(2.0);
        assert!((a - b).abs() / b < 1e-12);
        // reference values at x = 5, 27
        assert!((erfcx(5.0) / 0.11070463773306863 - 1.0).abs() < 1e-14);
        assert!((erfcx(27.0) / 0.02088160799042094 - 1.0).abs() < 1e-14);
        assert!((erfc(3.0) / 2.209049699858544e-5 - 1.0).abs() < 1e-14);
        assert!((erfcx(0.0) - 1.0).abs() < 1e-15);
        assert!(erfcx(1e4) > 0.0);
    }

    #[test]
    fn f_at_zero() {
        let (f, f1, f2) = f_and_derivatives(0.0);
        assert_eq!(f, 0.0);
        assert!((f1 - 2.0 / PI.sqrt()).abs() < 1e-14);
        assert!((f2 + 4.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn f_consistent_with_erf_far_left() {
        let (f, _, _) = f_and_derivatives(-3.0);
        assert!((f - erfc(3.0).ln()).abs() < 1e-12);
        let (f, f1, _) = f_and_derivatives(-40.0);
        assert!(f.is_finite() && f1.is_finite() && f1 > 0.0);
    }

    #[test]
    fn f_prime_bounds() {
        for k in 0..=10000 {
            let ct = -5.0 + 1e-3 * k as f64;
            let (_, f1, f2) = f_and_derivatives(ct);
            assert!(f1 > 0.0);
            // f'' decreases to -2 as ct -> -inf; -4/pi is its value at 0 and its minimum on [0, inf)
            assert!(f2 > -2.0, "{ct} {f2}");
            if ct >= 0.0 {
                assert!(f2 >= -4.0 / PI - 1e-9, "{ct} {f2}");
            }
        }
    }

    #[test]
    fn half_gaussian_at_critical_gravity() {
        for nu in [2f64.powi(-4), 2f64.powi(-6), 2f64.powi(-8)] {
            let gc = critical_gravity(nu);
            let c = solve_critical_shift(nu, gc).unwrap();
            assert!(c.abs() <= 1e-10, "{c}");
            let tg = exact_minimizer(nu, gc).unwrap();
            assert!((tg.at_zero() - gc / nu).abs() <= 1e-10 * gc / nu);
            assert!((tg.at_zero() - 2.0 / (2.0 * PI * nu).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn root_bracket_example() {
        let nu = 2f64.powi(-6);
        let c = solve_critical_shift(nu, nu).unwrap();
        let ct = c / (2.0 * nu).sqrt();
        assert!(ct > 1.0 && ct < 1.2, "{ct}");
        let target = (2.0 / nu).sqrt() * nu;
        assert!((f_and_derivatives(ct).1 - target).abs() <= 1e-12);
        assert!((f_and_derivatives(1.0).1 - 0.2253).abs() < 1e-4);
        assert!((f_and_derivatives(1.2).1 - 0.1400).abs() < 1e-4);
    }

    #[test]
    fn no_root_without_gravity() {
        assert!(matches!(
            solve_critical_shift(0.1, 0.0),
            Err(Error::NoRoot(_))
        ));
        assert!(solve_critical_shift(0.1, -1.0).is_err());
    }

    #[test]
    fn root_decreases_with_gravity() {
        let nu = 2f64.powi(-6);
        let mut prev = f64::INFINITY;
        for k in 1..60 {
            let g = 0.05 * k as f64;
            let c = solve_critical_shift(nu, g).unwrap();
            assert!(c < prev);
            prev = c;
        }
        assert!(prev < -1.0);
    }

    #[test]
    fn boundary_identity_over_gravity_sweep() {
        let nu = 2f64.powi(-6);
        let gc = critical_gravity(nu);
        for k in 0..=40 {
            let g = gc * 10f64.powf(-1.0 + k as f64 / 20.0);
            let tg = exact_minimizer(nu, g).unwrap();
            assert!((tg.at_zero() - g / nu).abs() <= 1e-10 * (g / nu), "g={g}");
        }
    }

    #[test]
    fn truncated_gaussians_are_normalized() {
        let nu = 2f64.powi(-6);
        for c in [-0.3, -0.05, 0.0, 0.1, 0.5] {
            let tg = TruncatedGaussian::new(c, nu).unwrap();
            let l = tg.support_hint();
            // composite Simpson on a fine grid
            let n = 20000;
            let h = l / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * tg.eval(i as f64 * h);
            }
            let mass = acc * h / 3.0;
            assert!((mass - 1.0).abs() < 1e-10, "c={c} mass={mass}");
            let naive = tg.a * (-(0.3 - c) * (0.3 - c) / (2.0 * nu)).exp();
            assert!((tg.eval(0.3) - naive).abs() < 1e-12 * naive.max(1.0));
        }
    }

    #[test]
    fn first_moment_matches_quadrature() {
        let nu = 2f64.powi(-6);
        for c in [-0.2, 0.0, 0.3] {
            let tg = TruncatedGaussian::new(c, nu).unwrap();
            let g = Arc::new(Grid::new(tg.support_hint(), 20001, SpacingMode::Uniform).unwrap());
            let xf: Vec<f64> = g.nodes().iter().map(|&x| x * tg.eval(x)).collect();
            let m1 = g.integrate(&xf).unwrap();
            assert!((m1 - tg.first_moment()).abs() < 1e-8, "c={c}");
        }
    }

    #[test]
    fn energy_is_monotone_without_gravity() {
        let nu = 2f64.powi(-6);
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let c = -0.3 + 1.3 * k as f64 / 199.0;
            let e = energy_on_gamma(c, nu, 0.0);
            assert!(e < prev);
            assert!(energy_on_gamma_derivative(c, nu, 0.0) < 0.0);
            prev = e;
        }
    }

    #[test]
    fn energy_minimized_at_zero_for_critical_gravity() {
        let nu = 2f64.powi(-6);
        let gc = critical_gravity(nu);
        let e0 = energy_on_gamma(0.0, nu, gc);
        for k in 1..100 {
            let d = 0.005 * k as f64;
            assert!(energy_on_gamma(d, nu, gc) > e0);
            assert!(energy_on_gamma(-d, nu, gc) > e0);
        }
        assert!(energy_on_gamma_derivative(0.0, nu, gc).abs() < 1e-14);
    }

    #[test]
    fn p_infinity_examples() {
        let s = p_infinity_state(&ExternalPotential::Zero, 0.1, 0.5).unwrap();
        assert_eq!(s.eval(0.7).unwrap(), 1.0);
        assert_eq!(s.eval(1.6).unwrap(), 0.0);
        let (g, nu) = (0.2, 0.05);
        let s = p_infinity_state(&ExternalPotential::Linear { g }, nu, 0.0).unwrap();
        let k = g / nu;
        let exact = |x: f64| k * (-k * x).exp() / (1.0 - (-k).exp());
        for x in [0.0, 0.3, 1.0] {
            assert!((s.eval(x).unwrap() - exact(x)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn erf_is_odd(x in -6.0f64..6.0) {
            prop_assert_eq!(erf(-x), -erf(x));
        }

        #[test]
        fn f_prime_decreasing(a in -6.0f64..6.0, b in -6.0f64..6.0) {
            prop_assume!(a < b);
            prop_assert!(f_and_derivatives(a).1 > f_and_derivatives(b).1);
        }

        #[test]
        fn energy_derivative_matches_differences(c in -0.3f64..0.6, gscale in 0.0f64..4.0) {
            let nu = 2f64.powi(-6);
            let g = gscale * critical_gravity(nu);
            let h = 1e-5;
            let fd = (energy_on_gamma(c + h, nu, g) - energy_on_gamma(c - h, nu, g)) / (2.0 * h);
            let exact = energy_on_gamma_derivative(c, nu, g);
            prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "fd={} exact={}", fd, exact);
        }
    }
}
