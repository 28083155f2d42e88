//! Monte-Carlo estimates of `V_D(r) = sup_x |D ∩ B_r(x)|` and the effective
//! volume dimension of a domain.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::potentials::least_squares_slope;

pub const MIN_SAMPLES: usize = 10_000;

type Indicator = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
type HalfWidth = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// A domain in `d` dimensions given by its indicator.
#[derive(Clone)]
pub struct DomainSpec {
    name: String,
    dim: usize,
    indicator: Indicator,
    probe_centers: Vec<Vec<f64>>,
    bounding_halfwidth: Option<HalfWidth>,
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("probe_centers", &self.probe_centers)
            .field("bounded_sampling", &self.bounding_halfwidth.is_some())
            .finish()
    }
}

impl DomainSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        indicator: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
        probe_centers: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        let indicator: Indicator = Arc::new(indicator);
        for (k, p) in probe_centers.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if !indicator(p) {
                return Err(invalid(
                    "probe_centers",
                    format!("probe {k} at {p:?} lies outside the domain"),
                ));
            }
        }
        Ok(DomainSpec {
            name: name.into(),
            dim,
            indicator,
            probe_centers,
            bounding_halfwidth: None,
        })
    }

    /// Per-axis half widths of a box centred on each probe that contains
    /// `D ∩ B_r(probe)`; sampling then happens in the box instead of the ball.
    pub fn with_bounding_halfwidth(
        mut self,
        f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.bounding_halfwidth = Some(Arc::new(f));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn probe_centers(&self) -> &[Vec<f64>] {
        &self.probe_centers
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.indicator)(x)
    }

    /// `[0, side]^d`.
    pub fn bounded_box(dim: usize, side: f64) -> Result<Self> {
        let centre = vec![0.5 * side; dim];
        Ok(DomainSpec::new(
            format!("box[0,{side}]^{dim}"),
            dim,
            move |x: &[f64]| x.iter().all(|&t| (0.0..=side).contains(&t)),
            vec![centre],
        )?
        .with_bounding_halfwidth(move |r| vec![(0.5 * side).min(r); dim]))
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        DomainSpec::new(
            format!("ball(r={radius})^{dim}"),
            dim,
            move |x: &[f64]| x.iter().map(|t| t * t).sum::<f64>() <= radius * radius,
            vec![vec![0.0; dim]],
        )
    }

    /// `{x : x_axis >= 0}`.
    pub fn half_space(dim: usize, axis: usize) -> Result<Self> {
        if axis >= dim {
            return Err(invalid(
                "axis",
                format!("{axis} out of range for dimension {dim}"),
            ));
        }
        DomainSpec::new(
            format!("half-space^{dim}"),
            dim,
            move |x: &[f64]| x[axis] >= 0.0,
            vec![vec![0.0; dim]],
        )
    }

    /// `[0, w_1] x ... x [0, w_m] x R^(d - m)`.
    pub fn slab(widths: Vec<f64>, dim: usize) -> Result<Self> {
        let m = widths.len();
        if m == 0 || m > dim {
            return Err(invalid(
                "widths",
                format!("need 1..={dim} bounded directions, got {m}"),
            ));
        }
        if widths.iter().any(|&w| !(w > 0.0)) {
            return Err(invalid("widths", "must be positive"));
        }
        let mut centre = vec![0.0; dim];
        for (c, w) in centre.iter_mut().zip(&widths) {
            *c = 0.5 * w;
        }
        let w2 = widths.clone();
        Ok(DomainSpec::new(
            format!("slab{widths:?}xR^{}", dim - m),
            dim,
            move |x: &[f64]| x.iter().zip(&widths).all(|(&t, &w)| (0.0..=w).contains(&t)),
            vec![centre],
        )?
        .with_bounding_halfwidth(move |r| {
            (0..dim)
                .map(|i| w2.get(i).map_or(r, |w| (0.5 * w).min(r)))
                .collect()
        }))
    }

    /// Disk of the given radius times `R`, in three dimensions.
    pub fn cylinder(radius: f64) -> Result<Self> {
        Ok(DomainSpec::new(
            format!("cylinder(r={radius})xR"),
            3,
            move |x: &[f64]| x[0] * x[0] + x[1] * x[1] <= radius * radius,
            vec![vec![0.0; 3]],
        )?
        .with_bounding_halfwidth(move |r| vec![radius.min(r), radius.min(r), r]))
    }

    /// `[-h, h]^d` with `h` far beyond any probed radius.
    pub fn full_space_surrogate(dim: usize, halfwidth: f64) -> Result<Self> {
        DomainSpec::new(
            format!("box[-{halfwidth},{halfwidth}]^{dim}"),
            dim,
            move |x: &[f64]| x.iter().all(|t| t.abs() <= halfwidth),
            vec![vec![0.0; dim]],
        )
    }

    /// `{0 <= x_2 <= tan(angle) x_1}` in the plane, probed along the bisector.
    pub fn wedge(angle: f64) -> Result<Self> {
        if !(angle > 0.0 && angle < std::f64::consts::FRAC_PI_2) {
            return Err(invalid("angle", "must lie in (0, pi/2)"));
        }
        let t = angle.tan();
        let half = 0.5 * angle;
        DomainSpec::new(
            format!("wedge(phi={angle})"),
            2,
            move |x: &[f64]| x[1] >= 0.0 && x[1] <= t * x[0],
            vec![vec![0.0, 0.0], vec![half.cos(), half.sin()]],
        )
    }

    /// `{x_d >= |x'|^2}`.
    pub fn paraboloid(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("dim", "paraboloid needs at least two dimensions"));
        }
        let mut apex = vec![0.0; dim];
        apex[dim - 1] = 1.0;
        DomainSpec::new(
            format!("paraboloid^{dim}"),
            dim,
            move |x: &[f64]| x[dim - 1] >= x[..dim - 1].iter().map(|t| t * t).sum::<f64>(),
            vec![vec![0.0; dim], apex],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeProfile {
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    pub stderr: Vec<f64>,
}

fn unit_ball_volume(d: usize) -> f64 {
    // V_d = pi^(d/2) / Gamma(d/2 + 1) via the two-step recurrence
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * std::f64::consts::PI / d as f64,
    }
}

struct Estimate {
    volume: f64,
    stderr: f64,
}

fn estimate_one(
    spec: &DomainSpec,
    centre: &[f64],
    r: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Estimate {
    let d = spec.dim;
    let mut point = vec![0.0; d];
    let mut hits = 0usize;
    let region_volume;
    match &spec.bounding_halfwidth {
        Some(hw) => {
            let h = hw(r);
            region_volume = h.iter().map(|w| 2.0 * w).product::<f64>();
            for _ in 0..samples {
                let mut rr = 0.0;
                for i in 0..d {
                    let off = h[i] * (2.0 * rng.random::<f64>() - 1.0);
                    rr += off * off;
                    point[i] = centre[i] + off;
                }
                if rr <= r * r && spec.contains(&point) {
                    hits += 1;
                }
            }
        }
        None => {
            region_volume = unit_ball_volume(d) * r.powi(d as i32);
            let mut dir = vec![0.0; d];
            for _ in 0..samples {
                let mut norm: f64 = 0.0;
                for v in dir.iter_mut() {
                    *v = rng.sample(StandardNormal);
                    norm += *v * *v;
                }
                let scale = r * rng.random::<f64>().powf(1.0 / d as f64) / norm.sqrt();
                for i in 0..d {
                    point[i] = centre[i] + scale * dir[i];
                }
                if spec.contains(&point) {
                    hits += 1;
                }
            }
        }
    }
    let p = hits as f64 / samples as f64;
    Estimate {
        volume: p * region_volume,
        stderr: region_volume * (p * (1.0 - p) / samples as f64).sqrt(),
    }
}

/// Estimates `V_D(r)` at each radius as the largest probe estimate.
///
/// Task `(radius k, probe j)` draws from its own ChaCha stream, so results do
/// not depend on thread scheduling.
pub fn estimate_volume_profile(
    spec: &DomainSpec,
    radii: &[f64],
    samples_per_radius: usize,
    seed: u64,
) -> Result<VolumeProfile> {
    if spec.probe_centers.is_empty() {
        return Err(invalid(
            "probe_centers",
            "no probe center inside the domain",
        ));
    }
    if samples_per_radius < MIN_SAMPLES {
        return Err(invalid(
            "samples_per_radius",
            format!("need at least {MIN_SAMPLES}, got {samples_per_radius}"),
        ));
    }
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(invalid("radii", "must be nonempty, positive and finite"));
    }
    if !radii.windows(2).all(|p| p[1] > p[0]) {
        return Err(invalid("radii", "must be strictly increasing"));
    }
    let probes = spec.probe_centers.len();
    let estimates: Vec<Estimate> = (0..radii.len() * probes)
        .into_par_iter()
        .map(|task| {
            let (k, j) = (task / probes, task % probes);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(task as u64);
            estimate_one(
                spec,
                &spec.probe_centers[j],
                radii[k],
                samples_per_radius,
                &mut rng,
            )
        })
        .collect();
    let mut volumes = Vec::with_capacity(radii.len());
    let mut stderr = Vec::with_capacity(radii.len());
    for chunk in estimates.chunks(probes) {
        let best = chunk
            .iter()
            .max_by(|a, b| a.volume.total_cmp(&b.volume))
            .expect("at least one probe");
        volumes.push(best.volume);
        stderr.push(best.stderr);
    }
    Ok(VolumeProfile {
        radii: radii.to_vec(),
        volumes,
        stderr,
    })
}

/// Log-log slope of the profile over the decade ending at its largest radius.
pub fn estimate_effective_dimension(profile: &VolumeProfile) -> Result<f64> {
    let n = profile.radii.len();
    if n < 3 || profile.volumes.len() != n {
        return Err(invalid("profile", "need at least three radii"));
    }
    let r_max = profile.radii[n - 1];
    if r_max < 10.0 * profile.radii[0] * (1.0 - 1e-12) {
        return Err(invalid("profile", "radii must span at least one decade"));
    }
    let lo = r_max / 10.0 * (1.0 - 1e-12);
    let (xs, ys): (Vec<f64>, Vec<f64>) = profile
        .radii
        .iter()
        .zip(&profile.volumes)
        .filter(|(r, _)| **r >= lo)
        .map(|(r, v)| (r.ln(), v.ln()))
        .unzip();
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "volume profile contains zero volumes".into(),
        ));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate(
            "fewer than two radii in the last decade".into(),
        ));
    }
    Ok(least_squares_slope(&xs, &ys))
}

/// `count` radii spaced geometrically between `lo` and `hi`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    let mut v: Vec<f64> = (0..count).map(|k| lo * ratio.powi(k as i32)).collect();
    v[count - 1] = hi;
    v
}
