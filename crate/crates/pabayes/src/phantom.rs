//! Synthetic microvessel phantoms and dataset splits.
//!
//! Each phantom is a paired ground truth: a binary segmentation and a
//! non-negative initial-pressure image on the same grid, with
//! `segmentation = indicator(image > 0)` holding pixel for pixel.
//!
//! Vessels are drawn as smooth random walks: the heading is perturbed each
//! step by a zero-mean angle bounded by the smoothness parameter, and a disk
//! of the sampled diameter is rasterized at every step. One amplitude per
//! vessel is drawn uniformly from [1, 10], which bounds the dynamic range of
//! non-background pixels at 20 dB by construction (overlaps keep the larger
//! amplitude). After drawing, the image is scaled so the mean of `image^2`
//! over non-background pixels is exactly 1.
//!
//! Seed layout: substream 0 of the dataset seed drives the shuffle,
//! substream `i + 1` drives phantom `i`; within one phantom, substream `a`
//! drives redraw attempt `a` (see [`crate::rng::derive_seed`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec};
use crate::rng::{derive_seed, DetRng};

/// Vessel synthesis parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselParams {
    /// Vessel diameter range in mm.
    pub diameter_mm: (f64, f64),
    /// Vessels per image, inclusive range.
    pub vessels_per_image: (usize, usize),
    /// Maximum per-step heading perturbation (radians).
    pub smoothness_rad: f64,
    /// Target band for the per-image non-background fraction; the vessel set
    /// is redrawn (bounded attempts) while the fraction falls outside.
    pub fraction_band: (f64, f64),
}

impl Default for VesselParams {
    fn default() -> Self {
        VesselParams {
            diameter_mm: (0.05, 0.3),
            vessels_per_image: (1, 8),
            smoothness_rad: 0.3,
            fraction_band: (0.02, 0.15),
        }
    }
}

impl VesselParams {
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        let (dmin, dmax) = self.diameter_mm;
        if !(dmin > 0.0) || dmin > dmax {
            return Err(Error::InvalidConfig(format!(
                "vessel diameter range must satisfy 0 < min <= max, got ({dmin}, {dmax})"
            )));
        }
        let extent = spec.depth_mm().min(spec.width_mm());
        if dmax >= extent {
            return Err(Error::InvalidConfig(format!(
                "vessel diameter {dmax} mm exceeds grid extent {extent} mm"
            )));
        }
        let (vlo, vhi) = self.vessels_per_image;
        if vlo < 1 || vlo > vhi {
            return Err(Error::InvalidConfig(format!(
                "vessels per image must satisfy 1 <= min <= max, got ({vlo}, {vhi})"
            )));
        }
        if self.smoothness_rad < 0.0 {
            return Err(Error::InvalidConfig(
                "smoothness must be non-negative".into(),
            ));
        }
        let (flo, fhi) = self.fraction_band;
        if !(0.0 <= flo && flo < fhi && fhi <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fraction band must satisfy 0 <= lo < hi <= 1, got ({flo}, {fhi})"
            )));
        }
        Ok(())
    }
}

/// Ground-truth pair: binary segmentation and non-negative image.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub segmentation: Grid,
    pub image: Grid,
}

impl Phantom {
    /// Fraction of non-background pixels.
    pub fn vessel_fraction(&self) -> f64 {
        let nonzero = self.segmentation.data.iter().filter(|&&v| v != 0.0).count();
        nonzero as f64 / self.segmentation.data.len() as f64
    }
}

/// One sampled vessel before rasterization: walk points in (z, x) mm.
#[derive(Debug, Clone)]
pub struct VesselTrace {
    pub points: Vec<(f64, f64)>,
    pub diameter_mm: f64,
    pub amplitude: f64,
}

/// A generated corpus with disjoint 80/10/10 split indices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub phantoms: Vec<Phantom>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

const MAX_REDRAW_ATTEMPTS: u64 = 16;

pub fn generate_phantom(spec: &GridSpec, params: &VesselParams, seed: u64) -> Result<Phantom> {
    generate_phantom_detailed(spec, params, seed).map(|(p, _)| p)
}

/// As [`generate_phantom`] but also returns the vessel traces of the accepted
/// draw, so tests can re-count rasterized pixels independently.
pub fn generate_phantom_detailed(
    spec: &GridSpec,
    params: &VesselParams,
    seed: u64,
) -> Result<(Phantom, Vec<VesselTrace>)> {
    spec.validate()?;
    params.validate(spec)?;

    let mut accepted: Option<(Grid, Vec<VesselTrace>)> = None;
    for attempt in 0..MAX_REDRAW_ATTEMPTS {
        let mut rng = DetRng::new(derive_seed(seed, attempt));
        let n_vessels = rng.uniform_usize(params.vessels_per_image.0, params.vessels_per_image.1);
        let mut amplitude = Grid::zeros(spec.nz, spec.nx);
        let mut traces = Vec::with_capacity(n_vessels);
        for _ in 0..n_vessels {
            let trace = sample_vessel(spec, params, &mut rng);
            rasterize_vessel(&mut amplitude, spec, &trace);
            traces.push(trace);
        }
        let fraction = amplitude.data.iter().filter(|&&v| v > 0.0).count() as f64
            / amplitude.data.len() as f64;
        accepted = Some((amplitude, traces));
        if fraction >= params.fraction_band.0 && fraction <= params.fraction_band.1 {
            break;
        }
        // keep the last attempt if the band was never hit
    }
    let (mut image, traces) = accepted.expect("at least one attempt");

    // Mean-power normalization over non-background pixels.
    let (mut sum_sq, mut count) = (0.0, 0usize);
    for &v in &image.data {
        if v > 0.0 {
            sum_sq += v * v;
            count += 1;
        }
    }
    if count > 0 {
        let scale = 1.0 / (sum_sq / count as f64).sqrt();
        for v in &mut image.data {
            *v *= scale;
        }
    }

    let segmentation = image.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    Ok((
        Phantom {
            segmentation,
            image,
        },
        traces,
    ))
}

fn sample_vessel(spec: &GridSpec, params: &VesselParams, rng: &mut DetRng) -> VesselTrace {
    let diameter = rng.uniform(params.diameter_mm.0, params.diameter_mm.1);
    let amplitude = rng.uniform(1.0, 10.0);

    let depth = spec.depth_mm();
    let width = spec.width_mm();
    let margin = (diameter / 2.0).min(depth / 4.0).min(width / 4.0);

    let mut z = rng.uniform(margin, depth - margin);
    let mut x = rng.uniform(margin, width - margin);
    let mut heading = rng.uniform(0.0, 2.0 * std::f64::consts::PI);

    let step = 0.5 * spec.dz_mm.min(spec.dx_mm);
    let diag = (depth * depth + width * width).sqrt();
    let arc_len = rng.uniform(0.3, 1.0) * diag;
    let n_steps = (arc_len / step).ceil() as usize;

    let mut points = Vec::with_capacity(n_steps + 1);
    points.push((z, x));
    for _ in 0..n_steps {
        heading += rng.uniform(-params.smoothness_rad, params.smoothness_rad);
        z += step * heading.sin();
        x += step * heading.cos();
        // Reflect off the grid borders, flipping the heading component.
        if z < margin || z > depth - margin {
            z = z.clamp(margin, depth - margin);
            heading = -heading;
        }
        if x < margin || x > width - margin {
            x = x.clamp(margin, width - margin);
            heading = std::f64::consts::PI - heading;
        }
        points.push((z, x));
    }
    VesselTrace {
        points,
        diameter_mm: diameter,
        amplitude,
    }
}

/// Stamp a vessel into the amplitude grid. A path point always covers its
/// containing pixel; additionally every pixel whose center lies within
/// diameter/2 of the point is covered. Overlapping vessels keep the larger
/// amplitude so the corpus dynamic-range bound survives intersections.
fn rasterize_vessel(amplitude: &mut Grid, spec: &GridSpec, trace: &VesselTrace) {
    let r = trace.diameter_mm / 2.0;
    let r2 = r * r;
    for &(z, x) in &trace.points {
        let iz0 = containing_index(z, spec.dz_mm, spec.nz);
        let ix0 = containing_index(x, spec.dx_mm, spec.nx);
        stamp(amplitude, iz0, ix0, trace.amplitude);

        let dz_span = (r / spec.dz_mm).ceil() as isize;
        let dx_span = (r / spec.dx_mm).ceil() as isize;
        for diz in -dz_span..=dz_span {
            for dix in -dx_span..=dx_span {
                let iz = iz0 as isize + diz;
                let ix = ix0 as isize + dix;
                if iz < 0 || ix < 0 || iz >= spec.nz as isize || ix >= spec.nx as isize {
                    continue;
                }
                let cz = (iz as f64 + 0.5) * spec.dz_mm;
                let cx = (ix as f64 + 0.5) * spec.dx_mm;
                let d2 = (cz - z) * (cz - z) + (cx - x) * (cx - x);
                if d2 <= r2 {
                    stamp(amplitude, iz as usize, ix as usize, trace.amplitude);
                }
            }
        }
    }
}

#[inline]
fn containing_index(coord_mm: f64, pitch_mm: f64, n: usize) -> usize {
    ((coord_mm / pitch_mm) as usize).min(n - 1)
}

#[inline]
fn stamp(amplitude: &mut Grid, iz: usize, ix: usize, value: f64) {
    let cell = &mut amplitude.data[iz * amplitude.nx + ix];
    if value > *cell {
        *cell = value;
    }
}

/// Pixels covered by a trace, recomputed from the walk points alone.
/// Test oracle for the path-length pixel count.
pub fn trace_covered_pixels(spec: &GridSpec, trace: &VesselTrace) -> std::collections::BTreeSet<(usize, usize)> {
    let mut grid = Grid::zeros(spec.nz, spec.nx);
    rasterize_vessel(&mut grid, spec, trace);
    let mut set = std::collections::BTreeSet::new();
    for iz in 0..spec.nz {
        for ix in 0..spec.nx {
            if grid.get(iz, ix) > 0.0 {
                set.insert((iz, ix));
            }
        }
    }
    set
}

pub fn generate_dataset(
    n: usize,
    spec: &GridSpec,
    params: &VesselParams,
    seed: u64,
) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::InvalidConfig(format!(
            "dataset needs at least 10 phantoms to form three non-empty splits, got {n}"
        )));
    }
    let phantoms: Vec<Phantom> = (0..n)
        .map(|i| generate_phantom(spec, params, derive_seed(seed, i as u64 + 1)))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = DetRng::new(derive_seed(seed, 0));
    rng.shuffle(&mut order);

    let n_val = n / 10;
    let n_test = n / 10;
    let n_train = n - n_val - n_test;
    let train_idx = order[..n_train].to_vec();
    let val_idx = order[n_train..n_train + n_val].to_vec();
    let test_idx = order[n_train + n_val..].to_vec();

    Ok(Dataset {
        phantoms,
        train_idx,
        val_idx,
        test_idx,
        seed,
    })
}
