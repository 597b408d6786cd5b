//! Linear acoustic forward model and beamforming preprocessors.
//!
//! The transducer is a 1-D linear array at z = 0, centered laterally on the
//! grid. Sources emit one-way (photoacoustic reception: no transmit leg), so
//! the trace of element `j` is a sum of amplitude-weighted pulse echoes
//! delayed by the source-to-element distance:
//!
//! `trace_j(t) = sum_m image[m] * pulse(t - d(j, m) / c)`
//!
//! The pulse is a Gaussian-modulated cosine at the center frequency; its
//! fractional bandwidth is the -6 dB full width of the envelope spectrum
//! relative to `fc`. Both preprocessors apply the same one-way delays:
//!
//! - the MC transform keeps one signed RF channel per element (the network
//!   input) with linear temporal interpolation between bracketing samples;
//! - DAS is exactly the channel sum of the MC volume; displays and metrics
//!   use its absolute value.
//!
//! All three operators are linear in the image, and everything here is pure,
//! so per-element and per-pixel loops are freely parallelizable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec};
use crate::phantom::Phantom;
use crate::rng::DetRng;

/// Linear array description. Frequencies in Hz, pitch in mm, speed in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub n_elem: usize,
    pub pitch_mm: f64,
    pub fc_hz: f64,
    pub fs_hz: f64,
    pub n_samples: usize,
    pub c_m_s: f64,
    pub fractional_bandwidth: f64,
}

impl ArrayGeometry {
    /// 32-element array matched to the desk-scale grid.
    pub fn desk_scale() -> Self {
        ArrayGeometry {
            n_elem: 32,
            pitch_mm: 0.4,
            fc_hz: 3.0e6,
            fs_hz: 12.0e6,
            n_samples: 512,
            c_m_s: 1540.0,
            fractional_bandwidth: 0.7,
        }
    }

    /// 128-element, 15.625 MHz array sampled at 62.5 MHz (2,048 samples).
    pub fn full_scale() -> Self {
        ArrayGeometry {
            n_elem: 128,
            pitch_mm: 0.1,
            fc_hz: 15.625e6,
            fs_hz: 62.5e6,
            n_samples: 2048,
            c_m_s: 1540.0,
            fractional_bandwidth: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elem == 0 || self.n_samples == 0 {
            return Err(Error::InvalidConfig(
                "element and sample counts must be positive".into(),
            ));
        }
        if !(self.pitch_mm > 0.0) {
            return Err(Error::InvalidConfig("pitch must be positive".into()));
        }
        if !(self.fs_hz > 2.0 * self.fc_hz) {
            return Err(Error::InvalidConfig(format!(
                "sampling rate {} Hz must exceed twice the center frequency {} Hz",
                self.fs_hz, self.fc_hz
            )));
        }
        if !(self.c_m_s > 0.0) {
            return Err(Error::InvalidConfig("speed of sound must be positive".into()));
        }
        if !(self.fractional_bandwidth > 0.0 && self.fractional_bandwidth < 2.0) {
            return Err(Error::InvalidConfig(format!(
                "fractional bandwidth must lie in (0, 2), got {}",
                self.fractional_bandwidth
            )));
        }
        Ok(())
    }

    /// Check that the temporal window covers the full round trip from every
    /// grid pixel to every element, pulse support included.
    pub fn validate_for_grid(&self, spec: &GridSpec) -> Result<()> {
        self.validate()?;
        spec.validate()?;
        let d_max = self.max_pixel_distance_mm(spec);
        let pulse = synthesize_pulse(self);
        let needed =
            (d_max * 1e-3 / self.c_m_s * self.fs_hz).ceil() as usize + pulse.center + 1;
        if needed > self.n_samples {
            return Err(Error::InvalidConfig(format!(
                "temporal window too short: grid coverage needs {needed} samples, geometry has {}",
                self.n_samples
            )));
        }
        Ok(())
    }

    fn max_pixel_distance_mm(&self, spec: &GridSpec) -> f64 {
        let half_aperture = (self.n_elem as f64 - 1.0) / 2.0 * self.pitch_mm;
        let half_width = spec.width_mm() / 2.0;
        let dx = half_aperture + half_width;
        let dz = spec.depth_mm();
        (dx * dx + dz * dz).sqrt()
    }

    /// Lateral position of element j (mm), array centered on x = 0.
    #[inline]
    pub fn element_x_mm(&self, j: usize) -> f64 {
        (j as f64 - (self.n_elem as f64 - 1.0) / 2.0) * self.pitch_mm
    }

    /// One-way distance from pixel center (iz, ix) to element j, in mm.
    #[inline]
    pub fn pixel_element_distance_mm(&self, spec: &GridSpec, iz: usize, ix: usize, j: usize) -> f64 {
        let (px, pz) = spec.pixel_center_mm(iz, ix);
        let ex = self.element_x_mm(j);
        let dx = px - ex;
        (dx * dx + pz * pz).sqrt()
    }

    /// Gaussian envelope time constant (s) for the configured bandwidth.
    fn sigma_t(&self) -> f64 {
        (2.0 * std::f64::consts::LN_2).sqrt()
            / (std::f64::consts::PI * self.fractional_bandwidth * self.fc_hz)
    }

    /// Half support (s) where the envelope stays above 1e-3 of its peak.
    fn half_support_s(&self) -> f64 {
        self.sigma_t() * (2.0 * (1e3f64).ln()).sqrt()
    }

    /// Continuous pulse value at offset t (s) from the pulse center.
    #[inline]
    fn pulse_value(&self, t: f64) -> f64 {
        let s = self.sigma_t();
        (-t * t / (2.0 * s * s)).exp() * (2.0 * std::f64::consts::PI * self.fc_hz * t).cos()
    }
}

/// Sampled transducer pulse, peak-normalized, odd length, centered.
#[derive(Debug, Clone)]
pub struct Pulse {
    pub samples: Vec<f64>,
    /// Index of the (unit) peak sample.
    pub center: usize,
}

/// Gaussian-modulated cosine at `fc`, sampled at `fs`, truncated where the
/// envelope falls below 1e-3 of its peak.
pub fn synthesize_pulse(geom: &ArrayGeometry) -> Pulse {
    let half = (geom.half_support_s() * geom.fs_hz).floor() as isize;
    let samples: Vec<f64> = (-half..=half)
        .map(|s| geom.pulse_value(s as f64 / geom.fs_hz))
        .collect();
    Pulse {
        samples,
        center: half as usize,
    }
}

/// Per-element RF traces, row-major `[element][sample]`.
#[derive(Debug, Clone)]
pub struct RawChannelData {
    pub n_elem: usize,
    pub n_samples: usize,
    pub traces: Vec<f64>,
}

impl RawChannelData {
    pub fn zeros(geom: &ArrayGeometry) -> Self {
        RawChannelData {
            n_elem: geom.n_elem,
            n_samples: geom.n_samples,
            traces: vec![0.0; geom.n_elem * geom.n_samples],
        }
    }

    #[inline]
    pub fn trace(&self, j: usize) -> &[f64] {
        &self.traces[j * self.n_samples..(j + 1) * self.n_samples]
    }

    pub fn max_abs(&self) -> f64 {
        self.traces.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn check_geometry(&self, geom: &ArrayGeometry) -> Result<()> {
        if self.n_elem != geom.n_elem || self.n_samples != geom.n_samples {
            return Err(Error::ShapeMismatch {
                context: "raw channel data vs geometry",
                expected: format!("{}x{}", geom.n_elem, geom.n_samples),
                got: format!("{}x{}", self.n_elem, self.n_samples),
            });
        }
        Ok(())
    }
}

/// Multi-channel delay-transformed volume `[element][z][x]`: the network
/// input. Signed RF values; no envelope detection.
#[derive(Debug, Clone)]
pub struct McVolume {
    pub n_elem: usize,
    pub nz: usize,
    pub nx: usize,
    pub data: Vec<f64>,
}

impl McVolume {
    #[inline]
    pub fn channel(&self, j: usize) -> &[f64] {
        let n = self.nz * self.nx;
        &self.data[j * n..(j + 1) * n]
    }
}

/// Delay-and-sum image; `values` keeps the signed channel sum.
#[derive(Debug, Clone)]
pub struct DasImage {
    pub values: Grid,
}

impl DasImage {
    /// Display/metric variant: absolute value.
    pub fn magnitude(&self) -> Grid {
        self.values.map(f64::abs)
    }
}

/// Project an arbitrary image grid through the forward model.
pub fn project_image(image: &Grid, spec: &GridSpec, geom: &ArrayGeometry) -> Result<RawChannelData> {
    geom.validate_for_grid(spec)?;
    if image.nz != spec.nz || image.nx != spec.nx {
        return Err(Error::ShapeMismatch {
            context: "image vs grid spec",
            expected: format!("{}x{}", spec.nz, spec.nx),
            got: format!("{}x{}", image.nz, image.nx),
        });
    }
    let mut raw = RawChannelData::zeros(geom);
    let half_support = geom.half_support_s();
    let inv_c_mm = 1e-3 / geom.c_m_s;
    for iz in 0..spec.nz {
        for ix in 0..spec.nx {
            let a = image.get(iz, ix);
            if a == 0.0 {
                continue;
            }
            for j in 0..geom.n_elem {
                let tau = geom.pixel_element_distance_mm(spec, iz, ix, j) * inv_c_mm;
                let s_lo = ((tau - half_support) * geom.fs_hz).ceil().max(0.0) as usize;
                let s_hi = (((tau + half_support) * geom.fs_hz).floor() as usize)
                    .min(geom.n_samples - 1);
                let row = &mut raw.traces[j * geom.n_samples..(j + 1) * geom.n_samples];
                for s in s_lo..=s_hi {
                    row[s] += a * geom.pulse_value(s as f64 / geom.fs_hz - tau);
                }
            }
        }
    }
    Ok(raw)
}

/// Forward model on a phantom's initial-pressure image.
pub fn forward_project(
    phantom: &Phantom,
    spec: &GridSpec,
    geom: &ArrayGeometry,
) -> Result<RawChannelData> {
    project_image(&phantom.image, spec, geom)
}

/// Add white Gaussian noise with std = max|trace| / 10^(snr_db/20).
///
/// `snr_db = f64::INFINITY` is the noise-disabled sentinel and returns the
/// input unchanged. All-zero input is rejected (the SNR reference is the
/// signal peak).
pub fn add_noise(raw: &RawChannelData, snr_db: f64, seed: u64) -> Result<RawChannelData> {
    let peak = raw.max_abs();
    if peak == 0.0 {
        return Err(Error::AllZeroTraces);
    }
    if snr_db == f64::INFINITY {
        return Ok(raw.clone());
    }
    let std = peak / 10f64.powf(snr_db / 20.0);
    let mut rng = DetRng::new(seed);
    let mut out = raw.clone();
    for v in &mut out.traces {
        *v += std * rng.normal();
    }
    Ok(out)
}

/// Apply per-pixel propagation delays to every element trace without
/// summation. Linear interpolation between the two bracketing samples; zero
/// where the delay falls outside the trace window.
pub fn mc_transform(
    raw: &RawChannelData,
    spec: &GridSpec,
    geom: &ArrayGeometry,
) -> Result<McVolume> {
    raw.check_geometry(geom)?;
    spec.validate()?;
    let n_pix = spec.n_pixels();
    let mut data = vec![0.0; geom.n_elem * n_pix];
    let fs_per_mm = 1e-3 / geom.c_m_s * geom.fs_hz;
    for j in 0..geom.n_elem {
        let trace = raw.trace(j);
        let out = &mut data[j * n_pix..(j + 1) * n_pix];
        for iz in 0..spec.nz {
            for ix in 0..spec.nx {
                let tf = geom.pixel_element_distance_mm(spec, iz, ix, j) * fs_per_mm;
                let i0 = tf.floor();
                let idx = i0 as usize;
                if i0 >= 0.0 && idx + 1 < geom.n_samples {
                    let frac = tf - i0;
                    out[iz * spec.nx + ix] =
                        trace[idx] * (1.0 - frac) + trace[idx + 1] * frac;
                }
            }
        }
    }
    Ok(McVolume {
        n_elem: geom.n_elem,
        nz: spec.nz,
        nx: spec.nx,
        data,
    })
}

/// Pixelwise sum over the element axis of an MC volume.
pub fn das_reconstruct(mc: &McVolume) -> DasImage {
    let n_pix = mc.nz * mc.nx;
    let mut values = Grid::zeros(mc.nz, mc.nx);
    for j in 0..mc.n_elem {
        let channel = &mc.data[j * n_pix..(j + 1) * n_pix];
        for (acc, &v) in values.data.iter_mut().zip(channel) {
            *acc += v;
        }
    }
    DasImage { values }
}

/// Average the fiber axis of an externally recorded raw frame shaped
/// `[samples][elements][fibers]`, yielding standard channel data.
pub fn ingest_fiber_average(
    values: &[f64],
    n_samples: usize,
    n_elem: usize,
    n_fibers: usize,
) -> Result<RawChannelData> {
    if values.len() != n_samples * n_elem * n_fibers || n_fibers == 0 {
        return Err(Error::ShapeMismatch {
            context: "ingest raw frame",
            expected: format!("{n_samples}x{n_elem}x{n_fibers} values"),
            got: format!("{}", values.len()),
        });
    }
    let mut traces = vec![0.0; n_elem * n_samples];
    for s in 0..n_samples {
        for e in 0..n_elem {
            let base = (s * n_elem + e) * n_fibers;
            let sum: f64 = values[base..base + n_fibers].iter().sum();
            traces[e * n_samples + s] = sum / n_fibers as f64;
        }
    }
    Ok(RawChannelData {
        n_elem,
        n_samples,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> (GridSpec, ArrayGeometry) {
        (GridSpec::desk_scale(), ArrayGeometry::desk_scale())
    }

    fn point_source(spec: &GridSpec, iz: usize, ix: usize) -> Grid {
        let mut g = Grid::zeros(spec.nz, spec.nx);
        g.set(iz, ix, 1.0);
        g
    }

    #[test]
    fn presets_cover_their_grids() {
        ArrayGeometry::desk_scale()
            .validate_for_grid(&GridSpec::desk_scale())
            .unwrap();
        ArrayGeometry::full_scale()
            .validate_for_grid(&GridSpec::full_scale())
            .unwrap();
    }

    #[test]
    fn pulse_peak_and_symmetry() {
        let pulse = synthesize_pulse(&ArrayGeometry::desk_scale());
        assert_eq!(pulse.samples[pulse.center], 1.0);
        let n = pulse.samples.len();
        assert_eq!(n, 2 * pulse.center + 1);
        for k in 0..pulse.center {
            let a = pulse.samples[pulse.center - k - 1];
            let b = pulse.samples[pulse.center + k + 1];
            assert!((a - b).abs() < 1e-12, "asymmetry at offset {k}: {a} vs {b}");
        }
    }

    #[test]
    fn pulse_spectrum_peaks_at_center_frequency() {
        // Zero-padded DFT magnitude oracle.
        let geom = ArrayGeometry::desk_scale();
        let pulse = synthesize_pulse(&geom);
        let n = 1024usize;
        let mut best = (0usize, f64::MIN);
        for k in 0..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (s, &v) in pulse.samples.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * k as f64 * s as f64 / n as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            let mag = (re * re + im * im).sqrt();
            if mag > best.1 {
                best = (k, mag);
            }
        }
        let bin_hz = geom.fs_hz / n as f64;
        let peak_hz = best.0 as f64 * bin_hz;
        assert!(
            (peak_hz - geom.fc_hz).abs() <= bin_hz,
            "spectral peak {peak_hz} Hz vs fc {} Hz (bin {bin_hz} Hz)",
            geom.fc_hz
        );
    }

    #[test]
    fn zero_image_gives_zero_traces() {
        let (spec, geom) = desk();
        let raw = project_image(&Grid::zeros(spec.nz, spec.nx), &spec, &geom).unwrap();
        assert!(raw.traces.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_beneath_element_peaks_at_geometric_delay() {
        let (spec, geom) = desk();
        // Element 10 sits at the same lateral position as column 10.
        let j = 10usize;
        let iz = 30usize;
        let raw = project_image(&point_source(&spec, iz, j), &spec, &geom).unwrap();
        let trace = raw.trace(j);
        let argmax = trace
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        let z_mm = (iz as f64 + 0.5) * spec.dz_mm;
        let expected = (z_mm * 1e-3 / geom.c_m_s * geom.fs_hz).round() as isize;
        assert!(
            (argmax as isize - expected).abs() <= 1,
            "argmax {argmax} vs expected {expected}"
        );
    }

    #[test]
    fn forward_mc_das_are_linear() {
        let (spec, geom) = desk();
        let mut rng = crate::rng::DetRng::new(5);
        let mut x = Grid::zeros(spec.nz, spec.nx);
        let mut y = Grid::zeros(spec.nz, spec.nx);
        for m in 0..x.data.len() {
            if rng.bernoulli(0.05) {
                x.data[m] = rng.uniform(0.1, 2.0);
            }
            if rng.bernoulli(0.05) {
                y.data[m] = rng.uniform(0.1, 2.0);
            }
        }
        let (a, b) = (1.7, -0.6);
        let combo = x.zip(&y, |u, v| a * u + b * v);

        let fx = project_image(&x, &spec, &geom).unwrap();
        let fy = project_image(&y, &spec, &geom).unwrap();
        let fc = project_image(&combo, &spec, &geom).unwrap();
        let scale = fc.max_abs();
        for m in 0..fc.traces.len() {
            let lin = a * fx.traces[m] + b * fy.traces[m];
            assert!((fc.traces[m] - lin).abs() <= 1e-6 * scale);
        }

        let mx = mc_transform(&fx, &spec, &geom).unwrap();
        let my = mc_transform(&fy, &spec, &geom).unwrap();
        let mcombo = mc_transform(&fc, &spec, &geom).unwrap();
        let mscale = mcombo.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        for m in 0..mcombo.data.len() {
            let lin = a * mx.data[m] + b * my.data[m];
            assert!((mcombo.data[m] - lin).abs() <= 1e-6 * mscale);
        }

        let dx = das_reconstruct(&mx);
        let dy = das_reconstruct(&my);
        let dcombo = das_reconstruct(&mcombo);
        let dscale = dcombo.values.max_abs();
        for m in 0..dcombo.values.data.len() {
            let lin = a * dx.values.data[m] + b * dy.values.data[m];
            assert!((dcombo.values.data[m] - lin).abs() <= 1e-6 * dscale);
        }
    }

    #[test]
    fn das_is_exact_channel_sum() {
        let (spec, geom) = desk();
        let raw = project_image(&point_source(&spec, 20, 7), &spec, &geom).unwrap();
        let mc = mc_transform(&raw, &spec, &geom).unwrap();
        let das = das_reconstruct(&mc);
        let n_pix = spec.n_pixels();
        for m in 0..n_pix {
            let sum: f64 = (0..geom.n_elem).map(|j| mc.data[j * n_pix + m]).sum();
            assert_eq!(das.values.data[m], sum);
        }
    }

    #[test]
    fn point_source_localizes_in_das() {
        let (spec, geom) = desk();
        for (iz, ix) in [(10, 16), (30, 5), (50, 26), (45, 16)] {
            let raw = project_image(&point_source(&spec, iz, ix), &spec, &geom).unwrap();
            let mc = mc_transform(&raw, &spec, &geom).unwrap();
            let mag = das_reconstruct(&mc).magnitude();
            let argmax = mag
                .data
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let (az, ax) = (argmax / spec.nx, argmax % spec.nx);
            assert!(
                az.abs_diff(iz) <= 1 && ax.abs_diff(ix) <= 1,
                "source ({iz},{ix}) localized at ({az},{ax})"
            );
        }
    }

    #[test]
    fn mc_point_source_maxima_lie_on_the_delay_curve() {
        let (spec, geom) = desk();
        let (iz, ix) = (24usize, 12usize);
        let raw = project_image(&point_source(&spec, iz, ix), &spec, &geom).unwrap();
        let mc = mc_transform(&raw, &spec, &geom).unwrap();
        let tol_mm = spec.dz_mm.max(spec.dx_mm) * 1.5;
        for j in 0..geom.n_elem {
            let channel = mc.channel(j);
            let argmax = channel
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .unwrap()
                .0;
            let (az, ax) = (argmax / spec.nx, argmax % spec.nx);
            let d_src = geom.pixel_element_distance_mm(&spec, iz, ix, j);
            let d_max = geom.pixel_element_distance_mm(&spec, az, ax, j);
            assert!(
                (d_src - d_max).abs() <= tol_mm,
                "element {j}: max at distance {d_max} vs source {d_src}"
            );
        }
    }

    #[test]
    fn zero_raw_gives_zero_volume() {
        let (spec, geom) = desk();
        let raw = RawChannelData::zeros(&geom);
        let mc = mc_transform(&raw, &spec, &geom).unwrap();
        assert!(mc.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noise_sentinel_and_rejection() {
        let (spec, geom) = desk();
        let raw = project_image(&point_source(&spec, 20, 10), &spec, &geom).unwrap();
        let same = add_noise(&raw, f64::INFINITY, 1).unwrap();
        assert_eq!(same.traces, raw.traces);
        assert!(matches!(
            add_noise(&RawChannelData::zeros(&geom), 20.0, 1),
            Err(Error::AllZeroTraces)
        ));
    }

    #[test]
    fn noise_std_matches_requested_snr() {
        let (spec, geom) = desk();
        let raw = project_image(&point_source(&spec, 20, 10), &spec, &geom).unwrap();
        let peak = raw.max_abs();
        // Pool > 1e5 noise samples across seeds.
        let (mut sum, mut sum_sq, mut n) = (0.0, 0.0, 0usize);
        for seed in 0..8 {
            let noisy = add_noise(&raw, 20.0, seed).unwrap();
            for m in 0..raw.traces.len() {
                let d = noisy.traces[m] - raw.traces[m];
                sum += d;
                sum_sq += d * d;
                n += 1;
            }
        }
        assert!(n >= 100_000);
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).sqrt();
        let expected = peak / 10.0;
        assert!(
            (std - expected).abs() / expected < 0.02,
            "std {std} vs expected {expected}"
        );
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let (spec, geom) = desk();
        let raw = project_image(&point_source(&spec, 20, 10), &spec, &geom).unwrap();
        let a = add_noise(&raw, 15.0, 99).unwrap();
        let b = add_noise(&raw, 15.0, 99).unwrap();
        assert_eq!(a.traces, b.traces);
    }

    #[test]
    fn ingest_averages_the_fiber_axis() {
        let (n_samples, n_elem, n_fibers) = (4usize, 3usize, 2usize);
        let mut values = vec![0.0; n_samples * n_elem * n_fibers];
        for s in 0..n_samples {
            for e in 0..n_elem {
                for f in 0..n_fibers {
                    values[(s * n_elem + e) * n_fibers + f] =
                        (s * 100 + e * 10) as f64 + f as f64;
                }
            }
        }
        let raw = ingest_fiber_average(&values, n_samples, n_elem, n_fibers).unwrap();
        assert_eq!(raw.n_elem, n_elem);
        assert_eq!(raw.n_samples, n_samples);
        // fiber mean of {v, v+1} is v + 0.5
        assert_eq!(raw.trace(1)[2], 210.5);
        assert!(ingest_fiber_average(&values[1..], n_samples, n_elem, n_fibers).is_err());
    }

    #[test]
    fn short_window_rejected() {
        let spec = GridSpec::desk_scale();
        let mut geom = ArrayGeometry::desk_scale();
        geom.n_samples = 64;
        assert!(geom.validate_for_grid(&spec).is_err());
    }
}
