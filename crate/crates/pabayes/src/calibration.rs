//! Uncertainty calibration and image quality metrics.
//!
//! The credibility of a pixel is the probability mass the K-pass predictive
//! mixture assigns to the interval `[mean - eps, mean + eps]` with
//! `eps = eps_factor * mean`. Binning credibility against the empirical
//! frequency of the ground truth falling inside the same interval yields the
//! reliability diagram; its Pearson correlation and least-squares slope
//! quantify diagonality. Coverage counts pixels whose absolute error stays
//! within twice the predicted uncertainty.
//!
//! Evaluation is restricted to predicted-segmentation pixels: the hybrid
//! losses never optimize the background, so its outputs are undefined.
//! Pixels with a non-positive mean cannot form a positive interval and are
//! excluded and tallied separately.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::uncertainty::{Posterior, PosteriorKind, SampleStack};

/// Laplace CDF with scale parameter `sigma`.
pub fn laplace_cdf(a: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "laplace_cdf needs sigma > 0, got {sigma}"
        )));
    }
    Ok(if a < mu {
        0.5 * ((a - mu) / sigma).exp()
    } else {
        1.0 - 0.5 * ((mu - a) / sigma).exp()
    })
}

/// Gaussian CDF via the Abramowitz-Stegun 7.1.26 erf approximation
/// (absolute error below 1.5e-7, ample for 0.1-wide credibility bins).
pub fn gauss_cdf(a: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gauss_cdf needs sigma > 0, got {sigma}"
        )));
    }
    let z = (a - mu) / (sigma * std::f64::consts::SQRT_2);
    Ok(0.5 * (1.0 + erf(z)))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn interval_mass(kind: PosteriorKind, lo: f64, hi: f64, mu: f64, sigma: f64) -> Result<f64> {
    match kind {
        PosteriorKind::Laplace => Ok(laplace_cdf(hi, mu, sigma)? - laplace_cdf(lo, mu, sigma)?),
        PosteriorKind::Gauss => Ok(gauss_cdf(hi, mu, sigma)? - gauss_cdf(lo, mu, sigma)?),
    }
}

/// Sentinel marking pixels outside the evaluated set in credibility maps.
pub const NOT_EVALUATED: f64 = f64::NAN;

#[derive(Debug, Clone, Copy, Default)]
pub struct CredibilityDiag {
    /// final_seg = 1 pixels skipped because the posterior mean was <= 0.
    pub excluded_nonpositive: usize,
    pub evaluated: usize,
}

/// Per-pixel credibility of the interval `mean ± eps_factor*mean` under the
/// K-pass mixture. Unevaluated pixels carry [`NOT_EVALUATED`].
pub fn credibility_map(
    stack: &SampleStack,
    posterior: &Posterior,
    eps_factor: f64,
) -> Result<(Grid, CredibilityDiag)> {
    if !(eps_factor > 0.0) {
        return Err(Error::InvalidConfig("eps_factor must be > 0".into()));
    }
    if stack.kind != posterior.kind {
        return Err(Error::HeadMismatch(
            "stack and posterior come from different kinds".into(),
        ));
    }
    let mean = &posterior.img.mean;
    let k = stack.k() as f64;
    let mut cred = mean.map(|_| NOT_EVALUATED);
    let mut diag = CredibilityDiag::default();
    for m in 0..mean.data.len() {
        if posterior.final_seg.data[m] == 0.0 {
            continue;
        }
        let mu_hat = mean.data[m];
        if mu_hat <= 0.0 {
            diag.excluded_nonpositive += 1;
            continue;
        }
        let eps = eps_factor * mu_hat;
        let mut c = 0.0;
        for pass in 0..stack.k() {
            c += interval_mass(
                stack.kind,
                mu_hat - eps,
                mu_hat + eps,
                stack.mu2[pass].data[m],
                stack.sigma[pass].data[m],
            )?;
        }
        cred.data[m] = c / k;
        diag.evaluated += 1;
    }
    Ok((cred, diag))
}

#[derive(Debug, Clone, Copy)]
pub struct ReliabilityBin {
    /// Mean credibility of pixels in the bin.
    pub cred: f64,
    /// Fraction of bin pixels whose ground truth fell inside the interval.
    pub acc: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ReliabilityDiagram {
    /// Occupied bins only, ascending by credibility.
    pub bins: Vec<ReliabilityBin>,
    pub cc: Option<f64>,
    pub slope: Option<f64>,
    pub total_pixels: usize,
}

/// Bin-level accumulator; add one or many images, then finalize. Pooling
/// across a corpus is the same accumulator fed repeatedly.
#[derive(Debug, Clone)]
pub struct ReliabilityAccumulator {
    h: usize,
    cred_sum: Vec<f64>,
    hits: Vec<usize>,
    count: Vec<usize>,
}

impl ReliabilityAccumulator {
    pub fn new(h: usize) -> Result<Self> {
        if h < 2 {
            return Err(Error::InvalidConfig("need at least 2 bins".into()));
        }
        Ok(ReliabilityAccumulator {
            h,
            cred_sum: vec![0.0; h],
            hits: vec![0; h],
            count: vec![0; h],
        })
    }

    /// Accumulate the evaluated pixels of one image. `eps_factor` must match
    /// the credibility map.
    pub fn add(
        &mut self,
        cred: &Grid,
        posterior: &Posterior,
        ground_truth_img: &Grid,
        eps_factor: f64,
    ) -> Result<()> {
        cred.check_same_shape(ground_truth_img, "credibility vs ground truth")?;
        cred.check_same_shape(&posterior.img.mean, "credibility vs posterior")?;
        for m in 0..cred.data.len() {
            let c = cred.data[m];
            if !c.is_finite() {
                continue;
            }
            // bins partition (0, 1]: bin h covers ((h-1)/H, h/H]
            let bin = if c <= 0.0 {
                continue;
            } else {
                ((c * self.h as f64).ceil() as usize - 1).min(self.h - 1)
            };
            let mu_hat = posterior.img.mean.data[m];
            let eps = eps_factor * mu_hat;
            let within = (ground_truth_img.data[m] - mu_hat).abs() <= eps;
            self.cred_sum[bin] += c;
            self.count[bin] += 1;
            if within {
                self.hits[bin] += 1;
            }
        }
        Ok(())
    }

    pub fn finalize(&self) -> ReliabilityDiagram {
        let mut bins = Vec::new();
        let mut total = 0usize;
        for h in 0..self.h {
            if self.count[h] == 0 {
                continue;
            }
            total += self.count[h];
            bins.push(ReliabilityBin {
                cred: self.cred_sum[h] / self.count[h] as f64,
                acc: self.hits[h] as f64 / self.count[h] as f64,
                count: self.count[h],
            });
        }
        let xs: Vec<f64> = bins.iter().map(|b| b.cred).collect();
        let ys: Vec<f64> = bins.iter().map(|b| b.acc).collect();
        ReliabilityDiagram {
            cc: pearson(&xs, &ys),
            slope: ols_slope(&xs, &ys),
            bins,
            total_pixels: total,
        }
    }
}

/// Reliability diagram of a single image.
pub fn reliability_diagram(
    cred: &Grid,
    posterior: &Posterior,
    ground_truth_img: &Grid,
    h: usize,
    eps_factor: f64,
) -> Result<ReliabilityDiagram> {
    let mut acc = ReliabilityAccumulator::new(h)?;
    acc.add(cred, posterior, ground_truth_img, eps_factor)?;
    Ok(acc.finalize())
}

#[derive(Debug, Clone, Copy)]
pub struct CoverageReport {
    /// Fraction of evaluated pixels with |y - mean| <= 2*unc.
    pub overall: f64,
    /// Same fraction restricted to pixels whose 2*unc lies within +-5% of
    /// half the maximum 2*unc; `None` when that band is empty.
    pub band: Option<f64>,
    pub evaluated: usize,
    pub band_count: usize,
}

/// 2-sigma coverage over predicted-segmentation pixels.
pub fn coverage_report(posterior: &Posterior, ground_truth_img: &Grid) -> Result<CoverageReport> {
    ground_truth_img.check_same_shape(&posterior.img.mean, "coverage ground truth")?;
    let mut evaluated = 0usize;
    let mut max_two_unc: f64 = 0.0;
    for m in 0..ground_truth_img.data.len() {
        if posterior.final_seg.data[m] == 1.0 {
            evaluated += 1;
            max_two_unc = max_two_unc.max(2.0 * posterior.img.unc.data[m]);
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyEvaluation("coverage: no predicted segmentation"));
    }
    let band_center = 0.5 * max_two_unc;
    let (band_lo, band_hi) = (0.95 * band_center, 1.05 * band_center);
    let (mut hits, mut band_hits, mut band_count) = (0usize, 0usize, 0usize);
    for m in 0..ground_truth_img.data.len() {
        if posterior.final_seg.data[m] != 1.0 {
            continue;
        }
        let two_unc = 2.0 * posterior.img.unc.data[m];
        let within = (ground_truth_img.data[m] - posterior.img.mean.data[m]).abs() <= two_unc;
        if within {
            hits += 1;
        }
        if (band_lo..=band_hi).contains(&two_unc) {
            band_count += 1;
            if within {
                band_hits += 1;
            }
        }
    }
    Ok(CoverageReport {
        overall: hits as f64 / evaluated as f64,
        band: (band_count > 0).then(|| band_hits as f64 / band_count as f64),
        evaluated,
        band_count,
    })
}

/// 10*log10(peak^2 / MSE); +inf for a zero-error reconstruction.
pub fn psnr(reconstruction: &Grid, ground_truth: &Grid, peak: f64) -> Result<f64> {
    reconstruction.check_same_shape(ground_truth, "psnr inputs")?;
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig(format!("psnr needs peak > 0, got {peak}")));
    }
    let mse: f64 = reconstruction
        .data
        .iter()
        .zip(&ground_truth.data)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / reconstruction.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Fraction of pixels where the two binary maps agree.
pub fn seg_accuracy(final_seg: &Grid, ground_truth_seg: &Grid) -> Result<f64> {
    final_seg.check_same_shape(ground_truth_seg, "segmentation accuracy inputs")?;
    let agree = final_seg
        .data
        .iter()
        .zip(&ground_truth_seg.data)
        .filter(|(&a, &b)| (a != 0.0) == (b != 0.0))
        .count();
    Ok(agree as f64 / final_seg.data.len() as f64)
}

/// Pearson correlation between the segmentation uncertainty map and the
/// absolute segmentation error map; `None` when either has zero variance.
pub fn seg_uncertainty_cc(
    seg_unc: &Grid,
    final_seg: &Grid,
    ground_truth_seg: &Grid,
) -> Result<Option<f64>> {
    seg_unc.check_same_shape(final_seg, "segmentation cc inputs")?;
    final_seg.check_same_shape(ground_truth_seg, "segmentation cc inputs")?;
    let errors: Vec<f64> = final_seg
        .data
        .iter()
        .zip(&ground_truth_seg.data)
        .map(|(&a, &b)| (a - b).abs())
        .collect();
    Ok(pearson(&seg_unc.data, &errors))
}

/// Least-squares amplitude fit of `recon` onto `target`: the scale
/// minimizing ||s*recon - target||^2. Used to compare beamformed images
/// (arbitrary units) against normalized ground truth.
pub fn optimal_scale(recon: &Grid, target: &Grid) -> f64 {
    let dot: f64 = recon.data.iter().zip(&target.data).map(|(a, b)| a * b).sum();
    let norm: f64 = recon.data.iter().map(|a| a * a).sum();
    if norm == 0.0 {
        0.0
    } else {
        dot / norm
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
