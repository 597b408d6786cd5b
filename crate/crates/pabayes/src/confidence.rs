//! Confidence processing: relative-uncertainty thresholding.
//!
//! The relative uncertainty of a pixel is SD/M, its uncertainty divided by
//! its mean. Low SD/M means high confidence. The pipeline first applies a
//! soft threshold on the segmentation mean to drop pixels that clearly carry
//! no signal, then keeps segmentation pixels with SD/M strictly below the
//! segmentation threshold (and mean > 0.5), and finally zeroes image pixels
//! whose SD/M exceeds the image threshold (non-strict comparison there).
//! Sweeping the image threshold downward yields nested, increasingly
//! conservative images.
//!
//! Pixels where SD/M is undefined (mean <= 0 inside the mask) carry the
//! [`UNDEFINED`] sentinel and are never retained by a finite threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::uncertainty::Posterior;

/// SD/M sentinel for pixels outside the supported set.
pub const UNDEFINED: f64 = f64::NAN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceParams {
    /// Minimum segmentation mean for a pixel to be considered at all.
    pub soft_threshold: f64,
    /// Segmentation pixels need SD/M strictly below this.
    pub seg_rel_threshold: f64,
    /// Image pixels need SD/M at or below this.
    pub img_rel_threshold: f64,
    /// Rounding threshold on the segmentation mean.
    pub seg_round_threshold: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        ConfidenceParams {
            soft_threshold: 0.05,
            seg_rel_threshold: 1.0,
            img_rel_threshold: 0.9,
            seg_round_threshold: 0.5,
        }
    }
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("soft_threshold", self.soft_threshold),
            ("seg_rel_threshold", self.seg_rel_threshold),
            ("img_rel_threshold", self.img_rel_threshold),
            ("seg_round_threshold", self.seg_round_threshold),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.soft_threshold >= self.seg_round_threshold {
            return Err(Error::InvalidConfig(format!(
                "soft_threshold {} must stay below seg_round_threshold {}",
                self.soft_threshold, self.seg_round_threshold
            )));
        }
        Ok(())
    }
}

/// SD/M where the support mask holds and the mean is positive; the
/// [`UNDEFINED`] sentinel elsewhere. Sentinel pixels fail every threshold
/// comparison, so they are never retained downstream.
pub fn relative_uncertainty(mean: &Grid, unc: &Grid, support: &Grid) -> Result<Grid> {
    mean.check_same_shape(unc, "relative uncertainty inputs")?;
    mean.check_same_shape(support, "relative uncertainty support")?;
    let mut rel = mean.map(|_| UNDEFINED);
    for m in 0..mean.data.len() {
        if support.data[m] != 0.0 && mean.data[m] > 0.0 {
            rel.data[m] = unc.data[m] / mean.data[m];
        }
    }
    Ok(rel)
}

/// Confident segmentation: soft support, SD/M < seg_rel_threshold, mean > 0.5.
pub fn confident_segmentation(posterior: &Posterior, params: &ConfidenceParams) -> Result<Grid> {
    params.validate()?;
    let seg = posterior
        .seg
        .as_ref()
        .ok_or_else(|| Error::HeadMismatch("confidence processing needs segmentation maps".into()))?;
    let support = seg.mean.map(|v| if v > params.soft_threshold { 1.0 } else { 0.0 });
    let rel = relative_uncertainty(&seg.mean, &seg.unc, &support)?;
    let mut out = Grid::zeros(seg.mean.nz, seg.mean.nx);
    for m in 0..out.data.len() {
        if support.data[m] == 1.0
            && rel.data[m] < params.seg_rel_threshold
            && seg.mean.data[m] > params.seg_round_threshold
        {
            out.data[m] = 1.0;
        }
    }
    Ok(out)
}

/// Confident image: mask by the confident segmentation, then zero pixels
/// whose image SD/M exceeds the threshold. `f64::INFINITY` disables the
/// SD/M cut and returns the masked mean unchanged.
pub fn confident_image(
    posterior: &Posterior,
    conf_seg: &Grid,
    params: &ConfidenceParams,
) -> Result<Grid> {
    params.validate()?;
    conf_seg.check_same_shape(&posterior.img.mean, "confident segmentation vs image")?;
    let masked_mean = posterior.img.mean.zip(conf_seg, |v, s| v * s);
    if params.img_rel_threshold == f64::INFINITY {
        return Ok(masked_mean);
    }
    let masked_unc = posterior.img.unc.zip(conf_seg, |v, s| v * s);
    let rel = relative_uncertainty(&masked_mean, &masked_unc, conf_seg)?;
    let mut out = Grid::zeros(masked_mean.nz, masked_mean.nx);
    for m in 0..out.data.len() {
        if conf_seg.data[m] == 1.0 && rel.data[m] <= params.img_rel_threshold {
            out.data[m] = masked_mean.data[m];
        }
    }
    Ok(out)
}

/// One confident image per threshold (descending), with
/// `img_rel_threshold` substituted per entry.
pub fn threshold_sweep(
    posterior: &Posterior,
    params: &ConfidenceParams,
    thresholds: &[f64],
) -> Result<Vec<Grid>> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("threshold sweep needs at least one entry".into()));
    }
    if thresholds.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidConfig(
            "sweep thresholds must be sorted descending".into(),
        ));
    }
    let conf_seg = confident_segmentation(posterior, params)?;
    thresholds
        .iter()
        .map(|&t| {
            let p = ConfidenceParams {
                img_rel_threshold: t,
                ..*params
            };
            confident_image(posterior, &conf_seg, &p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use crate::uncertainty::{aggregate, PosteriorKind, SampleStack};

    fn grid(nz: usize, nx: usize, f: impl Fn(usize) -> f64) -> Grid {
        Grid {
            nz,
            nx,
            data: (0..nz * nx).map(f).collect(),
        }
    }

    fn posterior_from(mu1: Grid, mu2: Grid, sigma: Grid) -> Posterior {
        let stack = SampleStack {
            mu1: Some(vec![mu1]),
            mu2: vec![mu2],
            sigma: vec![sigma],
            seeds: vec![0],
            kind: PosteriorKind::Laplace,
        };
        aggregate(&stack, PosteriorKind::Laplace).unwrap()
    }

    fn random_posterior(seed: u64, nz: usize, nx: usize) -> Posterior {
        let mut rng = DetRng::new(seed);
        let mu1 = grid(nz, nx, |_| 0.0).map(|_| rng.uniform(0.0, 1.0));
        let mu2 = grid(nz, nx, |_| 0.0).map(|_| rng.uniform(-0.2, 2.0));
        let sigma = grid(nz, nx, |_| 0.0).map(|_| rng.uniform(0.01, 1.2));
        posterior_from(mu1, mu2, sigma)
    }

    #[test]
    fn relative_uncertainty_arithmetic_and_sentinels() {
        let mean = grid(1, 3, |m| [0.5, 0.0, 1.0][m]);
        let unc = grid(1, 3, |m| [0.25, 0.3, 0.0][m]);
        let support = grid(1, 3, |m| [1.0, 1.0, 0.0][m]);
        let rel = relative_uncertainty(&mean, &unc, &support).unwrap();
        assert_eq!(rel.data[0], 0.5);
        assert!(rel.data[1].is_nan(), "zero mean inside mask is undefined");
        assert!(rel.data[2].is_nan(), "masked-out pixel is undefined");
        // Sentinels never pass a threshold comparison.
        assert!(!(rel.data[1] < f64::MAX));
    }

    #[test]
    fn zero_uncertainty_segmentation_equals_rounded_mean() {
        // seg_unc = 0 and binary means: output is the 0.5-thresholded mean.
        let mu1 = grid(2, 2, |m| [1.0, 0.0, 1.0, 0.0][m]);
        // A single pass with mu1 in {0,1} has zero Bernoulli variance.
        let post = posterior_from(mu1.clone(), grid(2, 2, |_| 1.0), grid(2, 2, |_| 0.1));
        let conf = confident_segmentation(&post, &ConfidenceParams::default()).unwrap();
        assert_eq!(conf.data, mu1.data);
    }

    #[test]
    fn high_relative_uncertainty_pixel_is_excluded() {
        // seg_mean 0.6 with seg_unc 0.9: SD/M = 1.5 >= 1 -> excluded.
        let post = posterior_from(
            grid(1, 1, |_| 0.6),
            grid(1, 1, |_| 1.0),
            grid(1, 1, |_| 0.1),
        );
        // Force the uncertainty by hand.
        let mut post = post;
        post.seg.as_mut().unwrap().unc.data[0] = 0.9;
        let conf = confident_segmentation(&post, &ConfidenceParams::default()).unwrap();
        assert_eq!(conf.data[0], 0.0);
    }

    #[test]
    fn infinite_seg_threshold_recovers_final_seg_on_support() {
        let post = random_posterior(5, 8, 8);
        let params = ConfidenceParams {
            seg_rel_threshold: f64::INFINITY,
            ..ConfidenceParams::default()
        };
        let conf = confident_segmentation(&post, &params).unwrap();
        let seg = post.seg.as_ref().unwrap();
        for m in 0..conf.data.len() {
            let expected = if seg.mean.data[m] > params.soft_threshold
                && post.final_seg.data[m] == 1.0
            {
                1.0
            } else {
                0.0
            };
            assert_eq!(conf.data[m], expected, "pixel {m}");
        }
    }

    #[test]
    fn zero_image_uncertainty_keeps_masked_mean() {
        let mu1 = grid(2, 2, |m| if m < 2 { 0.9 } else { 0.1 });
        let mu2 = grid(2, 2, |_| 1.5);
        let post = posterior_from(mu1, mu2, grid(2, 2, |_| 0.2));
        let mut post = post;
        post.img.unc = grid(2, 2, |_| 0.0);
        let conf_seg = confident_segmentation(&post, &ConfidenceParams::default()).unwrap();
        let img = confident_image(&post, &conf_seg, &ConfidenceParams::default()).unwrap();
        for m in 0..4 {
            assert_eq!(img.data[m], post.img.mean.data[m] * conf_seg.data[m]);
        }
    }

    #[test]
    fn image_threshold_edge_cases() {
        // mean 1.0, unc 0.95: rel 0.95 > 0.9 -> zeroed at defaults.
        let mut post = posterior_from(
            grid(1, 1, |_| 0.95),
            grid(1, 1, |_| 1.0),
            grid(1, 1, |_| 0.1),
        );
        post.img.unc.data[0] = 0.95;
        let conf_seg = grid(1, 1, |_| 1.0);
        let img = confident_image(&post, &conf_seg, &ConfidenceParams::default()).unwrap();
        assert_eq!(img.data[0], 0.0);

        // threshold 0 zeroes every pixel with positive uncertainty...
        let params0 = ConfidenceParams {
            img_rel_threshold: f64::MIN_POSITIVE,
            ..ConfidenceParams::default()
        };
        let img = confident_image(&post, &conf_seg, &params0).unwrap();
        assert_eq!(img.data[0], 0.0);

        // ...and the infinity sentinel returns the masked mean unchanged.
        let params_inf = ConfidenceParams {
            img_rel_threshold: f64::INFINITY,
            ..ConfidenceParams::default()
        };
        let img = confident_image(&post, &conf_seg, &params_inf).unwrap();
        assert_eq!(img.data[0], post.img.mean.data[0]);
    }

    #[test]
    fn sweep_supports_are_nested() {
        for seed in [1u64, 2, 3] {
            let post = random_posterior(seed, 16, 12);
            let thresholds = [2.0, 0.9, 0.5, 0.2];
            let images =
                threshold_sweep(&post, &ConfidenceParams::default(), &thresholds).unwrap();
            assert_eq!(images.len(), 4);
            for w in images.windows(2) {
                for m in 0..w[0].data.len() {
                    if w[1].data[m] != 0.0 {
                        assert!(
                            w[0].data[m] != 0.0,
                            "tighter threshold kept pixel {m} the looser one dropped"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn sweep_of_one_matches_single_call() {
        let post = random_posterior(9, 8, 8);
        let params = ConfidenceParams::default();
        let sweep = threshold_sweep(&post, &params, &[0.9]).unwrap();
        let conf_seg = confident_segmentation(&post, &params).unwrap();
        let single = confident_image(&post, &conf_seg, &params).unwrap();
        assert_eq!(sweep[0].data, single.data);
    }

    #[test]
    fn sweep_rejects_bad_inputs() {
        let post = random_posterior(4, 8, 8);
        let params = ConfidenceParams::default();
        assert!(threshold_sweep(&post, &params, &[]).is_err());
        assert!(threshold_sweep(&post, &params, &[0.5, 0.9]).is_err());
    }

    #[test]
    fn confident_image_is_idempotent() {
        let post = random_posterior(11, 10, 10);
        let params = ConfidenceParams::default();
        let conf_seg = confident_segmentation(&post, &params).unwrap();
        let once = confident_image(&post, &conf_seg, &params).unwrap();
        let mut again_post = post.clone();
        again_post.img.mean = once.clone();
        let twice = confident_image(&again_post, &conf_seg, &params).unwrap();
        assert_eq!(once.data, twice.data);
    }

    #[test]
    fn confident_segmentation_implies_rounded_mean() {
        let post = random_posterior(13, 12, 12);
        let conf = confident_segmentation(&post, &ConfidenceParams::default()).unwrap();
        let seg = post.seg.as_ref().unwrap();
        for m in 0..conf.data.len() {
            if conf.data[m] == 1.0 {
                assert!(seg.mean.data[m] > 0.5);
                assert_eq!(post.final_seg.data[m], 1.0);
            }
        }
    }
}
