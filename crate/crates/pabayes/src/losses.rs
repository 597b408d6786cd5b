//! Likelihood losses for joint segmentation + image reconstruction.
//!
//! Three negative log-likelihoods are supported, each summed over pixels:
//!
//! - hybrid Bernoulli+Laplacian: the Bernoulli cross-entropy drives the
//!   segmentation probability `mu1`, and a Laplacian NLL on `(mu2, sigma)`
//!   is added only where the ground-truth segmentation is 1, so background
//!   pixels never contribute to the image term;
//! - Laplacian-only: the same Laplacian NLL over every pixel (no
//!   segmentation channel);
//! - hybrid Bernoulli+Gaussian: as hybrid, with the Laplacian replaced by a
//!   Gaussian NLL.
//!
//! `sigma` is the Laplace scale parameter (pdf `1/(2 sigma) exp(-|y-mu|/sigma)`);
//! the distribution's standard deviation is `sqrt(2) * sigma`. For the
//! Gaussian variant `sigma` is the standard deviation itself.
//!
//! Reductions run in pixel order so sums are bit-deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Clamp applied to mu1 inside the losses, guarding the log terms against
/// rounding on top of the logistic head.
pub const MU1_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    HybridLaplace,
    LaplaceOnly,
    HybridGauss,
}

impl LossKind {
    /// Number of network head channels this loss consumes.
    pub fn head_channels(self) -> usize {
        match self {
            LossKind::HybridLaplace | LossKind::HybridGauss => 3,
            LossKind::LaplaceOnly => 2,
        }
    }

    pub fn has_segmentation(self) -> bool {
        self.head_channels() == 3
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::HybridLaplace => "hybrid_laplace",
            LossKind::LaplaceOnly => "laplace_only",
            LossKind::HybridGauss => "hybrid_gauss",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid_laplace" => Ok(LossKind::HybridLaplace),
            "laplace_only" => Ok(LossKind::LaplaceOnly),
            "hybrid_gauss" => Ok(LossKind::HybridGauss),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss kind '{other}' (expected hybrid_laplace, laplace_only or hybrid_gauss)"
            ))),
        }
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
fn clamp_mu1(mu1: f64) -> f64 {
    mu1.clamp(MU1_CLAMP, 1.0 - MU1_CLAMP)
}

/// Per-pixel Bernoulli cross-entropy `(y-1) log(1-mu1) - y log(mu1)`.
#[inline]
pub fn bernoulli_term(mu1: f64, y_seg: f64) -> f64 {
    let m = clamp_mu1(mu1);
    (y_seg - 1.0) * (1.0 - m).ln() - y_seg * m.ln()
}

/// Per-pixel Laplacian NLL `|y - mu2|/sigma + log(2 sigma)`.
#[inline]
pub fn laplace_term(mu2: f64, sigma: f64, y_img: f64) -> f64 {
    (y_img - mu2).abs() / sigma + (2.0 * sigma).ln()
}

/// Per-pixel Gaussian NLL `(y - mu2)^2 / (2 sigma^2) + log(sqrt(2 pi) sigma)`.
#[inline]
pub fn gauss_term(mu2: f64, sigma: f64, y_img: f64) -> f64 {
    let d = y_img - mu2;
    d * d / (2.0 * sigma * sigma) + LN_SQRT_2PI + sigma.ln()
}

fn check_inputs(grids: &[&Grid], context: &'static str) -> Result<()> {
    let first = grids[0];
    for g in grids {
        first.check_same_shape(g, context)?;
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context));
        }
    }
    Ok(())
}

/// Joint Bernoulli+Laplacian loss; the Laplacian term contributes only where
/// `y_seg = 1`.
pub fn hybrid_laplace_loss(
    mu1: &Grid,
    mu2: &Grid,
    sigma: &Grid,
    y_seg: &Grid,
    y_img: &Grid,
) -> Result<f64> {
    check_inputs(&[mu1, mu2, sigma, y_seg, y_img], "hybrid_laplace_loss")?;
    let mut total = 0.0;
    for m in 0..mu1.data.len() {
        let ys = y_seg.data[m];
        total += bernoulli_term(mu1.data[m], ys);
        if ys != 0.0 {
            total += ys * laplace_term(mu2.data[m], sigma.data[m], y_img.data[m]);
        }
    }
    Ok(total)
}

/// Laplacian NLL over every pixel, background included.
pub fn laplace_only_loss(mu2: &Grid, sigma: &Grid, y_img: &Grid) -> Result<f64> {
    check_inputs(&[mu2, sigma, y_img], "laplace_only_loss")?;
    let mut total = 0.0;
    for m in 0..mu2.data.len() {
        total += laplace_term(mu2.data[m], sigma.data[m], y_img.data[m]);
    }
    Ok(total)
}

/// Joint Bernoulli+Gaussian loss; Bernoulli part identical to the hybrid
/// Laplacian loss.
pub fn hybrid_gauss_loss(
    mu1: &Grid,
    mu2: &Grid,
    sigma: &Grid,
    y_seg: &Grid,
    y_img: &Grid,
) -> Result<f64> {
    check_inputs(&[mu1, mu2, sigma, y_seg, y_img], "hybrid_gauss_loss")?;
    let mut total = 0.0;
    for m in 0..mu1.data.len() {
        let ys = y_seg.data[m];
        total += bernoulli_term(mu1.data[m], ys);
        if ys != 0.0 {
            total += ys * gauss_term(mu2.data[m], sigma.data[m], y_img.data[m]);
        }
    }
    Ok(total)
}

/// Bernoulli cross-entropy alone, for the additive-decomposition checks.
pub fn bernoulli_cross_entropy(mu1: &Grid, y_seg: &Grid) -> Result<f64> {
    check_inputs(&[mu1, y_seg], "bernoulli_cross_entropy")?;
    Ok(mu1
        .data
        .iter()
        .zip(&y_seg.data)
        .map(|(&m, &y)| bernoulli_term(m, y))
        .sum())
}

/// Per-pixel gradients of the image NLL terms with respect to (mu2, sigma).
///
/// The subgradient of |y - mu2| at the kink is taken as 0, so the Laplacian
/// gradient in mu2 vanishes exactly at mu2 = y.
#[inline]
pub fn laplace_term_grad(mu2: f64, sigma: f64, y_img: f64) -> (f64, f64) {
    let d = y_img - mu2;
    let sign = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    let d_mu2 = -sign / sigma;
    let d_sigma = -d.abs() / (sigma * sigma) + 1.0 / sigma;
    (d_mu2, d_sigma)
}

#[inline]
pub fn gauss_term_grad(mu2: f64, sigma: f64, y_img: f64) -> (f64, f64) {
    let d = y_img - mu2;
    let d_mu2 = -d / (sigma * sigma);
    let d_sigma = -d * d / (sigma * sigma * sigma) + 1.0 / sigma;
    (d_mu2, d_sigma)
}
