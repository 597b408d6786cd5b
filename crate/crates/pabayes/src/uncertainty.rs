//! Monte-Carlo-dropout prediction and posterior aggregation.
//!
//! [`predict_mc`] runs K stochastic forward passes with independent
//! per-pass dropout seeds derived from one base seed. [`aggregate`] reduces
//! the stack into per-pixel means and uncertainties:
//!
//! - means are the plain K-pass averages of mu1 and mu2;
//! - the segmentation uncertainty combines the per-pass Bernoulli variance
//!   `mu1 (1 - mu1)` (data part) with the spread of mu1 across passes
//!   (model part);
//! - the image uncertainty likewise combines the per-pass predictive
//!   variance (`2 sigma^2` for the Laplace scale parameterization, `sigma^2`
//!   for the Gaussian) with the spread of mu2 across passes.
//!
//! Squared uncertainties decompose exactly as data^2 + model^2; this is the
//! law of total variance of the equal-weight mixture of the K per-pass
//! distributions. The final segmentation thresholds the mean at 0.5, and the
//! image mean/uncertainty maps are multiplied by it (the background is never
//! optimized by the hybrid losses, so unmasked values there carry no
//! meaning). Segmentation maps themselves stay unmasked.

use serde::{Deserialize, Serialize};

use crate::acoustics::McVolume;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::LossKind;
use crate::nn::{Checkpoint, ForwardMode};
use crate::rng::derive_seed;

/// Which predictive distribution the image head parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    Laplace,
    Gauss,
}

impl PosteriorKind {
    pub fn for_loss(kind: LossKind) -> PosteriorKind {
        match kind {
            LossKind::HybridLaplace | LossKind::LaplaceOnly => PosteriorKind::Laplace,
            LossKind::HybridGauss => PosteriorKind::Gauss,
        }
    }

    /// Per-pass predictive variance of the image distribution.
    #[inline]
    pub fn data_variance(self, sigma: f64) -> f64 {
        match self {
            PosteriorKind::Laplace => 2.0 * sigma * sigma,
            PosteriorKind::Gauss => sigma * sigma,
        }
    }
}

impl std::fmt::Display for PosteriorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PosteriorKind::Laplace => write!(f, "laplace"),
            PosteriorKind::Gauss => write!(f, "gauss"),
        }
    }
}

/// K Monte-Carlo-dropout head outputs for one input.
#[derive(Debug, Clone)]
pub struct SampleStack {
    /// Per-pass segmentation probabilities; `None` for Laplace-only heads.
    pub mu1: Option<Vec<Grid>>,
    pub mu2: Vec<Grid>,
    pub sigma: Vec<Grid>,
    pub seeds: Vec<u64>,
    pub kind: PosteriorKind,
}

impl SampleStack {
    pub fn k(&self) -> usize {
        self.mu2.len()
    }
}

/// A mean map with its uncertainty decomposed into data and model parts;
/// `unc^2 = data^2 + model^2` exactly.
#[derive(Debug, Clone)]
pub struct UncertainMap {
    pub mean: Grid,
    pub unc: Grid,
    pub data: Grid,
    pub model: Grid,
}

/// Aggregated posterior maps.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// Segmentation mean/uncertainty; `None` for Laplace-only stacks.
    pub seg: Option<UncertainMap>,
    pub img: UncertainMap,
    /// indicator(seg_mean > 0.5); all-ones when there is no segmentation head.
    pub final_seg: Grid,
    pub masked_img_mean: Grid,
    pub masked_img_unc: Grid,
    pub kind: PosteriorKind,
    pub k: usize,
    pub seeds: Vec<u64>,
}

/// Run K dropout-active forward passes with seeds `derive_seed(seed, k)`.
pub fn predict_mc(ckpt: &Checkpoint, x: &McVolume, k: usize, seed: u64) -> Result<SampleStack> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let loss_kind = ckpt.loss_kind.ok_or_else(|| {
        Error::HeadMismatch("checkpoint has no recorded loss kind; train it first".into())
    })?;
    let kind = PosteriorKind::for_loss(loss_kind);
    let mut mu1 = match ckpt.net.head {
        crate::nn::HeadKind::Hybrid => Some(Vec::with_capacity(k)),
        crate::nn::HeadKind::LaplaceOnly => None,
    };
    let mut mu2 = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    let mut seeds = Vec::with_capacity(k);
    for pass in 0..k {
        let pass_seed = derive_seed(seed, pass as u64);
        let maps = ckpt
            .forward(&[x], ForwardMode::McPredict, pass_seed)?
            .pop()
            .expect("one output per input");
        if let Some(list) = mu1.as_mut() {
            list.push(maps.mu1.expect("hybrid head emits mu1"));
        }
        mu2.push(maps.mu2);
        sigma.push(maps.sigma);
        seeds.push(pass_seed);
    }
    Ok(SampleStack {
        mu1,
        mu2,
        sigma,
        seeds,
        kind,
    })
}

fn mean_of(grids: &[Grid]) -> Grid {
    let mut mean = Grid::zeros(grids[0].nz, grids[0].nx);
    for g in grids {
        for (acc, &v) in mean.data.iter_mut().zip(&g.data) {
            *acc += v;
        }
    }
    let inv_k = 1.0 / grids.len() as f64;
    for v in &mut mean.data {
        *v *= inv_k;
    }
    mean
}

fn decompose(
    mean: Grid,
    per_pass_means: &[Grid],
    data_variance_at: impl Fn(usize, usize) -> f64,
) -> UncertainMap {
    let k = per_pass_means.len() as f64;
    let n = mean.data.len();
    let mut data = Grid::zeros(mean.nz, mean.nx);
    let mut model = Grid::zeros(mean.nz, mean.nx);
    for m in 0..n {
        let mut dvar = 0.0;
        let mut mvar = 0.0;
        for (pass, g) in per_pass_means.iter().enumerate() {
            dvar += data_variance_at(pass, m);
            let d = g.data[m] - mean.data[m];
            mvar += d * d;
        }
        data.data[m] = (dvar / k).sqrt();
        model.data[m] = (mvar / k).sqrt();
    }
    let unc = data.zip(&model, |d, m| (d * d + m * m).sqrt());
    UncertainMap {
        mean,
        unc,
        data,
        model,
    }
}

/// Aggregate a stack into posterior maps. `kind` must match the stack's
/// originating checkpoint.
pub fn aggregate(stack: &SampleStack, kind: PosteriorKind) -> Result<Posterior> {
    if stack.k() == 0 {
        return Err(Error::EmptyEvaluation("sample stack"));
    }
    if kind != stack.kind {
        return Err(Error::HeadMismatch(format!(
            "aggregation kind {kind} does not match the stack's checkpoint kind {}",
            stack.kind
        )));
    }
    let shape = (stack.mu2[0].nz, stack.mu2[0].nx);

    let img = decompose(mean_of(&stack.mu2), &stack.mu2, |pass, m| {
        kind.data_variance(stack.sigma[pass].data[m])
    });

    let seg = stack.mu1.as_ref().map(|mu1| {
        decompose(mean_of(mu1), mu1, |pass, m| {
            let p = mu1[pass].data[m];
            p * (1.0 - p)
        })
    });

    let final_seg = match &seg {
        Some(seg) => seg.mean.map(|v| if v > 0.5 { 1.0 } else { 0.0 }),
        None => Grid {
            nz: shape.0,
            nx: shape.1,
            data: vec![1.0; shape.0 * shape.1],
        },
    };
    let masked_img_mean = img.mean.zip(&final_seg, |v, s| v * s);
    let masked_img_unc = img.unc.zip(&final_seg, |v, s| v * s);

    Ok(Posterior {
        seg,
        img,
        final_seg,
        masked_img_mean,
        masked_img_unc,
        kind,
        k: stack.k(),
        seeds: stack.seeds.clone(),
    })
}
