//! Reverse-mode gradient verification against central finite differences.
//!
//! A tiny network (at most 1e4 parameters) runs in Train mode with the
//! dropout masks frozen by reseeding the same stream for every evaluation,
//! so the compared function is deterministic in the parameters. The checked
//! objective is the full training loss: data term plus L2 penalty. Failures
//! are reported, not thrown.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::LossKind;
use crate::nn::tensor::Tensor4;
use crate::nn::unet::{Mode, Op, Tape, UNet};
use crate::nn::{loss_and_grad, NetConfig, Targets};
use crate::rng::DetRng;

pub const FD_STEP: f64 = 1e-5;
const MAX_PARAMS: usize = 10_000;
const CHECKS_PER_LAYER: usize = 4;
const MASK_SEED: u64 = 0x5eed;

#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub label: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub loss_kind: LossKind,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub layers: Vec<LayerCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "gradient check: loss={} tolerance={:.1e} -> {}\n",
            self.loss_kind,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        );
        for layer in &self.layers {
            out.push_str(&format!(
                "  {:32} max_rel_err={:.3e} ({} params)\n",
                layer.label, layer.max_rel_err, layer.checked
            ));
        }
        out.push_str(&format!("  overall max_rel_err={:.3e}\n", self.max_rel_err));
        out
    }
}

/// Compare analytic gradients of the total loss against central finite
/// differences on randomly selected parameters of every layer.
///
/// `corrupt` deliberately offsets one analytic gradient before the
/// comparison; it exists as a negative control for the reporting path.
pub fn gradient_check(
    cfg: &NetConfig,
    kind: LossKind,
    tolerance: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    if !cfg.head.compatible_with(kind) {
        return Err(Error::HeadMismatch(format!(
            "loss {kind} incompatible with configured head"
        )));
    }
    let input_channels = 3;
    let side = 8usize.max(1 << cfg.depth);
    let net = UNet::build(
        cfg.depth,
        cfg.base_channels,
        input_channels,
        cfg.head.out_channels(),
        cfg.dropout_rate,
        cfg.leaky_slope,
    )?;
    if net.n_params > MAX_PARAMS {
        return Err(Error::InvalidConfig(format!(
            "gradient check needs a tiny configuration (<= {MAX_PARAMS} params), got {}",
            net.n_params
        )));
    }
    let (params, running) = net.init_params(0xC0FFEE);
    let l2_spans = net.l2_spans();

    // Probe conditioning: a raised sigma floor keeps the NLL terms O(1), and
    // targets sit away from the initial mu2 range so the |y - mu2| kink does
    // not fall inside a finite-difference interval.
    let probe_sigma_floor = cfg.sigma_floor.max(0.2);
    let mut rng = DetRng::new(0xDA7A);
    let batch = 2usize;
    let mut x = Tensor4::zeros(batch, input_channels, side, side);
    for v in &mut x.data {
        *v = rng.normal();
    }
    let mut segs = Vec::new();
    let mut imgs = Vec::new();
    for _ in 0..batch {
        let mut seg = Grid::zeros(side, side);
        let mut img = Grid::zeros(side, side);
        for m in 0..side * side {
            let fg = rng.bernoulli(0.5);
            if fg || !kind.has_segmentation() {
                img.data[m] = rng.uniform(2.0, 3.0);
            }
            if fg {
                seg.data[m] = 1.0;
            }
        }
        segs.push(seg);
        imgs.push(img);
    }
    let targets: Vec<Targets<'_>> = segs
        .iter()
        .zip(&imgs)
        .map(|(seg, img)| Targets {
            seg: kind.has_segmentation().then_some(seg),
            img,
        })
        .collect();

    let total_loss = |p: &[f64]| -> Result<f64> {
        let mut run = running.clone();
        let mut mask_rng = DetRng::new(MASK_SEED);
        let z = net.forward(p, &mut run, &x, Mode::Train, Some(&mut mask_rng), None)?;
        let (data, _) = loss_and_grad(kind, &z, &targets, probe_sigma_floor)?;
        let mut l2 = 0.0;
        for &(off, len) in &l2_spans {
            for &w in &p[off..off + len] {
                l2 += w * w;
            }
        }
        Ok(data + cfg.l2_factor * l2)
    };
    let base_loss = total_loss(&params)?;
    // Relative-error floor for near-zero gradients (a conv bias followed by
    // batch norm has an exactly-zero gradient): central differences carry
    // cancellation noise of order eps*|L|/h, so comparisons below that scale
    // are meaningless. Floor = noise / tolerance with a 10x margin.
    let rel_floor = 1e-6_f64.max(10.0 * f64::EPSILON * base_loss.abs() / (FD_STEP * tolerance));

    // Analytic pass with the same frozen masks.
    let mut analytic = {
        let mut run = running.clone();
        let mut mask_rng = DetRng::new(MASK_SEED);
        let mut tape = Tape::new();
        let z = net.forward(
            &params,
            &mut run,
            &x,
            Mode::Train,
            Some(&mut mask_rng),
            Some(&mut tape),
        )?;
        let (_, dz) = loss_and_grad(kind, &z, &targets, probe_sigma_floor)?;
        let mut grads = net.backward(&params, &tape, &dz);
        for &(off, len) in &l2_spans {
            for i in off..off + len {
                grads[i] += 2.0 * cfg.l2_factor * params[i];
            }
        }
        grads
    };
    // Pick the probed parameter indices per layer up front, so the negative
    // control can corrupt a gradient that is actually compared.
    let mut pick_rng = DetRng::new(0x51C4);
    let mut picks: Vec<(String, Vec<usize>)> = Vec::new();
    let mut conv_no = 0usize;
    let mut bn_no = 0usize;
    for op in &net.ops {
        let (label, off, len) = match op {
            Op::Conv(c) => {
                conv_no += 1;
                (
                    format!("conv{} {}->{} s{}", conv_no, c.in_ch, c.out_ch, c.stride),
                    c.w_off,
                    c.n_weights() + c.out_ch,
                )
            }
            Op::BatchNorm(b) => {
                bn_no += 1;
                (format!("batchnorm{} ch{}", bn_no, b.ch), b.gamma_off, 2 * b.ch)
            }
            _ => continue,
        };
        let indices: Vec<usize> = (0..CHECKS_PER_LAYER.min(len))
            .map(|_| off + pick_rng.uniform_usize(0, len - 1))
            .collect();
        picks.push((label, indices));
    }
    if corrupt {
        let first = picks[0].1[0];
        analytic[first] += 1e-2;
    }

    let mut layers = Vec::new();
    let mut overall: f64 = 0.0;
    for (label, indices) in picks {
        let mut max_rel: f64 = 0.0;
        for &i in &indices {
            let mut plus = params.clone();
            plus[i] += FD_STEP;
            let mut minus = params.clone();
            minus[i] -= FD_STEP;
            let numeric = (total_loss(&plus)? - total_loss(&minus)?) / (2.0 * FD_STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(rel_floor);
            max_rel = max_rel.max(rel);
        }
        overall = overall.max(max_rel);
        layers.push(LayerCheck {
            label,
            max_rel_err: max_rel,
            checked: indices.len(),
        });
    }

    Ok(GradCheckReport {
        loss_kind: kind,
        tolerance,
        max_rel_err: overall,
        layers,
        passed: overall < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadKind;

    fn tiny(head: HeadKind) -> NetConfig {
        NetConfig {
            depth: 1,
            base_channels: 2,
            head,
            ..NetConfig::default()
        }
    }

    #[test]
    fn hybrid_laplace_gradients_match() {
        let report =
            gradient_check(&tiny(HeadKind::Hybrid), LossKind::HybridLaplace, 1e-4, false)
                .unwrap();
        assert!(report.passed, "{}", report.render());
    }

    #[test]
    fn laplace_only_gradients_match() {
        let report = gradient_check(
            &tiny(HeadKind::LaplaceOnly),
            LossKind::LaplaceOnly,
            1e-4,
            false,
        )
        .unwrap();
        assert!(report.passed, "{}", report.render());
    }

    #[test]
    fn hybrid_gauss_gradients_match() {
        let report =
            gradient_check(&tiny(HeadKind::Hybrid), LossKind::HybridGauss, 1e-4, false).unwrap();
        assert!(report.passed, "{}", report.render());
    }

    #[test]
    fn corrupted_gradient_fails() {
        let report =
            gradient_check(&tiny(HeadKind::Hybrid), LossKind::HybridLaplace, 1e-4, true).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn stationary_laplace_gradient_at_exact_fit() {
        // With mu2 = y the subgradient of |y - mu2| is 0.
        let (dm, _) = crate::losses::laplace_term_grad(0.0, 1.0, 0.0);
        assert_eq!(dm, 0.0);
    }

    #[test]
    fn oversized_config_is_rejected() {
        let cfg = NetConfig {
            depth: 3,
            base_channels: 32,
            ..NetConfig::default()
        };
        assert!(matches!(
            gradient_check(&cfg, LossKind::HybridLaplace, 1e-4, false),
            Err(Error::InvalidConfig(_))
        ));
    }
}
