//! Differentiable engine and the dropout U-Net.
//!
//! [`build_network`] constructs an initialized [`Checkpoint`]; training lives
//! in [`train`], gradient verification in [`gradcheck`]. Prediction-time
//! forward passes run in one of three modes:
//!
//! - `Train`: dropout active, batch normalization uses batch statistics;
//! - `McPredict`: dropout active with masks drawn from an explicit seed,
//!   batch normalization uses stored running statistics, so per-pass
//!   variability is attributable to dropout alone;
//! - `Deterministic`: dropout off, running statistics.
//!
//! Head transforms map the final convolution's channels to distribution
//! parameters: `mu1 = logistic(z1)`, `mu2 = z2`, `sigma = softplus(z3) +
//! sigma_floor`. The Bernoulli loss term is evaluated from the pre-logistic
//! values in log-sum-exp form, so large logits cannot overflow the log.

pub mod gradcheck;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod unet;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustics::McVolume;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::{self, LossKind};
use crate::rng::DetRng;
use tensor::Tensor4;
use unet::UNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Three output channels: mu1 (segmentation probability), mu2, sigma.
    Hybrid,
    /// Two output channels: mu2, sigma.
    LaplaceOnly,
}

impl HeadKind {
    pub fn out_channels(self) -> usize {
        match self {
            HeadKind::Hybrid => 3,
            HeadKind::LaplaceOnly => 2,
        }
    }

    pub fn compatible_with(self, kind: LossKind) -> bool {
        self.out_channels() == kind.head_channels()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Encoder levels (stride-2 downsamplings).
    pub depth: usize,
    /// Channels at the first level; doubles per level.
    pub base_channels: usize,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    pub l2_factor: f64,
    pub head: HeadKind,
    pub sigma_floor: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            depth: 2,
            base_channels: 8,
            dropout_rate: 0.1,
            leaky_slope: 0.01,
            l2_factor: 1e-6,
            head: HeadKind::Hybrid,
            sigma_floor: 1e-4,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            return Err(Error::InvalidConfig(
                "depth and base_channels must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.l2_factor < 0.0 {
            return Err(Error::InvalidConfig("l2_factor must be >= 0".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::InvalidConfig("sigma_floor must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::InvalidConfig("leaky_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 8,
            max_epochs: 1000,
            patience: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "patience must satisfy 1 <= patience < max_epochs, got {} vs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

pub use unet::Mode as ForwardMode;

/// Network weights plus optimizer and normalization state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Loss the checkpoint was trained with; `None` until trained.
    pub loss_kind: Option<LossKind>,
    pub input_channels: usize,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub params: Vec<f64>,
    pub running: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: u64,
    pub rng_state: u64,
}

/// Build an initialized network: U-Net trunk, per-head output convolution,
/// fan-in-scaled uniform weights.
pub fn build_network(cfg: &NetConfig, input_channels: usize, seed: u64) -> Result<Checkpoint> {
    cfg.validate()?;
    let net = UNet::build(
        cfg.depth,
        cfg.base_channels,
        input_channels,
        cfg.head.out_channels(),
        cfg.dropout_rate,
        cfg.leaky_slope,
    )?;
    let (params, running) = net.init_params(seed);
    let n = params.len();
    Ok(Checkpoint {
        net: *cfg,
        train: TrainConfig::default(),
        loss_kind: None,
        input_channels,
        epoch: 0,
        best_val_loss: f64::INFINITY,
        params,
        running,
        adam_m: vec![0.0; n],
        adam_v: vec![0.0; n],
        adam_t: 0,
        rng_state: seed,
    })
}

/// Distribution parameters for one sample.
#[derive(Debug, Clone)]
pub struct HeadMaps {
    /// Segmentation probability in (0, 1); `None` for Laplace-only heads.
    pub mu1: Option<Grid>,
    pub mu2: Grid,
    pub sigma: Grid,
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Checkpoint {
    pub fn unet(&self) -> Result<UNet> {
        UNet::build(
            self.net.depth,
            self.net.base_channels,
            self.input_channels,
            self.net.head.out_channels(),
            self.net.dropout_rate,
            self.net.leaky_slope,
        )
    }

    pub fn batch_tensor(&self, inputs: &[&McVolume]) -> Result<Tensor4> {
        let first = inputs
            .first()
            .ok_or(Error::EmptyEvaluation("forward batch"))?;
        if first.n_elem != self.input_channels {
            return Err(Error::ShapeMismatch {
                context: "MC volume channels vs checkpoint",
                expected: format!("{}", self.input_channels),
                got: format!("{}", first.n_elem),
            });
        }
        let mut x = Tensor4::zeros(inputs.len(), first.n_elem, first.nz, first.nx);
        for (i, mc) in inputs.iter().enumerate() {
            if mc.n_elem != first.n_elem || mc.nz != first.nz || mc.nx != first.nx {
                return Err(Error::ShapeMismatch {
                    context: "mixed MC volume shapes in one batch",
                    expected: format!("{}x{}x{}", first.n_elem, first.nz, first.nx),
                    got: format!("{}x{}x{}", mc.n_elem, mc.nz, mc.nx),
                });
            }
            let plane = first.n_elem * first.nz * first.nx;
            x.data[i * plane..(i + 1) * plane].copy_from_slice(&mc.data);
        }
        Ok(x)
    }

    /// Forward pass returning head maps per sample. Train mode here uses
    /// batch statistics without touching the stored running statistics.
    pub fn forward(
        &self,
        inputs: &[&McVolume],
        mode: ForwardMode,
        seed: u64,
    ) -> Result<Vec<HeadMaps>> {
        let net = self.unet()?;
        let x = self.batch_tensor(inputs)?;
        let mut running = self.running.clone();
        let mut rng = DetRng::new(seed);
        let z = net.forward(&self.params, &mut running, &x, mode, Some(&mut rng), None)?;
        Ok((0..z.n)
            .map(|i| head_maps_from(&z, i, self.net.head, self.net.sigma_floor))
            .collect())
    }
}

pub(crate) fn head_maps_from(
    z: &Tensor4,
    sample: usize,
    head: HeadKind,
    sigma_floor: f64,
) -> HeadMaps {
    let to_grid = |c: usize, f: &dyn Fn(f64) -> f64| -> Grid {
        Grid {
            nz: z.h,
            nx: z.w,
            data: z.plane(sample, c).iter().map(|&v| f(v)).collect(),
        }
    };
    match head {
        HeadKind::Hybrid => HeadMaps {
            mu1: Some(to_grid(0, &|v| {
                logistic(v).clamp(losses::MU1_CLAMP, 1.0 - losses::MU1_CLAMP)
            })),
            mu2: to_grid(1, &|v| v),
            sigma: to_grid(2, &|v| softplus(v) + sigma_floor),
        },
        HeadKind::LaplaceOnly => HeadMaps {
            mu1: None,
            mu2: to_grid(0, &|v| v),
            sigma: to_grid(1, &|v| softplus(v) + sigma_floor),
        },
    }
}

/// Ground-truth targets for one sample; `seg` is required by hybrid losses.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    pub seg: Option<&'a Grid>,
    pub img: &'a Grid,
}

/// Loss value and head-gradient of a batch, computed from raw head logits.
///
/// The value is the batch mean of the per-image pixel sum; the Bernoulli
/// term uses the numerically stable `softplus(z1) - y*z1` form, and the
/// gradient of |y - mu2| at the kink uses the zero subgradient.
pub(crate) fn loss_and_grad(
    kind: LossKind,
    z: &Tensor4,
    targets: &[Targets<'_>],
    sigma_floor: f64,
) -> Result<(f64, Tensor4)> {
    if targets.len() != z.n {
        return Err(Error::ShapeMismatch {
            context: "loss targets vs batch",
            expected: format!("{}", z.n),
            got: format!("{}", targets.len()),
        });
    }
    if z.c != kind.head_channels() {
        return Err(Error::HeadMismatch(format!(
            "loss {kind} expects {} head channels, network has {}",
            kind.head_channels(),
            z.c
        )));
    }
    let plane = z.plane_len();
    let inv_n = 1.0 / z.n as f64;
    let mut value = 0.0;
    let mut dz = Tensor4::zeros(z.n, z.c, z.h, z.w);

    for (i, target) in targets.iter().enumerate() {
        if target.img.data.len() != plane {
            return Err(Error::ShapeMismatch {
                context: "target image vs head plane",
                expected: format!("{plane}"),
                got: format!("{}", target.img.data.len()),
            });
        }
        match kind {
            LossKind::LaplaceOnly => {
                let z2 = z.plane(i, 0);
                let z3 = z.plane(i, 1);
                for m in 0..plane {
                    let mu2 = z2[m];
                    let sig_act = logistic(z3[m]);
                    let sigma = softplus(z3[m]) + sigma_floor;
                    let y = target.img.data[m];
                    value += losses::laplace_term(mu2, sigma, y);
                    let (dmu2, dsigma) = losses::laplace_term_grad(mu2, sigma, y);
                    dz.plane_mut(i, 0)[m] = dmu2 * inv_n;
                    dz.plane_mut(i, 1)[m] = dsigma * sig_act * inv_n;
                }
            }
            LossKind::HybridLaplace | LossKind::HybridGauss => {
                let seg = target.seg.ok_or_else(|| {
                    Error::HeadMismatch("hybrid loss needs segmentation targets".into())
                })?;
                if seg.data.len() != plane {
                    return Err(Error::ShapeMismatch {
                        context: "target segmentation vs head plane",
                        expected: format!("{plane}"),
                        got: format!("{}", seg.data.len()),
                    });
                }
                for m in 0..plane {
                    let z1 = z.plane(i, 0)[m];
                    let ys = seg.data[m];
                    // softplus(z1) - y*z1 = -y log(mu1) - (1-y) log(1-mu1)
                    value += softplus(z1) - ys * z1;
                    dz.plane_mut(i, 0)[m] = (logistic(z1) - ys) * inv_n;
                    if ys != 0.0 {
                        let mu2 = z.plane(i, 1)[m];
                        let z3 = z.plane(i, 2)[m];
                        let sigma = softplus(z3) + sigma_floor;
                        let y = target.img.data[m];
                        let (term, (dmu2, dsigma)) = match kind {
                            LossKind::HybridLaplace => (
                                losses::laplace_term(mu2, sigma, y),
                                losses::laplace_term_grad(mu2, sigma, y),
                            ),
                            _ => (
                                losses::gauss_term(mu2, sigma, y),
                                losses::gauss_term_grad(mu2, sigma, y),
                            ),
                        };
                        value += ys * term;
                        dz.plane_mut(i, 1)[m] = ys * dmu2 * inv_n;
                        dz.plane_mut(i, 2)[m] = ys * dsigma * logistic(z3) * inv_n;
                    }
                }
            }
        }
    }
    value *= inv_n;
    if !value.is_finite() {
        return Err(Error::NonFinite("batch loss"));
    }
    Ok((value, dz))
}

// ---------------------------------------------------------------------------
// Checkpoint file format: one JSON header line, then four f64 LE blobs
// (params, running, adam_m, adam_v) with lengths declared in the header.
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CkptHeader {
    format_version: u32,
    net: NetConfig,
    train: TrainConfig,
    loss_kind: Option<LossKind>,
    input_channels: usize,
    epoch: usize,
    /// `None` encodes an untrained checkpoint (infinite validation loss).
    best_val_loss: Option<f64>,
    param_count: usize,
    blobs: CkptBlobs,
    adam_t: u64,
    rng_state: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CkptBlobs {
    params: usize,
    running: usize,
    adam_m: usize,
    adam_v: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CkptHeader {
            format_version: CHECKPOINT_VERSION,
            net: self.net,
            train: self.train,
            loss_kind: self.loss_kind,
            input_channels: self.input_channels,
            epoch: self.epoch,
            best_val_loss: self.best_val_loss.is_finite().then_some(self.best_val_loss),
            param_count: self.params.len(),
            blobs: CkptBlobs {
                params: self.params.len(),
                running: self.running.len(),
                adam_m: self.adam_m.len(),
                adam_v: self.adam_v.len(),
            },
            adam_t: self.adam_t,
            rng_state: format!("{:016x}", self.rng_state),
        };
        let mut line = serde_json::to_string(&header).map_err(|e| Error::json(path, e))?;
        line.push('\n');
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        for blob in [&self.params, &self.running, &self.adam_m, &self.adam_v] {
            for &v in blob.iter() {
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            match r.read(&mut byte).map_err(|e| Error::io(path, e))? {
                0 => return Err(Error::CorruptCheckpoint("missing header newline".into())),
                _ if byte[0] == b'\n' => break,
                _ => header_bytes.push(byte[0]),
            }
            if header_bytes.len() > 1 << 20 {
                return Err(Error::CorruptCheckpoint("header exceeds 1 MiB".into()));
            }
        }
        let header: CkptHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::CorruptCheckpoint(format!("bad header JSON: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                got: header.format_version,
            });
        }
        let rng_state = u64::from_str_radix(&header.rng_state, 16)
            .map_err(|e| Error::CorruptCheckpoint(format!("bad rng state: {e}")))?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
        let total = header.blobs.params + header.blobs.running + header.blobs.adam_m
            + header.blobs.adam_v;
        if payload.len() != total * 8 {
            return Err(Error::TruncatedPayload {
                expected: total * 8,
                got: payload.len(),
            });
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        let params = take(header.blobs.params);
        let running = take(header.blobs.running);
        let adam_m = take(header.blobs.adam_m);
        let adam_v = take(header.blobs.adam_v);

        let ckpt = Checkpoint {
            net: header.net,
            train: header.train,
            loss_kind: header.loss_kind,
            input_channels: header.input_channels,
            epoch: header.epoch,
            best_val_loss: header.best_val_loss.unwrap_or(f64::INFINITY),
            params,
            running,
            adam_m,
            adam_v,
            adam_t: header.adam_t,
            rng_state,
        };
        // Structural validation against the declared architecture.
        let net = ckpt.unet()?;
        if net.n_params != header.param_count || net.n_params != ckpt.params.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter count mismatch: architecture has {}, header declares {}, payload has {}",
                net.n_params,
                header.param_count,
                ckpt.params.len()
            )));
        }
        if net.n_running != ckpt.running.len() {
            return Err(Error::CorruptCheckpoint(
                "running-statistics length mismatch".into(),
            ));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pabayes-nn-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn random_volume(rng: &mut DetRng, n_elem: usize, nz: usize, nx: usize) -> McVolume {
        McVolume {
            n_elem,
            nz,
            nx,
            data: (0..n_elem * nz * nx).map(|_| rng.normal()).collect(),
        }
    }

    fn tiny_config() -> NetConfig {
        NetConfig {
            depth: 1,
            base_channels: 2,
            ..NetConfig::default()
        }
    }

    #[test]
    fn mc_predict_is_seed_deterministic() {
        let ckpt = build_network(&tiny_config(), 4, 7).unwrap();
        let mut rng = DetRng::new(1);
        let mc = random_volume(&mut rng, 4, 8, 8);
        let a = ckpt.forward(&[&mc], ForwardMode::McPredict, 33).unwrap();
        let b = ckpt.forward(&[&mc], ForwardMode::McPredict, 33).unwrap();
        assert_eq!(a[0].mu2.data, b[0].mu2.data);
        let c = ckpt.forward(&[&mc], ForwardMode::McPredict, 34).unwrap();
        assert_ne!(a[0].mu2.data, c[0].mu2.data);
    }

    #[test]
    fn zero_dropout_makes_mc_predict_seed_independent() {
        let cfg = NetConfig {
            dropout_rate: 0.0,
            ..tiny_config()
        };
        let ckpt = build_network(&cfg, 4, 7).unwrap();
        let mut rng = DetRng::new(2);
        let mc = random_volume(&mut rng, 4, 8, 8);
        let a = ckpt.forward(&[&mc], ForwardMode::McPredict, 1).unwrap();
        let b = ckpt.forward(&[&mc], ForwardMode::McPredict, 999).unwrap();
        assert_eq!(a[0].mu2.data, b[0].mu2.data);
    }

    #[test]
    fn heads_respect_their_domains() {
        let ckpt = build_network(&tiny_config(), 4, 3).unwrap();
        let mut rng = DetRng::new(5);
        let mc = random_volume(&mut rng, 4, 8, 8);
        let maps = &ckpt.forward(&[&mc], ForwardMode::McPredict, 9).unwrap()[0];
        let mu1 = maps.mu1.as_ref().unwrap();
        assert!(mu1.data.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(maps
            .sigma
            .data
            .iter()
            .all(|&v| v >= ckpt.net.sigma_floor));
    }

    #[test]
    fn logits_loss_matches_transformed_loss_value() {
        // The stable logits path and the clamped mu1 path agree closely.
        let cfg = tiny_config();
        let ckpt = build_network(&cfg, 4, 11).unwrap();
        let net = ckpt.unet().unwrap();
        let mut rng = DetRng::new(6);
        let mc = random_volume(&mut rng, 4, 8, 8);
        let x = ckpt.batch_tensor(&[&mc]).unwrap();
        let mut running = ckpt.running.clone();
        let z = net
            .forward(&ckpt.params, &mut running, &x, unet::Mode::Deterministic, None, None)
            .unwrap();

        let mut seg = Grid::zeros(8, 8);
        let mut img = Grid::zeros(8, 8);
        for m in 0..64 {
            if rng.bernoulli(0.3) {
                seg.data[m] = 1.0;
                img.data[m] = rng.uniform(0.5, 2.0);
            }
        }
        let (value, _) = loss_and_grad(
            LossKind::HybridLaplace,
            &z,
            &[Targets {
                seg: Some(&seg),
                img: &img,
            }],
            cfg.sigma_floor,
        )
        .unwrap();

        let maps = head_maps_from(&z, 0, cfg.head, cfg.sigma_floor);
        let reference = crate::losses::hybrid_laplace_loss(
            maps.mu1.as_ref().unwrap(),
            &maps.mu2,
            &maps.sigma,
            &seg,
            &img,
        )
        .unwrap();
        assert!(
            (value - reference).abs() < 1e-9,
            "logits {value} vs transformed {reference}"
        );
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let mut ckpt = build_network(&tiny_config(), 4, 21).unwrap();
        ckpt.loss_kind = Some(LossKind::HybridLaplace);
        ckpt.best_val_loss = 12.5;
        ckpt.epoch = 3;
        let path = tmp("roundtrip.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.running, ckpt.running);
        assert_eq!(back.adam_m, ckpt.adam_m);
        assert_eq!(back.loss_kind, ckpt.loss_kind);
        assert_eq!(back.epoch, 3);

        // Deterministic forward equality after the round trip.
        let mut rng = DetRng::new(8);
        let mc = random_volume(&mut rng, 4, 8, 8);
        let a = ckpt.forward(&[&mc], ForwardMode::Deterministic, 0).unwrap();
        let b = back.forward(&[&mc], ForwardMode::Deterministic, 0).unwrap();
        assert_eq!(a[0].mu2.data, b[0].mu2.data);
        assert_eq!(a[0].sigma.data, b[0].sigma.data);
    }

    #[test]
    fn untrained_checkpoint_roundtrips() {
        // Fresh checkpoints carry an infinite validation loss; the header
        // must encode that without corrupting the JSON.
        let ckpt = build_network(&tiny_config(), 4, 9).unwrap();
        let path = tmp("untrained.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.best_val_loss, f64::INFINITY);
        assert!(back.loss_kind.is_none());
    }

    #[test]
    fn truncated_checkpoint_is_named_error() {
        let ckpt = build_network(&tiny_config(), 4, 2).unwrap();
        let path = tmp("truncated.ckpt");
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        match Checkpoint::load(&path) {
            Err(Error::TruncatedPayload { .. }) => {}
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn wrong_head_loss_pairing_is_rejected() {
        let cfg = NetConfig {
            head: HeadKind::LaplaceOnly,
            ..tiny_config()
        };
        assert!(!cfg.head.compatible_with(LossKind::HybridLaplace));
        assert!(cfg.head.compatible_with(LossKind::LaplaceOnly));

        let ckpt = build_network(&cfg, 4, 2).unwrap();
        let net = ckpt.unet().unwrap();
        let mut rng = DetRng::new(9);
        let mc = random_volume(&mut rng, 4, 8, 8);
        let x = ckpt.batch_tensor(&[&mc]).unwrap();
        let mut running = ckpt.running.clone();
        let z = net
            .forward(&ckpt.params, &mut running, &x, unet::Mode::Deterministic, None, None)
            .unwrap();
        let img = Grid::zeros(8, 8);
        let err = loss_and_grad(
            LossKind::HybridLaplace,
            &z,
            &[Targets {
                seg: None,
                img: &img,
            }],
            1e-4,
        );
        assert!(matches!(err, Err(Error::HeadMismatch(_))));
    }

    #[test]
    fn stable_primitives() {
        assert!((logistic(0.0) - 0.5).abs() < 1e-15);
        assert!(logistic(800.0) <= 1.0);
        assert!(logistic(-800.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(800.0).is_finite());
        assert!(softplus(-800.0) >= 0.0);
    }
}
