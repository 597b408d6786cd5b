//! Adam training loop with early stopping.
//!
//! Each step minimizes the batch-mean pixel-sum likelihood loss plus the L2
//! penalty `l2_factor * ||conv kernels and biases||^2` (batch-norm scale and
//! shift are not penalized). The validation loss is the data term alone,
//! evaluated in deterministic mode; training stops when it has not improved
//! for `patience` consecutive epochs, and the returned checkpoint is the
//! snapshot with the lowest validation loss. Training is single-threaded and
//! bit-reproducible for a fixed seed.

use std::time::Instant;

use crate::acoustics::McVolume;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::LossKind;
use crate::nn::unet::{Mode, Tape};
use crate::nn::{loss_and_grad, Checkpoint, Targets, TrainConfig};
use crate::rng::{derive_seed, DetRng};

/// One training example: network input plus ground-truth maps.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub x: &'a McVolume,
    pub seg: Option<&'a Grid>,
    pub img: &'a Grid,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: &mut u64,
    lr: f64,
) {
    *t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

fn l2_penalty(params: &[f64], spans: &[(usize, usize)], factor: f64) -> f64 {
    if factor == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for &(off, len) in spans {
        for &p in &params[off..off + len] {
            sum += p * p;
        }
    }
    factor * sum
}

fn l2_grad(params: &[f64], spans: &[(usize, usize)], factor: f64, grads: &mut [f64]) {
    if factor == 0.0 {
        return;
    }
    for &(off, len) in spans {
        for i in off..off + len {
            grads[i] += 2.0 * factor * params[i];
        }
    }
}

pub(crate) fn batch_tensor_from(
    samples: &[TrainSample<'_>],
    indices: &[usize],
    input_channels: usize,
) -> Result<crate::nn::tensor::Tensor4> {
    let first = samples[indices[0]].x;
    let mut x = crate::nn::tensor::Tensor4::zeros(indices.len(), first.n_elem, first.nz, first.nx);
    let plane = first.n_elem * first.nz * first.nx;
    for (slot, &idx) in indices.iter().enumerate() {
        let mc = samples[idx].x;
        if mc.n_elem != input_channels || mc.nz != first.nz || mc.nx != first.nx {
            return Err(Error::ShapeMismatch {
                context: "training batch volume",
                expected: format!("{}x{}x{}", input_channels, first.nz, first.nx),
                got: format!("{}x{}x{}", mc.n_elem, mc.nz, mc.nx),
            });
        }
        x.data[slot * plane..(slot + 1) * plane].copy_from_slice(&mc.data);
    }
    Ok(x)
}

/// Mean per-image data loss of a sample set, deterministic mode.
pub fn evaluate_loss(
    ckpt: &Checkpoint,
    samples: &[TrainSample<'_>],
    kind: LossKind,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation("loss evaluation set"));
    }
    let net = ckpt.unet()?;
    let mut running = ckpt.running.clone();
    let mut total = 0.0;
    let chunk = ckpt.train.batch_size.max(1);
    let indices: Vec<usize> = (0..samples.len()).collect();
    for batch in indices.chunks(chunk) {
        let x = batch_tensor_from(samples, batch, ckpt.input_channels)?;
        let z = net.forward(&ckpt.params, &mut running, &x, Mode::Deterministic, None, None)?;
        let targets: Vec<Targets<'_>> = batch
            .iter()
            .map(|&i| Targets {
                seg: samples[i].seg,
                img: samples[i].img,
            })
            .collect();
        let (value, _) = loss_and_grad(kind, &z, &targets, ckpt.net.sigma_floor)?;
        total += value * batch.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Train to the lowest validation loss; returns that snapshot plus the
/// per-epoch log.
pub fn train(
    ckpt: Checkpoint,
    train_set: &[TrainSample<'_>],
    val_set: &[TrainSample<'_>],
    kind: LossKind,
    tcfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    train_with_progress(ckpt, train_set, val_set, kind, tcfg, |_| {})
}

/// As [`train`], invoking `on_epoch` after every epoch.
pub fn train_with_progress(
    mut ckpt: Checkpoint,
    train_set: &[TrainSample<'_>],
    val_set: &[TrainSample<'_>],
    kind: LossKind,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    tcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyEvaluation("train/validation split"));
    }
    if !ckpt.net.head.compatible_with(kind) {
        return Err(Error::HeadMismatch(format!(
            "loss {kind} needs {} head channels but the network head provides {}",
            kind.head_channels(),
            ckpt.net.head.out_channels()
        )));
    }
    if kind.has_segmentation() && train_set.iter().chain(val_set).any(|s| s.seg.is_none()) {
        return Err(Error::HeadMismatch(
            "hybrid losses need segmentation targets for every sample".into(),
        ));
    }
    ckpt.train = *tcfg;
    ckpt.loss_kind = Some(kind);

    let net = ckpt.unet()?;
    let l2_spans = net.l2_spans();
    let mut rng = DetRng::new(derive_seed(tcfg.seed, 1));

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 0..tcfg.max_epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let x = batch_tensor_from(train_set, batch, ckpt.input_channels)?;
            let mut tape = Tape::new();
            let z = net.forward(
                &ckpt.params,
                &mut ckpt.running,
                &x,
                Mode::Train,
                Some(&mut rng),
                Some(&mut tape),
            )?;
            let targets: Vec<Targets<'_>> = batch
                .iter()
                .map(|&i| Targets {
                    seg: train_set[i].seg,
                    img: train_set[i].img,
                })
                .collect();
            let (data_loss, dz) = match loss_and_grad(kind, &z, &targets, ckpt.net.sigma_floor) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_no,
                    })
                }
                Err(e) => return Err(e),
            };
            let mut grads = net.backward(&ckpt.params, &tape, &dz);
            l2_grad(&ckpt.params, &l2_spans, ckpt.net.l2_factor, &mut grads);
            let batch_loss = data_loss + l2_penalty(&ckpt.params, &l2_spans, ckpt.net.l2_factor);
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                });
            }
            adam_step(
                &mut ckpt.params,
                &grads,
                &mut ckpt.adam_m,
                &mut ckpt.adam_v,
                &mut ckpt.adam_t,
                tcfg.learning_rate,
            );
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = evaluate_loss(&ckpt, val_set, kind)?;
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);

        let improved = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if improved {
            let mut snapshot = ckpt.clone();
            snapshot.epoch = epoch;
            snapshot.best_val_loss = val_loss;
            snapshot.rng_state = rng.state();
            best = Some((val_loss, snapshot));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= tcfg.patience {
                break;
            }
        }
    }
    let (_, best_ckpt) = best.expect("at least one epoch ran");
    Ok((best_ckpt, logs))
}

/// Write the per-epoch log as CSV (epoch, train loss, val loss, seconds).
pub fn write_loss_log(path: &std::path::Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
    for log in logs {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.3}\n",
            log.epoch, log.train_loss, log.val_loss, log.seconds
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
