//! U-Net built from the layer primitives.
//!
//! The network is a flat op sequence with a LIFO skip stack. Channel width
//! doubles per encoder level starting from `base_channels`; downsampling is
//! a stride-2 convolution, upsampling is nearest-neighbour followed by a
//! convolution. A dropout layer precedes every convolution and batch
//! normalization follows every convolution; all activations are LeakyReLU
//! except after the head convolution, whose channels feed the head
//! transforms directly.
//!
//! For depth `d`, both spatial dims must be divisible by `2^d` and remain at
//! least 1 at the bottleneck.

use crate::error::{Error, Result};
use crate::nn::ops;
use crate::nn::tensor::Tensor4;
use crate::rng::DetRng;

#[derive(Debug, Clone, Copy)]
pub struct ConvDef {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvDef {
    pub fn n_weights(&self) -> usize {
        self.out_ch * self.in_ch * ops::KSIZE * ops::KSIZE
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BnDef {
    pub ch: usize,
    pub gamma_off: usize,
    pub beta_off: usize,
    /// Offset of [mean; var] in the running-statistics buffer.
    pub run_off: usize,
}

#[derive(Debug, Clone)]
pub enum Op {
    Dropout,
    Conv(ConvDef),
    BatchNorm(BnDef),
    LeakyRelu,
    Upsample2,
    PushSkip,
    PopConcat,
}

#[derive(Debug, Clone)]
pub struct UNet {
    pub depth: usize,
    pub input_channels: usize,
    pub out_channels: usize,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    pub ops: Vec<Op>,
    pub n_params: usize,
    pub n_running: usize,
}

impl UNet {
    pub fn build(
        depth: usize,
        base_channels: usize,
        input_channels: usize,
        out_channels: usize,
        dropout_rate: f64,
        leaky_slope: f64,
    ) -> Result<Self> {
        if depth == 0 || base_channels == 0 || input_channels == 0 {
            return Err(Error::InvalidConfig(
                "depth, base_channels and input_channels must be positive".into(),
            ));
        }
        let mut ops_seq = Vec::new();
        let mut n_params = 0usize;
        let mut n_running = 0usize;

        let mut push_conv_block =
            |ops_seq: &mut Vec<Op>, in_ch: usize, out_ch: usize, stride: usize, act: bool| {
                ops_seq.push(Op::Dropout);
                let conv = ConvDef {
                    in_ch,
                    out_ch,
                    stride,
                    w_off: n_params,
                    b_off: n_params + out_ch * in_ch * ops::KSIZE * ops::KSIZE,
                };
                n_params += conv.n_weights() + out_ch;
                ops_seq.push(Op::Conv(conv));
                let bn = BnDef {
                    ch: out_ch,
                    gamma_off: n_params,
                    beta_off: n_params + out_ch,
                    run_off: n_running,
                };
                n_params += 2 * out_ch;
                n_running += 2 * out_ch;
                ops_seq.push(Op::BatchNorm(bn));
                if act {
                    ops_seq.push(Op::LeakyRelu);
                }
            };

        let width = |level: usize| base_channels << level;

        // Encoder.
        push_conv_block(&mut ops_seq, input_channels, width(0), 1, true);
        for level in 1..=depth {
            ops_seq.push(Op::PushSkip);
            push_conv_block(&mut ops_seq, width(level - 1), width(level), 2, true);
            push_conv_block(&mut ops_seq, width(level), width(level), 1, true);
        }
        // Decoder.
        for level in (1..=depth).rev() {
            ops_seq.push(Op::Upsample2);
            push_conv_block(&mut ops_seq, width(level), width(level - 1), 1, true);
            ops_seq.push(Op::PopConcat);
            push_conv_block(&mut ops_seq, 2 * width(level - 1), width(level - 1), 1, true);
        }
        // Head: distribution parameters, no activation after the final norm.
        push_conv_block(&mut ops_seq, width(0), out_channels, 1, false);

        Ok(UNet {
            depth,
            input_channels,
            out_channels,
            dropout_rate,
            leaky_slope,
            ops: ops_seq,
            n_params,
            n_running,
        })
    }

    /// Fan-in-scaled uniform init for convolutions, identity for batch norm.
    pub fn init_params(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut params = vec![0.0; self.n_params];
        let mut running = vec![0.0; self.n_running];
        let mut rng = DetRng::new(seed);
        for op in &self.ops {
            match op {
                Op::Conv(conv) => {
                    let bound = 1.0 / ((conv.in_ch * ops::KSIZE * ops::KSIZE) as f64).sqrt();
                    for i in 0..conv.n_weights() {
                        params[conv.w_off + i] = rng.uniform(-bound, bound);
                    }
                    for i in 0..conv.out_ch {
                        params[conv.b_off + i] = rng.uniform(-bound, bound);
                    }
                }
                Op::BatchNorm(bn) => {
                    for i in 0..bn.ch {
                        params[bn.gamma_off + i] = 1.0;
                        params[bn.beta_off + i] = 0.0;
                        running[bn.run_off + i] = 0.0; // mean
                        running[bn.run_off + bn.ch + i] = 1.0; // var
                    }
                }
                _ => {}
            }
        }
        (params, running)
    }

    /// (offset, len) spans of convolution kernels and biases, the parameters
    /// subject to the L2 penalty (batch-norm scale/shift excluded).
    pub fn l2_spans(&self) -> Vec<(usize, usize)> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Conv(c) => Some((c.w_off, c.n_weights() + c.out_ch)),
                _ => None,
            })
            .collect()
    }

    pub fn check_grid(&self, h: usize, w: usize) -> Result<()> {
        let factor = 1usize << self.depth;
        if !h.is_multiple_of(factor) || !w.is_multiple_of(factor) || h / factor == 0 || w / factor == 0 {
            return Err(Error::InvalidConfig(format!(
                "depth {} incompatible with {}x{} grid: dims must be divisible by {} and stay >= 1 at the bottleneck",
                self.depth, h, w, factor
            )));
        }
        Ok(())
    }
}

/// Per-op cache for the reverse pass.
pub enum OpCache {
    None,
    Dropout(Option<Vec<f64>>),
    Conv { x: Tensor4 },
    Bn(ops::BnCache),
    LeakyRelu { x: Tensor4 },
    PopConcat { chain_ch: usize },
}

pub struct Tape {
    caches: Vec<OpCache>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics, running stats updated.
    Train,
    /// Dropout active from the given seed, frozen running statistics.
    McPredict,
    /// No dropout, frozen running statistics.
    Deterministic,
}

impl UNet {
    /// Forward pass. `rng` drives dropout (required in Train/McPredict when
    /// the dropout rate is positive). In Train mode `running` is updated and
    /// a tape is recorded when requested.
    pub fn forward(
        &self,
        params: &[f64],
        running: &mut [f64],
        x: &Tensor4,
        mode: Mode,
        rng: Option<&mut DetRng>,
        mut tape: Option<&mut Tape>,
    ) -> Result<Tensor4> {
        if x.c != self.input_channels {
            return Err(Error::ShapeMismatch {
                context: "network input channels",
                expected: format!("{}", self.input_channels),
                got: format!("{}", x.c),
            });
        }
        self.check_grid(x.h, x.w)?;
        debug_assert!(
            tape.is_none() || mode == Mode::Train,
            "tapes are only recorded in Train mode"
        );
        let dropout_active = mode != Mode::Deterministic && self.dropout_rate > 0.0;
        let mut local_rng = DetRng::new(0);
        let rng = match rng {
            Some(r) => r,
            None => {
                if dropout_active {
                    return Err(Error::InvalidConfig(
                        "dropout-active forward needs an rng".into(),
                    ));
                }
                &mut local_rng
            }
        };

        if let Some(t) = tape.as_deref_mut() {
            t.caches.clear();
        }
        let mut cur = x.clone();
        let mut skips: Vec<Tensor4> = Vec::new();
        for op in &self.ops {
            let cache = match op {
                Op::Dropout => {
                    if dropout_active {
                        let (y, mask) = ops::dropout_forward(&cur, self.dropout_rate, rng);
                        cur = y;
                        OpCache::Dropout(mask)
                    } else {
                        OpCache::Dropout(None)
                    }
                }
                Op::Conv(conv) => {
                    let w = &params[conv.w_off..conv.w_off + conv.n_weights()];
                    let b = &params[conv.b_off..conv.b_off + conv.out_ch];
                    let x_in = cur;
                    cur = ops::conv2d_forward(&x_in, w, b, conv.out_ch, conv.stride);
                    OpCache::Conv { x: x_in }
                }
                Op::BatchNorm(bn) => {
                    let gamma = &params[bn.gamma_off..bn.gamma_off + bn.ch];
                    let beta = &params[bn.beta_off..bn.beta_off + bn.ch];
                    if mode == Mode::Train {
                        let (mean_buf, var_buf) =
                            running[bn.run_off..bn.run_off + 2 * bn.ch].split_at_mut(bn.ch);
                        let (y, cache) =
                            ops::batchnorm_forward_train(&cur, gamma, beta, mean_buf, var_buf);
                        cur = y;
                        OpCache::Bn(cache)
                    } else {
                        let mean = &running[bn.run_off..bn.run_off + bn.ch];
                        let var = &running[bn.run_off + bn.ch..bn.run_off + 2 * bn.ch];
                        cur = ops::batchnorm_forward_eval(&cur, gamma, beta, mean, var);
                        OpCache::None
                    }
                }
                Op::LeakyRelu => {
                    let x_in = cur;
                    cur = ops::leaky_relu_forward(&x_in, self.leaky_slope);
                    OpCache::LeakyRelu { x: x_in }
                }
                Op::Upsample2 => {
                    cur = ops::upsample2_forward(&cur);
                    OpCache::None
                }
                Op::PushSkip => {
                    skips.push(cur.clone());
                    OpCache::None
                }
                Op::PopConcat => {
                    let skip = skips.pop().expect("skip stack underflow");
                    let chain_ch = cur.c;
                    cur = ops::concat_forward(&cur, &skip);
                    OpCache::PopConcat { chain_ch }
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                t.caches.push(cache);
            }
        }
        Ok(cur)
    }

    /// Reverse pass over a Train-mode tape; returns parameter gradients.
    pub fn backward(&self, params: &[f64], tape: &Tape, dz: &Tensor4) -> Vec<f64> {
        assert_eq!(tape.caches.len(), self.ops.len(), "tape does not match net");
        let mut grads = vec![0.0; self.n_params];
        let mut cur = dz.clone();
        let mut skip_grads: Vec<Tensor4> = Vec::new();
        for (op, cache) in self.ops.iter().zip(&tape.caches).rev() {
            match (op, cache) {
                (Op::Dropout, OpCache::Dropout(mask)) => {
                    cur = ops::dropout_backward(mask, &cur);
                }
                (Op::Conv(conv), OpCache::Conv { x }) => {
                    let w = &params[conv.w_off..conv.w_off + conv.n_weights()];
                    let (dw_slice, db_slice) = {
                        let (head, tail) = grads.split_at_mut(conv.b_off);
                        (
                            &mut head[conv.w_off..conv.w_off + conv.n_weights()],
                            &mut tail[..conv.out_ch],
                        )
                    };
                    cur = ops::conv2d_backward(
                        x,
                        w,
                        conv.out_ch,
                        conv.stride,
                        &cur,
                        dw_slice,
                        db_slice,
                    );
                }
                (Op::BatchNorm(bn), OpCache::Bn(cache)) => {
                    let gamma = &params[bn.gamma_off..bn.gamma_off + bn.ch];
                    let (dg, db) = {
                        let (head, tail) = grads.split_at_mut(bn.beta_off);
                        (
                            &mut head[bn.gamma_off..bn.gamma_off + bn.ch],
                            &mut tail[..bn.ch],
                        )
                    };
                    cur = ops::batchnorm_backward(cache, gamma, &cur, dg, db);
                }
                (Op::LeakyRelu, OpCache::LeakyRelu { x }) => {
                    cur = ops::leaky_relu_backward(x, self.leaky_slope, &cur);
                }
                (Op::Upsample2, _) => {
                    cur = ops::upsample2_backward(&cur);
                }
                (Op::PushSkip, _) => {
                    let extra = skip_grads.pop().expect("skip gradient underflow");
                    for (a, b) in cur.data.iter_mut().zip(&extra.data) {
                        *a += b;
                    }
                }
                (Op::PopConcat, OpCache::PopConcat { chain_ch }) => {
                    let (d_chain, d_skip) = ops::concat_backward(&cur, *chain_ch);
                    skip_grads.push(d_skip);
                    cur = d_chain;
                }
                _ => unreachable!("tape out of sync with op sequence"),
            }
        }
        grads
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { caches: Vec::new() }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}
