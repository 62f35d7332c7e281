//! Frequency-dynamic convolution family.
//!
//! A dynamic layer keeps K basis kernels W_1..W_K and mixes them with a
//! per-frequency attention simplex pi(f). Two readings of the mix exist:
//!
//! * kernel mixing (naive): assemble W(f) = sum_i pi_i(f) W_i and
//!   b(f) = sum_i pi_i(f) b_i for every output frequency row f, then
//!   convolve that row with W(f);
//! * output mixing (efficient): compute y_i = W_i * x + b_i once per basis
//!   kernel and blend y = sum_i pi_i(f) (.) y_i.
//!
//! The two are identical, not merely approximately equal: cross-correlation
//! is linear in the kernel, and both kernel and bias are weighted by the
//! *output-row* attention pi(f), so for any output position (f, t)
//!
//!   sum_i pi_i(f) (W_i * x + b_i)(f, t)
//!     = ((sum_i pi_i(f) W_i) * x)(f, t) + sum_i pi_i(f) b_i,
//!
//! including positions whose receptive field overlaps the zero padding — the
//! padded input is shared by every basis kernel, so no edge discrepancy
//! arises. The naive path below exists purely as a verification oracle; it
//! carries no gradient.
//!
//! Bias convention: biases are attention-weighted exactly like kernels (the
//! output-mixing form is canonical; the kernel-mixing form mirrors it).
//!
//! Dilations are (dT, dF) pairs per basis kernel; a dilated kernel keeps
//! same-padding so F and T never change. The multi-branch layer concatenates
//! several such dynamic branches with an optional static conv along the
//! channel axis, dynamic blocks first.

use crate::error::{config_err, Error, Result};
use crate::ops::{
    attention_mix, batch_norm, conv1x1, conv2d, mean_time, mul, mul_const, relu, reshape, scale,
    shift_time, slice_outer, softmax_axis, sub, sum_time, BnMode, BnStats, Conv2dCfg, Padding,
};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// K basis kernels stored stacked: weights K×Cout×Cin×kF×kT, biases K×Cout,
/// one (dT, dF) dilation pair per kernel.
#[derive(Clone, Debug)]
pub struct BasisKernelSet {
    pub weights: Var,
    pub biases: Var,
    pub dilations: Vec<(usize, usize)>,
}

impl BasisKernelSet {
    pub fn k(&self) -> usize {
        self.dilations.len()
    }

    fn validate<F: Scalar>(&self, tape: &Tape<F>) -> Result<()> {
        let ws = tape.value(self.weights).shape();
        let bs = tape.value(self.biases).shape();
        if ws.len() != 5 {
            return Err(Error::Shape(format!("basis kernels must be rank 5, got {:?}", ws)));
        }
        if ws[0] != self.dilations.len() {
            return Err(Error::Shape(format!(
                "{} dilation pairs for {} basis kernels",
                self.dilations.len(),
                ws[0]
            )));
        }
        if bs != [ws[0], ws[1]] {
            return Err(Error::Shape(format!("basis biases {:?} vs kernels {:?}", bs, ws)));
        }
        if self.dilations.iter().any(|&(dt, df)| dt == 0 || df == 0) {
            return Err(config_err("basis kernel dilations must be >= 1"));
        }
        Ok(())
    }
}

/// Per-frequency simplex over the K basis kernels, shape B×K×F×1.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub pi: Var,
}

/// Attention module parameters: squeeze 1×1 conv C→H, BN, excite 1×1 conv
/// H→K, softmax over K with temperature.
#[derive(Clone, Copy, Debug)]
pub struct AttnModule {
    pub w1: Var,
    pub b1: Var,
    pub gamma: Var,
    pub beta: Var,
    pub w2: Var,
    pub b2: Var,
    pub temperature: f64,
}

/// One attention path of temporal attention pooling: 1×1 conv C→H, BN,
/// ReLU, 1×1 conv H→C, softmax over time.
#[derive(Clone, Copy, Debug)]
pub struct TapPath {
    pub w1: Var,
    pub b1: Var,
    pub gamma: Var,
    pub beta: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Time-attention (TA) path on raw frames plus velocity-attention (VA) path
/// on consecutive-frame differences.
#[derive(Clone, Copy, Debug)]
pub struct TapParams {
    pub ta: TapPath,
    pub va: TapPath,
}

/// Which terms of the pooled descriptor are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapEnable {
    pub ta: bool,
    pub va: bool,
    pub ap: bool,
}

impl TapEnable {
    pub const ALL: TapEnable = TapEnable { ta: true, va: true, ap: true };

    pub fn any(&self) -> bool {
        self.ta || self.va || self.ap
    }
}

/// Temporal pooling choice inside the attention module.
pub enum TimePooling<'a, F: Scalar> {
    Average,
    Tap {
        params: &'a TapParams,
        enable: TapEnable,
        bn_ta: &'a mut BnStats<F>,
        bn_va: &'a mut BnStats<F>,
    },
}

fn attention_logits<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    path: &TapPath,
    bn: &mut BnStats<F>,
    mode: BnMode,
) -> Result<Var> {
    let h = conv1x1(tape, x, path.w1, path.b1)?;
    let n = batch_norm(tape, h, path.gamma, path.beta, bn, mode)?;
    let r = relu(tape, n);
    conv1x1(tape, r, path.w2, path.b2)
}

/// Temporal attention pooling: B×C×F×T → B×C×F×1 descriptor combining
/// attention-weighted sums and the plain temporal mean.
pub fn tap_pool<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    params: &TapParams,
    enable: TapEnable,
    bn_ta: &mut BnStats<F>,
    bn_va: &mut BnStats<F>,
    mode: BnMode,
) -> Result<Var> {
    if !enable.any() {
        return Err(config_err("tap_pool: at least one of TA/VA/AP must be enabled"));
    }
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("tap_pool expects rank 4, got {:?}", s)));
    }
    let mut acc: Option<Var> = None;
    let push = |tape: &mut Tape<F>, term: Var, acc: &mut Option<Var>| -> Result<()> {
        *acc = Some(match *acc {
            None => term,
            Some(a) => crate::ops::add(tape, a, term)?,
        });
        Ok(())
    };
    if enable.ta {
        let logits = attention_logits(tape, x, &params.ta, bn_ta, mode)?;
        let alpha = softmax_axis(tape, logits, 3)?;
        let weighted = mul(tape, alpha, x)?;
        let term = sum_time(tape, weighted)?;
        push(tape, term, &mut acc)?;
    }
    if enable.va {
        // d_t = x_t - x_{t-1}, with the first frame's difference forced to 0
        let prev = shift_time(tape, x, 1)?;
        let diff = sub(tape, x, prev)?;
        let mask = Tensor::from_fn(&s, |i| {
            if i % s[3] == 0 {
                F::zero()
            } else {
                F::one()
            }
        });
        let masked = mul_const(tape, diff, &mask)?;
        let logits = attention_logits(tape, masked, &params.va, bn_va, mode)?;
        let beta = softmax_axis(tape, logits, 3)?;
        let weighted = mul(tape, beta, x)?;
        let term = sum_time(tape, weighted)?;
        push(tape, term, &mut acc)?;
    }
    if enable.ap {
        let term = mean_time(tape, x)?;
        push(tape, term, &mut acc)?;
    }
    Ok(acc.expect("at least one term enabled"))
}

/// Frequency-adaptive attention: pool over time, squeeze-excite per
/// frequency bin, softmax over the K kernel slots.
pub fn freq_attention<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    attn: &AttnModule,
    attn_bn: &mut BnStats<F>,
    pooling: TimePooling<'_, F>,
    mode: BnMode,
) -> Result<AttentionWeights> {
    let k = {
        let ws = tape.value(attn.w2).shape();
        if ws.len() != 2 || ws[0] < 1 {
            return Err(Error::Shape(format!("attention excite weights must be K×H, got {:?}", ws)));
        }
        ws[0]
    };
    let pooled = match pooling {
        TimePooling::Average => mean_time(tape, x)?,
        TimePooling::Tap { params, enable, bn_ta, bn_va } => {
            tap_pool(tape, x, params, enable, bn_ta, bn_va, mode)?
        }
    };
    let h = conv1x1(tape, pooled, attn.w1, attn.b1)?;
    let n = batch_norm(tape, h, attn.gamma, attn.beta, attn_bn, mode)?;
    let r = relu(tape, n);
    let mut logits = conv1x1(tape, r, attn.w2, attn.b2)?;
    if attn.temperature != 1.0 {
        if attn.temperature <= 0.0 {
            return Err(config_err("attention temperature must be positive"));
        }
        logits = scale(tape, logits, 1.0 / attn.temperature);
    }
    let pi = softmax_axis(tape, logits, 1)?;
    debug_assert_eq!(tape.value(pi).shape()[1], k);
    Ok(AttentionWeights { pi })
}

fn kernel_slice<F: Scalar>(
    tape: &mut Tape<F>,
    kernels: &BasisKernelSet,
    i: usize,
) -> Result<(Var, Var)> {
    let ws = tape.value(kernels.weights).shape().to_vec();
    let (cout, cin, kf, kt) = (ws[1], ws[2], ws[3], ws[4]);
    let wi = slice_outer(tape, kernels.weights, i, i + 1)?;
    let wi = reshape(tape, wi, &[cout, cin, kf, kt])?;
    let bi = slice_outer(tape, kernels.biases, i, i + 1)?;
    let bi = reshape(tape, bi, &[cout])?;
    Ok((wi, bi))
}

/// Weighted sum of per-kernel (possibly dilated) convolutions:
/// y = sum_i pi_i(f) (.) (W_i * x + b_i). This is the shared engine behind
/// the frequency-dynamic and dilated variants.
pub fn dfd_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    kernels: &BasisKernelSet,
    pi: &AttentionWeights,
) -> Result<Var> {
    kernels.validate(tape)?;
    let k = kernels.k();
    let ps = tape.value(pi.pi).shape().to_vec();
    let xs = tape.value(x).shape().to_vec();
    if ps.len() != 4 || ps[1] != k || ps[0] != xs[0] || ps[2] != xs[2] || ps[3] != 1 {
        return Err(Error::Shape(format!(
            "attention weights {:?} incompatible with K={} and input {:?}",
            ps, k, xs
        )));
    }
    let mut ys = Vec::with_capacity(k);
    for i in 0..k {
        let (wi, bi) = kernel_slice(tape, kernels, i)?;
        let (dt, df) = kernels.dilations[i];
        let cfg = Conv2dCfg { dilation: (df, dt), padding: Padding::Same };
        ys.push(conv2d(tape, x, wi, Some(bi), &cfg)?);
    }
    let pi3 = reshape(tape, pi.pi, &[ps[0], k, ps[2]])?;
    attention_mix(tape, &ys, pi3)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdyMode {
    /// Per-frequency kernel mixing; value-only verification path.
    Naive,
    /// Output mixing; the differentiable production path.
    Efficient,
}

/// Frequency-dynamic convolution (all basis kernels undilated).
pub fn fdy_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    kernels: &BasisKernelSet,
    pi: &AttentionWeights,
    mode: FdyMode,
) -> Result<Var> {
    kernels.validate(tape)?;
    if kernels.dilations.iter().any(|&d| d != (1, 1)) {
        return Err(config_err("fdy_forward: basis kernels must be undilated"));
    }
    match mode {
        FdyMode::Efficient => dfd_forward(tape, x, kernels, pi),
        FdyMode::Naive => {
            let y = fdy_naive_value(
                tape.value(x),
                tape.value(kernels.weights),
                tape.value(kernels.biases),
                tape.value(pi.pi),
            )?;
            // oracle path: recorded as a constant, no backward rule
            Ok(tape.leaf(y))
        }
    }
}

/// Kernel-mixing reference: for every output row f assemble
/// W(b,f) = sum_i pi[b,i,f] W_i and b(b,f) = sum_i pi[b,i,f] b_i, then
/// convolve that row (same padding, no dilation).
pub fn fdy_naive_value<F: Scalar>(
    x: &Tensor<F>,
    weights: &Tensor<F>,
    biases: &Tensor<F>,
    pi: &Tensor<F>,
) -> Result<Tensor<F>> {
    let xs = x.shape();
    let ws = weights.shape();
    if xs.len() != 4 || ws.len() != 5 {
        return Err(Error::Shape(format!("fdy naive: x {:?}, weights {:?}", xs, ws)));
    }
    let (b, cin, f_n, t_n) = (xs[0], xs[1], xs[2], xs[3]);
    let (k, cout, kf, kt) = (ws[0], ws[1], ws[3], ws[4]);
    if ws[2] != cin || kf % 2 == 0 || kt % 2 == 0 {
        return Err(Error::Shape(format!("fdy naive: kernels {:?} need odd size and {} input channels", ws, cin)));
    }
    if pi.shape() != [b, k, f_n, 1] {
        return Err(Error::Shape(format!("fdy naive: pi {:?}", pi.shape())));
    }
    let (pf, pt) = (kf / 2, kt / 2);
    let mut out = Tensor::zeros(&[b, cout, f_n, t_n]);
    let od = out.data_mut();
    let xd = x.data();
    let wd = weights.data();
    let bd = biases.data();
    let pd = pi.data();
    let mut wmix = vec![F::zero(); cout * cin * kf * kt];
    let mut bmix = vec![F::zero(); cout];
    for bi in 0..b {
        for fo in 0..f_n {
            // mix kernels and biases for this output frequency row
            wmix.iter_mut().for_each(|v| *v = F::zero());
            bmix.iter_mut().for_each(|v| *v = F::zero());
            for i in 0..k {
                let w = pd[(bi * k + i) * f_n + fo];
                let base = i * cout * cin * kf * kt;
                for j in 0..wmix.len() {
                    wmix[j] = wmix[j] + w * wd[base + j];
                }
                for co in 0..cout {
                    bmix[co] = bmix[co] + w * bd[i * cout + co];
                }
            }
            for co in 0..cout {
                for to in 0..t_n {
                    let mut acc = bmix[co];
                    for ci in 0..cin {
                        for kfi in 0..kf {
                            let fi = fo as isize + kfi as isize - pf as isize;
                            if fi < 0 || fi as usize >= f_n {
                                continue;
                            }
                            for kti in 0..kt {
                                let ti = to as isize + kti as isize - pt as isize;
                                if ti < 0 || ti as usize >= t_n {
                                    continue;
                                }
                                let xi = ((bi * cin + ci) * f_n + fi as usize) * t_n + ti as usize;
                                let wi = ((co * cin + ci) * kf + kfi) * kt + kti;
                                acc = acc + xd[xi] * wmix[wi];
                            }
                        }
                    }
                    od[((bi * cout + co) * f_n + fo) * t_n + to] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Partial frequency-dynamic convolution: dynamic channels first, then the
/// static conv output, concatenated along channels. `dynamic: None` means a
/// zero dynamic fraction, i.e. a plain convolution.
pub fn pfd_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    static_w: Var,
    static_b: Var,
    dynamic: Option<(&BasisKernelSet, &AttentionWeights)>,
) -> Result<Var> {
    let stat = conv2d(tape, x, static_w, Some(static_b), &Conv2dCfg::default())?;
    match dynamic {
        None => Ok(stat),
        Some((kernels, pi)) => {
            let dy = dfd_forward(tape, x, kernels, pi)?;
            crate::ops::concat_channels(tape, &[dy, stat])
        }
    }
}

/// One dynamic branch of a multi-branch layer.
pub struct DynBranch<'a> {
    pub kernels: &'a BasisKernelSet,
    pub pi: AttentionWeights,
}

/// Multi-branch dynamic convolution: every dynamic branch (its own kernels,
/// dilations and attention) plus an optional static conv, concatenated along
/// channels with dynamic blocks first in list order.
pub fn mdfd_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    branches: &[DynBranch<'_>],
    static_conv: Option<(Var, Var)>,
) -> Result<Var> {
    if branches.is_empty() && static_conv.is_none() {
        return Err(config_err("mdfd_forward: no branches"));
    }
    let mut parts = Vec::with_capacity(branches.len() + 1);
    for br in branches {
        parts.push(dfd_forward(tape, x, br.kernels, &br.pi)?);
    }
    if let Some((w, b)) = static_conv {
        parts.push(conv2d(tape, x, w, Some(b), &Conv2dCfg::default())?);
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    crate::ops::concat_channels(tape, &parts)
}

/// Captured attention simplices for diagnostics, keyed by layer and branch.
#[derive(Clone, Debug)]
pub struct AttnRecord<F: Scalar> {
    pub layer: usize,
    pub branch: usize,
    /// B×K×F×1 values as produced during the recorded forward pass.
    pub pi: Tensor<F>,
}

#[derive(Clone, Debug, Default)]
pub struct AttnRecorder<F: Scalar> {
    pub records: Vec<AttnRecord<F>>,
}

impl<F: Scalar> AttnRecorder<F> {
    pub fn new() -> Self {
        AttnRecorder { records: Vec::new() }
    }

    pub fn push(&mut self, layer: usize, branch: usize, pi: Tensor<F>) {
        self.records.push(AttnRecord { layer, branch, pi });
    }

    /// Flatten one record into per-(batch, frequency) vectors w in R^K.
    pub fn vectors(record: &AttnRecord<F>) -> Vec<Vec<f64>> {
        let s = record.pi.shape();
        let (b, k, f) = (s[0], s[1], s[2]);
        let mut out = Vec::with_capacity(b * f);
        for bi in 0..b {
            for fi in 0..f {
                out.push((0..k).map(|i| record.pi.at(&[bi, i, fi, 0]).to_f64s()).collect());
            }
        }
        out
    }
}
