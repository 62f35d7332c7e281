//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of one check: the worst relative disagreement observed and where.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_element: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compare reverse-mode gradients of a scalar-valued graph against central
/// differences, perturbing every element of every input.
///
/// `build` must construct the same graph for each call; its output var must
/// hold a single element. Relative error uses max(|analytic|, |numeric|,
/// 1e-5) as the denominator; the floor makes near-zero gradients compare by
/// absolute error, where central differences bottom out in roundoff. Non-
/// finite values anywhere fail the check.
pub fn gradcheck<B>(build: B, inputs: &[Tensor<f64>], eps: f64) -> Result<GradReport>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Config("gradcheck: eps must be positive".into()));
    }
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Shape(format!(
                "gradcheck: objective must be scalar, got {:?}",
                v.shape()
            )));
        }
        let y = v.data()[0];
        if !y.is_finite() {
            return Err(Error::Numeric(format!("gradcheck: objective is {}", y)));
        }
        Ok(y)
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Shape(format!(
            "gradcheck: objective must be scalar, got {:?}",
            tape.value(out).shape()
        )));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_element: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        for ei in 0..input.len() {
            let orig = input.data()[ei];
            work[ii].data_mut()[ei] = orig + eps;
            let plus = eval(&work)?;
            work[ii].data_mut()[ei] = orig - eps;
            let minus = eval(&work)?;
            work[ii].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ii].data()[ei];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradcheck: non-finite gradient at input {} element {} (analytic {}, numeric {})",
                    ii, ei, a, numeric
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            if rel > report.max_rel_err {
                report = GradReport {
                    max_rel_err: rel,
                    worst_input: ii,
                    worst_element: ei,
                    worst_analytic: a,
                    worst_numeric: numeric,
                };
            }
        }
    }
    Ok(report)
}

/// One named check: the op or graph exercised and its worst relative error.
pub type SuiteEntry = (String, f64);

const SUITE_EPS: f64 = 1e-5;

fn rt(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

fn check<B>(out: &mut Vec<SuiteEntry>, name: &str, build: B, inputs: &[Tensor<f64>]) -> Result<()>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let r = gradcheck(build, inputs, SUITE_EPS)?;
    if std::env::var("GRADCHECK_DEBUG").is_ok() {
        eprintln!("{}: {:?} value {}", name, r, inputs[r.worst_input].data()[r.worst_element]);
    }
    out.push((name.to_string(), r.max_rel_err));
    Ok(())
}

/// Finite-difference checks for every differentiable primitive, each on a
/// small random problem. Returns (name, max relative error) per check.
pub fn primitive_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    use crate::ops::{
        add, attention_mix, batch_norm, bce_loss, bigru, concat_channels, conv1x1, conv2d,
        gru_cell, linear2d, linear3d, matmul2d, mean_time, mse_to_const, mul, one_minus, pool2d,
        relu, scale, shift_time, sigmoid, slice_channels, softmax_axis, sub, sum_all, sum_time3,
        tanh_op, BiGruParams, BnMode, BnStats, Conv2dCfg, GruDirParams, Padding, PoolMode,
    };
    let mut rng = crate::rng::substream(seed, "gradcheck-primitives");
    let mut out = Vec::new();

    let sq_sum = |tape: &mut Tape<f64>, v: Var| -> Result<Var> {
        let sq = mul(tape, v, v)?;
        Ok(sum_all(tape, sq))
    };

    check(
        &mut out,
        "conv2d_same",
        |tape, vars| {
            let y = conv2d(tape, vars[0], vars[1], Some(vars[2]), &Conv2dCfg::default())?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[1, 2, 4, 5], -1.0, 1.0),
            rt(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
            rt(&mut rng, &[3], -0.5, 0.5),
        ],
    )?;

    check(
        &mut out,
        "conv2d_dilated",
        |tape, vars| {
            let cfg = Conv2dCfg { dilation: (2, 1), padding: Padding::Same };
            let y = conv2d(tape, vars[0], vars[1], Some(vars[2]), &cfg)?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[1, 2, 6, 4], -1.0, 1.0),
            rt(&mut rng, &[2, 2, 3, 3], -1.0, 1.0),
            rt(&mut rng, &[2], -0.5, 0.5),
        ],
    )?;

    check(
        &mut out,
        "conv1x1",
        |tape, vars| {
            let y = conv1x1(tape, vars[0], vars[1], vars[2])?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[2, 3, 4, 2], -1.0, 1.0),
            rt(&mut rng, &[2, 3], -1.0, 1.0),
            rt(&mut rng, &[2], -0.5, 0.5),
        ],
    )?;

    check(
        &mut out,
        "pool2d_avg",
        |tape, vars| {
            let y = pool2d(tape, vars[0], 2, 2, PoolMode::Avg)?;
            sq_sum(tape, y)
        },
        &[rt(&mut rng, &[1, 2, 4, 4], -1.0, 1.0)],
    )?;

    // Distinct random values keep every pooling window away from an argmax tie.
    check(
        &mut out,
        "pool2d_max",
        |tape, vars| {
            let y = pool2d(tape, vars[0], 2, 2, PoolMode::Max)?;
            sq_sum(tape, y)
        },
        &[rt(&mut rng, &[1, 2, 4, 4], -1.0, 1.0)],
    )?;

    check(
        &mut out,
        "batch_norm_train",
        |tape, vars| {
            let mut stats = BnStats::new(3);
            let y = batch_norm(tape, vars[0], vars[1], vars[2], &mut stats, BnMode::Train)?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[2, 3, 2, 2], -1.0, 1.0),
            rt(&mut rng, &[3], 0.5, 1.5),
            rt(&mut rng, &[3], -0.5, 0.5),
        ],
    )?;

    check(
        &mut out,
        "batch_norm_eval",
        |tape, vars| {
            let mut stats = BnStats::new(3);
            let y = batch_norm(tape, vars[0], vars[1], vars[2], &mut stats, BnMode::Eval)?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[2, 3, 2, 2], -1.0, 1.0),
            rt(&mut rng, &[3], 0.5, 1.5),
            rt(&mut rng, &[3], -0.5, 0.5),
        ],
    )?;

    check(
        &mut out,
        "softmax_axis",
        |tape, vars| {
            let y = softmax_axis(tape, vars[0], 1)?;
            sq_sum(tape, y)
        },
        &[rt(&mut rng, &[2, 3, 4, 1], -2.0, 2.0)],
    )?;

    check(
        &mut out,
        "matmul2d",
        |tape, vars| {
            let y = matmul2d(tape, vars[0], vars[1])?;
            sq_sum(tape, y)
        },
        &[rt(&mut rng, &[2, 3], -1.0, 1.0), rt(&mut rng, &[3, 2], -1.0, 1.0)],
    )?;

    check(
        &mut out,
        "linear2d",
        |tape, vars| {
            let y = linear2d(tape, vars[0], vars[1], vars[2])?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[3, 4], -1.0, 1.0),
            rt(&mut rng, &[4, 2], -1.0, 1.0),
            rt(&mut rng, &[2], -0.5, 0.5),
        ],
    )?;

    check(
        &mut out,
        "linear3d",
        |tape, vars| {
            let y = linear3d(tape, vars[0], vars[1], vars[2])?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[2, 3, 4], -1.0, 1.0),
            rt(&mut rng, &[4, 2], -1.0, 1.0),
            rt(&mut rng, &[2], -0.5, 0.5),
        ],
    )?;

    check(
        &mut out,
        "gru_cell",
        |tape, vars| {
            let p = GruDirParams { w_x: vars[2], w_h: vars[3], b_x: vars[4], b_h: vars[5] };
            let h = gru_cell(tape, vars[0], vars[1], &p)?;
            sq_sum(tape, h)
        },
        &[
            rt(&mut rng, &[2, 3], -1.0, 1.0),
            rt(&mut rng, &[2, 4], -1.0, 1.0),
            rt(&mut rng, &[3, 12], -0.5, 0.5),
            rt(&mut rng, &[4, 12], -0.5, 0.5),
            rt(&mut rng, &[12], -0.2, 0.2),
            rt(&mut rng, &[12], -0.2, 0.2),
        ],
    )?;

    check(
        &mut out,
        "bigru",
        |tape, vars| {
            let dir = |o: usize| GruDirParams {
                w_x: vars[1 + o],
                w_h: vars[2 + o],
                b_x: vars[3 + o],
                b_h: vars[4 + o],
            };
            let layer = BiGruParams { fwd: dir(0), bwd: dir(4) };
            let y = bigru(tape, vars[0], &[layer])?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[1, 3, 2], -1.0, 1.0),
            rt(&mut rng, &[2, 6], -0.5, 0.5),
            rt(&mut rng, &[2, 6], -0.5, 0.5),
            rt(&mut rng, &[6], -0.2, 0.2),
            rt(&mut rng, &[6], -0.2, 0.2),
            rt(&mut rng, &[2, 6], -0.5, 0.5),
            rt(&mut rng, &[2, 6], -0.5, 0.5),
            rt(&mut rng, &[6], -0.2, 0.2),
            rt(&mut rng, &[6], -0.2, 0.2),
        ],
    )?;

    let bce_target = rt(&mut rng, &[3, 4], 0.1, 0.9);
    check(
        &mut out,
        "bce_loss",
        move |tape, vars| {
            let p = sigmoid(tape, vars[0]);
            bce_loss(tape, p, &bce_target)
        },
        &[rt(&mut rng, &[3, 4], -2.0, 2.0)],
    )?;

    let mse_target = rt(&mut rng, &[3, 4], -1.0, 1.0);
    check(
        &mut out,
        "mse_to_const",
        move |tape, vars| mse_to_const(tape, vars[0], &mse_target),
        &[rt(&mut rng, &[3, 4], -1.0, 1.0)],
    )?;

    // relu inputs biased away from the kink at zero.
    check(
        &mut out,
        "elementwise_chain",
        |tape, vars| {
            let t = tanh_op(tape, vars[0]);
            let s = sigmoid(tape, vars[1]);
            let p = mul(tape, t, s)?;
            let a = add(tape, p, vars[0])?;
            let d = sub(tape, a, vars[1])?;
            let r = relu(tape, d);
            let r = scale(tape, r, 0.7);
            let o = one_minus(tape, r);
            sq_sum(tape, o)
        },
        &[rt(&mut rng, &[2, 3], 0.3, 1.2), rt(&mut rng, &[2, 3], -1.2, -0.3)],
    )?;

    check(
        &mut out,
        "attention_mix",
        |tape, vars| {
            let y = attention_mix(tape, &[vars[0], vars[1]], vars[2])?;
            sq_sum(tape, y)
        },
        &[
            rt(&mut rng, &[1, 2, 3, 4], -1.0, 1.0),
            rt(&mut rng, &[1, 2, 3, 4], -1.0, 1.0),
            rt(&mut rng, &[1, 2, 3], 0.1, 0.9),
        ],
    )?;

    check(
        &mut out,
        "time_reductions",
        |tape, vars| {
            let m = mean_time(tape, vars[0])?;
            let s = sum_time3(tape, vars[1])?;
            let m = sum_all(tape, m);
            let s = sum_all(tape, s);
            let ms = mul(tape, m, s)?;
            sq_sum(tape, ms)
        },
        &[rt(&mut rng, &[1, 2, 3, 4], -1.0, 1.0), rt(&mut rng, &[2, 3, 4], -1.0, 1.0)],
    )?;

    check(
        &mut out,
        "shift_time",
        |tape, vars| {
            let y = shift_time(tape, vars[0], 1)?;
            sq_sum(tape, y)
        },
        &[rt(&mut rng, &[1, 2, 3, 4], -1.0, 1.0)],
    )?;

    check(
        &mut out,
        "concat_slice_channels",
        |tape, vars| {
            let c = concat_channels(tape, &[vars[0], vars[1]])?;
            let s = slice_channels(tape, c, 1, 3)?;
            sq_sum(tape, s)
        },
        &[rt(&mut rng, &[1, 2, 3, 2], -1.0, 1.0), rt(&mut rng, &[1, 2, 3, 2], -1.0, 1.0)],
    )?;

    Ok(out)
}

/// Gradient checks for each dynamic-convolution variant end to end:
/// attention (squeeze-excite, BN, softmax) feeding the mixed convolution,
/// with every kernel and attention parameter perturbed.
pub fn variant_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    use crate::dynconv::{
        dfd_forward, fdy_forward, freq_attention, mdfd_forward, pfd_forward, AttnModule,
        AttentionWeights, BasisKernelSet, DynBranch, FdyMode, TapEnable, TapParams, TapPath,
        TimePooling,
    };
    use crate::ops::{mul, sum_all, BnMode, BnStats};
    let mut rng = crate::rng::substream(seed, "gradcheck-variants");
    let mut out = Vec::new();

    // Shared shapes: x 1×2×6×4, K=2 basis kernels, attention hidden width 2.
    let x = rt(&mut rng, &[1, 2, 6, 4], -1.0, 1.0);
    let kern = rt(&mut rng, &[2, 2, 2, 3, 3], -0.5, 0.5);
    let kb = rt(&mut rng, &[2, 2], -0.2, 0.2);
    // BN betas sit well above zero so the following relu never straddles its
    // kink under finite-difference perturbation.
    let attn_inputs = [
        rt(&mut rng, &[2, 2], -0.5, 0.5), // w1 H×C
        rt(&mut rng, &[2], -0.2, 0.2),    // b1
        rt(&mut rng, &[2], 0.5, 1.5),     // gamma
        rt(&mut rng, &[2], 2.5, 3.5),     // beta
        rt(&mut rng, &[2, 2], -0.5, 0.5), // w2 K×H
        rt(&mut rng, &[2], -0.2, 0.2),    // b2
    ];

    let attn_from = |vars: &[Var], o: usize| AttnModule {
        w1: vars[o],
        b1: vars[o + 1],
        gamma: vars[o + 2],
        beta: vars[o + 3],
        w2: vars[o + 4],
        b2: vars[o + 5],
        temperature: 1.0,
    };
    let sq_sum = |tape: &mut Tape<f64>, v: Var| -> Result<Var> {
        let sq = mul(tape, v, v)?;
        Ok(sum_all(tape, sq))
    };

    let mut inputs = vec![x.clone(), kern.clone(), kb.clone()];
    inputs.extend(attn_inputs.iter().cloned());

    check(
        &mut out,
        "fdy_efficient",
        |tape, vars| {
            let attn = attn_from(vars, 3);
            let mut bn = BnStats::new(2);
            let pi =
                freq_attention(tape, vars[0], &attn, &mut bn, TimePooling::Average, BnMode::Train)?;
            let kernels =
                BasisKernelSet { weights: vars[1], biases: vars[2], dilations: vec![(1, 1); 2] };
            let y = fdy_forward(tape, vars[0], &kernels, &pi, FdyMode::Efficient)?;
            sq_sum(tape, y)
        },
        &inputs,
    )?;

    check(
        &mut out,
        "dfd_dilated",
        |tape, vars| {
            let attn = attn_from(vars, 3);
            let mut bn = BnStats::new(2);
            let pi =
                freq_attention(tape, vars[0], &attn, &mut bn, TimePooling::Average, BnMode::Train)?;
            let kernels = BasisKernelSet {
                weights: vars[1],
                biases: vars[2],
                dilations: vec![(1, 1), (2, 2)],
            };
            let y = dfd_forward(tape, vars[0], &kernels, &pi)?;
            sq_sum(tape, y)
        },
        &inputs,
    )?;

    let mut pfd_inputs = inputs.clone();
    pfd_inputs.push(rt(&mut rng, &[1, 2, 3, 3], -0.5, 0.5));
    pfd_inputs.push(rt(&mut rng, &[1], -0.2, 0.2));
    check(
        &mut out,
        "pfd_mixed",
        |tape, vars| {
            let attn = attn_from(vars, 3);
            let mut bn = BnStats::new(2);
            let pi =
                freq_attention(tape, vars[0], &attn, &mut bn, TimePooling::Average, BnMode::Train)?;
            let kernels =
                BasisKernelSet { weights: vars[1], biases: vars[2], dilations: vec![(1, 1); 2] };
            let y = pfd_forward(tape, vars[0], vars[9], vars[10], Some((&kernels, &pi)))?;
            sq_sum(tape, y)
        },
        &pfd_inputs,
    )?;

    // Two dynamic branches with independent attention plus a static branch.
    let mut mdfd_inputs = inputs.clone();
    mdfd_inputs.push(rt(&mut rng, &[2, 1, 2, 3, 3], -0.5, 0.5)); // 9: branch 2 kernels
    mdfd_inputs.push(rt(&mut rng, &[2, 1], -0.2, 0.2)); // 10: branch 2 biases
    for (i, t) in attn_inputs.iter().enumerate() {
        let s = t.shape().to_vec();
        let (lo, hi) = if i == 3 { (2.5, 3.5) } else { (-0.5, 0.5) };
        mdfd_inputs.push(rt(&mut rng, &s, lo, hi)); // 11..17: branch 2 attention
    }
    mdfd_inputs.push(rt(&mut rng, &[1, 2, 3, 3], -0.5, 0.5)); // 17: static w
    mdfd_inputs.push(rt(&mut rng, &[1], -0.2, 0.2)); // 18: static b
    check(
        &mut out,
        "mdfd_two_branches",
        |tape, vars| {
            let attn_a = attn_from(vars, 3);
            let attn_b = attn_from(vars, 11);
            let mut bn_a = BnStats::new(2);
            let mut bn_b = BnStats::new(2);
            let pi_a = freq_attention(
                tape,
                vars[0],
                &attn_a,
                &mut bn_a,
                TimePooling::Average,
                BnMode::Train,
            )?;
            let pi_b = freq_attention(
                tape,
                vars[0],
                &attn_b,
                &mut bn_b,
                TimePooling::Average,
                BnMode::Train,
            )?;
            let ka = BasisKernelSet {
                weights: vars[1],
                biases: vars[2],
                dilations: vec![(1, 1), (2, 2)],
            };
            let kb = BasisKernelSet { weights: vars[9], biases: vars[10], dilations: vec![(1, 1); 2] };
            let branches = [
                DynBranch { kernels: &ka, pi: pi_a },
                DynBranch { kernels: &kb, pi: pi_b },
            ];
            let y = mdfd_forward(tape, vars[0], &branches, Some((vars[17], vars[18])))?;
            sq_sum(tape, y)
        },
        &mdfd_inputs,
    )?;

    // Temporal attention pooling ahead of the frequency attention; both
    // tap paths use hidden width 4 = 2C.
    let mut tfd_inputs = inputs.clone();
    for _ in 0..2 {
        tfd_inputs.push(rt(&mut rng, &[4, 2], -0.5, 0.5)); // w1
        tfd_inputs.push(rt(&mut rng, &[4], -0.2, 0.2)); // b1
        tfd_inputs.push(rt(&mut rng, &[4], 0.5, 1.5)); // gamma
        tfd_inputs.push(rt(&mut rng, &[4], 2.5, 3.5)); // beta
        tfd_inputs.push(rt(&mut rng, &[2, 4], -0.5, 0.5)); // w2
        tfd_inputs.push(rt(&mut rng, &[2], -0.2, 0.2)); // b2
    }
    check(
        &mut out,
        "tfd_tap_pooling",
        |tape, vars| {
            let attn = attn_from(vars, 3);
            let path = |o: usize| TapPath {
                w1: vars[o],
                b1: vars[o + 1],
                gamma: vars[o + 2],
                beta: vars[o + 3],
                w2: vars[o + 4],
                b2: vars[o + 5],
            };
            let tap = TapParams { ta: path(9), va: path(15) };
            let mut bn = BnStats::new(2);
            let mut bn_ta = BnStats::new(4);
            let mut bn_va = BnStats::new(4);
            let pooling = TimePooling::Tap {
                params: &tap,
                enable: TapEnable::ALL,
                bn_ta: &mut bn_ta,
                bn_va: &mut bn_va,
            };
            let pi = freq_attention(tape, vars[0], &attn, &mut bn, pooling, BnMode::Train)?;
            let kernels =
                BasisKernelSet { weights: vars[1], biases: vars[2], dilations: vec![(1, 1); 2] };
            let y = fdy_forward(tape, vars[0], &kernels, &pi, FdyMode::Efficient)?;
            sq_sum(tape, y)
        },
        &tfd_inputs,
    )?;

    // Attention weights have no fixed point under perturbation, so also pin
    // the pure mixing path: kernels and a fixed simplex, no attention net.
    check(
        &mut out,
        "dfd_fixed_attention",
        |tape, vars| {
            let kernels = BasisKernelSet {
                weights: vars[1],
                biases: vars[2],
                dilations: vec![(1, 1), (1, 2)],
            };
            let pi = AttentionWeights { pi: vars[3] };
            let y = dfd_forward(tape, vars[0], &kernels, &pi)?;
            sq_sum(tape, y)
        },
        &[x, kern, kb, rt(&mut rng, &[1, 2, 6, 1], 0.1, 0.9)],
    )?;

    Ok(out)
}

fn micro_model_config() -> crate::crnn::ModelConfig {
    use crate::crnn::{BranchCfg, LayerCfg, ModelConfig, PoolKind};
    ModelConfig {
        n_classes: 3,
        n_mels: 8,
        base_channels: vec![4, 4],
        layers: vec![
            LayerCfg { branches: vec![BranchCfg::stat(1, 1)], freq_pool: 2, time_pool: 2 },
            LayerCfg {
                branches: vec![BranchCfg::dynamic(1, 1, 2, Vec::new(), PoolKind::Avg)],
                freq_pool: 2,
                time_pool: 1,
            },
        ],
        gru_hidden: 4,
        gru_layers: 1,
        dropout: 0.0,
        squeeze_ratio: 2,
        tap_hidden_ratio: 1,
        temperature: 1.0,
        pre_conv: false,
    }
}

/// End-to-end gradient checks through a miniature model with one static and
/// one dynamic conv layer: input gradients and every parameter gradient, in
/// train mode, against a BCE objective on both heads.
pub fn model_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    use crate::crnn::build_model;
    use crate::ops::{add, bce_loss, BnMode};
    let mut rng = crate::rng::substream(seed, "gradcheck-model");
    let cfg = micro_model_config();
    let base = build_model::<f64>(&cfg, seed)?;

    let x = rt(&mut rng, &[1, 1, 8, 6], -1.0, 1.0);
    let strong_t = rt(&mut rng, &[1, 3, 3], 0.1, 0.9);
    let weak_t = rt(&mut rng, &[1, 3], 0.1, 0.9);

    // vars[0] is the mel input; vars[1..] line up with the parameter store,
    // so one gradcheck covers d(loss)/d(input) and every d(loss)/d(theta).
    // BN betas are pushed well positive: every relu in the net follows a
    // batch norm, and a pre-activation within eps of zero would corrupt the
    // central difference at the kink.
    let mut inputs = vec![x];
    for (name, t) in base.params.iter() {
        if name.ends_with(".beta") {
            inputs.push(rt(&mut rng, &t.shape().to_vec(), 2.5, 3.5));
        } else {
            inputs.push(t.clone());
        }
    }
    let mut out = Vec::new();
    check(
        &mut out,
        "crnn_micro_full",
        move |tape, vars| {
            let mut m = base.clone();
            let preds = m.forward(tape, &vars[1..], vars[0], BnMode::Train, None, None)?;
            let ls = bce_loss(tape, preds.strong, &strong_t)?;
            let lw = bce_loss(tape, preds.weak, &weak_t)?;
            add(tape, ls, lw)
        },
        &inputs,
    )?;
    Ok(out)
}
