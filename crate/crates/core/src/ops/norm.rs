//! Batch normalization and axis softmax.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the stored running estimates.
    Eval,
}

/// Per-channel running statistics, updated in train mode with momentum 0.1.
#[derive(Clone, Debug)]
pub struct BnStats<F: Scalar> {
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
}

impl<F: Scalar> BnStats<F> {
    pub fn new(channels: usize) -> Self {
        BnStats {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], F::one()),
        }
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Channel-wise batch normalization of a B×C×F×T map:
/// y = gamma * (x - mu_c) / sqrt(var_c + eps) + beta.
///
/// Train mode uses biased batch variance for normalization and folds an
/// unbiased estimate into the running statistics.
pub fn batch_norm<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut BnStats<F>,
    mode: BnMode,
) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("batch_norm expects rank 4, got {:?}", s)));
    }
    let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
    if tape.value(gamma).shape() != [c] || tape.value(beta).shape() != [c] {
        return Err(Error::Shape(format!(
            "batch_norm: gamma/beta must have shape [{}], got {:?}/{:?}",
            c,
            tape.value(gamma).shape(),
            tape.value(beta).shape()
        )));
    }
    if stats.running_mean.shape() != [c] {
        return Err(Error::Shape(format!(
            "batch_norm: stats for {} channels, input has {}",
            stats.running_mean.shape()[0],
            c
        )));
    }
    let n_per_ch = b * f * t;
    if n_per_ch == 0 {
        return Err(Error::Shape(format!("batch_norm: empty input {:?}", s)));
    }
    let xv = tape.value(x).clone();
    let gv = tape.value(gamma).clone();
    let eps = F::from_f64(BN_EPS);

    // Per-channel mean/var selected by mode.
    let (mean, var) = match mode {
        BnMode::Eval => (stats.running_mean.clone(), stats.running_var.clone()),
        BnMode::Train => {
            let inv_n = F::from_f64(1.0 / n_per_ch as f64);
            let mut mean = Tensor::zeros(&[c]);
            let mut var = Tensor::zeros(&[c]);
            {
                let md = mean.data_mut();
                let xd = xv.data();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * f * t;
                        let mut acc = F::zero();
                        for i in 0..f * t {
                            acc = acc + xd[base + i];
                        }
                        md[ci] = md[ci] + acc;
                    }
                }
                for v in md.iter_mut() {
                    *v = *v * inv_n;
                }
            }
            {
                let vd = var.data_mut();
                let md = mean.data();
                let xd = xv.data();
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * f * t;
                        let mu = md[ci];
                        let mut acc = F::zero();
                        for i in 0..f * t {
                            let d = xd[base + i] - mu;
                            acc = acc + d * d;
                        }
                        vd[ci] = vd[ci] + acc;
                    }
                }
                for v in vd.iter_mut() {
                    *v = *v * inv_n;
                }
            }
            // Running update with the unbiased variance estimate.
            let mom = F::from_f64(BN_MOMENTUM);
            let keep = F::one() - mom;
            let bessel = if n_per_ch > 1 {
                F::from_f64(n_per_ch as f64 / (n_per_ch - 1) as f64)
            } else {
                F::one()
            };
            stats.running_mean = stats
                .running_mean
                .zip(&mean, |r, m| keep * r + mom * m)?;
            stats.running_var = stats
                .running_var
                .zip(&var, |r, v| keep * r + mom * v * bessel)?;
            (mean, var)
        }
    };

    let mut out = Tensor::zeros(&s);
    {
        let od = out.data_mut();
        let xd = xv.data();
        let md = mean.data();
        let vd = var.data();
        let gd = gv.data();
        let bd = tape.value(beta).data().to_vec();
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * f * t;
                let mu = md[ci];
                let inv_std = F::one() / (vd[ci] + eps).sqrt();
                let (ga, be) = (gd[ci], bd[ci]);
                for i in 0..f * t {
                    od[base + i] = ga * (xd[base + i] - mu) * inv_std + be;
                }
            }
        }
    }

    Ok(tape.push(
        out,
        vec![x, gamma, beta],
        Box::new(move |g| {
            let gd_out = g.data();
            let xd = xv.data();
            let md = mean.data();
            let vd = var.data();
            let gad = gv.data();
            let mut dx = Tensor::zeros(&s);
            let mut dgamma = Tensor::zeros(&[c]);
            let mut dbeta = Tensor::zeros(&[c]);
            {
                let dxd = dx.data_mut();
                let dgd = dgamma.data_mut();
                let dbd = dbeta.data_mut();
                let inv_n = F::from_f64(1.0 / n_per_ch as f64);
                for ci in 0..c {
                    let mu = md[ci];
                    let inv_std = F::one() / (vd[ci] + eps).sqrt();
                    // Channel-wise sums over B×F×T.
                    let mut sum_g = F::zero();
                    let mut sum_g_xhat = F::zero();
                    for bi in 0..b {
                        let base = (bi * c + ci) * f * t;
                        for i in 0..f * t {
                            let xhat = (xd[base + i] - mu) * inv_std;
                            sum_g = sum_g + gd_out[base + i];
                            sum_g_xhat = sum_g_xhat + gd_out[base + i] * xhat;
                        }
                    }
                    dgd[ci] = sum_g_xhat;
                    dbd[ci] = sum_g;
                    let ga = gad[ci];
                    match mode {
                        BnMode::Eval => {
                            let k = ga * inv_std;
                            for bi in 0..b {
                                let base = (bi * c + ci) * f * t;
                                for i in 0..f * t {
                                    dxd[base + i] = gd_out[base + i] * k;
                                }
                            }
                        }
                        BnMode::Train => {
                            // dx = (gamma/std) * (g - mean(g) - xhat * mean(g*xhat))
                            let k = ga * inv_std;
                            let mg = sum_g * inv_n;
                            let mgx = sum_g_xhat * inv_n;
                            for bi in 0..b {
                                let base = (bi * c + ci) * f * t;
                                for i in 0..f * t {
                                    let xhat = (xd[base + i] - mu) * inv_std;
                                    dxd[base + i] = k * (gd_out[base + i] - mg - xhat * mgx);
                                }
                            }
                        }
                    }
                }
            }
            vec![dx, dgamma, dbeta]
        }),
    ))
}

/// Numerically stabilized softmax along one axis of an arbitrary-rank tensor.
pub fn softmax_axis<F: Scalar>(tape: &mut Tape<F>, x: Var, axis: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if axis >= s.len() {
        return Err(Error::Shape(format!("softmax axis {} out of range for {:?}", axis, s)));
    }
    let len = s[axis];
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let xv = tape.value(x).clone();
    let mut out = Tensor::zeros(&s);
    {
        let od = out.data_mut();
        let xd = xv.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = F::neg_infinity();
                for j in 0..len {
                    let v = xd[base + j * inner];
                    if v > m {
                        m = v;
                    }
                }
                let mut z = F::zero();
                for j in 0..len {
                    let e = (xd[base + j * inner] - m).exp();
                    od[base + j * inner] = e;
                    z = z + e;
                }
                let inv_z = F::one() / z;
                for j in 0..len {
                    od[base + j * inner] = od[base + j * inner] * inv_z;
                }
            }
        }
    }
    let yv = out.clone();
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            // dx_j = y_j * (g_j - sum_k g_k y_k) along the softmax axis
            let mut dx = Tensor::zeros(&s);
            {
                let dxd = dx.data_mut();
                let gd = g.data();
                let yd = yv.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = F::zero();
                        for j in 0..len {
                            let idx = base + j * inner;
                            dot = dot + gd[idx] * yd[idx];
                        }
                        for j in 0..len {
                            let idx = base + j * inner;
                            dxd[idx] = yd[idx] * (gd[idx] - dot);
                        }
                    }
                }
            }
            vec![dx]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum_all;
    use crate::rng::substream;

    #[test]
    fn train_mode_standardizes_channels() {
        let mut rng = substream(21, "bn-test");
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::rand_uniform(&[2, 3, 4, 5], -2.0, 5.0, &mut rng));
        let gamma = tape.leaf(Tensor::full(&[3], 1.0));
        let beta = tape.leaf(Tensor::zeros(&[3]));
        let mut stats = BnStats::new(3);
        let y = batch_norm(&mut tape, x, gamma, beta, &mut stats, BnMode::Train).unwrap();
        let yv = tape.value(y);
        // per-channel mean ~0 and variance ~1
        for ci in 0..3 {
            let mut acc = 0.0;
            let mut acc2 = 0.0;
            let mut n = 0.0;
            for bi in 0..2 {
                for fi in 0..4 {
                    for ti in 0..5 {
                        let v = yv.at(&[bi, ci, fi, ti]);
                        acc += v;
                        acc2 += v * v;
                        n += 1.0;
                    }
                }
            }
            assert!((acc / n).abs() < 1e-10);
            assert!((acc2 / n - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 2, 2], 10.0));
        let gamma = tape.leaf(Tensor::full(&[1], 1.0));
        let beta = tape.leaf(Tensor::zeros(&[1]));
        let mut stats = BnStats::new(1);
        batch_norm(&mut tape, x, gamma, beta, &mut stats, BnMode::Train).unwrap();
        // running_mean = 0.9*0 + 0.1*10
        assert!((stats.running_mean.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 1, 2], 3.0));
        let gamma = tape.leaf(Tensor::full(&[1], 2.0));
        let beta = tape.leaf(Tensor::full(&[1], 1.0));
        let mut stats = BnStats::new(1);
        stats.running_mean = Tensor::full(&[1], 1.0);
        stats.running_var = Tensor::full(&[1], 4.0);
        let y = batch_norm(&mut tape, x, gamma, beta, &mut stats, BnMode::Eval).unwrap();
        // 2*(3-1)/sqrt(4+eps)+1 ~= 3
        assert!((tape.value(y).data()[0] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_order_preserved() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 1000.0]).unwrap());
        let y = softmax_axis(&mut tape, x, 1).unwrap();
        let yv = tape.value(y);
        for r in 0..2 {
            let s: f64 = (0..3).map(|j| yv.at(&[r, j])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(yv.at(&[0, 2]) > yv.at(&[0, 1]));
        // overflow-safe: the huge logit saturates rather than producing NaN
        assert!((yv.at(&[1, 2]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_gradient_sums_to_zero() {
        let mut rng = substream(22, "softmax-test");
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::rand_uniform(&[1, 4], -1.0, 1.0, &mut rng));
        let y = softmax_axis(&mut tape, x, 1).unwrap();
        // pick one output component as the objective
        let w = Tensor::from_fn(&[1, 4], |i| if i == 2 { 1.0 } else { 0.0 });
        let picked = crate::ops::mul_const(&mut tape, y, &w).unwrap();
        let obj = sum_all(&mut tape, picked);
        let g = tape.backward(obj).unwrap();
        let gx = g.get(x).unwrap();
        // softmax is shift-invariant, so its input gradient has zero sum
        assert!(gx.sum().abs() < 1e-12);
    }
}
