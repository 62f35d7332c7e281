//! Shape manipulation and structured combination ops.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{idx4, Scalar, Tensor};

pub fn reshape<F: Scalar>(tape: &mut Tape<F>, x: Var, shape: &[usize]) -> Result<Var> {
    let old = tape.value(x).shape().to_vec();
    let y = tape.value(x).reshape(shape)?;
    Ok(tape.push(y, vec![x], Box::new(move |g| vec![g.reshape(&old).unwrap()])))
}

/// Concatenate rank-4 tensors along the channel axis.
pub fn concat_channels<F: Scalar>(tape: &mut Tape<F>, parts: &[Var]) -> Result<Var> {
    if parts.is_empty() {
        return Err(Error::Shape("concat_channels: empty input list".into()));
    }
    let first = tape.value(parts[0]).shape().to_vec();
    if first.len() != 4 {
        return Err(Error::Shape(format!("concat_channels expects rank 4, got {:?}", first)));
    }
    let (b, f, t) = (first[0], first[2], first[3]);
    let mut channels = Vec::with_capacity(parts.len());
    for &p in parts {
        let s = tape.value(p).shape();
        if s.len() != 4 || s[0] != b || s[2] != f || s[3] != t {
            return Err(Error::Shape(format!(
                "concat_channels: incompatible shapes {:?} vs {:?}",
                first, s
            )));
        }
        channels.push(s[1]);
    }
    let c_total: usize = channels.iter().sum();
    let out_shape = [b, c_total, f, t];
    let mut out = Tensor::zeros(&out_shape);
    {
        let od = out.data_mut();
        let block = f * t;
        for bi in 0..b {
            let mut c_off = 0;
            for (&p, &ci) in parts.iter().zip(&channels) {
                let src = tape.value(p).data();
                let src_start = bi * ci * block;
                let dst_start = (bi * c_total + c_off) * block;
                od[dst_start..dst_start + ci * block]
                    .copy_from_slice(&src[src_start..src_start + ci * block]);
                c_off += ci;
            }
        }
    }
    let chans = channels.clone();
    Ok(tape.push(
        out,
        parts.to_vec(),
        Box::new(move |g| {
            let gd = g.data();
            let block = f * t;
            let mut grads = Vec::with_capacity(chans.len());
            let mut c_off = 0;
            for &ci in &chans {
                let mut pg = Tensor::zeros(&[b, ci, f, t]);
                {
                    let pd = pg.data_mut();
                    for bi in 0..b {
                        let src_start = (bi * c_total + c_off) * block;
                        let dst_start = bi * ci * block;
                        pd[dst_start..dst_start + ci * block]
                            .copy_from_slice(&gd[src_start..src_start + ci * block]);
                    }
                }
                grads.push(pg);
                c_off += ci;
            }
            grads
        }),
    ))
}

/// Channel slice [start, end) of a rank-4 tensor.
pub fn slice_channels<F: Scalar>(tape: &mut Tape<F>, x: Var, start: usize, end: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 || end > s[1] || start >= end {
        return Err(Error::Shape(format!("slice_channels [{start},{end}) on {:?}", s)));
    }
    let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
    let ci = end - start;
    let block = f * t;
    let src = tape.value(x).data();
    let mut out = Tensor::zeros(&[b, ci, f, t]);
    {
        let od = out.data_mut();
        for bi in 0..b {
            let from = (bi * c + start) * block;
            let to = bi * ci * block;
            od[to..to + ci * block].copy_from_slice(&src[from..from + ci * block]);
        }
    }
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut xg = Tensor::zeros(&[b, c, f, t]);
            {
                let xd = xg.data_mut();
                let gd = g.data();
                for bi in 0..b {
                    let to = (bi * c + start) * block;
                    let from = bi * ci * block;
                    xd[to..to + ci * block].copy_from_slice(&gd[from..from + ci * block]);
                }
            }
            vec![xg]
        }),
    ))
}

/// Column slice [start, end) of a rank-2 tensor B×N.
pub fn slice_cols<F: Scalar>(tape: &mut Tape<F>, x: Var, start: usize, end: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 2 || end > s[1] || start >= end {
        return Err(Error::Shape(format!("slice_cols [{start},{end}) on {:?}", s)));
    }
    let (b, n) = (s[0], s[1]);
    let w = end - start;
    let src = tape.value(x).data();
    let mut out = Tensor::zeros(&[b, w]);
    {
        let od = out.data_mut();
        for bi in 0..b {
            od[bi * w..(bi + 1) * w].copy_from_slice(&src[bi * n + start..bi * n + end]);
        }
    }
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut xg = Tensor::zeros(&[b, n]);
            {
                let xd = xg.data_mut();
                let gd = g.data();
                for bi in 0..b {
                    xd[bi * n + start..bi * n + end].copy_from_slice(&gd[bi * w..(bi + 1) * w]);
                }
            }
            vec![xg]
        }),
    ))
}

/// Slice [start, end) along the outermost axis of any-rank tensor.
pub fn slice_outer<F: Scalar>(tape: &mut Tape<F>, x: Var, start: usize, end: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.is_empty() || end > s[0] || start >= end {
        return Err(Error::Shape(format!("slice_outer [{start},{end}) on {:?}", s)));
    }
    let inner: usize = s[1..].iter().product();
    let mut out_shape = s.clone();
    out_shape[0] = end - start;
    let mut out = Tensor::zeros(&out_shape);
    out.data_mut()
        .copy_from_slice(&tape.value(x).data()[start * inner..end * inner]);
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut xg = Tensor::zeros(&s);
            xg.data_mut()[start * inner..end * inner].copy_from_slice(g.data());
            vec![xg]
        }),
    ))
}

/// Extract time step t from B×T×D, yielding B×D.
pub fn slice_time_step<F: Scalar>(tape: &mut Tape<F>, x: Var, t: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 || t >= s[1] {
        return Err(Error::Shape(format!("slice_time_step {t} on {:?}", s)));
    }
    let (b, tn, d) = (s[0], s[1], s[2]);
    let src = tape.value(x).data();
    let mut out = Tensor::zeros(&[b, d]);
    {
        let od = out.data_mut();
        for bi in 0..b {
            let from = (bi * tn + t) * d;
            od[bi * d..(bi + 1) * d].copy_from_slice(&src[from..from + d]);
        }
    }
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut xg = Tensor::zeros(&[b, tn, d]);
            {
                let xd = xg.data_mut();
                let gd = g.data();
                for bi in 0..b {
                    let to = (bi * tn + t) * d;
                    xd[to..to + d].copy_from_slice(&gd[bi * d..(bi + 1) * d]);
                }
            }
            vec![xg]
        }),
    ))
}

/// Stack T tensors of shape B×D into B×T×D.
pub fn stack_time<F: Scalar>(tape: &mut Tape<F>, steps: &[Var]) -> Result<Var> {
    if steps.is_empty() {
        return Err(Error::Shape("stack_time: empty input list".into()));
    }
    let s0 = tape.value(steps[0]).shape().to_vec();
    if s0.len() != 2 {
        return Err(Error::Shape(format!("stack_time expects rank 2 steps, got {:?}", s0)));
    }
    let (b, d) = (s0[0], s0[1]);
    let tn = steps.len();
    for &v in steps {
        if tape.value(v).shape() != s0.as_slice() {
            return Err(Error::Shape("stack_time: ragged step shapes".into()));
        }
    }
    let mut out = Tensor::zeros(&[b, tn, d]);
    {
        let od = out.data_mut();
        for (t, &v) in steps.iter().enumerate() {
            let src = tape.value(v).data();
            for bi in 0..b {
                od[(bi * tn + t) * d..(bi * tn + t + 1) * d]
                    .copy_from_slice(&src[bi * d..(bi + 1) * d]);
            }
        }
    }
    Ok(tape.push(
        out,
        steps.to_vec(),
        Box::new(move |g| {
            let gd = g.data();
            (0..tn)
                .map(|t| {
                    let mut sg = Tensor::zeros(&[b, d]);
                    {
                        let sd = sg.data_mut();
                        for bi in 0..b {
                            sd[bi * d..(bi + 1) * d].copy_from_slice(
                                &gd[(bi * tn + t) * d..(bi * tn + t + 1) * d],
                            );
                        }
                    }
                    sg
                })
                .collect()
        }),
    ))
}

/// Concatenate two rank-3 tensors B×T×H along the last axis.
pub fn concat_last<F: Scalar>(tape: &mut Tape<F>, a: Var, b: Var) -> Result<Var> {
    let sa = tape.value(a).shape().to_vec();
    let sb = tape.value(b).shape().to_vec();
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[1] != sb[1] {
        return Err(Error::Shape(format!("concat_last {:?} vs {:?}", sa, sb)));
    }
    let (bn, tn, ha, hb) = (sa[0], sa[1], sa[2], sb[2]);
    let h = ha + hb;
    let av = tape.value(a).data();
    let bv = tape.value(b).data();
    let mut out = Tensor::zeros(&[bn, tn, h]);
    {
        let od = out.data_mut();
        for i in 0..bn * tn {
            od[i * h..i * h + ha].copy_from_slice(&av[i * ha..(i + 1) * ha]);
            od[i * h + ha..(i + 1) * h].copy_from_slice(&bv[i * hb..(i + 1) * hb]);
        }
    }
    Ok(tape.push(
        out,
        vec![a, b],
        Box::new(move |g| {
            let gd = g.data();
            let mut ga = Tensor::zeros(&[bn, tn, ha]);
            let mut gb = Tensor::zeros(&[bn, tn, hb]);
            {
                let gad = ga.data_mut();
                let gbd = gb.data_mut();
                for i in 0..bn * tn {
                    gad[i * ha..(i + 1) * ha].copy_from_slice(&gd[i * h..i * h + ha]);
                    gbd[i * hb..(i + 1) * hb].copy_from_slice(&gd[i * h + ha..(i + 1) * h]);
                }
            }
            vec![ga, gb]
        }),
    ))
}

/// Keep time frames [0, end) of a rank-4 tensor, dropping the tail.
pub fn truncate_time<F: Scalar>(tape: &mut Tape<F>, x: Var, end: usize) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 || end == 0 || end > s[3] {
        return Err(Error::Shape(format!("truncate_time to {} on {:?}", end, s)));
    }
    if end == s[3] {
        return Ok(x);
    }
    let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
    let src = tape.value(x).data();
    let mut out = Tensor::zeros(&[b, c, f, end]);
    {
        let od = out.data_mut();
        for i in 0..b * c * f {
            od[i * end..(i + 1) * end].copy_from_slice(&src[i * t..i * t + end]);
        }
    }
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut xg = Tensor::zeros(&[b, c, f, t]);
            {
                let xd = xg.data_mut();
                let gd = g.data();
                for i in 0..b * c * f {
                    xd[i * t..i * t + end].copy_from_slice(&gd[i * end..(i + 1) * end]);
                }
            }
            vec![xg]
        }),
    ))
}

/// Fold a B×C×F×T map into the sequence layout B×T×(C·F) consumed by the
/// recurrent stack.
pub fn to_sequence<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("to_sequence expects rank 4, got {:?}", s)));
    }
    let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
    let d = c * f;
    let src = tape.value(x).data();
    let mut out = Tensor::zeros(&[b, t, d]);
    {
        let od = out.data_mut();
        for bi in 0..b {
            for ci in 0..c {
                for fi in 0..f {
                    let row = ci * f + fi;
                    let base = idx4(&s, bi, ci, fi, 0);
                    for ti in 0..t {
                        od[(bi * t + ti) * d + row] = src[base + ti];
                    }
                }
            }
        }
    }
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut xg = Tensor::zeros(&s);
            {
                let xd = xg.data_mut();
                let gd = g.data();
                for bi in 0..b {
                    for ci in 0..c {
                        for fi in 0..f {
                            let row = ci * f + fi;
                            let base = idx4(&s, bi, ci, fi, 0);
                            for ti in 0..t {
                                xd[base + ti] = gd[(bi * t + ti) * d + row];
                            }
                        }
                    }
                }
            }
            vec![xg]
        }),
    ))
}

/// Shift a rank-4 tensor along the time axis by `shift` frames, zero-filling
/// vacated frames. Positive shift moves content toward later time.
pub fn shift_time<F: Scalar>(tape: &mut Tape<F>, x: Var, shift: i64) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("shift_time expects rank 4, got {:?}", s)));
    }
    let y = shift_time_tensor(tape.value(x), shift);
    Ok(tape.push(y, vec![x], Box::new(move |g| vec![shift_time_tensor(g, -shift)])))
}

pub(crate) fn shift_time_tensor<F: Scalar>(x: &Tensor<F>, shift: i64) -> Tensor<F> {
    let s = x.shape();
    let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(s);
    {
        let od = out.data_mut();
        let xd = x.data();
        for bi in 0..b {
            for ci in 0..c {
                for fi in 0..f {
                    for ti in 0..t {
                        let src = ti as i64 - shift;
                        if src >= 0 && (src as usize) < t {
                            od[idx4(s, bi, ci, fi, ti)] = xd[idx4(s, bi, ci, fi, src as usize)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Weighted sum of K per-kernel outputs by per-frequency attention:
/// out[b,c,f,t] = sum_i pi[b,i,f] * ys[i][b,c,f,t].
///
/// `pi` has shape B×K×F (the broadcast form of the B×K×F×1 simplex).
pub fn attention_mix<F: Scalar>(tape: &mut Tape<F>, ys: &[Var], pi: Var) -> Result<Var> {
    if ys.is_empty() {
        return Err(Error::Shape("attention_mix: no kernel outputs".into()));
    }
    let ps = tape.value(pi).shape().to_vec();
    let s = tape.value(ys[0]).shape().to_vec();
    if ps.len() != 3 || s.len() != 4 {
        return Err(Error::Shape(format!("attention_mix: pi {:?}, y {:?}", ps, s)));
    }
    let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
    let k = ys.len();
    if ps[0] != b || ps[1] != k || ps[2] != f {
        return Err(Error::Shape(format!(
            "attention_mix: pi {:?} incompatible with K={} outputs of {:?}",
            ps, k, s
        )));
    }
    for &y in ys {
        if tape.value(y).shape() != s.as_slice() {
            return Err(Error::Shape("attention_mix: ragged kernel output shapes".into()));
        }
    }
    let pi_v = tape.value(pi).clone();
    let y_vals: Vec<Tensor<F>> = ys.iter().map(|&y| tape.value(y).clone()).collect();
    let mut out = Tensor::zeros(&s);
    {
        let od = out.data_mut();
        for (i, yv) in y_vals.iter().enumerate() {
            let yd = yv.data();
            for bi in 0..b {
                for fi in 0..f {
                    let w = pi_v.data()[(bi * k + i) * f + fi];
                    for ci in 0..c {
                        let base = idx4(&s, bi, ci, fi, 0);
                        for ti in 0..t {
                            od[base + ti] = od[base + ti] + w * yd[base + ti];
                        }
                    }
                }
            }
        }
    }
    let mut parents = ys.to_vec();
    parents.push(pi);
    let shape = s.clone();
    Ok(tape.push(
        out,
        parents,
        Box::new(move |g| {
            let gd = g.data();
            let mut grads: Vec<Tensor<F>> = Vec::with_capacity(k + 1);
            let mut pi_grad = Tensor::zeros(&[b, k, f]);
            for (i, yv) in y_vals.iter().enumerate() {
                let yd = yv.data();
                let mut yg = Tensor::zeros(&shape);
                {
                    let ygd = yg.data_mut();
                    let pgd = pi_grad.data_mut();
                    for bi in 0..b {
                        for fi in 0..f {
                            let w = pi_v.data()[(bi * k + i) * f + fi];
                            let mut acc = F::zero();
                            for ci in 0..c {
                                let base = idx4(&shape, bi, ci, fi, 0);
                                for ti in 0..t {
                                    ygd[base + ti] = w * gd[base + ti];
                                    acc = acc + gd[base + ti] * yd[base + ti];
                                }
                            }
                            let pidx = (bi * k + i) * f + fi;
                            pgd[pidx] = pgd[pidx] + acc;
                        }
                    }
                }
                grads.push(yg);
            }
            grads.push(pi_grad);
            grads
        }),
    ))
}
