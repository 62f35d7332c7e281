//! Spatial pooling and time-axis reductions for B×C×F×T maps.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{idx4, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Non-overlapping (pf × pt) pooling. Both extents must divide the input
/// exactly; fractional windows would silently change the time grid that the
/// label rasterization depends on.
pub fn pool2d<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    pf: usize,
    pt: usize,
    mode: PoolMode,
) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("pool2d expects rank 4, got {:?}", s)));
    }
    if pf == 0 || pt == 0 {
        return Err(Error::Config("pool2d: window extents must be >= 1".into()));
    }
    if s[2] % pf != 0 {
        return Err(Error::Shape(format!(
            "pool2d: frequency extent {} not divisible by window {}",
            s[2], pf
        )));
    }
    if s[3] % pt != 0 {
        return Err(Error::Shape(format!(
            "pool2d: time extent {} not divisible by window {}",
            s[3], pt
        )));
    }
    let (b, c, f_in, t_in) = (s[0], s[1], s[2], s[3]);
    let (f_out, t_out) = (f_in / pf, t_in / pt);
    let out_shape = [b, c, f_out, t_out];
    let xv = tape.value(x).clone();
    let mut out = Tensor::zeros(&out_shape);
    // For max pooling remember the flat source index of each winner.
    let mut argmax = vec![0usize; if mode == PoolMode::Max { out.len() } else { 0 }];
    {
        let od = out.data_mut();
        let xd = xv.data();
        let inv = F::from_f64(1.0 / (pf * pt) as f64);
        let mut oi = 0;
        for bi in 0..b {
            for ci in 0..c {
                for fo in 0..f_out {
                    for to in 0..t_out {
                        match mode {
                            PoolMode::Avg => {
                                let mut acc = F::zero();
                                for df in 0..pf {
                                    for dt in 0..pt {
                                        acc = acc + xd[idx4(&s, bi, ci, fo * pf + df, to * pt + dt)];
                                    }
                                }
                                od[oi] = acc * inv;
                            }
                            PoolMode::Max => {
                                let mut best = F::neg_infinity();
                                let mut best_i = 0;
                                for df in 0..pf {
                                    for dt in 0..pt {
                                        let i = idx4(&s, bi, ci, fo * pf + df, to * pt + dt);
                                        if xd[i] > best {
                                            best = xd[i];
                                            best_i = i;
                                        }
                                    }
                                }
                                od[oi] = best;
                                argmax[oi] = best_i;
                            }
                        }
                        oi += 1;
                    }
                }
            }
        }
    }
    let in_shape = s.clone();
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut dx = Tensor::zeros(&in_shape);
            let gd = g.data();
            {
                let dxd = dx.data_mut();
                match mode {
                    PoolMode::Max => {
                        for (oi, &src) in argmax.iter().enumerate() {
                            dxd[src] = dxd[src] + gd[oi];
                        }
                    }
                    PoolMode::Avg => {
                        let inv = F::from_f64(1.0 / (pf * pt) as f64);
                        let mut oi = 0;
                        for bi in 0..b {
                            for ci in 0..c {
                                for fo in 0..f_out {
                                    for to in 0..t_out {
                                        let gv = gd[oi] * inv;
                                        for df in 0..pf {
                                            for dt in 0..pt {
                                                let i = idx4(
                                                    &in_shape,
                                                    bi,
                                                    ci,
                                                    fo * pf + df,
                                                    to * pt + dt,
                                                );
                                                dxd[i] = dxd[i] + gv;
                                            }
                                        }
                                        oi += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![dx]
        }),
    ))
}

fn reduce_time<F: Scalar>(tape: &mut Tape<F>, x: Var, mean: bool) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 4 {
        return Err(Error::Shape(format!("time reduction expects rank 4, got {:?}", s)));
    }
    let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
    let w = if mean { F::from_f64(1.0 / t as f64) } else { F::one() };
    let xv = tape.value(x).clone();
    let mut out = Tensor::zeros(&[b, c, f, 1]);
    {
        let od = out.data_mut();
        let xd = xv.data();
        for i in 0..b * c * f {
            let mut acc = F::zero();
            for ti in 0..t {
                acc = acc + xd[i * t + ti];
            }
            od[i] = acc * w;
        }
    }
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut dx = Tensor::zeros(&[b, c, f, t]);
            {
                let dxd = dx.data_mut();
                let gd = g.data();
                for i in 0..b * c * f {
                    let gv = gd[i] * w;
                    for ti in 0..t {
                        dxd[i * t + ti] = gv;
                    }
                }
            }
            vec![dx]
        }),
    ))
}

/// Mean over the time axis: B×C×F×T → B×C×F×1.
pub fn mean_time<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    reduce_time(tape, x, true)
}

/// Sum over the time axis: B×C×F×T → B×C×F×1.
pub fn sum_time<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    reduce_time(tape, x, false)
}

/// Sum a rank-3 sequence over its middle (time) axis: B×T×D → B×D.
pub fn sum_time3<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("sum_time3 expects rank 3, got {:?}", s)));
    }
    let (b, t, d) = (s[0], s[1], s[2]);
    let xv = tape.value(x).clone();
    let mut out = Tensor::zeros(&[b, d]);
    {
        let od = out.data_mut();
        let xd = xv.data();
        for bi in 0..b {
            for ti in 0..t {
                let base = (bi * t + ti) * d;
                for di in 0..d {
                    od[bi * d + di] = od[bi * d + di] + xd[base + di];
                }
            }
        }
    }
    Ok(tape.push(
        out,
        vec![x],
        Box::new(move |g| {
            let mut xg = Tensor::zeros(&[b, t, d]);
            {
                let xd = xg.data_mut();
                let gd = g.data();
                for bi in 0..b {
                    for ti in 0..t {
                        xd[(bi * t + ti) * d..(bi * t + ti + 1) * d]
                            .copy_from_slice(&gd[bi * d..(bi + 1) * d]);
                    }
                }
            }
            vec![xg]
        }),
    ))
}
