//! Gated recurrent units built from the primitive ops.
//!
//! Gate layout in the fused weight matrices is (reset, update, candidate),
//! each H wide. The candidate path applies the reset gate to the recurrent
//! contribution after its bias, so a step computes
//!   r = sigmoid(x W_xr + b_xr + h W_hr + b_hr)
//!   z = sigmoid(x W_xz + b_xz + h W_hz + b_hz)
//!   n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))
//!   h' = (1 - z) * n + z * h

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

use super::{add, concat_last, linear2d, mul, one_minus, sigmoid, slice_cols, slice_time_step, stack_time, tanh_op};

/// One scan direction: fused input weights D×3H, recurrent weights H×3H and
/// their bias vectors of length 3H.
#[derive(Clone, Copy, Debug)]
pub struct GruDirParams {
    pub w_x: Var,
    pub w_h: Var,
    pub b_x: Var,
    pub b_h: Var,
}

/// One bidirectional layer.
#[derive(Clone, Copy, Debug)]
pub struct BiGruParams {
    pub fwd: GruDirParams,
    pub bwd: GruDirParams,
}

/// Single GRU step: x B×D, h B×H -> new hidden B×H.
pub fn gru_cell<F: Scalar>(tape: &mut Tape<F>, x: Var, h: Var, p: &GruDirParams) -> Result<Var> {
    let hsz = {
        let sw = tape.value(p.w_h).shape();
        if sw.len() != 2 || sw[1] != 3 * sw[0] {
            return Err(Error::Shape(format!("gru_cell: recurrent weights must be H×3H, got {:?}", sw)));
        }
        sw[0]
    };
    if tape.value(h).shape() != [tape.value(x).shape()[0], hsz] {
        return Err(Error::Shape(format!(
            "gru_cell: hidden {:?} incompatible with H={}",
            tape.value(h).shape(),
            hsz
        )));
    }
    let gx = linear2d(tape, x, p.w_x, p.b_x)?;
    let gh = linear2d(tape, h, p.w_h, p.b_h)?;

    let gx_r = slice_cols(tape, gx, 0, hsz)?;
    let gh_r = slice_cols(tape, gh, 0, hsz)?;
    let r_pre = add(tape, gx_r, gh_r)?;
    let r = sigmoid(tape, r_pre);

    let gx_z = slice_cols(tape, gx, hsz, 2 * hsz)?;
    let gh_z = slice_cols(tape, gh, hsz, 2 * hsz)?;
    let z_pre = add(tape, gx_z, gh_z)?;
    let z = sigmoid(tape, z_pre);

    let gx_n = slice_cols(tape, gx, 2 * hsz, 3 * hsz)?;
    let gh_n = slice_cols(tape, gh, 2 * hsz, 3 * hsz)?;
    let gated = mul(tape, r, gh_n)?;
    let n_pre = add(tape, gx_n, gated)?;
    let n = tanh_op(tape, n_pre);

    let keep = one_minus(tape, z);
    let new_part = mul(tape, keep, n)?;
    let old_part = mul(tape, z, h)?;
    add(tape, new_part, old_part)
}

fn scan<F: Scalar>(
    tape: &mut Tape<F>,
    steps: &[Var],
    p: &GruDirParams,
    reverse: bool,
) -> Result<Vec<Var>> {
    let b = tape.value(steps[0]).shape()[0];
    let hsz = tape.value(p.w_h).shape()[0];
    let mut h = tape.leaf(crate::tensor::Tensor::zeros(&[b, hsz]));
    let mut out = vec![h; steps.len()];
    let order: Vec<usize> = if reverse {
        (0..steps.len()).rev().collect()
    } else {
        (0..steps.len()).collect()
    };
    for t in order {
        h = gru_cell(tape, steps[t], h, p)?;
        out[t] = h;
    }
    Ok(out)
}

/// Stacked bidirectional GRU: x B×T×D -> B×T×2H, one entry in `layers` per
/// stacked layer (layer i>0 consumes the 2H-wide output of layer i-1).
pub fn bigru<F: Scalar>(tape: &mut Tape<F>, x: Var, layers: &[BiGruParams]) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("bigru expects B×T×D, got {:?}", s)));
    }
    if layers.is_empty() {
        return Err(Error::Config("bigru: no layers".into()));
    }
    let tn = s[1];
    let mut cur = x;
    for layer in layers {
        let steps: Vec<Var> = (0..tn)
            .map(|t| slice_time_step(tape, cur, t))
            .collect::<Result<_>>()?;
        let f_out = scan(tape, &steps, &layer.fwd, false)?;
        let b_out = scan(tape, &steps, &layer.bwd, true)?;
        let f_seq = stack_time(tape, &f_out)?;
        let b_seq = stack_time(tape, &b_out)?;
        cur = concat_last(tape, f_seq, b_seq)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum_all;
    use crate::rng::substream;
    use crate::tensor::Tensor;

    fn rand_dir(tape: &mut Tape<f64>, d: usize, h: usize, rng: &mut impl rand::Rng) -> GruDirParams {
        let lim = 1.0 / (h as f64).sqrt();
        GruDirParams {
            w_x: tape.leaf(Tensor::rand_uniform(&[d, 3 * h], -lim, lim, rng)),
            w_h: tape.leaf(Tensor::rand_uniform(&[h, 3 * h], -lim, lim, rng)),
            b_x: tape.leaf(Tensor::rand_uniform(&[3 * h], -lim, lim, rng)),
            b_h: tape.leaf(Tensor::rand_uniform(&[3 * h], -lim, lim, rng)),
        }
    }

    #[test]
    fn zero_weights_keep_hidden_at_half_tanh_mix() {
        // With all-zero parameters: r=z=0.5, n=0, h'=0.5*h.
        let mut tape = Tape::<f64>::new();
        let p = GruDirParams {
            w_x: tape.leaf(Tensor::zeros(&[2, 9])),
            w_h: tape.leaf(Tensor::zeros(&[3, 9])),
            b_x: tape.leaf(Tensor::zeros(&[9])),
            b_h: tape.leaf(Tensor::zeros(&[9])),
        };
        let x = tape.leaf(Tensor::full(&[1, 2], 5.0));
        let h = tape.leaf(Tensor::full(&[1, 3], 0.8));
        let h2 = gru_cell(&mut tape, x, h, &p).unwrap();
        assert!(tape.value(h2).data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn hidden_state_stays_bounded() {
        let mut rng = substream(31, "gru-test");
        let mut tape = Tape::<f64>::new();
        let p = rand_dir(&mut tape, 4, 5, &mut rng);
        let mut h = tape.leaf(Tensor::zeros(&[2, 5]));
        for _ in 0..50 {
            let x = tape.leaf(Tensor::rand_uniform(&[2, 4], -10.0, 10.0, &mut rng));
            h = gru_cell(&mut tape, x, h, &p).unwrap();
        }
        // h is a convex mix of tanh outputs and prior state, so |h| <= 1
        assert!(tape.value(h).data().iter().all(|&v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn bigru_shapes_and_direction_asymmetry() {
        let mut rng = substream(32, "gru-test");
        let mut tape = Tape::<f64>::new();
        let layers = vec![BiGruParams {
            fwd: rand_dir(&mut tape, 3, 4, &mut rng),
            bwd: rand_dir(&mut tape, 3, 4, &mut rng),
        }];
        let x = tape.leaf(Tensor::rand_uniform(&[2, 6, 3], -1.0, 1.0, &mut rng));
        let y = bigru(&mut tape, x, &layers).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 6, 8]);
        // the backward half at t=0 has seen the whole sequence; the forward
        // half only one frame, so the two halves differ
        let v = tape.value(y);
        let fwd0: f64 = (0..4).map(|j| v.at(&[0, 0, j]).abs()).sum();
        let bwd0: f64 = (4..8).map(|j| v.at(&[0, 0, j]).abs()).sum();
        assert!((fwd0 - bwd0).abs() > 1e-9);
        // gradient reaches the input through both scans
        let s = sum_all(&mut tape, y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn stacked_layers_change_feature_width() {
        let mut rng = substream(33, "gru-test");
        let mut tape = Tape::<f64>::new();
        let l1 = BiGruParams {
            fwd: rand_dir(&mut tape, 3, 4, &mut rng),
            bwd: rand_dir(&mut tape, 3, 4, &mut rng),
        };
        let l2 = BiGruParams {
            fwd: rand_dir(&mut tape, 8, 4, &mut rng),
            bwd: rand_dir(&mut tape, 8, 4, &mut rng),
        };
        let x = tape.leaf(Tensor::rand_uniform(&[1, 5, 3], -1.0, 1.0, &mut rng));
        let y = bigru(&mut tape, x, &[l1, l2]).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 5, 8]);
    }
}
