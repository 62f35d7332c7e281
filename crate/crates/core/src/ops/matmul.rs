//! Matrix products and affine layers.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// C = A @ B for A: M×K, B: K×N.
pub fn matmul2d<F: Scalar>(tape: &mut Tape<F>, a: Var, b: Var) -> Result<Var> {
    let sa = tape.value(a).shape().to_vec();
    let sb = tape.value(b).shape().to_vec();
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::Shape(format!("matmul2d {:?} @ {:?}", sa, sb)));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let av = tape.value(a).clone();
    let bv = tape.value(b).clone();
    let mut out = Tensor::zeros(&[m, n]);
    F::gemm(m, k, n, F::one(), av.data(), bv.data(), F::zero(), out.data_mut());
    Ok(tape.push(
        out,
        vec![a, b],
        Box::new(move |g| {
            // dA = g @ B^T  (m×n @ n×k), dB = A^T @ g (k×m @ m×n)
            let mut da = Tensor::zeros(&[m, k]);
            F::gemm_tr(m, n, k, F::one(), g.data(), false, bv.data(), true, F::zero(), da.data_mut());
            let mut db = Tensor::zeros(&[k, n]);
            F::gemm_tr(k, m, n, F::one(), av.data(), true, g.data(), false, F::zero(), db.data_mut());
            vec![da, db]
        }),
    ))
}

/// y = x @ W + b for x: B×D, W: D×O, b: O.
pub fn linear2d<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let sx = tape.value(x).shape().to_vec();
    let sw = tape.value(w).shape().to_vec();
    let sb = tape.value(b).shape().to_vec();
    if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] || sb != vec![sw[1]] {
        return Err(Error::Shape(format!("linear2d x{:?} w{:?} b{:?}", sx, sw, sb)));
    }
    let (m, d, o) = (sx[0], sx[1], sw[1]);
    let xv = tape.value(x).clone();
    let wv = tape.value(w).clone();
    let bv = tape.value(b).clone();
    let mut out = Tensor::zeros(&[m, o]);
    {
        let od = out.data_mut();
        for i in 0..m {
            od[i * o..(i + 1) * o].copy_from_slice(bv.data());
        }
        F::gemm(m, d, o, F::one(), xv.data(), wv.data(), F::one(), od);
    }
    Ok(tape.push(
        out,
        vec![x, w, b],
        Box::new(move |g| {
            let mut dx = Tensor::zeros(&[m, d]);
            F::gemm_tr(m, o, d, F::one(), g.data(), false, wv.data(), true, F::zero(), dx.data_mut());
            let mut dw = Tensor::zeros(&[d, o]);
            F::gemm_tr(d, m, o, F::one(), xv.data(), true, g.data(), false, F::zero(), dw.data_mut());
            let mut db = Tensor::zeros(&[o]);
            {
                let dbd = db.data_mut();
                let gd = g.data();
                for i in 0..m {
                    for j in 0..o {
                        dbd[j] = dbd[j] + gd[i * o + j];
                    }
                }
            }
            vec![dx, dw, db]
        }),
    ))
}

/// Affine layer over the trailing axis of a rank-3 tensor B×T×D.
pub fn linear3d<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("linear3d expects rank 3, got {:?}", s)));
    }
    let o = tape.value(w).shape()[1];
    let flat = super::reshape(tape, x, &[s[0] * s[1], s[2]])?;
    let y = linear2d(tape, flat, w, b)?;
    super::reshape(tape, y, &[s[0], s[1], o])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum_all;

    #[test]
    fn matmul_values_and_grads() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.leaf(Tensor::new(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
        let c = matmul2d(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58., 64., 139., 154.]);
        let s = sum_all(&mut tape, c);
        let g = tape.backward(s).unwrap();
        // d(sum)/dA = ones @ B^T: rows of B summed
        assert_eq!(g.get(a).unwrap().data(), &[15., 19., 23., 15., 19., 23.]);
    }

    #[test]
    fn linear_bias_broadcast() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]));
        let w = tape.leaf(Tensor::zeros(&[3, 2]));
        let b = tape.leaf(Tensor::new(&[2], vec![0.5, -1.0]).unwrap());
        let y = linear2d(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.0, 0.5, -1.0]);
    }
}
