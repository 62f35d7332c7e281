//! Elementwise maps, reductions and scalar losses.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

pub fn scale<F: Scalar>(tape: &mut Tape<F>, x: Var, s: f64) -> Var {
    let s = F::from_f64(s);
    let y = tape.value(x).scale(s);
    tape.push(y, vec![x], Box::new(move |g| vec![g.scale(s)]))
}

pub fn add_scalar<F: Scalar>(tape: &mut Tape<F>, x: Var, c: f64) -> Var {
    let c = F::from_f64(c);
    let y = tape.value(x).map(|v| v + c);
    tape.push(y, vec![x], Box::new(|g| vec![g.clone()]))
}

pub fn add<F: Scalar>(tape: &mut Tape<F>, a: Var, b: Var) -> Result<Var> {
    let y = tape.value(a).add(tape.value(b))?;
    Ok(tape.push(y, vec![a, b], Box::new(|g| vec![g.clone(), g.clone()])))
}

pub fn sub<F: Scalar>(tape: &mut Tape<F>, a: Var, b: Var) -> Result<Var> {
    let y = tape.value(a).sub(tape.value(b))?;
    Ok(tape.push(y, vec![a, b], Box::new(|g| vec![g.clone(), g.scale(-F::one())])))
}

pub fn mul<F: Scalar>(tape: &mut Tape<F>, a: Var, b: Var) -> Result<Var> {
    let av = tape.value(a).clone();
    let bv = tape.value(b).clone();
    let y = av.zip(&bv, |x, y| x * y)?;
    Ok(tape.push(
        y,
        vec![a, b],
        Box::new(move |g| {
            vec![g.zip(&bv, |x, y| x * y).unwrap(), g.zip(&av, |x, y| x * y).unwrap()]
        }),
    ))
}

/// Elementwise product with a constant tensor (no gradient into the constant).
pub fn mul_const<F: Scalar>(tape: &mut Tape<F>, x: Var, c: &Tensor<F>) -> Result<Var> {
    let c = c.clone();
    let y = tape.value(x).zip(&c, |a, b| a * b)?;
    Ok(tape.push(y, vec![x], Box::new(move |g| vec![g.zip(&c, |a, b| a * b).unwrap()])))
}

/// x - c for a constant tensor c.
pub fn sub_const<F: Scalar>(tape: &mut Tape<F>, x: Var, c: &Tensor<F>) -> Result<Var> {
    let y = tape.value(x).sub(c)?;
    Ok(tape.push(y, vec![x], Box::new(|g| vec![g.clone()])))
}

pub fn one_minus<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Var {
    let y = tape.value(x).map(|v| F::one() - v);
    tape.push(y, vec![x], Box::new(|g| vec![g.scale(-F::one())]))
}

pub fn relu<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Var {
    let xv = tape.value(x).clone();
    let y = xv.map(|v| if v > F::zero() { v } else { F::zero() });
    tape.push(
        y,
        vec![x],
        Box::new(move |g| {
            vec![g
                .zip(&xv, |gv, v| if v > F::zero() { gv } else { F::zero() })
                .unwrap()]
        }),
    )
}

pub fn sigmoid<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Var {
    let y = tape.value(x).map(|v| F::one() / (F::one() + (-v).exp()));
    let yv = y.clone();
    tape.push(
        y,
        vec![x],
        Box::new(move |g| vec![g.zip(&yv, |gv, s| gv * s * (F::one() - s)).unwrap()]),
    )
}

pub fn tanh_op<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Var {
    let y = tape.value(x).map(|v| v.tanh());
    let yv = y.clone();
    tape.push(
        y,
        vec![x],
        Box::new(move |g| vec![g.zip(&yv, |gv, t| gv * (F::one() - t * t)).unwrap()]),
    )
}

/// Sum of all elements, producing a scalar.
pub fn sum_all<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let y = Tensor::scalar(tape.value(x).sum());
    tape.push(
        y,
        vec![x],
        Box::new(move |g| {
            let gv = g.data()[0];
            vec![Tensor::full(&shape, gv)]
        }),
    )
}

pub fn mean_all<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Var {
    let n = tape.value(x).len() as f64;
    let s = sum_all(tape, x);
    scale(tape, s, 1.0 / n)
}

/// Inverted dropout: keeps with probability 1-p and rescales by 1/(1-p).
pub fn dropout<F: Scalar>(tape: &mut Tape<F>, x: Var, p: f64, rng: &mut impl Rng) -> Var {
    if p <= 0.0 {
        return x;
    }
    let keep = F::from_f64(1.0 / (1.0 - p));
    let mask = Tensor::from_fn(tape.value(x).shape(), |_| {
        if rng.gen::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    });
    mul_const(tape, x, &mask).expect("mask shape matches by construction")
}

/// Binary cross-entropy between predicted probabilities and a constant
/// target, averaged over all elements. Predictions are clamped to
/// [eps, 1-eps] with eps = 1e-7.
pub fn bce_loss<F: Scalar>(tape: &mut Tape<F>, pred: Var, target: &Tensor<F>) -> Result<Var> {
    let p = tape.value(pred);
    if p.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "bce: pred {:?} vs target {:?}",
            p.shape(),
            target.shape()
        )));
    }
    for &l in target.data() {
        let l = l.to_f64s();
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::Numeric(format!("bce target {} outside [0,1]", l)));
        }
    }
    let eps = F::from_f64(1e-7);
    let one = F::one();
    let clamp = move |v: F| v.max(eps).min(one - eps);
    let n = F::from_f64(p.len() as f64);
    let mut acc = F::zero();
    for (&pv, &l) in p.data().iter().zip(target.data()) {
        let pc = clamp(pv);
        acc = acc - (l * pc.ln() + (one - l) * (one - pc).ln());
    }
    let loss = Tensor::scalar(acc / n);
    let pv = p.clone();
    let tv = target.clone();
    Ok(tape.push(
        loss,
        vec![pred],
        Box::new(move |g| {
            let gs = g.data()[0] / n;
            let grad = pv
                .zip(&tv, |pvv, l| {
                    let pc = clamp(pvv);
                    gs * ((one - l) / (one - pc) - l / pc)
                })
                .unwrap();
            vec![grad]
        }),
    ))
}

/// Mean squared error against a constant target (stop-gradient on target).
pub fn mse_to_const<F: Scalar>(tape: &mut Tape<F>, x: Var, target: &Tensor<F>) -> Result<Var> {
    let d = sub_const(tape, x, target)?;
    let sq = mul(tape, d, d)?;
    Ok(mean_all(tape, sq))
}
