//! 2D convolution (cross-correlation) over B×C×F×T maps.
//!
//! Implemented as im2col + GEMM per batch sample. Dilation enlarges the
//! effective kernel extent to (k-1)·d+1; "same" zero-padding preserves F and
//! T for odd kernel sizes at any dilation. Stride is fixed at (1,1).

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so output F×T equals input F×T (odd kernels only).
    Same,
    /// Explicit symmetric zero padding (freq, time).
    Explicit(usize, usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dCfg {
    /// Dilation along (frequency, time).
    pub dilation: (usize, usize),
    pub padding: Padding,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Conv2dCfg { dilation: (1, 1), padding: Padding::Same }
    }
}

struct Geometry {
    b: usize,
    cin: usize,
    f_in: usize,
    t_in: usize,
    cout: usize,
    kf: usize,
    kt: usize,
    df: usize,
    dt: usize,
    pad_f: usize,
    pad_t: usize,
    f_out: usize,
    t_out: usize,
}

fn geometry<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, cfg: &Conv2dCfg) -> Result<Geometry> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::Shape(format!("conv2d: x {:?}, w {:?} must be rank 4", xs, ws)));
    }
    if xs.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("conv2d: zero-size input {:?}", xs)));
    }
    if xs[1] != ws[1] {
        return Err(Error::Shape(format!(
            "conv2d: input channels {} != kernel channels {}",
            xs[1], ws[1]
        )));
    }
    let (df, dt) = cfg.dilation;
    if df == 0 || dt == 0 {
        return Err(Error::Config("conv2d: dilation must be >= 1".into()));
    }
    let (kf, kt) = (ws[2], ws[3]);
    let ef = (kf - 1) * df + 1;
    let et = (kt - 1) * dt + 1;
    let (pad_f, pad_t) = match cfg.padding {
        Padding::Same => {
            if kf % 2 == 0 || kt % 2 == 0 {
                return Err(Error::Config(format!(
                    "conv2d: same padding requires odd kernel, got {}x{}",
                    kf, kt
                )));
            }
            (ef / 2, et / 2)
        }
        Padding::Explicit(pf, pt) => (pf, pt),
    };
    if xs[2] + 2 * pad_f < ef || xs[3] + 2 * pad_t < et {
        return Err(Error::Shape(format!(
            "conv2d: dilated kernel {}x{} exceeds padded input {}x{}",
            ef,
            et,
            xs[2] + 2 * pad_f,
            xs[3] + 2 * pad_t
        )));
    }
    Ok(Geometry {
        b: xs[0],
        cin: xs[1],
        f_in: xs[2],
        t_in: xs[3],
        cout: ws[0],
        kf,
        kt,
        df,
        dt,
        pad_f,
        pad_t,
        f_out: xs[2] + 2 * pad_f - ef + 1,
        t_out: xs[3] + 2 * pad_t - et + 1,
    })
}

/// Fill `col` (cin*kf*kt rows × f_out*t_out cols) from sample `bi` of `x`.
fn im2col<F: Scalar>(x: &Tensor<F>, g: &Geometry, bi: usize, col: &mut [F]) {
    let n = g.f_out * g.t_out;
    let xd = x.data();
    let x_base = bi * g.cin * g.f_in * g.t_in;
    col.iter_mut().for_each(|v| *v = F::zero());
    for ci in 0..g.cin {
        for kfi in 0..g.kf {
            for kti in 0..g.kt {
                let row = (ci * g.kf + kfi) * g.kt + kti;
                let row_base = row * n;
                for fo in 0..g.f_out {
                    let fi = (fo + kfi * g.df) as isize - g.pad_f as isize;
                    if fi < 0 || fi as usize >= g.f_in {
                        continue;
                    }
                    let src_base = x_base + (ci * g.f_in + fi as usize) * g.t_in;
                    let dst_base = row_base + fo * g.t_out;
                    let t_shift = kti * g.dt;
                    // valid to range: 0 <= to + t_shift - pad_t < t_in
                    let lo = g.pad_t.saturating_sub(t_shift);
                    let hi = (g.t_in + g.pad_t - t_shift).min(g.t_out);
                    for to in lo..hi {
                        let ti = to + t_shift - g.pad_t;
                        col[dst_base + to] = xd[src_base + ti];
                    }
                }
            }
        }
    }
}

/// Scatter-add of a col-shaped gradient back into input layout.
fn col2im_add<F: Scalar>(dcol: &[F], g: &Geometry, bi: usize, dx: &mut [F]) {
    let n = g.f_out * g.t_out;
    let x_base = bi * g.cin * g.f_in * g.t_in;
    for ci in 0..g.cin {
        for kfi in 0..g.kf {
            for kti in 0..g.kt {
                let row = (ci * g.kf + kfi) * g.kt + kti;
                let row_base = row * n;
                for fo in 0..g.f_out {
                    let fi = (fo + kfi * g.df) as isize - g.pad_f as isize;
                    if fi < 0 || fi as usize >= g.f_in {
                        continue;
                    }
                    let dst_base = x_base + (ci * g.f_in + fi as usize) * g.t_in;
                    let src_base = row_base + fo * g.t_out;
                    let t_shift = kti * g.dt;
                    let lo = g.pad_t.saturating_sub(t_shift);
                    let hi = (g.t_in + g.pad_t - t_shift).min(g.t_out);
                    for to in lo..hi {
                        let ti = to + t_shift - g.pad_t;
                        dx[dst_base + ti] = dx[dst_base + ti] + dcol[src_base + to];
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation with optional bias.
///
/// x: B×Cin×F×T, w: Cout×Cin×kF×kT, bias: Cout.
pub fn conv2d<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    w: Var,
    bias: Option<Var>,
    cfg: &Conv2dCfg,
) -> Result<Var> {
    let geo = geometry(tape.value(x), tape.value(w), cfg)?;
    let xv = tape.value(x).clone();
    let wv = tape.value(w).clone();
    let bv = bias.map(|b| tape.value(b).clone());
    if let Some(b) = &bv {
        if b.shape() != [geo.cout] {
            return Err(Error::Shape(format!(
                "conv2d: bias shape {:?} != [{}]",
                b.shape(),
                geo.cout
            )));
        }
    }
    let kdim = geo.cin * geo.kf * geo.kt;
    let n = geo.f_out * geo.t_out;
    let mut out = Tensor::zeros(&[geo.b, geo.cout, geo.f_out, geo.t_out]);
    {
        let od = out.data_mut();
        let mut col = vec![F::zero(); kdim * n];
        for bi in 0..geo.b {
            im2col(&xv, &geo, bi, &mut col);
            let dst = &mut od[bi * geo.cout * n..(bi + 1) * geo.cout * n];
            F::gemm(geo.cout, kdim, n, F::one(), wv.data(), &col, F::zero(), dst);
            if let Some(b) = &bv {
                for co in 0..geo.cout {
                    let bvv = b.data()[co];
                    for v in dst[co * n..(co + 1) * n].iter_mut() {
                        *v = *v + bvv;
                    }
                }
            }
        }
    }
    let mut parents = vec![x, w];
    if let Some(b) = bias {
        parents.push(b);
    }
    let has_bias = bias.is_some();
    let cfg = *cfg;
    Ok(tape.push(
        out,
        parents,
        Box::new(move |g| {
            let geo = geometry(&xv, &wv, &cfg).expect("geometry re-check");
            let kdim = geo.cin * geo.kf * geo.kt;
            let n = geo.f_out * geo.t_out;
            let gd = g.data();
            let mut dx = Tensor::zeros(xv.shape());
            let mut dw = Tensor::zeros(wv.shape());
            let mut col = vec![F::zero(); kdim * n];
            let mut dcol = vec![F::zero(); kdim * n];
            {
                let dxd = dx.data_mut();
                let dwd = dw.data_mut();
                for bi in 0..geo.b {
                    let gslice = &gd[bi * geo.cout * n..(bi + 1) * geo.cout * n];
                    // dW += dY @ col^T
                    im2col(&xv, &geo, bi, &mut col);
                    F::gemm_tr(geo.cout, n, kdim, F::one(), gslice, false, &col, true, F::one(), dwd);
                    // dcol = W^T @ dY, scattered back to dx
                    F::gemm_tr(kdim, geo.cout, n, F::one(), wv.data(), true, gslice, false, F::zero(), &mut dcol);
                    col2im_add(&dcol, &geo, bi, dxd);
                }
            }
            let mut grads = vec![dx, dw];
            if has_bias {
                let mut db = Tensor::zeros(&[geo.cout]);
                {
                    let dbd = db.data_mut();
                    for bi in 0..geo.b {
                        for co in 0..geo.cout {
                            let base = (bi * geo.cout + co) * n;
                            let mut acc = F::zero();
                            for i in 0..n {
                                acc = acc + gd[base + i];
                            }
                            dbd[co] = dbd[co] + acc;
                        }
                    }
                }
                grads.push(db);
            }
            grads
        }),
    ))
}

/// 1×1 convolution over channels: x B×C×F×T, w O×C, bias O.
pub fn conv1x1<F: Scalar>(tape: &mut Tape<F>, x: Var, w: Var, bias: Var) -> Result<Var> {
    let sw = tape.value(w).shape().to_vec();
    if sw.len() != 2 {
        return Err(Error::Shape(format!("conv1x1: weight must be rank 2, got {:?}", sw)));
    }
    let w4 = super::reshape(tape, w, &[sw[0], sw[1], 1, 1])?;
    conv2d(tape, x, w4, Some(bias), &Conv2dCfg::default())
}

/// Direct nested-loop convolution; the brute-force oracle used in tests.
pub fn conv2d_reference<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    cfg: &Conv2dCfg,
) -> Result<Tensor<F>> {
    let g = geometry(x, w, cfg)?;
    let mut out = Tensor::zeros(&[g.b, g.cout, g.f_out, g.t_out]);
    let od = out.data_mut();
    let xd = x.data();
    let wd = w.data();
    for bi in 0..g.b {
        for co in 0..g.cout {
            for fo in 0..g.f_out {
                for to in 0..g.t_out {
                    let mut acc = bias.map(|b| b.data()[co]).unwrap_or_else(F::zero);
                    for ci in 0..g.cin {
                        for kfi in 0..g.kf {
                            for kti in 0..g.kt {
                                let fi = (fo + kfi * g.df) as isize - g.pad_f as isize;
                                let ti = (to + kti * g.dt) as isize - g.pad_t as isize;
                                if fi < 0 || ti < 0 || fi as usize >= g.f_in || ti as usize >= g.t_in {
                                    continue;
                                }
                                let xi = ((bi * g.cin + ci) * g.f_in + fi as usize) * g.t_in + ti as usize;
                                let wi = ((co * g.cin + ci) * g.kf + kfi) * g.kt + kti;
                                acc = acc + xd[xi] * wd[wi];
                            }
                        }
                    }
                    od[((bi * g.cout + co) * g.f_out + fo) * g.t_out + to] = acc;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn unit_kernel_scales_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.leaf(Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap());
        let b = tape.leaf(Tensor::zeros(&[1]));
        let y = conv2d(&mut tape, x, w, Some(b), &Conv2dCfg::default()).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn matches_reference_on_random_input() {
        let mut rng = substream(11, "conv-test");
        let mut tape = Tape::<f64>::new();
        let xt = Tensor::rand_uniform(&[1, 1, 4, 4], -1.0, 1.0, &mut rng);
        let wt = Tensor::rand_uniform(&[1, 1, 3, 3], -1.0, 1.0, &mut rng);
        let bt = Tensor::rand_uniform(&[1], -1.0, 1.0, &mut rng);
        let x = tape.leaf(xt.clone());
        let w = tape.leaf(wt.clone());
        let b = tape.leaf(bt.clone());
        let y = conv2d(&mut tape, x, w, Some(b), &Conv2dCfg::default()).unwrap();
        let r = conv2d_reference(&xt, &wt, Some(&bt), &Conv2dCfg::default()).unwrap();
        assert!(tape.value(y).max_abs_diff(&r).unwrap() < 1e-6);
    }

    #[test]
    fn dilated_matches_reference() {
        let mut rng = substream(12, "conv-test");
        let cfg = Conv2dCfg { dilation: (1, 3), padding: Padding::Same };
        let mut tape = Tape::<f64>::new();
        let xt = Tensor::rand_uniform(&[1, 1, 8, 8], -1.0, 1.0, &mut rng);
        let wt = Tensor::rand_uniform(&[1, 1, 3, 3], -1.0, 1.0, &mut rng);
        let x = tape.leaf(xt.clone());
        let w = tape.leaf(wt.clone());
        let y = conv2d(&mut tape, x, w, None, &cfg).unwrap();
        let r = conv2d_reference(&xt, &wt, None, &cfg).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 8, 8]);
        assert!(tape.value(y).max_abs_diff(&r).unwrap() < 1e-6);
    }

    #[test]
    fn dilated_impulse_taps_at_expected_offsets() {
        // 3-tap kernel dilated by 2 in frequency responds at offsets {-2,0,+2}
        let mut tape = Tape::<f64>::new();
        let mut imp = Tensor::zeros(&[1, 1, 9, 1]);
        imp.data_mut()[4] = 1.0;
        let x = tape.leaf(imp);
        let w = tape.leaf(Tensor::new(&[1, 1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let cfg = Conv2dCfg { dilation: (2, 1), padding: Padding::Same };
        let y = conv2d(&mut tape, x, w, None, &cfg).unwrap();
        let v = tape.value(y);
        // cross-correlation: response at f-2 is 3.0 tap, f+2 the 1.0 tap
        assert_eq!(v.at(&[0, 0, 2, 0]), 3.0);
        assert_eq!(v.at(&[0, 0, 4, 0]), 2.0);
        assert_eq!(v.at(&[0, 0, 6, 0]), 1.0);
        assert_eq!(v.at(&[0, 0, 3, 0]), 0.0);
    }

    #[test]
    fn shape_errors_are_descriptive() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        let err = conv2d(&mut tape, x, w, None, &Conv2dCfg::default()).unwrap_err();
        assert!(err.to_string().contains("channels"));
        let z = tape.leaf(Tensor::zeros(&[1, 1, 0, 4]));
        let w1 = tape.leaf(Tensor::zeros(&[1, 1, 1, 1]));
        assert!(conv2d(&mut tape, z, w1, None, &Conv2dCfg::default()).is_err());
    }

    #[test]
    fn linearity_with_zero_bias() {
        let mut rng = substream(13, "conv-test");
        let x1 = Tensor::rand_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let x2 = Tensor::rand_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let wt = Tensor::rand_uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let (a, b) = (0.7, -1.3);
        let combo = x1.scale(a).add(&x2.scale(b)).unwrap();
        let cfg = Conv2dCfg::default();
        let y_combo = conv2d_reference(&combo, &wt, None, &cfg).unwrap();
        let y1 = conv2d_reference(&x1, &wt, None, &cfg).unwrap();
        let y2 = conv2d_reference(&x2, &wt, None, &cfg).unwrap();
        let lin = y1.scale(a).add(&y2.scale(b)).unwrap();
        assert!(y_combo.max_abs_diff(&lin).unwrap() < 1e-5);
    }
}
