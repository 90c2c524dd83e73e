//! 2-D convolution and its transpose via column matrices.
//!
//! A [C, H, W] item is unrolled into a column matrix whose rows are kernel
//! taps, turning convolution into one dense product per item. The transposed
//! convolution reuses the same machinery with the scatter direction reversed.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::ops::linalg::{matmul_acc, matmul_acc_nt, matmul_acc_tn};

/// cols[(c*k+ki)*k+kj][oh*wo+ow] = x[c][oh*s - p + ki][ow*s - p + kj], zero
/// outside the image.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    debug_assert_eq!(x.len(), ci * h * w);
    debug_assert_eq!(cols.len(), ci * k * k * ho * wo);
    let mut row = 0;
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                let mut idx = 0;
                for oh in 0..ho {
                    let hh = (oh * stride + ki) as isize - pad as isize;
                    if hh < 0 || hh >= h as isize {
                        dst[idx..idx + wo].fill(0.0);
                        idx += wo;
                        continue;
                    }
                    let base = hh as usize * w;
                    for ow in 0..wo {
                        let ww = (ow * stride + kj) as isize - pad as isize;
                        dst[idx] = if ww < 0 || ww >= w as isize {
                            0.0
                        } else {
                            plane[base + ww as usize]
                        };
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the image.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_acc(
    cols: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), ci * h * w);
    debug_assert_eq!(cols.len(), ci * k * k * ho * wo);
    let mut row = 0;
    for c in 0..ci {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                let mut idx = 0;
                for oh in 0..ho {
                    let hh = (oh * stride + ki) as isize - pad as isize;
                    if hh < 0 || hh >= h as isize {
                        idx += wo;
                        continue;
                    }
                    let base = hh as usize * w;
                    for ow in 0..wo {
                        let ww = (ow * stride + kj) as isize - pad as isize;
                        if ww >= 0 && ww < w as isize {
                            plane[base + ww as usize] += src[idx];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

struct ConvGeom {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

fn conv_geometry(
    g: &Graph,
    x: TensorId,
    weight: TensorId,
    bias: TensorId,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let xs = g.shape(x);
    let ws = g.shape(weight);
    let bs = g.shape(bias);
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::dim(format!(
            "convolution expects rank-4 input and weight, got {xs:?} and {ws:?}"
        )));
    }
    if bs.len() != 1 || bs[0] != ws[0] {
        return Err(Error::dim(format!(
            "bias shape {bs:?} does not match {} output channels",
            ws[0]
        )));
    }
    if ws[1] != xs[1] {
        return Err(Error::dim(format!(
            "weight expects {} input channels, input has {}",
            ws[1], xs[1]
        )));
    }
    if ws[2] != ws[3] {
        return Err(Error::dim(format!("kernel must be square, got {ws:?}")));
    }
    if stride == 0 {
        return Err(Error::config("convolution stride must be positive"));
    }
    let (h, w, k) = (xs[2], xs[3], ws[2]);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::config(format!(
            "kernel {k} exceeds padded extent of {h}x{w} input"
        )));
    }
    if (h + 2 * pad - k) % stride != 0 || (w + 2 * pad - k) % stride != 0 {
        return Err(Error::config(format!(
            "stride {stride} does not tile {h}x{w} input with kernel {k} pad {pad}"
        )));
    }
    Ok(ConvGeom {
        b: xs[0],
        ci: xs[1],
        h,
        w,
        co: ws[0],
        k,
        stride,
        pad,
        ho: (h + 2 * pad - k) / stride + 1,
        wo: (w + 2 * pad - k) / stride + 1,
    })
}

/// Cross-correlation of [B, Ci, H, W] with [Co, Ci, k, k] plus bias.
pub fn conv2d(
    g: &mut Graph,
    x: TensorId,
    weight: TensorId,
    bias: TensorId,
    stride: usize,
    pad: usize,
) -> Result<TensorId> {
    let gm = conv_geometry(g, x, weight, bias, stride, pad)?;
    let ConvGeom { b, ci, h, w, co, k, stride, pad, ho, wo } = gm;
    let ckk = ci * k * k;
    let howo = ho * wo;
    let isz = ci * h * w;
    let osz = co * howo;

    let xd = g.data_rc(x);
    let wd = g.data_rc(weight);
    let bd = g.data_rc(bias);

    let mut out = vec![0.0; b * osz];
    let mut cols = vec![0.0; ckk * howo];
    for bi in 0..b {
        im2col(&xd[bi * isz..(bi + 1) * isz], ci, h, w, k, stride, pad, ho, wo, &mut cols);
        let omat = &mut out[bi * osz..(bi + 1) * osz];
        matmul_acc(&wd, &cols, co, ckk, howo, omat);
        for c in 0..co {
            let bv = bd[c];
            for v in &mut omat[c * howo..(c + 1) * howo] {
                *v += bv;
            }
        }
    }

    let rg = g.requires_grad(x) || g.requires_grad(weight) || g.requires_grad(bias);
    Ok(g.push_op(vec![b, co, ho, wo], out, rg, move |dout, sink| {
        sink.add_with(bias, |db| {
            for bi in 0..b {
                for c in 0..co {
                    let s: f64 = dout[bi * osz + c * howo..bi * osz + (c + 1) * howo]
                        .iter()
                        .sum();
                    db[c] += s;
                }
            }
        });
        // Columns are rebuilt per item rather than cached across the step.
        let needs_w = sink.wants(weight);
        if needs_w {
            sink.add_with(weight, |dw| {
                let mut cols = vec![0.0; ckk * howo];
                for bi in 0..b {
                    im2col(&xd[bi * isz..(bi + 1) * isz], ci, h, w, k, stride, pad, ho, wo, &mut cols);
                    let dmat = &dout[bi * osz..(bi + 1) * osz];
                    matmul_acc_nt(dmat, &cols, co, howo, ckk, dw);
                }
            });
        }
        sink.add_with(x, |dx| {
            let mut dcols = vec![0.0; ckk * howo];
            for bi in 0..b {
                dcols.fill(0.0);
                let dmat = &dout[bi * osz..(bi + 1) * osz];
                matmul_acc_tn(&wd, dmat, ckk, co, howo, &mut dcols);
                col2im_acc(&dcols, ci, h, w, k, stride, pad, ho, wo, &mut dx[bi * isz..(bi + 1) * isz]);
            }
        });
    }))
}

/// Transposed convolution of [B, Ci, H, W] with [Ci, Co, k, k] plus bias.
/// The geometry must double the spatial extent exactly.
pub fn transposed_conv2d(
    g: &mut Graph,
    x: TensorId,
    weight: TensorId,
    bias: TensorId,
    stride: usize,
    pad: usize,
) -> Result<TensorId> {
    let xs = g.shape(x).to_vec();
    let ws = g.shape(weight).to_vec();
    let bs = g.shape(bias).to_vec();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::dim(format!(
            "transposed convolution expects rank-4 input and weight, got {xs:?} and {ws:?}"
        )));
    }
    if ws[0] != xs[1] {
        return Err(Error::dim(format!(
            "weight expects {} input channels, input has {}",
            ws[0], xs[1]
        )));
    }
    if ws[2] != ws[3] {
        return Err(Error::dim(format!("kernel must be square, got {ws:?}")));
    }
    let (b, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, k) = (ws[1], ws[2]);
    if bs.len() != 1 || bs[0] != co {
        return Err(Error::dim(format!(
            "bias shape {bs:?} does not match {co} output channels"
        )));
    }
    if stride == 0 {
        return Err(Error::config("transposed convolution stride must be positive"));
    }
    let ho = (h - 1) * stride + k;
    let (ho, wo) = (
        ho.checked_sub(2 * pad).ok_or_else(|| {
            Error::config(format!("padding {pad} swallows the whole {ho} output"))
        })?,
        ((w - 1) * stride + k)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::config(format!("padding {pad} too large")))?,
    );
    if ho != 2 * h || wo != 2 * w {
        return Err(Error::config(format!(
            "upsampling geometry k={k} stride={stride} pad={pad} maps {h}x{w} to {ho}x{wo}, expected exact doubling"
        )));
    }

    let cokk = co * k * k;
    let hw = h * w;
    let isz = ci * hw;
    let osz = co * ho * wo;
    let xd = g.data_rc(x);
    let wd = g.data_rc(weight);
    let bd = g.data_rc(bias);

    let mut out = vec![0.0; b * osz];
    let mut cols = vec![0.0; cokk * hw];
    for bi in 0..b {
        cols.fill(0.0);
        // cols = T^t * x, then scatter onto the doubled canvas.
        matmul_acc_tn(&wd, &xd[bi * isz..(bi + 1) * isz], cokk, ci, hw, &mut cols);
        let oitem = &mut out[bi * osz..(bi + 1) * osz];
        col2im_acc(&cols, co, ho, wo, k, stride, pad, h, w, oitem);
        for c in 0..co {
            let bv = bd[c];
            for v in &mut oitem[c * ho * wo..(c + 1) * ho * wo] {
                *v += bv;
            }
        }
    }

    let rg = g.requires_grad(x) || g.requires_grad(weight) || g.requires_grad(bias);
    Ok(g.push_op(vec![b, co, ho, wo], out, rg, move |dout, sink| {
        sink.add_with(bias, |db| {
            for bi in 0..b {
                for c in 0..co {
                    let s: f64 = dout
                        [bi * osz + c * ho * wo..bi * osz + (c + 1) * ho * wo]
                        .iter()
                        .sum();
                    db[c] += s;
                }
            }
        });
        let needs_w = sink.wants(weight);
        let needs_x = sink.wants(x);
        if !needs_w && !needs_x {
            return;
        }
        let mut dcols = vec![0.0; cokk * hw];
        for bi in 0..b {
            im2col(&dout[bi * osz..(bi + 1) * osz], co, ho, wo, k, stride, pad, h, w, &mut dcols);
            if needs_x {
                sink.add_with(x, |dx| {
                    matmul_acc(&wd, &dcols, ci, cokk, hw, &mut dx[bi * isz..(bi + 1) * isz]);
                });
            }
            if needs_w {
                sink.add_with(weight, |dw| {
                    matmul_acc_nt(&xd[bi * isz..(bi + 1) * isz], &dcols, ci, hw, cokk, dw);
                });
            }
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TensorData;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: six explicit loops, no column matrix.
    #[allow(clippy::too_many_arguments)]
    fn naive_conv(
        x: &[f64],
        ci: usize,
        h: usize,
        w: usize,
        wt: &[f64],
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: &[f64],
    ) -> Vec<f64> {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; co * ho * wo];
        for c in 0..co {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = bias[c];
                    for ic in 0..ci {
                        for ki in 0..k {
                            for kj in 0..k {
                                let hh = (oh * stride + ki) as isize - pad as isize;
                                let ww = (ow * stride + kj) as isize - pad as isize;
                                if hh >= 0 && hh < h as isize && ww >= 0 && ww < w as isize {
                                    acc += x[(ic * h + hh as usize) * w + ww as usize]
                                        * wt[((c * ci + ic) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                    out[(c * ho + oh) * wo + ow] = acc;
                }
            }
        }
        out
    }

    /// Independent oracle for the transpose: scatter each input pixel.
    fn naive_deconv(
        x: &[f64],
        ci: usize,
        h: usize,
        w: usize,
        t: &[f64],
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: &[f64],
    ) -> Vec<f64> {
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (w - 1) * stride + k - 2 * pad;
        let mut out = vec![0.0; co * ho * wo];
        for c in 0..co {
            for v in &mut out[c * ho * wo..(c + 1) * ho * wo] {
                *v = bias[c];
            }
        }
        for ic in 0..ci {
            for ih in 0..h {
                for iw in 0..w {
                    let xv = x[(ic * h + ih) * w + iw];
                    for c in 0..co {
                        for ki in 0..k {
                            for kj in 0..k {
                                let oh = (ih * stride + ki) as isize - pad as isize;
                                let ow = (iw * stride + kj) as isize - pad as isize;
                                if oh >= 0 && oh < ho as isize && ow >= 0 && ow < wo as isize {
                                    out[(c * ho + oh as usize) * wo + ow as usize] +=
                                        xv * t[((ic * co + c) * k + ki) * k + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_hand_example() {
        // 3x3 ramp, 2x2 ones kernel, stride 1, no padding.
        let mut g = Graph::new();
        let x = g.leaf(
            TensorData::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap(),
            false,
        );
        let w = g.leaf(TensorData::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(), false);
        let b = g.leaf(TensorData::new(vec![1], vec![0.0]).unwrap(), false);
        let y = conv2d(&mut g, x, w, b, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for &(b, ci, h, co, k, stride, pad) in &[
            (1usize, 1usize, 5usize, 1usize, 3usize, 1usize, 1usize),
            (2, 3, 8, 4, 3, 1, 1),
            (1, 2, 6, 3, 4, 2, 1),
            (2, 4, 7, 2, 1, 1, 0),
            (1, 3, 9, 5, 3, 2, 1),
        ] {
            let x: Vec<f64> = (0..b * ci * h * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias: Vec<f64> = (0..co).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let mut g = Graph::new();
            let tx = g.leaf(TensorData::new(vec![b, ci, h, h], x.clone()).unwrap(), false);
            let tw = g.leaf(TensorData::new(vec![co, ci, k, k], wt.clone()).unwrap(), false);
            let tb = g.leaf(TensorData::new(vec![co], bias.clone()).unwrap(), false);
            let y = conv2d(&mut g, tx, tw, tb, stride, pad).unwrap();
            let ho = (h + 2 * pad - k) / stride + 1;
            let isz = ci * h * h;
            let osz = co * ho * ho;
            for bi in 0..b {
                let want = naive_conv(&x[bi * isz..(bi + 1) * isz], ci, h, h, &wt, co, k, stride, pad, &bias);
                let got = &g.value(y)[bi * osz..(bi + 1) * osz];
                for (u, v) in got.iter().zip(&want) {
                    assert!((u - v).abs() < 1e-12, "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn deconv_matches_naive_oracle_and_doubles_extent() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        // 7x7 -> 14x14 is the doubling step the deepest decoder stream uses.
        let (b, ci, h, co) = (2usize, 3usize, 7usize, 2usize);
        let (k, stride, pad) = (4usize, 2usize, 1usize);
        let x: Vec<f64> = (0..b * ci * h * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..ci * co * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..co).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut g = Graph::new();
        let tx = g.leaf(TensorData::new(vec![b, ci, h, h], x.clone()).unwrap(), false);
        let tt = g.leaf(TensorData::new(vec![ci, co, k, k], t.clone()).unwrap(), false);
        let tb = g.leaf(TensorData::new(vec![co], bias.clone()).unwrap(), false);
        let y = transposed_conv2d(&mut g, tx, tt, tb, stride, pad).unwrap();
        assert_eq!(g.shape(y), &[b, co, 2 * h, 2 * h]);
        let isz = ci * h * h;
        let osz = co * 4 * h * h;
        for bi in 0..b {
            let want = naive_deconv(&x[bi * isz..(bi + 1) * isz], ci, h, h, &t, co, k, stride, pad, &bias);
            let got = &g.value(y)[bi * osz..(bi + 1) * osz];
            for (u, v) in got.iter().zip(&want) {
                assert!((u - v).abs() < 1e-12, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        // <conv(x), u> == <x, deconv(u)> with the same weight storage: the
        // leading axis flips from output channels to input channels.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (ci, h, co) = (2usize, 6usize, 3usize);
        let (k, stride, pad) = (4usize, 2usize, 1usize);
        let ho = (h + 2 * pad - k) / stride + 1;
        let x: Vec<f64> = (0..ci * h * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..co * ho * ho).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..co * ci * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let tx = g.leaf(TensorData::new(vec![1, ci, h, h], x.clone()).unwrap(), false);
        let tw = g.leaf(TensorData::new(vec![co, ci, k, k], wt.clone()).unwrap(), false);
        let zb = g.leaf(TensorData::new(vec![co], vec![0.0; co]).unwrap(), false);
        let cx = conv2d(&mut g, tx, tw, zb, stride, pad).unwrap();
        let lhs: f64 = g.value(cx).iter().zip(&u).map(|(a, b)| a * b).sum();

        let tu = g.leaf(TensorData::new(vec![1, co, ho, ho], u).unwrap(), false);
        let ts = g.leaf(TensorData::new(vec![co, ci, k, k], wt).unwrap(), false);
        let zb2 = g.leaf(TensorData::new(vec![ci], vec![0.0; ci]).unwrap(), false);
        let dx = transposed_conv2d(&mut g, tu, ts, zb2, stride, pad).unwrap();
        let rhs: f64 = g.value(dx).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn deconv_rejects_non_doubling_geometry() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::zeros(&[1, 1, 4, 4]), false);
        let t = g.leaf(TensorData::zeros(&[1, 1, 3, 3]), false);
        let b = g.leaf(TensorData::zeros(&[1]), false);
        assert!(matches!(
            transposed_conv2d(&mut g, x, t, b, 2, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::zeros(&[1, 3, 4, 4]), false);
        let w = g.leaf(TensorData::zeros(&[2, 4, 3, 3]), false);
        let b = g.leaf(TensorData::zeros(&[2]), false);
        assert!(matches!(conv2d(&mut g, x, w, b, 1, 1), Err(Error::Dim(_))));
    }

    #[test]
    fn conv_rejects_nontiling_stride() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::zeros(&[1, 1, 5, 5]), false);
        let w = g.leaf(TensorData::zeros(&[1, 1, 2, 2]), false);
        let b = g.leaf(TensorData::zeros(&[1]), false);
        assert!(matches!(conv2d(&mut g, x, w, b, 2, 0), Err(Error::Config(_))));
    }
}
