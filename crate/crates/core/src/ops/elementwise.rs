//! Pointwise operations and channel recalibration.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};

fn same_shape(g: &Graph, a: TensorId, b: TensorId, op: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::dim(format!(
            "{op} operand shapes differ: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

/// Elementwise sum of two tensors of identical shape.
pub fn add(g: &mut Graph, a: TensorId, b: TensorId) -> Result<TensorId> {
    same_shape(g, a, b, "add")?;
    let ad = g.data_rc(a);
    let bd = g.data_rc(b);
    let out: Vec<f64> = ad.iter().zip(bd.iter()).map(|(x, y)| x + y).collect();
    let rg = g.requires_grad(a) || g.requires_grad(b);
    Ok(g.push_op(g.shape(a).to_vec(), out, rg, move |dout, sink| {
        sink.add(a, dout);
        sink.add(b, dout);
    }))
}

/// Elementwise product of two tensors of identical shape.
pub fn mul(g: &mut Graph, a: TensorId, b: TensorId) -> Result<TensorId> {
    same_shape(g, a, b, "mul")?;
    let ad = g.data_rc(a);
    let bd = g.data_rc(b);
    let out: Vec<f64> = ad.iter().zip(bd.iter()).map(|(x, y)| x * y).collect();
    let rg = g.requires_grad(a) || g.requires_grad(b);
    Ok(g.push_op(g.shape(a).to_vec(), out, rg, move |dout, sink| {
        sink.add_with(a, |da| {
            for ((d, &go), &bv) in da.iter_mut().zip(dout).zip(bd.iter()) {
                *d += go * bv;
            }
        });
        sink.add_with(b, |db| {
            for ((d, &go), &av) in db.iter_mut().zip(dout).zip(ad.iter()) {
                *d += go * av;
            }
        });
    }))
}

/// Multiply every element by a fixed constant.
pub fn scale(g: &mut Graph, x: TensorId, c: f64) -> TensorId {
    let xd = g.data_rc(x);
    let out: Vec<f64> = xd.iter().map(|v| v * c).collect();
    let rg = g.requires_grad(x);
    g.push_op(g.shape(x).to_vec(), out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            for (d, &go) in dx.iter_mut().zip(dout) {
                *d += go * c;
            }
        });
    })
}

/// Rectified linear unit. The subgradient at zero is taken as zero.
pub fn relu(g: &mut Graph, x: TensorId) -> TensorId {
    let xd = g.data_rc(x);
    let out: Vec<f64> = xd.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let rg = g.requires_grad(x);
    g.push_op(g.shape(x).to_vec(), out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            for ((d, &go), &xv) in dx.iter_mut().zip(dout).zip(xd.iter()) {
                if xv > 0.0 {
                    *d += go;
                }
            }
        });
    })
}

fn sigmoid_scalar(v: f64) -> f64 {
    // Branch on sign so the exponential never overflows.
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Logistic sigmoid applied elementwise.
pub fn sigmoid(g: &mut Graph, x: TensorId) -> TensorId {
    let xd = g.data_rc(x);
    let out: Vec<f64> = xd.iter().map(|&v| sigmoid_scalar(v)).collect();
    let yd = out.clone();
    let rg = g.requires_grad(x);
    g.push_op(g.shape(x).to_vec(), out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            for ((d, &go), &y) in dx.iter_mut().zip(dout).zip(yd.iter()) {
                *d += go * y * (1.0 - y);
            }
        });
    })
}

/// Channel-wise recalibration of a [C, H, W] map: out[c] = (1 + s[c]) * a[c].
pub fn channel_scale_apply(g: &mut Graph, a: TensorId, s: TensorId) -> Result<TensorId> {
    let sa = g.shape(a).to_vec();
    let ss = g.shape(s).to_vec();
    if sa.len() != 3 || ss.len() != 1 || ss[0] != sa[0] {
        return Err(Error::dim(format!(
            "channel recalibration expects [C,H,W] and [C], got {sa:?} and {ss:?}"
        )));
    }
    let (c, plane) = (sa[0], sa[1] * sa[2]);
    let ad = g.data_rc(a);
    let sd = g.data_rc(s);
    let mut out = vec![0.0; c * plane];
    for ci in 0..c {
        let f = 1.0 + sd[ci];
        for p in 0..plane {
            out[ci * plane + p] = f * ad[ci * plane + p];
        }
    }
    let rg = g.requires_grad(a) || g.requires_grad(s);
    Ok(g.push_op(sa, out, rg, move |dout, sink| {
        sink.add_with(a, |da| {
            for ci in 0..c {
                let f = 1.0 + sd[ci];
                for p in 0..plane {
                    da[ci * plane + p] += f * dout[ci * plane + p];
                }
            }
        });
        sink.add_with(s, |ds| {
            for ci in 0..c {
                let mut acc = 0.0;
                for p in 0..plane {
                    acc += dout[ci * plane + p] * ad[ci * plane + p];
                }
                ds[ci] += acc;
            }
        });
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TensorData;
    use crate::ops::sum_all;

    #[test]
    fn add_and_mul_forward() {
        let mut g = Graph::new();
        let a = g.leaf(TensorData::new(vec![3], vec![1., 2., 3.]).unwrap(), false);
        let b = g.leaf(TensorData::new(vec![3], vec![10., 20., 30.]).unwrap(), false);
        let s = add(&mut g, a, b).unwrap();
        let p = mul(&mut g, a, b).unwrap();
        assert_eq!(g.value(s), &[11., 22., 33.]);
        assert_eq!(g.value(p), &[10., 40., 90.]);
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf(TensorData::zeros(&[2, 2]), false);
        let b = g.leaf(TensorData::zeros(&[4]), false);
        assert!(matches!(add(&mut g, a, b), Err(Error::Dim(_))));
    }

    #[test]
    fn relu_clamps_and_masks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::new(vec![4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap(), true);
        let y = relu(&mut g, x);
        assert_eq!(g.value(y), &[0.0, 0.0, 0.5, 2.0]);
        let s = sum_all(&mut g, y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_known_values() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::new(vec![3], vec![0.0, 1.0, -500.0]).unwrap(), false);
        let y = sigmoid(&mut g, x);
        let v = g.value(y);
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!(v[2] >= 0.0 && v[2] < 1e-100);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::new(vec![1], vec![0.0]).unwrap(), true);
        let y = sigmoid(&mut g, x);
        let s = sum_all(&mut g, y);
        g.backward(s).unwrap();
        assert!((g.grad(x).unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn channel_recalibration_scales_each_plane() {
        let mut g = Graph::new();
        let a = g.leaf(
            TensorData::new(vec![2, 1, 2], vec![1., 2., 3., 4.]).unwrap(),
            true,
        );
        let s = g.leaf(TensorData::new(vec![2], vec![0.5, 0.0]).unwrap(), true);
        let y = channel_scale_apply(&mut g, a, s).unwrap();
        assert_eq!(g.value(y), &[1.5, 3.0, 3.0, 4.0]);
        let l = sum_all(&mut g, y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.5, 1.5, 1.0, 1.0]);
        // ds[c] = sum of a over the plane.
        assert_eq!(g.grad(s).unwrap(), &[3.0, 7.0]);
    }
}
