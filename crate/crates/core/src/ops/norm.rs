//! Batch normalisation over [B, C, H, W] maps.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};

fn check_bn_shapes(g: &Graph, x: TensorId, gamma: TensorId, beta: TensorId) -> Result<(usize, usize, usize)> {
    let s = g.shape(x);
    if s.len() != 4 {
        return Err(Error::dim(format!("batch norm expects rank 4, got {s:?}")));
    }
    let c = s[1];
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        let ts = g.shape(t);
        if ts.len() != 1 || ts[0] != c {
            return Err(Error::dim(format!(
                "batch norm {name} shape {ts:?} does not match {c} channels"
            )));
        }
    }
    Ok((s[0], c, s[2] * s[3]))
}

/// Training-mode batch norm. Normalises with the biased batch variance and
/// returns the batch mean and variance so the caller can maintain running
/// statistics.
pub fn batchnorm2d_train(
    g: &mut Graph,
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    eps: f64,
) -> Result<(TensorId, Vec<f64>, Vec<f64>)> {
    let (b, c, plane) = check_bn_shapes(g, x, gamma, beta)?;
    let n = (b * plane) as f64;
    if b * plane < 2 {
        return Err(Error::usage(
            "training batch norm needs at least two values per channel",
        ));
    }
    let xd = g.data_rc(x);
    let gd = g.data_rc(gamma);
    let bd = g.data_rc(beta);

    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for p in 0..plane {
                s += xd[base + p];
            }
        }
        let m = s / n;
        let mut v = 0.0;
        for bi in 0..b {
            let base = (bi * c + ci) * plane;
            for p in 0..plane {
                let d = xd[base + p] - m;
                v += d * d;
            }
        }
        mean[ci] = m;
        var[ci] = v / n;
    }

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = vec![0.0; xd.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let (m, is, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
            for p in 0..plane {
                out[base + p] = ga * (xd[base + p] - m) * is + be;
            }
        }
    }

    let rg = g.requires_grad(x) || g.requires_grad(gamma) || g.requires_grad(beta);
    let mean_c = mean.clone();
    let id = g.push_op(g.shape(x).to_vec(), out, rg, move |dout, sink| {
        // Per channel: dx = g*is*(dy - mean(dy) - xhat*mean(dy*xhat)).
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let (m, is) = (mean_c[ci], inv_std[ci]);
                let mut s0 = 0.0;
                let mut s1 = 0.0;
                for p in 0..plane {
                    let dy = dout[base + p];
                    s0 += dy;
                    s1 += dy * (xd[base + p] - m) * is;
                }
                sum_dy[ci] += s0;
                sum_dy_xhat[ci] += s1;
            }
        }
        sink.add_with(beta, |db| {
            for ci in 0..c {
                db[ci] += sum_dy[ci];
            }
        });
        sink.add_with(gamma, |dg| {
            for ci in 0..c {
                dg[ci] += sum_dy_xhat[ci];
            }
        });
        sink.add_with(x, |dx| {
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let (m, is, ga) = (mean_c[ci], inv_std[ci], gd[ci]);
                    let mdy = sum_dy[ci] / n;
                    let mdyx = sum_dy_xhat[ci] / n;
                    for p in 0..plane {
                        let xhat = (xd[base + p] - m) * is;
                        dx[base + p] += ga * is * (dout[base + p] - mdy - xhat * mdyx);
                    }
                }
            }
        });
    });
    Ok((id, mean, var))
}

/// Inference-mode batch norm using fixed statistics.
pub fn batchnorm2d_eval(
    g: &mut Graph,
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<TensorId> {
    let (b, c, plane) = check_bn_shapes(g, x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::dim(format!(
            "running statistics length {} does not match {c} channels",
            running_mean.len()
        )));
    }
    let xd = g.data_rc(x);
    let gd = g.data_rc(gamma);
    let bd = g.data_rc(beta);
    let mean = running_mean.to_vec();
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let mut out = vec![0.0; xd.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let (m, is, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
            for p in 0..plane {
                out[base + p] = ga * (xd[base + p] - m) * is + be;
            }
        }
    }
    let rg = g.requires_grad(x) || g.requires_grad(gamma) || g.requires_grad(beta);
    Ok(g.push_op(g.shape(x).to_vec(), out, rg, move |dout, sink| {
        sink.add_with(beta, |db| {
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let s: f64 = dout[base..base + plane].iter().sum();
                    db[ci] += s;
                }
            }
        });
        sink.add_with(gamma, |dg| {
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let (m, is) = (mean[ci], inv_std[ci]);
                    let mut s = 0.0;
                    for p in 0..plane {
                        s += dout[base + p] * (xd[base + p] - m) * is;
                    }
                    dg[ci] += s;
                }
            }
        });
        sink.add_with(x, |dx| {
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let f = gd[ci] * inv_std[ci];
                    for p in 0..plane {
                        dx[base + p] += f * dout[base + p];
                    }
                }
            }
        });
    }))
}

/// Momentum update of running statistics toward freshly observed batch ones.
pub fn update_running_stats(
    running_mean: &mut [f64],
    running_var: &mut [f64],
    batch_mean: &[f64],
    batch_var: &[f64],
    momentum: f64,
) {
    for (r, &m) in running_mean.iter_mut().zip(batch_mean) {
        *r = (1.0 - momentum) * *r + momentum * m;
    }
    for (r, &v) in running_var.iter_mut().zip(batch_var) {
        *r = (1.0 - momentum) * *r + momentum * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TensorData;
    use crate::ops::sum_all;

    #[test]
    fn train_mode_standardises_each_channel() {
        let mut g = Graph::new();
        // One channel, four values: mean 2.5, biased var 1.25.
        let x = g.leaf(
            TensorData::new(vec![2, 1, 1, 2], vec![1., 2., 3., 4.]).unwrap(),
            false,
        );
        let ga = g.leaf(TensorData::new(vec![1], vec![1.0]).unwrap(), false);
        let be = g.leaf(TensorData::new(vec![1], vec![0.0]).unwrap(), false);
        let (y, mean, var) = batchnorm2d_train(&mut g, x, ga, be, 1e-5).unwrap();
        assert_eq!(mean, vec![2.5]);
        assert!((var[0] - 1.25).abs() < 1e-12);
        let v = g.value(y);
        let m: f64 = v.iter().sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12);
        let s2: f64 = v.iter().map(|u| u * u).sum::<f64>() / 4.0;
        assert!((s2 - 1.0).abs() < 1e-4); // eps keeps it slightly under one
    }

    #[test]
    fn affine_parameters_shift_and_scale() {
        let mut g = Graph::new();
        let x = g.leaf(
            TensorData::new(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap(),
            false,
        );
        let ga = g.leaf(TensorData::new(vec![1], vec![2.0]).unwrap(), false);
        let be = g.leaf(TensorData::new(vec![1], vec![10.0]).unwrap(), false);
        let (y, _, _) = batchnorm2d_train(&mut g, x, ga, be, 1e-5).unwrap();
        let v = g.value(y);
        let m: f64 = v.iter().sum::<f64>() / 4.0;
        assert!((m - 10.0).abs() < 1e-12);
    }

    #[test]
    fn train_gradient_of_sum_is_near_zero() {
        // sum(batchnorm(x)) == n*beta exactly, so dx must vanish.
        let mut g = Graph::new();
        let x = g.leaf(
            TensorData::new(vec![1, 1, 2, 2], vec![0.4, -1.0, 2.2, 5.0]).unwrap(),
            true,
        );
        let ga = g.leaf(TensorData::new(vec![1], vec![1.5]).unwrap(), false);
        let be = g.leaf(TensorData::new(vec![1], vec![0.3]).unwrap(), false);
        let (y, _, _) = batchnorm2d_train(&mut g, x, ga, be, 1e-5).unwrap();
        let s = sum_all(&mut g, y);
        g.backward(s).unwrap();
        for &d in g.grad(x).unwrap() {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_uses_supplied_statistics() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::new(vec![1, 1, 1, 2], vec![5.0, 7.0]).unwrap(), false);
        let ga = g.leaf(TensorData::new(vec![1], vec![1.0]).unwrap(), false);
        let be = g.leaf(TensorData::new(vec![1], vec![0.0]).unwrap(), false);
        let y = batchnorm2d_eval(&mut g, x, ga, be, &[5.0], &[4.0], 0.0).unwrap();
        let v = g.value(y);
        assert!((v[0] - 0.0).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        update_running_stats(&mut rm, &mut rv, &[10.0], &[5.0], 0.1);
        assert!((rm[0] - 1.0).abs() < 1e-12);
        assert!((rv[0] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn rejects_single_value_batch() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::zeros(&[1, 2, 1, 1]), false);
        let ga = g.leaf(TensorData::zeros(&[2]), false);
        let be = g.leaf(TensorData::zeros(&[2]), false);
        assert!(matches!(
            batchnorm2d_train(&mut g, x, ga, be, 1e-5),
            Err(Error::Usage(_))
        ));
    }
}
