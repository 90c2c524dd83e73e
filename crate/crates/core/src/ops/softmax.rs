//! Softmax along an arbitrary axis.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};

/// Softmax normalisation along `axis`. Every lane along that axis sums to one.
pub fn softmax_axis(g: &mut Graph, x: TensorId, axis: usize) -> Result<TensorId> {
    let s = g.shape(x).to_vec();
    if axis >= s.len() {
        return Err(Error::dim(format!(
            "softmax axis {axis} out of range for shape {s:?}"
        )));
    }
    let outer: usize = s[..axis].iter().product();
    let alen = s[axis];
    let inner: usize = s[axis + 1..].iter().product();
    let xd = g.data_rc(x);
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * alen * inner + i;
            // Shift by the lane maximum so exponentials stay bounded.
            let mut mx = f64::NEG_INFINITY;
            for a in 0..alen {
                mx = mx.max(xd[base + a * inner]);
            }
            let mut z = 0.0;
            for a in 0..alen {
                let e = (xd[base + a * inner] - mx).exp();
                out[base + a * inner] = e;
                z += e;
            }
            for a in 0..alen {
                out[base + a * inner] /= z;
            }
        }
    }
    let yd = out.clone();
    let rg = g.requires_grad(x);
    Ok(g.push_op(s, out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * alen * inner + i;
                    let mut dot = 0.0;
                    for a in 0..alen {
                        let idx = base + a * inner;
                        dot += dout[idx] * yd[idx];
                    }
                    for a in 0..alen {
                        let idx = base + a * inner;
                        dx[idx] += yd[idx] * (dout[idx] - dot);
                    }
                }
            }
        });
    }))
}
