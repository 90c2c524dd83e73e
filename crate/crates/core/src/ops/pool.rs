//! Spatial max pooling.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};

/// Max pooling over k x k windows with the given stride, no padding.
/// Ties route the gradient to the first maximum in scan order.
pub fn maxpool2d(g: &mut Graph, x: TensorId, k: usize, stride: usize) -> Result<TensorId> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::dim(format!("max pool expects rank 4, got {s:?}")));
    }
    if k == 0 || stride == 0 {
        return Err(Error::config("pool window and stride must be positive"));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h < k || w < k || (h - k) % stride != 0 || (w - k) % stride != 0 {
        return Err(Error::config(format!(
            "pool window {k} stride {stride} does not tile {h}x{w} input"
        )));
    }
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let xd = g.data_rc(x);
    let mut out = vec![0.0; b * c * ho * wo];
    let mut argmax = vec![0usize; out.len()];
    let mut oi = 0;
    for bc in 0..b * c {
        let plane = &xd[bc * h * w..(bc + 1) * h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ki in 0..k {
                    let row = (oh * stride + ki) * w + ow * stride;
                    for kj in 0..k {
                        let v = plane[row + kj];
                        if v > best {
                            best = v;
                            best_idx = bc * h * w + row + kj;
                        }
                    }
                }
                out[oi] = best;
                argmax[oi] = best_idx;
                oi += 1;
            }
        }
    }
    let rg = g.requires_grad(x);
    Ok(g.push_op(vec![b, c, ho, wo], out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            for (&src, &go) in argmax.iter().zip(dout) {
                dx[src] += go;
            }
        });
    }))
}
