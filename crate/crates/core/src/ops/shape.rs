//! Views, concatenation and batch packing.

use crate::error::{Error, Result};
use crate::graph::{numel, Graph, TensorId};

/// Reinterpret a tensor under a new shape with the same element count.
/// Storage is shared, not copied.
pub fn reshape(g: &mut Graph, x: TensorId, new_shape: Vec<usize>) -> Result<TensorId> {
    let old = g.shape(x).to_vec();
    if numel(&old) != numel(&new_shape) {
        return Err(Error::dim(format!(
            "reshape from {:?} to {:?} changes element count",
            old, new_shape
        )));
    }
    let data = g.data_rc(x);
    let rg = g.requires_grad(x);
    Ok(g.push_op_rc(new_shape, data, rg, move |dout, sink| {
        sink.add(x, dout);
    }))
}

/// Concatenate rank-4 tensors along the channel axis.
pub fn concat_channels(g: &mut Graph, xs: &[TensorId]) -> Result<TensorId> {
    if xs.is_empty() {
        return Err(Error::usage("concat of zero tensors"));
    }
    let first = g.shape(xs[0]).to_vec();
    if first.len() != 4 {
        return Err(Error::dim(format!(
            "channel concat expects rank-4 inputs, got {first:?}"
        )));
    }
    let (b, h, w) = (first[0], first[2], first[3]);
    let mut channels = Vec::with_capacity(xs.len());
    for &x in xs {
        let s = g.shape(x);
        if s.len() != 4 || s[0] != b || s[2] != h || s[3] != w {
            return Err(Error::dim(format!(
                "channel concat operand {s:?} incompatible with {first:?}"
            )));
        }
        channels.push(s[1]);
    }
    let ctot: usize = channels.iter().sum();
    let plane = h * w;
    let datas: Vec<_> = xs.iter().map(|&x| g.data_rc(x)).collect();
    let mut out = vec![0.0; b * ctot * plane];
    for bi in 0..b {
        let mut coff = 0;
        for (d, &c) in datas.iter().zip(&channels) {
            let src = &d[bi * c * plane..(bi + 1) * c * plane];
            let dst = &mut out[(bi * ctot + coff) * plane..(bi * ctot + coff + c) * plane];
            dst.copy_from_slice(src);
            coff += c;
        }
    }
    let rg = xs.iter().any(|&x| g.requires_grad(x));
    let ids = xs.to_vec();
    Ok(g.push_op(vec![b, ctot, h, w], out, rg, move |dout, sink| {
        let mut coff = 0;
        for (&x, &c) in ids.iter().zip(&channels) {
            let start = coff;
            sink.add_with(x, |dx| {
                for bi in 0..b {
                    let src = &dout[(bi * ctot + start) * plane..(bi * ctot + start + c) * plane];
                    let dst = &mut dx[bi * c * plane..(bi + 1) * c * plane];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            });
            coff += c;
        }
    }))
}

/// Take channels `[start, start+len)` of a rank-4 tensor.
pub fn slice_channels(g: &mut Graph, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::dim(format!("channel slice expects rank 4, got {s:?}")));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if start + len > c || len == 0 {
        return Err(Error::dim(format!(
            "channel slice [{start}, {}) out of range for {c} channels",
            start + len
        )));
    }
    let plane = h * w;
    let xd = g.data_rc(x);
    let mut out = vec![0.0; b * len * plane];
    for bi in 0..b {
        let src = &xd[(bi * c + start) * plane..(bi * c + start + len) * plane];
        out[bi * len * plane..(bi + 1) * len * plane].copy_from_slice(src);
    }
    let rg = g.requires_grad(x);
    Ok(g.push_op(vec![b, len, h, w], out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            for bi in 0..b {
                let dst = &mut dx[(bi * c + start) * plane..(bi * c + start + len) * plane];
                let src = &dout[bi * len * plane..(bi + 1) * len * plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += v;
                }
            }
        });
    }))
}

/// Extract one batch item of a rank-4 tensor as [C, H, W].
pub fn select_batch(g: &mut Graph, x: TensorId, item: usize) -> Result<TensorId> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::dim(format!("batch select expects rank 4, got {s:?}")));
    }
    if item >= s[0] {
        return Err(Error::dim(format!(
            "batch item {item} out of range for batch {}",
            s[0]
        )));
    }
    let sz = s[1] * s[2] * s[3];
    let xd = g.data_rc(x);
    let out = xd[item * sz..(item + 1) * sz].to_vec();
    let rg = g.requires_grad(x);
    Ok(g.push_op(vec![s[1], s[2], s[3]], out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            let dst = &mut dx[item * sz..(item + 1) * sz];
            for (d, &v) in dst.iter_mut().zip(dout) {
                *d += v;
            }
        });
    }))
}

/// Pack rank-3 tensors of identical shape into a rank-4 batch.
pub fn stack_batch(g: &mut Graph, xs: &[TensorId]) -> Result<TensorId> {
    if xs.is_empty() {
        return Err(Error::usage("stack of zero tensors"));
    }
    let first = g.shape(xs[0]).to_vec();
    if first.len() != 3 {
        return Err(Error::dim(format!(
            "batch stack expects rank-3 inputs, got {first:?}"
        )));
    }
    for &x in xs {
        if g.shape(x) != first.as_slice() {
            return Err(Error::dim(format!(
                "batch stack operand {:?} differs from {first:?}",
                g.shape(x)
            )));
        }
    }
    let sz = numel(&first);
    let mut out = vec![0.0; xs.len() * sz];
    for (i, &x) in xs.iter().enumerate() {
        out[i * sz..(i + 1) * sz].copy_from_slice(g.value(x));
    }
    let rg = xs.iter().any(|&x| g.requires_grad(x));
    let ids = xs.to_vec();
    let shape = vec![xs.len(), first[0], first[1], first[2]];
    Ok(g.push_op(shape, out, rg, move |dout, sink| {
        for (i, &x) in ids.iter().enumerate() {
            sink.add(x, &dout[i * sz..(i + 1) * sz]);
        }
    }))
}
