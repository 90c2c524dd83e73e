//! Dense rank-2 products and transposition.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};

/// out[m x n] += a[m x k] * b[k x n]
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m x n] += a[m x k] * b^T, where b is stored [n x k]
pub(crate) fn matmul_acc_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            out[i * n + j] += s;
        }
    }
}

/// out[m x n] += a^T * b, where a is stored [k x m] and b is [k x n]
pub(crate) fn matmul_acc_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(g: &mut Graph, a: TensorId, b: TensorId) -> Result<TensorId> {
    let sa = g.shape(a).to_vec();
    let sb = g.shape(b).to_vec();
    if sa.len() != 2 || sb.len() != 2 {
        return Err(Error::dim(format!(
            "matmul expects rank-2 operands, got {sa:?} and {sb:?}"
        )));
    }
    let (m, k) = (sa[0], sa[1]);
    if sb[0] != k {
        return Err(Error::dim(format!(
            "matmul inner dimensions differ: {sa:?} vs {sb:?}"
        )));
    }
    let n = sb[1];
    let ad = g.data_rc(a);
    let bd = g.data_rc(b);
    let mut out = vec![0.0; m * n];
    matmul_acc(&ad, &bd, m, k, n, &mut out);
    let rg = g.requires_grad(a) || g.requires_grad(b);
    Ok(g.push_op(vec![m, n], out, rg, move |dout, sink| {
        // dA = dC * B^T : [m x k]
        sink.add_with(a, |da| matmul_acc_nt(dout, &bd, m, n, k, da));
        // dB = A^T * dC : [k x n]
        sink.add_with(b, |db| matmul_acc_tn(&ad, dout, k, m, n, db));
    }))
}

/// Transpose of a rank-2 tensor.
pub fn transpose2d(g: &mut Graph, x: TensorId) -> Result<TensorId> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 {
        return Err(Error::dim(format!("transpose expects rank 2, got {s:?}")));
    }
    let (m, n) = (s[0], s[1]);
    let xd = g.data_rc(x);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = xd[i * n + j];
        }
    }
    let rg = g.requires_grad(x);
    Ok(g.push_op(vec![n, m], out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] += dout[j * m + i];
                }
            }
        });
    }))
}
