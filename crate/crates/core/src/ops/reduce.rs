//! Reductions to scalars and along single axes.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};

/// Sum of all elements, yielding a scalar.
pub fn sum_all(g: &mut Graph, x: TensorId) -> TensorId {
    let xd = g.data_rc(x);
    let s: f64 = xd.iter().sum();
    let rg = g.requires_grad(x);
    g.push_op(vec![], vec![s], rg, move |dout, sink| {
        let go = dout[0];
        sink.add_with(x, |dx| {
            for d in dx.iter_mut() {
                *d += go;
            }
        });
    })
}

/// Arithmetic mean of all elements, yielding a scalar.
pub fn mean_all(g: &mut Graph, x: TensorId) -> TensorId {
    let xd = g.data_rc(x);
    let n = xd.len() as f64;
    let s: f64 = xd.iter().sum::<f64>() / n;
    let rg = g.requires_grad(x);
    g.push_op(vec![], vec![s], rg, move |dout, sink| {
        let go = dout[0] / n;
        sink.add_with(x, |dx| {
            for d in dx.iter_mut() {
                *d += go;
            }
        });
    })
}

/// Sum along one axis, removing it from the shape.
pub fn sum_axis(g: &mut Graph, x: TensorId, axis: usize) -> Result<TensorId> {
    let s = g.shape(x).to_vec();
    if axis >= s.len() {
        return Err(Error::dim(format!(
            "sum axis {axis} out of range for shape {s:?}"
        )));
    }
    let outer: usize = s[..axis].iter().product();
    let alen = s[axis];
    let inner: usize = s[axis + 1..].iter().product();
    let xd = g.data_rc(x);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for a in 0..alen {
            let base = (o * alen + a) * inner;
            let orow = &mut out[o * inner..(o + 1) * inner];
            for i in 0..inner {
                orow[i] += xd[base + i];
            }
        }
    }
    let mut out_shape = s.clone();
    out_shape.remove(axis);
    let rg = g.requires_grad(x);
    Ok(g.push_op(out_shape, out, rg, move |dout, sink| {
        sink.add_with(x, |dx| {
            for o in 0..outer {
                let grow = &dout[o * inner..(o + 1) * inner];
                for a in 0..alen {
                    let base = (o * alen + a) * inner;
                    for i in 0..inner {
                        dx[base + i] += grow[i];
                    }
                }
            }
        });
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TensorData;

    #[test]
    fn mean_all_value_and_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::new(vec![4], vec![1., 2., 3., 4.]).unwrap(), true);
        let m = mean_all(&mut g, x);
        assert_eq!(g.value(m), &[2.5]);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn sum_axis_rows_and_columns() {
        // [[1,2,3],[4,5,6]]
        let t = TensorData::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(t.clone(), false);
        let rows = sum_axis(&mut g, x, 1).unwrap();
        assert_eq!(g.shape(rows), &[2]);
        assert_eq!(g.value(rows), &[6., 15.]);
        let cols = sum_axis(&mut g, x, 0).unwrap();
        assert_eq!(g.shape(cols), &[3]);
        assert_eq!(g.value(cols), &[5., 7., 9.]);
    }

    #[test]
    fn sum_axis_gradient_broadcasts() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap(), true);
        let r = sum_axis(&mut g, x, 0).unwrap();
        let s = sum_all(&mut g, r);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn sum_axis_rejects_bad_axis() {
        let mut g = Graph::new();
        let x = g.leaf(TensorData::zeros(&[2, 2]), false);
        assert!(matches!(sum_axis(&mut g, x, 2), Err(Error::Dim(_))));
    }
}
