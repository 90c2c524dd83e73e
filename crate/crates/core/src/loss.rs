//! Binary cross-entropy with optional boundary-emphasising voxel weights.
//!
//! The weight map is derived from a softened tumour mask: a 3x3x3 mean
//! filter with zero padding turns the hard mask into a boundary indicator.
//! Tumour voxels near the boundary (soft value well below one) gain weight,
//! background voxels near tumour gain a little, and the padding makes the
//! first and last slice of a lesion read as boundary too.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};

/// Weight-map coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryWeights {
    pub alpha: f64,
    pub beta: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for BoundaryWeights {
    fn default() -> Self {
        BoundaryWeights {
            alpha: 1.0,
            beta: 0.5,
            w1: 0.8,
            w2: 0.2,
        }
    }
}

/// 3x3x3 mean filter over a binary mask stored [Z, Y, X], zero padded.
pub fn soften_mask(mask: &[u8], dims: [usize; 3]) -> Result<Vec<f64>> {
    let [z, y, x] = dims;
    if mask.len() != z * y * x {
        return Err(Error::dim(format!(
            "mask of {} voxels does not match dims {dims:?}",
            mask.len()
        )));
    }
    let idx = |zz: usize, yy: usize, xx: usize| (zz * y + yy) * x + xx;
    let mut out = vec![0.0; mask.len()];
    for zz in 0..z {
        for yy in 0..y {
            for xx in 0..x {
                let mut s = 0.0;
                for dz in -1i64..=1 {
                    let nz = zz as i64 + dz;
                    if nz < 0 || nz >= z as i64 {
                        continue;
                    }
                    for dy in -1i64..=1 {
                        let ny = yy as i64 + dy;
                        if ny < 0 || ny >= y as i64 {
                            continue;
                        }
                        for dx in -1i64..=1 {
                            let nx = xx as i64 + dx;
                            if nx < 0 || nx >= x as i64 {
                                continue;
                            }
                            s += mask[idx(nz as usize, ny as usize, nx as usize)] as f64;
                        }
                    }
                }
                out[idx(zz, yy, xx)] = s / 27.0;
            }
        }
    }
    Ok(out)
}

/// Per-voxel loss weights from a hard mask and its softened companion.
///
/// Tumour voxels get `-alpha*v + alpha + w1`, background `beta*v + w2`.
pub fn boundary_weight_map(
    mask: &[u8],
    soft: &[f64],
    cfg: BoundaryWeights,
) -> Result<Vec<f64>> {
    if mask.len() != soft.len() {
        return Err(Error::dim(format!(
            "mask ({}) and softened mask ({}) lengths differ",
            mask.len(),
            soft.len()
        )));
    }
    Ok(mask
        .iter()
        .zip(soft)
        .map(|(&m, &v)| {
            if m != 0 {
                -cfg.alpha * v + cfg.alpha + cfg.w1
            } else {
                cfg.beta * v + cfg.w2
            }
        })
        .collect())
}

const PROB_FLOOR: f64 = 1e-7;

/// Mean weighted binary cross-entropy of predicted foreground probabilities
/// against a hard target, as one fused graph operation.
///
/// Probabilities are clamped to [1e-7, 1 - 1e-7] before the logarithms; the
/// gradient vanishes where the clamp is active.
pub fn weighted_bce_loss(
    g: &mut Graph,
    probs: TensorId,
    target: &[f64],
    weights: &[f64],
) -> Result<TensorId> {
    let n = g.value(probs).len();
    if target.len() != n || weights.len() != n {
        return Err(Error::dim(format!(
            "loss over {n} predictions got {} targets and {} weights",
            target.len(),
            weights.len()
        )));
    }
    if let Some(t) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::usage(format!("targets must be binary, found {t}")));
    }
    let pd = g.data_rc(probs);
    let inv_n = 1.0 / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let p = pd[i].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let ll = if target[i] == 1.0 { p.ln() } else { (1.0 - p).ln() };
        acc -= weights[i] * ll;
    }
    let loss = acc * inv_n;
    let tgt = target.to_vec();
    let wts = weights.to_vec();
    let rg = g.requires_grad(probs);
    Ok(g.push_op(vec![], vec![loss], rg, move |dout, sink| {
        let go = dout[0];
        sink.add_with(probs, |dp| {
            for i in 0..n {
                let raw = pd[i];
                if raw < PROB_FLOOR || raw > 1.0 - PROB_FLOOR {
                    continue;
                }
                // d/dp of -w*(y ln p + (1-y) ln(1-p)) is w*(p - y)/(p(1-p)).
                dp[i] += go * inv_n * wts[i] * (raw - tgt[i]) / (raw * (1.0 - raw));
            }
        });
    }))
}

/// Unweighted mean binary cross-entropy.
pub fn bce_loss(g: &mut Graph, probs: TensorId, target: &[f64]) -> Result<TensorId> {
    let w = vec![1.0; target.len()];
    weighted_bce_loss(g, probs, target, &w)
}
