//! Phase attention: intra-phase channel self-attention on the main phase and
//! inter-phase recalibration of the complementary phase.
//!
//! Both mechanisms work on per-item feature maps flattened to [C, H*W] row
//! vectors, so channel affinities are C x C regardless of spatial extent.

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::ops;

fn flatten_cx(g: &mut Graph, x: TensorId) -> Result<TensorId> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::dim(format!(
            "attention expects per-item [C,H,W] maps, got {s:?}"
        )));
    }
    ops::reshape(g, x, vec![s[0], s[1] * s[2]])
}

/// Row-stochastic channel affinity of a flattened [C, N] feature map:
/// softmax over each row of the Gram matrix.
pub fn self_attention_weights(g: &mut Graph, pflat: TensorId) -> Result<TensorId> {
    let s = g.shape(pflat).to_vec();
    if s.len() != 2 {
        return Err(Error::dim(format!("expected [C, N] features, got {s:?}")));
    }
    let pt = ops::transpose2d(g, pflat)?;
    let gram = ops::matmul(g, pflat, pt)?;
    let m = ops::softmax_axis(g, gram, 1)?;
    #[cfg(debug_assertions)]
    {
        let c = s[0];
        let v = g.value(m);
        for r in 0..c {
            let sum: f64 = v[r * c..(r + 1) * c].iter().sum();
            debug_assert!(
                (sum - 1.0).abs() < 1e-6,
                "affinity row {r} sums to {sum}, not 1"
            );
        }
    }
    Ok(m)
}

/// Intra-phase attention on one item: mix the convolved features by channel
/// affinity and add the original map back.
///
/// `p` is the raw [C,H,W] feature map, `p_conv` its 3x3-convolved companion.
pub fn intra_phase_attend(g: &mut Graph, p: TensorId, p_conv: TensorId) -> Result<TensorId> {
    let shape = g.shape(p).to_vec();
    if g.shape(p) != g.shape(p_conv) {
        return Err(Error::dim(format!(
            "raw {:?} and convolved {:?} maps differ",
            g.shape(p),
            g.shape(p_conv)
        )));
    }
    let pflat = flatten_cx(g, p_conv)?;
    let m = self_attention_weights(g, pflat)?;
    let mt = ops::transpose2d(g, m)?;
    let mixed = ops::matmul(g, mt, pflat)?;
    let mixed3 = ops::reshape(g, mixed, shape)?;
    ops::add(g, mixed3, p)
}

/// Per-channel recalibration gains from the cross-phase affinity of two
/// flattened [C, N] maps. The affinity is normalised column-wise, each row
/// is summed and squashed through a sigmoid. `negate` flips the sign of the
/// row sums before the sigmoid.
pub fn cross_phase_scales(
    g: &mut Graph,
    aflat: TensorId,
    pflat: TensorId,
    negate: bool,
) -> Result<TensorId> {
    let (sa, sp) = (g.shape(aflat).to_vec(), g.shape(pflat).to_vec());
    if sa.len() != 2 || sp.len() != 2 || sa != sp {
        return Err(Error::dim(format!(
            "cross-phase maps must share [C, N] shape, got {sa:?} and {sp:?}"
        )));
    }
    let pt = ops::transpose2d(g, pflat)?;
    let k = ops::matmul(g, aflat, pt)?;
    let x = ops::softmax_axis(g, k, 0)?;
    #[cfg(debug_assertions)]
    {
        let c = sa[0];
        let v = g.value(x);
        for col in 0..c {
            let sum: f64 = (0..c).map(|r| v[r * c + col]).sum();
            debug_assert!(
                (sum - 1.0).abs() < 1e-6,
                "cross affinity column {col} sums to {sum}, not 1"
            );
        }
    }
    let mut rows = ops::sum_axis(g, x, 1)?;
    if negate {
        rows = ops::scale(g, rows, -1.0);
    }
    Ok(ops::sigmoid(g, rows))
}

/// Inter-phase attention on one item: scale each channel of the raw map `a`
/// by one plus its cross-phase gain.
pub fn inter_phase_attend(
    g: &mut Graph,
    a: TensorId,
    a_conv: TensorId,
    p_conv: TensorId,
    negate: bool,
) -> Result<TensorId> {
    if g.shape(a) != g.shape(a_conv) || g.shape(a) != g.shape(p_conv) {
        return Err(Error::dim(format!(
            "inter-phase maps must agree: {:?}, {:?}, {:?}",
            g.shape(a),
            g.shape(a_conv),
            g.shape(p_conv)
        )));
    }
    let aflat = flatten_cx(g, a_conv)?;
    let pflat = flatten_cx(g, p_conv)?;
    let s = cross_phase_scales(g, aflat, pflat, negate)?;
    ops::channel_scale_apply(g, a, s)
}

/// Fuse a batch of portal-venous and arterial feature maps.
///
/// Each phase is first passed through its own plain 3x3 convolution. Per
/// item, the portal-venous map receives intra-phase self-attention and the
/// arterial map is recalibrated against it; the two results are concatenated
/// along channels, doubling the width.
#[allow(clippy::too_many_arguments)]
pub fn pa_fuse(
    g: &mut Graph,
    pv: TensorId,
    art: TensorId,
    conv_pv_w: TensorId,
    conv_pv_b: TensorId,
    conv_art_w: TensorId,
    conv_art_b: TensorId,
    negate: bool,
) -> Result<TensorId> {
    let s = g.shape(pv).to_vec();
    if s.len() != 4 {
        return Err(Error::dim(format!("phase fusion expects rank 4, got {s:?}")));
    }
    if g.shape(art) != s.as_slice() {
        return Err(Error::dim(format!(
            "phase maps differ: {:?} vs {:?}",
            s,
            g.shape(art)
        )));
    }
    let pv_conv = ops::conv2d(g, pv, conv_pv_w, conv_pv_b, 1, 1)?;
    let art_conv = ops::conv2d(g, art, conv_art_w, conv_art_b, 1, 1)?;
    let batch = s[0];
    let mut intra = Vec::with_capacity(batch);
    let mut inter = Vec::with_capacity(batch);
    for bi in 0..batch {
        let p = ops::select_batch(g, pv, bi)?;
        let pc = ops::select_batch(g, pv_conv, bi)?;
        let a = ops::select_batch(g, art, bi)?;
        let ac = ops::select_batch(g, art_conv, bi)?;
        intra.push(intra_phase_attend(g, p, pc)?);
        inter.push(inter_phase_attend(g, a, ac, pc, negate)?);
    }
    let pv_out = ops::stack_batch(g, &intra)?;
    let art_out = ops::stack_batch(g, &inter)?;
    ops::concat_channels(g, &[pv_out, art_out])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck;
    use crate::graph::TensorData;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorData {
        let n: usize = shape.iter().product();
        TensorData::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn affinity_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let t = random_tensor(&mut rng, &[4, 9]);
            let mut g = Graph::new();
            let p = g.leaf(t, false);
            let m = self_attention_weights(&mut g, p).unwrap();
            assert_eq!(g.shape(m), &[4, 4]);
            for r in 0..4 {
                let s: f64 = g.value(m)[r * 4..(r + 1) * 4].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_affinity_columns_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_tensor(&mut rng, &[3, 8]);
        let p = random_tensor(&mut rng, &[3, 8]);
        let mut g = Graph::new();
        let ta = g.leaf(a, false);
        let tp = g.leaf(p, false);
        let pt = ops::transpose2d(&mut g, tp).unwrap();
        let k = ops::matmul(&mut g, ta, pt).unwrap();
        let x = ops::softmax_axis(&mut g, k, 0).unwrap();
        for c in 0..3 {
            let s: f64 = (0..3).map(|r| g.value(x)[r * 3 + c]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_cross_affinity_gives_sigmoid_of_one() {
        // A zero arterial map makes every affinity column uniform, so each
        // row of the normalised affinity sums to exactly one.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_tensor(&mut rng, &[5, 6]);
        let zeros = TensorData::zeros(&[5, 6]);
        let mut g = Graph::new();
        let ta = g.leaf(zeros, false);
        let tp = g.leaf(p, false);
        let s = cross_phase_scales(&mut g, ta, tp, false).unwrap();
        for &v in g.value(s) {
            assert!((v - 0.731_058_578_630_004_9).abs() < 1e-12);
        }
        let sneg = cross_phase_scales(&mut g, ta, tp, true).unwrap();
        for &v in g.value(sneg) {
            assert!((v - 0.268_941_421_369_995_1).abs() < 1e-12);
        }
    }

    #[test]
    fn recalibration_gains_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_tensor(&mut rng, &[4, 12]);
            let p = random_tensor(&mut rng, &[4, 12]);
            let mut g = Graph::new();
            let ta = g.leaf(a, false);
            let tp = g.leaf(p, false);
            let s = cross_phase_scales(&mut g, ta, tp, false).unwrap();
            for &v in g.value(s) {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn intra_attention_is_channel_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = 5;
        let plane = 6;
        let p = random_tensor(&mut rng, &[c, 2, 3]);
        let pc = random_tensor(&mut rng, &[c, 2, 3]);
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(&mut rng);

        let permute = |t: &TensorData| {
            let mut d = vec![0.0; t.data.len()];
            for (dst, &src) in perm.iter().enumerate() {
                d[dst * plane..(dst + 1) * plane]
                    .copy_from_slice(&t.data[src * plane..(src + 1) * plane]);
            }
            TensorData::new(t.shape.clone(), d).unwrap()
        };

        let mut g = Graph::new();
        let tp = g.leaf(p.clone(), false);
        let tpc = g.leaf(pc.clone(), false);
        let base = intra_phase_attend(&mut g, tp, tpc).unwrap();
        let base_v = g.value(base).to_vec();

        let tp2 = g.leaf(permute(&p), false);
        let tpc2 = g.leaf(permute(&pc), false);
        let permuted = intra_phase_attend(&mut g, tp2, tpc2).unwrap();
        let perm_v = g.value(permuted);

        for (dst, &src) in perm.iter().enumerate() {
            for i in 0..plane {
                assert!(
                    (perm_v[dst * plane + i] - base_v[src * plane + i]).abs() < 1e-10,
                    "channel {dst} diverged after permutation"
                );
            }
        }
    }

    #[test]
    fn fused_output_doubles_channels_and_matches_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (b, c, hw) = (2, 3, 4);
        let pv = random_tensor(&mut rng, &[b, c, hw, hw]);
        let art = random_tensor(&mut rng, &[b, c, hw, hw]);
        let wp = random_tensor(&mut rng, &[c, c, 3, 3]);
        let bp = random_tensor(&mut rng, &[c]);
        let wa = random_tensor(&mut rng, &[c, c, 3, 3]);
        let ba = random_tensor(&mut rng, &[c]);
        let mut g = Graph::new();
        let ids: Vec<_> = [&pv, &art, &wp, &bp, &wa, &ba]
            .iter()
            .map(|t| g.leaf((*t).clone(), false))
            .collect();
        let fused = pa_fuse(
            &mut g, ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], false,
        )
        .unwrap();
        assert_eq!(g.shape(fused), &[b, 2 * c, hw, hw]);

        // First half is the intra-attended portal-venous stream.
        let pvc = ops::conv2d(&mut g, ids[0], ids[2], ids[3], 1, 1).unwrap();
        let p0 = ops::select_batch(&mut g, ids[0], 0).unwrap();
        let pc0 = ops::select_batch(&mut g, pvc, 0).unwrap();
        let want = intra_phase_attend(&mut g, p0, pc0).unwrap();
        let plane = c * hw * hw;
        let got = &g.value(fused)[..plane];
        for (u, v) in got.iter().zip(g.value(want)) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_gradients_agree_with_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (c, hw) = (3, 4);
        let inputs = vec![
            random_tensor(&mut rng, &[1, c, hw, hw]),
            random_tensor(&mut rng, &[1, c, hw, hw]),
            random_tensor(&mut rng, &[c, c, 3, 3]),
            random_tensor(&mut rng, &[c]),
            random_tensor(&mut rng, &[c, c, 3, 3]),
            random_tensor(&mut rng, &[c]),
        ];
        // Reduce through a fixed random weighting so every parameter's
        // gradient stays well above finite-difference rounding noise; a plain
        // mean leaves near-null directions in the softmax/sigmoid paths.
        let probe = random_tensor(&mut rng, &[1, 2 * c, hw, hw]);
        let r = gradcheck(&inputs, 1e-5, |g, ids| {
            let f = pa_fuse(g, ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], false)?;
            let w = g.constant(probe.clone());
            let weighted = ops::mul(g, f, w)?;
            Ok(ops::mean_all(g, weighted))
        })
        .unwrap();
        assert!(r.passes(1e-4), "max err {} at {:?}", r.max_rel_err, r.worst);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(TensorData::zeros(&[1, 2, 4, 4]), false);
        let b = g.leaf(TensorData::zeros(&[1, 3, 4, 4]), false);
        let w = g.leaf(TensorData::zeros(&[2, 2, 3, 3]), false);
        let bias = g.leaf(TensorData::zeros(&[2]), false);
        assert!(matches!(
            pa_fuse(&mut g, a, b, w, bias, w, bias, false),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn identical_channels_give_uniform_affinity() {
        // When every channel map is the same row, the Gram matrix is constant
        // and each softmax row flattens to 1/C.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let row: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = 4;
        let data: Vec<f64> = (0..c).flat_map(|_| row.clone()).collect();
        let mut g = Graph::new();
        let p = g.leaf(TensorData::new(vec![c, 6], data).unwrap(), false);
        let m = self_attention_weights(&mut g, p).unwrap();
        for &v in g.value(m) {
            assert!((v - 1.0 / c as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_affinity_is_one_and_doubles_the_map() {
        // C = 1 forces the softmax of a 1-vector to [1], so mixing adds the
        // map to itself.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let p = random_tensor(&mut rng, &[1, 3, 3]);
        let mut g = Graph::new();
        let tp = g.leaf(p.clone(), false);
        let out = intra_phase_attend(&mut g, tp, tp).unwrap();
        for (o, i) in g.value(out).iter().zip(&p.data) {
            assert!((o - 2.0 * i).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_softmax_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (c, n) = (3, 4);
        let p = random_tensor(&mut rng, &[c, n]);
        let mut g = Graph::new();
        let tp = g.leaf(p.clone(), false);
        let m = self_attention_weights(&mut g, tp).unwrap();

        for i in 0..c {
            let row: Vec<f64> = (0..c)
                .map(|j| (0..n).map(|k| p.data[i * n + k] * p.data[j * n + k]).sum())
                .collect();
            let exps: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            let denom: f64 = exps.iter().sum();
            for j in 0..c {
                let want = exps[j] / denom;
                let got = g.value(m)[i * c + j];
                assert!((got - want).abs() < 1e-12, "({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn cross_gains_match_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (c, n) = (3, 5);
        let a = random_tensor(&mut rng, &[c, n]);
        let p = random_tensor(&mut rng, &[c, n]);
        let mut g = Graph::new();
        let ta = g.leaf(a.clone(), false);
        let tp = g.leaf(p.clone(), false);
        let s = cross_phase_scales(&mut g, ta, tp, false).unwrap();

        let mut k = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                k[i * c + j] = (0..n).map(|t| a.data[i * n + t] * p.data[j * n + t]).sum();
            }
        }
        for i in 0..c {
            let mut total = 0.0;
            for j in 0..c {
                let col: Vec<f64> = (0..c).map(|r| k[r * c + j].exp()).collect();
                let denom: f64 = col.iter().sum();
                total += col[i] / denom;
            }
            let want = 1.0 / (1.0 + (-total).exp());
            let got = g.value(s)[i];
            assert!((got - want).abs() < 1e-12, "gain {i}: {got} vs {want}");
        }
    }

    #[test]
    fn sigmoid_of_row_sums_behaves_like_the_logistic() {
        // The gain head is sigma of a row sum: a zero row maps to exactly
        // one half, and growing any row strictly grows its gain.
        let x0 = TensorData::new(vec![2, 3], vec![0.0, 0.0, 0.0, 0.4, -0.1, 0.2]).unwrap();
        let mut g = Graph::new();
        let t = g.leaf(x0, false);
        let rows = ops::sum_axis(&mut g, t, 1).unwrap();
        let s = ops::sigmoid(&mut g, rows);
        assert_eq!(g.value(s)[0], 0.5);
        let low = g.value(s)[1];

        let x1 = TensorData::new(vec![2, 3], vec![0.0, 0.0, 0.0, 0.4, 0.3, 0.2]).unwrap();
        let t1 = g.leaf(x1, false);
        let rows1 = ops::sum_axis(&mut g, t1, 1).unwrap();
        let s1 = ops::sigmoid(&mut g, rows1);
        assert!(g.value(s1)[1] > low, "gain must grow with its row sum");
    }

    #[test]
    fn spatial_permutation_leaves_statistics_unchanged() {
        // Inner products are sums over spatial positions, so shuffling the
        // positions identically in both phases cannot move the affinities or
        // the gains.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (c, n) = (4, 9);
        let a = random_tensor(&mut rng, &[c, n]);
        let p = random_tensor(&mut rng, &[c, n]);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permute = |t: &TensorData| {
            let mut d = vec![0.0; t.data.len()];
            for ch in 0..c {
                for (dst, &src) in perm.iter().enumerate() {
                    d[ch * n + dst] = t.data[ch * n + src];
                }
            }
            TensorData::new(t.shape.clone(), d).unwrap()
        };

        let mut g = Graph::new();
        let tp = g.leaf(p.clone(), false);
        let ta = g.leaf(a.clone(), false);
        let m = self_attention_weights(&mut g, tp).unwrap();
        let s = cross_phase_scales(&mut g, ta, tp, false).unwrap();

        let tp2 = g.leaf(permute(&p), false);
        let ta2 = g.leaf(permute(&a), false);
        let m2 = self_attention_weights(&mut g, tp2).unwrap();
        let s2 = cross_phase_scales(&mut g, ta2, tp2, false).unwrap();

        for (u, v) in g.value(m).iter().zip(g.value(m2)) {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in g.value(s).iter().zip(g.value(s2)) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn recalibrated_channel_norm_scales_with_its_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (c, h, w) = (3, 4, 4);
        let a = random_tensor(&mut rng, &[c, h, w]);
        let ac = random_tensor(&mut rng, &[c, h, w]);
        let pc = random_tensor(&mut rng, &[c, h, w]);
        let mut g = Graph::new();
        let ta = g.leaf(a.clone(), false);
        let tac = g.leaf(ac.clone(), false);
        let tpc = g.leaf(pc.clone(), false);
        let out = inter_phase_attend(&mut g, ta, tac, tpc, false).unwrap();

        let fa = ops::reshape(&mut g, tac, vec![c, h * w]).unwrap();
        let fp = ops::reshape(&mut g, tpc, vec![c, h * w]).unwrap();
        let s = cross_phase_scales(&mut g, fa, fp, false).unwrap();

        let plane = h * w;
        for ch in 0..c {
            let norm_in: f64 = a.data[ch * plane..(ch + 1) * plane]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let norm_out: f64 = g.value(out)[ch * plane..(ch + 1) * plane]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let want = (1.0 + g.value(s)[ch]) * norm_in;
            assert!(
                (norm_out - want).abs() < 1e-12 * want.max(1.0),
                "channel {ch}: {norm_out} vs {want}"
            );
        }
    }

    #[test]
    fn silent_arterial_phase_stays_silent() {
        // With a zero arterial input and zero arterial conv bias the
        // recalibrated half must be exactly zero: gains multiply a zero map.
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (b, c, hw) = (2, 3, 4);
        let pv = random_tensor(&mut rng, &[b, c, hw, hw]);
        let wp = random_tensor(&mut rng, &[c, c, 3, 3]);
        let bp = random_tensor(&mut rng, &[c]);
        let wa = random_tensor(&mut rng, &[c, c, 3, 3]);
        let mut g = Graph::new();
        let tpv = g.leaf(pv, false);
        let tart = g.leaf(TensorData::zeros(&[b, c, hw, hw]), false);
        let twp = g.leaf(wp, false);
        let tbp = g.leaf(bp, false);
        let twa = g.leaf(wa, false);
        let tba = g.leaf(TensorData::zeros(&[c]), false);
        let fused = pa_fuse(&mut g, tpv, tart, twp, tbp, twa, tba, false).unwrap();
        let plane = c * hw * hw;
        let v = g.value(fused);
        for bi in 0..b {
            let item = &v[bi * 2 * plane..(bi + 1) * 2 * plane];
            for &x in &item[plane..] {
                assert_eq!(x, 0.0, "arterial half leaked signal");
            }
        }
    }
}
