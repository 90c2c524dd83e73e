use super::*;
use crate::graph::TensorData;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn random_patch(rng: &mut ChaCha8Rng, b: usize, c: usize, p: usize) -> TensorData {
    TensorData::new(
        vec![b, c, p, p],
        (0..b * c * p * p).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

fn all_fusions() -> [Fusion; 5] {
    [Fusion::Single, Fusion::Dmp, Fusion::Mpf, Fusion::Msf, Fusion::PaMsf]
}

#[test]
fn tiny_parameter_count_matches_closed_form_for_every_strategy() {
    for f in all_fusions() {
        let cfg = NetworkConfig::tiny(f);
        let m = build_network(&cfg, 1).unwrap();
        assert_eq!(
            m.params.scalar_count(),
            cfg.expected_param_count(),
            "strategy {}",
            f.name()
        );
    }
}

#[test]
fn paper_parameter_count_matches_closed_form() {
    let cfg = NetworkConfig::paper(Fusion::PaMsf);
    let m = build_network(&cfg, 1).unwrap();
    assert_eq!(m.params.scalar_count(), cfg.expected_param_count());
}

#[test]
fn same_seed_builds_identical_parameters() {
    let cfg = NetworkConfig::tiny(Fusion::PaMsf);
    let a = build_network(&cfg, 99).unwrap();
    let b = build_network(&cfg, 99).unwrap();
    for (x, y) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.data, y.data, "group {} differs across builds", x.name);
    }
    let c = build_network(&cfg, 100).unwrap();
    let same = a
        .params
        .iter()
        .zip(c.params.iter())
        .all(|(x, y)| x.data == y.data);
    assert!(!same, "different seeds must change the weights");
}

#[test]
fn group_names_are_unique_and_buffers_shadow_norm_layers() {
    let cfg = NetworkConfig::tiny(Fusion::PaMsf);
    let m = build_network(&cfg, 5).unwrap();
    let names: HashSet<&str> = m.params.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names.len(), m.params.len());
    // Every normalization scale has matching running-stat buffers.
    for p in m.params.iter() {
        if let Some(stem) = p.name.strip_suffix(".bn.g") {
            m.buffers.get(&format!("{stem}.bn.mean")).unwrap();
            m.buffers.get(&format!("{stem}.bn.var")).unwrap();
        }
    }
}

#[test]
fn dmp_registers_the_same_groups_as_a_wide_single() {
    let dmp = build_network(&NetworkConfig::tiny(Fusion::Dmp), 3).unwrap();
    let mut wide = NetworkConfig::tiny(Fusion::Single);
    wide.input_channels = 6;
    let single = build_network(&wide, 3).unwrap();
    let names_a: Vec<&str> = dmp.params.iter().map(|p| p.name.as_str()).collect();
    let names_b: Vec<&str> = single.params.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names_a, names_b);
    for (x, y) in dmp.params.iter().zip(single.params.iter()) {
        assert_eq!(x.shape, y.shape, "group {}", x.name);
    }
}

#[test]
fn tiny_encoder_taps_follow_the_halving_chain() {
    let cfg = NetworkConfig::tiny(Fusion::Single);
    let m = build_network(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let x = g.leaf(random_patch(&mut rng, 1, 3, 64), false);
    let taps = m
        .encoder_stage_outputs(&mut g, &bound, x, Mode::Eval)
        .unwrap();
    let extents: Vec<usize> = taps.iter().map(|&t| g.shape(t)[2]).collect();
    let chans: Vec<usize> = taps.iter().map(|&t| g.shape(t)[1]).collect();
    assert_eq!(extents, vec![64, 32, 16, 8, 4, 2]);
    assert_eq!(chans, vec![8, 16, 32, 32, 32, 32]);
    for w in extents.windows(2).skip(1) {
        assert_eq!(w[1], w[0] / 2);
    }
}

#[test]
fn tiny_forward_yields_normalized_two_class_maps() {
    let cfg = NetworkConfig::tiny(Fusion::Single);
    let m = build_network(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let x = g.leaf(random_patch(&mut rng, 2, 3, 64), false);
    let (out, updates) = m.forward(&mut g, &bound, x, None, Mode::Eval).unwrap();
    assert!(updates.is_empty(), "eval mode must not emit stat updates");
    let p = out.probs();
    assert_eq!(g.shape(p), &[2, 2, 64, 64]);
    let v = g.value(p);
    let plane = 64 * 64;
    for b in 0..2 {
        for i in 0..plane {
            let s = v[b * 2 * plane + i] + v[b * 2 * plane + plane + i];
            assert!((s - 1.0).abs() < 1e-6, "pixel {i} sums to {s}");
        }
    }
}

#[test]
fn train_mode_reports_batch_stats_for_every_norm_layer() {
    let cfg = NetworkConfig::tiny(Fusion::Single);
    let mut m = build_network(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let x = g.leaf(random_patch(&mut rng, 2, 3, 64), false);
    let (_, updates) = m.forward(&mut g, &bound, x, None, Mode::Train).unwrap();
    let norm_layers = m
        .params
        .iter()
        .filter(|p| p.name.ends_with(".bn.g"))
        .count();
    assert_eq!(updates.len(), norm_layers);
    let before = m.buffers.get("enc.conv1_1.bn.mean").unwrap().data.clone();
    m.apply_bn_updates(&updates).unwrap();
    let after = m.buffers.get("enc.conv1_1.bn.mean").unwrap().data.clone();
    assert_ne!(before, after, "running stats must move after folding");
}

#[test]
fn single_strategy_ignores_the_second_phase() {
    let cfg = NetworkConfig::tiny(Fusion::Single);
    let m = build_network(&cfg, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pv = random_patch(&mut rng, 1, 3, 64);
    let art = random_patch(&mut rng, 1, 3, 64);

    let mut g1 = Graph::new();
    let b1 = m.bind(&mut g1, false);
    let x1 = g1.leaf(pv.clone(), false);
    let (o1, _) = m.forward(&mut g1, &b1, x1, None, Mode::Eval).unwrap();
    let v1 = g1.value(o1.probs()).to_vec();

    let mut g2 = Graph::new();
    let b2 = m.bind(&mut g2, false);
    let x2 = g2.leaf(pv, false);
    let a2 = g2.leaf(art, false);
    let (o2, _) = m.forward(&mut g2, &b2, x2, Some(a2), Mode::Eval).unwrap();
    assert_eq!(v1, g2.value(o2.probs()), "second phase must be ignored");
}

#[test]
fn multi_phase_without_second_patch_is_a_usage_error() {
    for f in [Fusion::Dmp, Fusion::Mpf, Fusion::Msf, Fusion::PaMsf] {
        let m = build_network(&NetworkConfig::tiny(f), 17).unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let c = m.config.phase_channels();
        let x = g.leaf(TensorData::zeros(&[1, c, 64, 64]), false);
        assert!(
            matches!(
                m.forward(&mut g, &bound, x, None, Mode::Eval),
                Err(Error::Usage(_))
            ),
            "strategy {}",
            f.name()
        );
    }
}

#[test]
fn wrong_patch_geometry_is_a_dimension_error() {
    let m = build_network(&NetworkConfig::tiny(Fusion::Single), 19).unwrap();
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let x = g.leaf(TensorData::zeros(&[1, 3, 32, 32]), false);
    assert!(matches!(
        m.forward(&mut g, &bound, x, None, Mode::Eval),
        Err(Error::Dim(_))
    ));
}

#[test]
fn merge_averages_and_is_symmetric() {
    let mut g = Graph::new();
    let a = g.leaf(
        TensorData::new(vec![1, 2, 1, 1], vec![0.9, 0.1]).unwrap(),
        false,
    );
    let b = g.leaf(
        TensorData::new(vec![1, 2, 1, 1], vec![0.5, 0.5]).unwrap(),
        false,
    );
    let ab = mpf_merge(&mut g, a, b).unwrap();
    assert_eq!(g.value(ab), &[0.7, 0.3]);
    let ba = mpf_merge(&mut g, b, a).unwrap();
    assert_eq!(g.value(ab), g.value(ba), "merging must be symmetric");
    let aa = mpf_merge(&mut g, a, a).unwrap();
    assert_eq!(g.value(aa), &[0.9, 0.1]);
    let s: f64 = g.value(ab).iter().sum();
    assert!((s - 1.0).abs() < 1e-9);
}

#[test]
fn output_merging_strategy_decodes_each_phase_and_averages() {
    let cfg = NetworkConfig::tiny(Fusion::Mpf);
    let m = build_network(&cfg, 23).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let pv = g.leaf(random_patch(&mut rng, 1, 3, 64), false);
    let art = g.leaf(random_patch(&mut rng, 1, 3, 64), false);
    let (out, _) = m.forward(&mut g, &bound, pv, Some(art), Mode::Eval).unwrap();
    match out {
        Output::Dual { pv, art, merged } => {
            let p = g.value(pv).to_vec();
            let q = g.value(art).to_vec();
            let mg = g.value(merged);
            for ((x, y), z) in p.iter().zip(&q).zip(mg) {
                assert!((0.5 * (x + y) - z).abs() < 1e-12);
            }
            assert_ne!(p, q, "independent encoders should disagree at init");
        }
        Output::Single(_) => panic!("expected a dual output"),
    }
}

#[test]
fn feature_concat_fusion_is_exactly_concat() {
    let cfg = NetworkConfig::tiny(Fusion::Msf);
    let m = build_network(&cfg, 29).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let c = 16;
    let pv = g.leaf(random_patch(&mut rng, 1, c, 8), false);
    let art = g.leaf(random_patch(&mut rng, 1, c, 8), false);
    let fused = fuse_stage(&mut g, &m, &bound, pv, art, 1).unwrap();
    assert_eq!(g.shape(fused), &[1, 2 * c, 8, 8]);
    let front = crate::ops::slice_channels(&mut g, fused, 0, c).unwrap();
    assert_eq!(
        g.value(front),
        g.value(pv),
        "first half must be the main phase bit-for-bit"
    );
}

#[test]
fn attention_fusion_keeps_a_silent_second_phase_silent() {
    let cfg = NetworkConfig::tiny(Fusion::PaMsf);
    let m = build_network(&cfg, 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let c = m.config.stage_channels[2];
    let pv = g.leaf(random_patch(&mut rng, 1, c, 8), false);
    let art = g.leaf(TensorData::zeros(&[1, c, 8, 8]), false);
    // Freshly built attention conv biases are zero, so a zero second phase
    // cannot generate signal.
    let fused = fuse_stage(&mut g, &m, &bound, pv, art, 2).unwrap();
    let plane = 8 * 8;
    for &v in &g.value(fused)[c * plane..] {
        assert_eq!(v, 0.0);
    }
}

#[test]
fn per_level_fusion_is_rejected_under_other_strategies() {
    for f in [Fusion::Single, Fusion::Dmp, Fusion::Mpf] {
        let m = build_network(&NetworkConfig::tiny(f), 37).unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let a = g.leaf(TensorData::zeros(&[1, 8, 8, 8]), false);
        assert!(
            matches!(
                fuse_stage(&mut g, &m, &bound, a, a, 0),
                Err(Error::Usage(_))
            ),
            "strategy {}",
            f.name()
        );
    }
}

#[test]
fn traced_forward_reports_stream_and_head_shapes() {
    let cfg = NetworkConfig::tiny(Fusion::PaMsf);
    let m = build_network(&cfg, 41).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let pv = g.leaf(random_patch(&mut rng, 1, 3, 64), false);
    let art = g.leaf(random_patch(&mut rng, 1, 3, 64), false);
    let (out, _, trace) = m
        .forward_traced(&mut g, &bound, pv, Some(art), Mode::Eval)
        .unwrap();
    let base = cfg.stream_width();
    assert_eq!(trace.tap_shapes.len(), 6);
    for (l, s) in trace.tap_shapes.iter().enumerate() {
        assert_eq!(s[1], 2 * cfg.stage_channels[l], "tap {l} width");
        assert_eq!(s[2], 64 >> l, "tap {l} extent");
    }
    assert_eq!(trace.stream_shapes.len(), 6);
    for s in &trace.stream_shapes {
        assert_eq!(s[1..], [base, 64, 64], "streams end at full resolution");
    }
    assert_eq!(trace.concat_shape[1], 6 * base);
    assert_eq!(trace.logit_shape[1..], [2, 64, 64]);
    assert_eq!(g.shape(out.probs()), &[1, 2, 64, 64]);
}

#[test]
fn every_group_receives_gradient_and_sampled_groups_match_finite_differences() {
    // Full per-group finite differencing lives in the acceptance suite; here
    // every group is checked for nonzero gradient and a spread of groups is
    // spot-checked against central differences.
    let cfg = NetworkConfig::tiny(Fusion::Single);
    let m = build_network(&cfg, 43).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let patch = random_patch(&mut rng, 1, 3, 64);

    let loss_of = |params: &ParamSet| -> f64 {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let x = g.leaf(patch.clone(), false);
        let (out, _) = m.forward(&mut g, &bound, x, None, Mode::Train).unwrap();
        let fg = crate::ops::slice_channels(&mut g, out.probs(), 1, 1).unwrap();
        let l = crate::ops::mean_all(&mut g, fg);
        g.value(l)[0]
    };

    let mut g = Graph::new();
    let bound = m.bind(&mut g, true);
    let x = g.leaf(patch.clone(), false);
    let (out, _) = m.forward(&mut g, &bound, x, None, Mode::Train).unwrap();
    let fg = crate::ops::slice_channels(&mut g, out.probs(), 1, 1).unwrap();
    let l = crate::ops::mean_all(&mut g, fg);
    g.backward(l).unwrap();
    let grads = bound.collect_grads(&g).unwrap();

    let group_names: Vec<String> = m.params.iter().map(|p| p.name.clone()).collect();
    for (name, grad) in group_names.iter().zip(&grads) {
        assert!(
            grad.iter().any(|&v| v != 0.0),
            "group {name} received no gradient at init"
        );
    }

    // Spot-check one element in a handful of groups across the depth of the
    // network, preferring elements whose gradient is large enough for finite
    // differences to resolve.
    let picks = [
        "enc.conv1_1.w",
        "enc.stage3.unit1.conv1.w",
        "enc.stage5.unit2.conv2.bn.g",
        "dec.stream0.w",
        "dec.up5.step1.w",
        "head.conv2.b",
    ];
    let eps = 1e-5;
    for want in picks {
        let Some(gi) = group_names.iter().position(|n| n == want) else {
            continue;
        };
        let grad = &grads[gi];
        let (ei, &an) = grad
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let mut probe = m.params.clone();
        probe.get_mut(want).unwrap().data[ei] += eps;
        let up = loss_of(&probe);
        probe.get_mut(want).unwrap().data[ei] -= 2.0 * eps;
        let down = loss_of(&probe);
        let num = (up - down) / (2.0 * eps);
        let rel = crate::gradcheck::relative_error(an, num);
        assert!(
            rel < 1e-4,
            "group {want} elem {ei}: analytic {an} vs numeric {num} (rel {rel})"
        );
    }
}
