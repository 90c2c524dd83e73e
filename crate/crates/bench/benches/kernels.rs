//! Wall-clock benchmarks of the hot paths: convolution, the phase-attention
//! block, one optimisation step, and stitched whole-volume inference.

use criterion::{criterion_group, criterion_main, Criterion};
use paresseg_bench::{micro_case, seeded_tensor};
use paresseg_core::attention::pa_fuse;
use paresseg_core::graph::Graph;
use paresseg_core::optim::{Adam, AdamConfig};
use paresseg_core::{build_network, infer_volume, ops, Fusion, Mode, NetworkConfig};
use std::time::Duration;

fn micro_net(fusion: Fusion) -> NetworkConfig {
    let mut net = NetworkConfig::tiny(fusion);
    net.patch_size = 32;
    net.stage_channels = vec![8; 6];
    net
}

fn conv_forward(c: &mut Criterion) {
    let x = seeded_tensor(&[4, 8, 32, 32], 1);
    let w = seeded_tensor(&[16, 8, 3, 3], 2);
    let b = seeded_tensor(&[16], 3);
    c.bench_function("conv3x3_forward_4x8x32x32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, w, b) = (
                g.constant(x.clone()),
                g.constant(w.clone()),
                g.constant(b.clone()),
            );
            ops::conv2d(&mut g, x, w, b, 1, 1).expect("conv runs")
        })
    });
}

fn conv_forward_backward(c: &mut Criterion) {
    let x = seeded_tensor(&[4, 8, 32, 32], 1);
    let w = seeded_tensor(&[16, 8, 3, 3], 2);
    let b = seeded_tensor(&[16], 3);
    c.bench_function("conv3x3_forward_backward_4x8x32x32", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (x, w, b) = (
                g.leaf(x.clone(), true),
                g.leaf(w.clone(), true),
                g.leaf(b.clone(), true),
            );
            let y = ops::conv2d(&mut g, x, w, b, 1, 1).expect("conv runs");
            let loss = ops::mean_all(&mut g, y);
            g.backward(loss).expect("backward runs");
        })
    });
}

fn pa_block(c: &mut Criterion) {
    let pv = seeded_tensor(&[2, 16, 16, 16], 4);
    let art = seeded_tensor(&[2, 16, 16, 16], 5);
    let wp = seeded_tensor(&[16, 16, 3, 3], 6);
    let bp = seeded_tensor(&[16], 7);
    let wa = seeded_tensor(&[16, 16, 3, 3], 8);
    let ba = seeded_tensor(&[16], 9);
    c.bench_function("phase_attention_block_2x16x16x16", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let pv = g.leaf(pv.clone(), true);
            let art = g.leaf(art.clone(), true);
            let wp = g.leaf(wp.clone(), true);
            let bp = g.leaf(bp.clone(), true);
            let wa = g.leaf(wa.clone(), true);
            let ba = g.leaf(ba.clone(), true);
            let fused = pa_fuse(&mut g, pv, art, wp, bp, wa, ba, false).expect("fusion runs");
            let loss = ops::mean_all(&mut g, fused);
            g.backward(loss).expect("backward runs");
        })
    });
}

fn training_step(c: &mut Criterion) {
    let model = build_network(&micro_net(Fusion::PaMsf), 5).expect("model builds");
    let pv = seeded_tensor(&[2, 3, 32, 32], 10);
    let art = seeded_tensor(&[2, 3, 32, 32], 11);
    c.bench_function("training_step_pa_msf_batch2", |bench| {
        bench.iter(|| {
            let mut model = model.clone();
            let mut adam = Adam::new(AdamConfig::default(), &model.params.group_sizes())
                .expect("optimiser builds");
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let pv = g.constant(pv.clone());
            let art = g.constant(art.clone());
            let (out, updates) = model
                .forward(&mut g, &bound, pv, Some(art), Mode::Train)
                .expect("forward runs");
            let tumor = ops::slice_channels(&mut g, out.probs(), 1, 1).expect("slice runs");
            let loss = ops::mean_all(&mut g, tumor);
            g.backward(loss).expect("backward runs");
            let grads = bound.collect_grads(&g).expect("grads collected");
            let mut refs: Vec<&mut [f64]> = model
                .params
                .iter_mut()
                .map(|p| p.data.as_mut_slice())
                .collect();
            adam.step_groups(&mut refs, &grads).expect("step applies");
            model.apply_bn_updates(&updates).expect("stats fold in");
        })
    });
}

fn stitched_inference(c: &mut Criterion) {
    let model = build_network(&micro_net(Fusion::PaMsf), 5).expect("model builds");
    let case = micro_case();
    c.bench_function("stitched_inference_16x40x40", |bench| {
        bench.iter(|| infer_volume(&model, &case).expect("inference runs"))
    });
}

fn config() -> Criterion {
    Criterion::default()
        .sample_size(10)
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(3))
}

criterion_group! {
    name = kernels;
    config = config();
    targets = conv_forward, conv_forward_backward, pa_block, training_step, stitched_inference
}
criterion_main!(kernels);
