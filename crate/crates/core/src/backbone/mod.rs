//! Residual encoder/decoder segmentation network with five phase-combination
//! strategies: one plain encoder, a stacked-input encoder, and three
//! dual-encoder variants that merge either output maps or per-level features.
//!
//! The encoder is a conv pair plus five pooled stages of two residual units;
//! the decoder upsamples six taps back to full resolution, concatenates them,
//! and finishes with a two-class softmax head.

pub mod config;
pub mod params;

pub use config::{Fusion, NetworkConfig};
pub use params::{BoundParams, BufferSet, Param, ParamSet};

use crate::attention;
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::ops;
use params::Initializer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Whether batch statistics (train) or running statistics (eval) normalize
/// activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics one normalization layer observed during a train-mode
/// forward pass; fold into the running buffers after the step.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Probability maps a forward pass produced.
pub enum Output {
    Single(TensorId),
    /// Output-level merging: each phase decoded separately, then averaged.
    Dual {
        pv: TensorId,
        art: TensorId,
        merged: TensorId,
    },
}

impl Output {
    /// The map predictions should be read from.
    pub fn probs(&self) -> TensorId {
        match self {
            Output::Single(t) => *t,
            Output::Dual { merged, .. } => *merged,
        }
    }
}

/// A built network: configuration, trainable parameters, and running
/// statistics.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: NetworkConfig,
    pub seed: u64,
    pub params: ParamSet,
    pub buffers: BufferSet,
}

/// Deterministically initialize a network from a seed.
///
/// Weights are He-scaled normal draws in registration order; biases start at
/// zero, normalization scales at one.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut params = ParamSet::new();
    let mut buffers = BufferSet::new();
    let mut init = Initializer::new(ChaCha8Rng::seed_from_u64(seed));

    let conv = |params: &mut ParamSet,
                    buffers: &mut BufferSet,
                    init: &mut Initializer<ChaCha8Rng>,
                    name: &str,
                    co: usize,
                    ci: usize,
                    k: usize,
                    with_bn: bool|
     -> Result<()> {
        let w = init.he_weights(&[co, ci, k, k], ci * k * k);
        params.insert(&format!("{name}.w"), vec![co, ci, k, k], w)?;
        params.insert(&format!("{name}.b"), vec![co], vec![0.0; co])?;
        if with_bn {
            params.insert(&format!("{name}.bn.g"), vec![co], vec![1.0; co])?;
            params.insert(&format!("{name}.bn.b"), vec![co], vec![0.0; co])?;
            buffers.insert(&format!("{name}.bn.mean"), vec![co], vec![0.0; co])?;
            buffers.insert(&format!("{name}.bn.var"), vec![co], vec![1.0; co])?;
        }
        Ok(())
    };

    let c = config.stage_channels.clone();
    let ic = config.input_channels;
    let prefixes: Vec<String> = if config.fusion.uses_two_encoders() {
        vec!["enc.pv".into(), "enc.art".into()]
    } else {
        vec!["enc".into()]
    };

    for prefix in &prefixes {
        conv(&mut params, &mut buffers, &mut init, &format!("{prefix}.conv1_1"), c[0], ic, 3, true)?;
        conv(&mut params, &mut buffers, &mut init, &format!("{prefix}.conv1_2"), c[0], c[0], 3, true)?;
        for k in 1..6 {
            let (p, q) = (c[k - 1], c[k]);
            let u1 = format!("{prefix}.stage{k}.unit1");
            conv(&mut params, &mut buffers, &mut init, &format!("{u1}.conv1"), q, p, 3, true)?;
            conv(&mut params, &mut buffers, &mut init, &format!("{u1}.conv2"), q, q, 3, true)?;
            if config.residual_skips && p != q {
                conv(&mut params, &mut buffers, &mut init, &format!("{u1}.proj"), q, p, 1, false)?;
            }
            let u2 = format!("{prefix}.stage{k}.unit2");
            conv(&mut params, &mut buffers, &mut init, &format!("{u2}.conv1"), q, q, 3, true)?;
            conv(&mut params, &mut buffers, &mut init, &format!("{u2}.conv2"), q, q, 3, true)?;
        }
    }

    if config.fusion == Fusion::PaMsf {
        for (level, &w) in c.iter().enumerate() {
            conv(&mut params, &mut buffers, &mut init, &format!("pa.level{level}.pv"), w, w, 3, false)?;
            conv(&mut params, &mut buffers, &mut init, &format!("pa.level{level}.art"), w, w, 3, false)?;
        }
    }

    let base = config.stream_width();
    let taps = config.tap_widths();
    conv(&mut params, &mut buffers, &mut init, "dec.stream0", base, taps[0], 3, true)?;
    for level in 1..6 {
        let mut cin = taps[level];
        for i in 1..=level {
            let cout = base << (level - i);
            let name = format!("dec.up{level}.step{i}");
            let w = init.he_weights(&[cin, cout, 4, 4], cin * 16);
            params.insert(&format!("{name}.w"), vec![cin, cout, 4, 4], w)?;
            params.insert(&format!("{name}.b"), vec![cout], vec![0.0; cout])?;
            params.insert(&format!("{name}.bn.g"), vec![cout], vec![1.0; cout])?;
            params.insert(&format!("{name}.bn.b"), vec![cout], vec![0.0; cout])?;
            buffers.insert(&format!("{name}.bn.mean"), vec![cout], vec![0.0; cout])?;
            buffers.insert(&format!("{name}.bn.var"), vec![cout], vec![1.0; cout])?;
            cin = cout;
        }
    }
    conv(&mut params, &mut buffers, &mut init, "head.conv1", 6 * base, 6 * base, 3, true)?;
    conv(&mut params, &mut buffers, &mut init, "head.conv2", 2, 6 * base, 3, false)?;

    let model = Model {
        config: config.clone(),
        seed,
        params,
        buffers,
    };
    debug_assert_eq!(
        model.params.scalar_count(),
        config.expected_param_count(),
        "built parameter count diverged from the closed-form count"
    );
    Ok(model)
}

struct Pass<'a> {
    bound: &'a BoundParams,
    buffers: &'a BufferSet,
    mode: Mode,
    updates: Vec<BnUpdate>,
}

impl Pass<'_> {
    fn bn(&mut self, g: &mut Graph, name: &str, x: TensorId) -> Result<TensorId> {
        let gamma = self.bound.id(&format!("{name}.bn.g"))?;
        let beta = self.bound.id(&format!("{name}.bn.b"))?;
        match self.mode {
            Mode::Train => {
                let (y, mean, var) = ops::batchnorm2d_train(g, x, gamma, beta, BN_EPS)?;
                self.updates.push(BnUpdate { name: name.to_string(), mean, var });
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.buffers.get(&format!("{name}.bn.mean"))?.data.clone();
                let var = self.buffers.get(&format!("{name}.bn.var"))?.data.clone();
                ops::batchnorm2d_eval(g, x, gamma, beta, &mean, &var, BN_EPS)
            }
        }
    }

    fn conv_bn_relu(&mut self, g: &mut Graph, name: &str, x: TensorId) -> Result<TensorId> {
        let w = self.bound.id(&format!("{name}.w"))?;
        let b = self.bound.id(&format!("{name}.b"))?;
        let c = ops::conv2d(g, x, w, b, 1, 1)?;
        let n = self.bn(g, name, c)?;
        Ok(ops::relu(g, n))
    }

    fn residual_unit(
        &mut self,
        g: &mut Graph,
        name: &str,
        x: TensorId,
        skips: bool,
        widen: bool,
    ) -> Result<TensorId> {
        let h = self.conv_bn_relu(g, &format!("{name}.conv1"), x)?;
        let w2 = self.bound.id(&format!("{name}.conv2.w"))?;
        let b2 = self.bound.id(&format!("{name}.conv2.b"))?;
        let c2 = ops::conv2d(g, h, w2, b2, 1, 1)?;
        let n2 = self.bn(g, &format!("{name}.conv2"), c2)?;
        let pre = if skips {
            let skip = if widen {
                let pw = self.bound.id(&format!("{name}.proj.w"))?;
                let pb = self.bound.id(&format!("{name}.proj.b"))?;
                ops::conv2d(g, x, pw, pb, 1, 0)?
            } else {
                x
            };
            ops::add(g, n2, skip)?
        } else {
            n2
        };
        Ok(ops::relu(g, pre))
    }

    /// Run one phase encoder; returns the six decoder-feeding taps.
    fn encoder(&mut self, g: &mut Graph, cfg: &NetworkConfig, prefix: &str, input: TensorId) -> Result<Vec<TensorId>> {
        let c = &cfg.stage_channels;
        let mut taps = Vec::with_capacity(6);
        let x = self.conv_bn_relu(g, &format!("{prefix}.conv1_1"), input)?;
        let mut cur = self.conv_bn_relu(g, &format!("{prefix}.conv1_2"), x)?;
        taps.push(cur);
        for k in 1..6 {
            let pooled = ops::maxpool2d(g, cur, 2, 2)?;
            let widen = c[k - 1] != c[k];
            let u1 = self.residual_unit(
                g,
                &format!("{prefix}.stage{k}.unit1"),
                pooled,
                cfg.residual_skips,
                widen,
            )?;
            cur = self.residual_unit(
                g,
                &format!("{prefix}.stage{k}.unit2"),
                u1,
                cfg.residual_skips,
                false,
            )?;
            taps.push(cur);
        }
        Ok(taps)
    }

    /// Upsample the six taps to full resolution and apply the softmax head.
    fn decoder(
        &mut self,
        g: &mut Graph,
        taps: &[TensorId],
        trace: Option<&mut ForwardTrace>,
    ) -> Result<TensorId> {
        let mut streams = Vec::with_capacity(6);
        streams.push(self.conv_bn_relu(g, "dec.stream0", taps[0])?);
        for level in 1..6 {
            let mut y = taps[level];
            for i in 1..=level {
                let name = format!("dec.up{level}.step{i}");
                let t = self.bound.id(&format!("{name}.w"))?;
                let b = self.bound.id(&format!("{name}.b"))?;
                let d = ops::transposed_conv2d(g, y, t, b, 2, 1)?;
                let n = self.bn(g, &name, d)?;
                y = ops::relu(g, n);
            }
            streams.push(y);
        }
        let cat = ops::concat_channels(g, &streams)?;
        let h = self.conv_bn_relu(g, "head.conv1", cat)?;
        let w = self.bound.id("head.conv2.w")?;
        let b = self.bound.id("head.conv2.b")?;
        let logits = ops::conv2d(g, h, w, b, 1, 1)?;
        if let Some(t) = trace {
            t.stream_shapes = streams.iter().map(|&s| g.shape(s).to_vec()).collect();
            t.concat_shape = g.shape(cat).to_vec();
            t.logit_shape = g.shape(logits).to_vec();
        }
        ops::softmax_axis(g, logits, 1)
    }
}

/// Shapes observed at the decoder's milestones during one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    /// Per-stage outputs of the main-phase encoder, shallowest first (the
    /// pre-fusion widths when two encoders feed the decoder).
    pub encoder_shapes: Vec<Vec<usize>>,
    /// Taps entering the decoder, shallowest first.
    pub tap_shapes: Vec<Vec<usize>>,
    /// The six full-resolution streams before concatenation.
    pub stream_shapes: Vec<Vec<usize>>,
    pub concat_shape: Vec<usize>,
    pub logit_shape: Vec<usize>,
}

/// Merge two probability maps by averaging; symmetric and
/// normalization-preserving.
pub fn mpf_merge(g: &mut Graph, a: TensorId, b: TensorId) -> Result<TensorId> {
    let s = ops::add(g, a, b)?;
    Ok(ops::scale(g, s, 0.5))
}

/// Combine same-level features of the two phases for the decoder.
///
/// Feature concatenation doubles the width; attention fusion also doubles it
/// but lets each phase reweight the other's channels first.
pub fn fuse_stage(
    g: &mut Graph,
    model: &Model,
    bound: &BoundParams,
    pv_feat: TensorId,
    art_feat: TensorId,
    level: usize,
) -> Result<TensorId> {
    if level >= 6 {
        return Err(Error::usage(format!("fusion level {level} out of range 0..6")));
    }
    match model.config.fusion {
        Fusion::Msf => ops::concat_channels(g, &[pv_feat, art_feat]),
        Fusion::PaMsf => {
            let wp = bound.id(&format!("pa.level{level}.pv.w"))?;
            let bp = bound.id(&format!("pa.level{level}.pv.b"))?;
            let wa = bound.id(&format!("pa.level{level}.art.w"))?;
            let ba = bound.id(&format!("pa.level{level}.art.b"))?;
            attention::pa_fuse(
                g,
                pv_feat,
                art_feat,
                wp,
                bp,
                wa,
                ba,
                model.config.eq3_as_printed,
            )
        }
        other => Err(Error::usage(format!(
            "per-level fusion is undefined under the {} strategy",
            other.name()
        ))),
    }
}

impl Model {
    /// Bind all parameter groups into a fresh graph.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        self.params.bind(g, trainable)
    }

    fn check_patch(&self, g: &Graph, t: TensorId, what: &str) -> Result<usize> {
        let s = g.shape(t).to_vec();
        let want_c = self.config.phase_channels();
        let p = self.config.patch_size;
        if s.len() != 4 || s[1] != want_c || s[2] != p || s[3] != p {
            return Err(Error::dim(format!(
                "{what} patch must be [B, {want_c}, {p}, {p}], got {s:?}"
            )));
        }
        Ok(s[0])
    }

    /// Run the network. `art` is ignored under the single-phase strategy and
    /// required by every other one.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        pv: TensorId,
        art: Option<TensorId>,
        mode: Mode,
    ) -> Result<(Output, Vec<BnUpdate>)> {
        self.forward_inner(g, bound, pv, art, mode, None)
    }

    /// Like `forward`, additionally reporting the shapes seen at the decoder
    /// milestones (taps, streams, concatenation, head).
    pub fn forward_traced(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        pv: TensorId,
        art: Option<TensorId>,
        mode: Mode,
    ) -> Result<(Output, Vec<BnUpdate>, ForwardTrace)> {
        let mut trace = ForwardTrace::default();
        let (out, ups) = self.forward_inner(g, bound, pv, art, mode, Some(&mut trace))?;
        Ok((out, ups, trace))
    }

    fn forward_inner(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        pv: TensorId,
        art: Option<TensorId>,
        mode: Mode,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<(Output, Vec<BnUpdate>)> {
        let cfg = &self.config;
        self.check_patch(g, pv, "main-phase")?;
        if cfg.fusion != Fusion::Single {
            let a = art.ok_or_else(|| {
                Error::usage(format!(
                    "the {} strategy needs both phase patches",
                    cfg.fusion.name()
                ))
            })?;
            let bp = g.shape(pv)[0];
            let ba = self.check_patch(g, a, "second-phase")?;
            if ba != bp {
                return Err(Error::dim(format!(
                    "phase batches differ: {bp} vs {ba}"
                )));
            }
        }

        let mut pass = Pass {
            bound,
            buffers: &self.buffers,
            mode,
            updates: Vec::new(),
        };

        let record_taps = |g: &Graph, taps: &[TensorId], trace: &mut Option<&mut ForwardTrace>| {
            if let Some(t) = trace.as_deref_mut() {
                t.tap_shapes = taps.iter().map(|&s| g.shape(s).to_vec()).collect();
            }
        };
        let out = match cfg.fusion {
            Fusion::Single => {
                let taps = pass.encoder(g, cfg, "enc", pv)?;
                record_taps(g, &taps, &mut trace);
                Output::Single(pass.decoder(g, &taps, trace)?)
            }
            Fusion::Dmp => {
                let stacked = ops::concat_channels(g, &[pv, art.unwrap()])?;
                let taps = pass.encoder(g, cfg, "enc", stacked)?;
                record_taps(g, &taps, &mut trace);
                Output::Single(pass.decoder(g, &taps, trace)?)
            }
            Fusion::Mpf => {
                let tp = pass.encoder(g, cfg, "enc.pv", pv)?;
                let ta = pass.encoder(g, cfg, "enc.art", art.unwrap())?;
                record_taps(g, &tp, &mut trace);
                let p = pass.decoder(g, &tp, trace)?;
                let q = pass.decoder(g, &ta, None)?;
                let merged = mpf_merge(g, p, q)?;
                Output::Dual { pv: p, art: q, merged }
            }
            Fusion::Msf | Fusion::PaMsf => {
                let tp = pass.encoder(g, cfg, "enc.pv", pv)?;
                let ta = pass.encoder(g, cfg, "enc.art", art.unwrap())?;
                let mut fused = Vec::with_capacity(6);
                for level in 0..6 {
                    fused.push(fuse_stage(g, self, bound, tp[level], ta[level], level)?);
                }
                record_taps(g, &fused, &mut trace);
                Output::Single(pass.decoder(g, &fused, trace)?)
            }
        };
        Ok((out, pass.updates))
    }

    /// Taps of the main-phase encoder (the only encoder when one exists).
    pub fn encoder_stage_outputs(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        input: TensorId,
        mode: Mode,
    ) -> Result<Vec<TensorId>> {
        let prefix = if self.config.fusion.uses_two_encoders() {
            "enc.pv"
        } else {
            "enc"
        };
        let mut pass = Pass {
            bound,
            buffers: &self.buffers,
            mode,
            updates: Vec::new(),
        };
        pass.encoder(g, &self.config, prefix, input)
    }

    /// Fold train-mode batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) -> Result<()> {
        for u in updates {
            let mut mean = self.buffers.get(&format!("{}.bn.mean", u.name))?.data.clone();
            let mut var = self.buffers.get(&format!("{}.bn.var", u.name))?.data.clone();
            ops::update_running_stats(&mut mean, &mut var, &u.mean, &u.var, BN_MOMENTUM);
            self.buffers.get_mut(&format!("{}.bn.mean", u.name))?.data = mean;
            self.buffers.get_mut(&format!("{}.bn.var", u.name))?.data = var;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
