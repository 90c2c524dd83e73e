//! Training loop, whole-volume inference, evaluation, and the fusion/loss
//! ablation matrix.
//!
//! The flow mirrors the clinical protocol at desk scale: raw HU volumes are
//! windowed and masked to the liver region, 2.5D patches are sampled and
//! augmented on the fly, and whole volumes are segmented slice by slice with
//! overlap-tile stitching.

pub mod kv;

use crate::backbone::{build_network, Fusion, Mode, Model, NetworkConfig, Output};
use crate::checkpoint;
use crate::data::{
    apply_liver_roi, augment, dilate_in_plane, hu_window_default, sample_patch, stitch, tile_plan,
    CaseRecord, Volume, VoxelData, ROI_DILATION_RADIUS,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorData, TensorId};
use crate::loss::{bce_loss, weighted_bce_loss};
use crate::metrics::{aggregate, CaseMetrics, MetricsReport};
use crate::ops;
use crate::optim::{Adam, AdamConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Fraction of each tile shared with its neighbour during stitched inference.
pub const TILE_OVERLAP: f64 = 0.5;
/// Probability above which a voxel is called tumor.
pub const TUMOR_THRESHOLD: f64 = 0.5;

/// Which pixel loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Plain cross-entropy on the tumor probability map.
    Ce,
    /// Boundary-weighted cross-entropy; needs per-case weight maps.
    Be,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "be" => Ok(LossKind::Be),
            other => Err(Error::config(format!(
                "unknown loss kind {other:?} (expected ce or be)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Be => "be",
        }
    }
}

/// Everything one training run needs, besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub loss_kind: LossKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Random patch draws that make up one epoch, rounded up to whole
    /// batches by the loop.
    pub samples_per_epoch: usize,
    /// Under output-level fusion, give each phase branch its own loss and
    /// average the two, instead of training on the merged map.
    pub mpf_independent: bool,
}

impl TrainConfig {
    /// A run description with protocol defaults; epoch count and size stay
    /// explicit because they set the compute budget.
    pub fn new(
        network: NetworkConfig,
        loss_kind: LossKind,
        seed: u64,
        epochs: usize,
        samples_per_epoch: usize,
    ) -> Self {
        TrainConfig {
            network,
            loss_kind,
            lr: 5e-4,
            batch_size: 8,
            epochs,
            seed,
            samples_per_epoch,
            mpf_independent: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive and finite",
                self.lr
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("samples_per_epoch", self.samples_per_epoch),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Optimisation steps one epoch takes.
    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch.div_ceil(self.batch_size)
    }
}

/// Default epoch size: four draws per training slice, counted in batches.
pub fn default_samples_per_epoch(cases: &[CaseRecord], batch_size: usize) -> usize {
    let slices: usize = cases.iter().map(|c| c.pv.dims[0]).sum();
    (4 * slices).div_ceil(batch_size.max(1)).max(1)
}

/// What a completed training run leaves behind.
#[derive(Debug, Clone, Serialize)]
pub struct RunArtifacts {
    pub checkpoint_path: PathBuf,
    /// Mean loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Loss at every optimisation step, for fine-grained inspection.
    pub step_losses: Vec<f64>,
    /// Evaluation of the final model over the training cases.
    pub report: MetricsReport,
    /// The exact configuration the run resolved to.
    pub config: TrainConfig,
}

/// Per-epoch and per-step losses of one fit.
#[derive(Debug, Clone, Serialize)]
pub struct TrainTrace {
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Case preparation
// ---------------------------------------------------------------------------

fn windowed_phase(vol: &Volume, liver: &Volume, what: &str) -> Result<Volume> {
    match vol.data {
        VoxelData::I16(_) => {}
        ref other => {
            return Err(Error::usage(format!(
                "{what} must be raw HU (i16) before preparation, got {}",
                other.dtype().name()
            )))
        }
    }
    let windowed = hu_window_default(vol)?;
    apply_liver_roi(&windowed, liver)
}

/// Turn one raw case into its trainable form: both phases HU-windowed to
/// [0, 1] and zeroed outside the dilated liver, plus a boundary weight map
/// when requested.
pub fn prepare_case(case: &CaseRecord, with_weights: bool) -> Result<CaseRecord> {
    let mut out = case.clone();
    out.pv = windowed_phase(&case.pv, &case.liver_mask, "the portal-venous phase")?;
    out.art = windowed_phase(&case.art, &case.liver_mask, "the arterial phase")?;
    if with_weights {
        out.ensure_weight_map()?;
    }
    Ok(out)
}

/// [`prepare_case`] over a whole dataset.
pub fn prepare_cases(cases: &[CaseRecord], with_weights: bool) -> Result<Vec<CaseRecord>> {
    cases.iter().map(|c| prepare_case(c, with_weights)).collect()
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct PatchBatch {
    pv: Vec<f64>,
    art: Vec<f64>,
    labels: Vec<f64>,
    weights: Vec<f64>,
}

fn draw_batch(
    cases: &[CaseRecord],
    rng: &mut ChaCha8Rng,
    patch: usize,
    count: usize,
) -> Result<PatchBatch> {
    let area = patch * patch;
    let mut batch = PatchBatch {
        pv: Vec::with_capacity(count * 3 * area),
        art: Vec::with_capacity(count * 3 * area),
        labels: Vec::with_capacity(count * area),
        weights: Vec::with_capacity(count * area),
    };
    for _ in 0..count {
        let case = &cases[rng.gen_range(0..cases.len())];
        let s = augment(&sample_patch(case, rng, patch)?, rng);
        batch.pv.extend_from_slice(&s.pv_patch);
        batch.art.extend_from_slice(&s.art_patch);
        batch.labels.extend_from_slice(&s.label_patch);
        batch.weights.extend_from_slice(&s.weight_patch);
    }
    Ok(batch)
}

fn pixel_loss(
    g: &mut Graph,
    map: TensorId,
    labels: &[f64],
    weights: &[f64],
    kind: LossKind,
) -> Result<TensorId> {
    let tumor = ops::slice_channels(g, map, 1, 1)?;
    match kind {
        LossKind::Ce => bce_loss(g, tumor, labels),
        LossKind::Be => weighted_bce_loss(g, tumor, labels, weights),
    }
}

fn batch_loss(
    g: &mut Graph,
    out: &Output,
    labels: &[f64],
    weights: &[f64],
    kind: LossKind,
    mpf_independent: bool,
) -> Result<TensorId> {
    match out {
        Output::Dual { pv, art, .. } if mpf_independent => {
            let a = pixel_loss(g, *pv, labels, weights, kind)?;
            let b = pixel_loss(g, *art, labels, weights, kind)?;
            let sum = ops::add(g, a, b)?;
            Ok(ops::scale(g, sum, 0.5))
        }
        other => pixel_loss(g, other.probs(), labels, weights, kind),
    }
}

/// Run the optimisation loop on an existing model.
///
/// `cases` must already be prepared (see [`prepare_case`]); boundary-weighted
/// training additionally requires a weight map on every case. The model is
/// updated in place; the returned trace holds per-epoch mean losses and the
/// raw per-step losses.
pub fn fit_model(
    model: &mut Model,
    cases: &[CaseRecord],
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::usage("training needs at least one case"));
    }
    if model.config != cfg.network {
        return Err(Error::usage(
            "the model was built for a different network configuration",
        ));
    }
    let patch = cfg.network.patch_size;
    for c in cases {
        let [_, ys, xs] = c.pv.dims;
        if ys < patch || xs < patch {
            return Err(Error::usage(format!(
                "case {}: in-plane dims {ys}x{xs} cannot host {patch}-pixel patches",
                c.case_id
            )));
        }
    }
    if cfg.loss_kind == LossKind::Be {
        if let Some(c) = cases.iter().find(|c| c.weight_map.is_none()) {
            return Err(Error::usage(format!(
                "boundary-weighted training needs weight maps; case {} has none",
                c.case_id
            )));
        }
    }

    let mut adam = Adam::new(
        AdamConfig { lr: cfg.lr, ..Default::default() },
        &model.params.group_sizes(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = cfg.steps_per_epoch();
    let needs_art = cfg.network.fusion != Fusion::Single;

    let mut step_losses = Vec::with_capacity(cfg.epochs * steps);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut acc = 0.0;
        for _ in 0..steps {
            let batch = draw_batch(cases, &mut rng, patch, cfg.batch_size)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let shape = vec![cfg.batch_size, 3, patch, patch];
            let pv_t = g.constant(TensorData::new(shape.clone(), batch.pv)?);
            let art_t = if needs_art {
                Some(g.constant(TensorData::new(shape, batch.art)?))
            } else {
                None
            };
            let (out, updates) = model.forward(&mut g, &bound, pv_t, art_t, Mode::Train)?;
            let loss_t = batch_loss(
                &mut g,
                &out,
                &batch.labels,
                &batch.weights,
                cfg.loss_kind,
                cfg.mpf_independent,
            )?;
            let loss = g.value(loss_t)[0];
            if !loss.is_finite() {
                return Err(Error::training(format!(
                    "non-finite loss {loss} at step {}",
                    step_losses.len()
                )));
            }
            g.backward(loss_t)?;
            let grads = bound.collect_grads(&g)?;
            let mut refs: Vec<&mut [f64]> =
                model.params.iter_mut().map(|p| p.data.as_mut_slice()).collect();
            adam.step_groups(&mut refs, &grads)?;
            model.apply_bn_updates(&updates)?;
            step_losses.push(loss);
            acc += loss;
        }
        epoch_losses.push(acc / steps as f64);
    }
    Ok(TrainTrace { epoch_losses, step_losses })
}

/// Train a fresh network on raw cases and leave a checkpoint plus a
/// training-set evaluation in `out_dir`.
pub fn train(cases: &[CaseRecord], cfg: &TrainConfig, out_dir: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::usage("training needs at least one case"));
    }
    let prepared = prepare_cases(cases, cfg.loss_kind == LossKind::Be)?;
    let mut model = build_network(&cfg.network, cfg.seed)?;
    let trace = fit_model(&mut model, &prepared, cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let checkpoint_path = out_dir.join("checkpoint.bin");
    checkpoint::save(&model, &checkpoint_path)?;
    let outcome = evaluate_cases(&model, cases)?;
    Ok(RunArtifacts {
        checkpoint_path,
        loss_trace: trace.epoch_losses,
        step_losses: trace.step_losses,
        report: outcome.report,
        config: cfg.clone(),
    })
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// A stitched whole-volume prediction.
pub struct InferredVolume {
    /// Binary tumor mask, restricted to the dilated liver region.
    pub mask: Volume,
    /// Stitched tumor probabilities, z-major; zero on slices the liver
    /// region never touches.
    pub probs: Vec<f64>,
}

/// Three adjacent slices of a windowed phase as f64 planes, edges replicated.
fn slice_stack(vol: &Volume, z: usize) -> Result<Vec<f64>> {
    let values = match &vol.data {
        VoxelData::F32(v) => v,
        other => {
            return Err(Error::usage(format!(
                "phase must be windowed to f32 for inference, got {}",
                other.dtype().name()
            )))
        }
    };
    let [zs, ys, xs] = vol.dims;
    let plane = ys * xs;
    let mut out = Vec::with_capacity(3 * plane);
    for dz in [-1i64, 0, 1] {
        let zc = (z as i64 + dz).clamp(0, zs as i64 - 1) as usize;
        out.extend(values[zc * plane..(zc + 1) * plane].iter().map(|&v| f64::from(v)));
    }
    Ok(out)
}

fn crop_stack(stack: &[f64], xs: usize, y0: usize, x0: usize, patch: usize, out: &mut Vec<f64>) {
    let plane = stack.len() / 3;
    for c in 0..3 {
        for y in 0..patch {
            let row = c * plane + (y0 + y) * xs + x0;
            out.extend_from_slice(&stack[row..row + patch]);
        }
    }
}

/// Segment a whole raw case and also report the stitched probabilities.
pub fn infer_volume_detailed(model: &Model, case: &CaseRecord) -> Result<InferredVolume> {
    let patch = model.config.patch_size;
    let [zs, ys, xs] = case.pv.dims;
    if ys < patch || xs < patch {
        return Err(Error::inference(format!(
            "in-plane dims {ys}x{xs} are smaller than the {patch}-pixel patch"
        )));
    }
    if case.art.dims != case.pv.dims || case.liver_mask.dims != case.pv.dims {
        return Err(Error::dim(format!(
            "case {}: volumes disagree on dims",
            case.case_id
        )));
    }
    let prepared = prepare_case(case, false)?;
    let dilated = dilate_in_plane(&case.liver_mask, ROI_DILATION_RADIUS)?;
    let roi = dilated.as_mask()?;
    let windows = tile_plan(ys, xs, patch, TILE_OVERLAP)?;
    let plane = ys * xs;
    let area = patch * patch;
    let needs_art = model.config.fusion != Fusion::Single;

    let mut mask = vec![0u8; zs * plane];
    let mut probs = vec![0.0f64; zs * plane];
    for z in 0..zs {
        let roi_slice = &roi[z * plane..(z + 1) * plane];
        if !roi_slice.iter().any(|&v| v != 0) {
            continue;
        }
        let pv_stack = slice_stack(&prepared.pv, z)?;
        let art_stack = if needs_art {
            Some(slice_stack(&prepared.art, z)?)
        } else {
            None
        };
        let mut pv_buf = Vec::with_capacity(windows.len() * 3 * area);
        let mut art_buf = Vec::with_capacity(if needs_art { windows.len() * 3 * area } else { 0 });
        for w in &windows {
            crop_stack(&pv_stack, xs, w.y, w.x, patch, &mut pv_buf);
            if let Some(a) = &art_stack {
                crop_stack(a, xs, w.y, w.x, patch, &mut art_buf);
            }
        }
        let shape = vec![windows.len(), 3, patch, patch];
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let pv_t = g.constant(TensorData::new(shape.clone(), pv_buf)?);
        let art_t = if needs_art {
            Some(g.constant(TensorData::new(shape, art_buf)?))
        } else {
            None
        };
        let (out, _) = model.forward(&mut g, &bound, pv_t, art_t, Mode::Eval)?;
        let values = g.value(out.probs());
        let patches: Vec<Vec<f64>> = (0..windows.len())
            .map(|w| values[w * 2 * area + area..w * 2 * area + 2 * area].to_vec())
            .collect();
        let stitched = stitch(ys, xs, &windows, &patches)?;
        for i in 0..plane {
            probs[z * plane + i] = stitched[i];
            mask[z * plane + i] =
                u8::from(stitched[i] > TUMOR_THRESHOLD && roi_slice[i] != 0);
        }
    }
    let mask = Volume::new(case.pv.dims, case.pv.spacing_mm, VoxelData::U8(mask))?;
    Ok(InferredVolume { mask, probs })
}

/// Segment a whole raw case into a binary tumor mask.
pub fn infer_volume(model: &Model, case: &CaseRecord) -> Result<Volume> {
    Ok(infer_volume_detailed(model, case)?.mask)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Sensitivity restricted to the slices where reference tumor presence
/// starts or ends along z: the first and last slice of every contiguous run
/// of tumor-bearing slices. `None` when the reference has no tumor.
pub fn marginal_slice_tpr(pred: &[u8], truth: &[u8], dims: [usize; 3]) -> Result<Option<f64>> {
    let [zs, ys, xs] = dims;
    let plane = ys * xs;
    let n = zs * plane;
    if pred.len() != n || truth.len() != n {
        return Err(Error::dim(format!(
            "masks of {} and {} voxels do not match dims {dims:?}",
            pred.len(),
            truth.len()
        )));
    }
    let present: Vec<bool> = (0..zs)
        .map(|z| truth[z * plane..(z + 1) * plane].iter().any(|&v| v != 0))
        .collect();
    let (mut tp, mut fn_) = (0u64, 0u64);
    for z in 0..zs {
        if !present[z] {
            continue;
        }
        let starts = z == 0 || !present[z - 1];
        let ends = z + 1 == zs || !present[z + 1];
        if !(starts || ends) {
            continue;
        }
        for i in z * plane..(z + 1) * plane {
            if truth[i] != 0 {
                if pred[i] != 0 {
                    tp += 1;
                } else {
                    fn_ += 1;
                }
            }
        }
    }
    Ok((tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64))
}

/// An evaluation pass with the extra slice-margin sensitivity.
#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    /// Mean marginal-slice sensitivity over the cases where it is defined.
    pub marginal_tpr: Option<f64>,
    pub per_case_marginal: Vec<(String, Option<f64>)>,
}

/// Segment and score every raw case in one pass.
pub fn evaluate_cases(model: &Model, cases: &[CaseRecord]) -> Result<EvalOutcome> {
    if cases.is_empty() {
        return Err(Error::usage("evaluation needs at least one case"));
    }
    let mut scored = Vec::with_capacity(cases.len());
    let mut per_case_marginal = Vec::with_capacity(cases.len());
    for case in cases {
        let inferred = infer_volume_detailed(model, case)?;
        let pred = inferred.mask.as_mask()?;
        let truth = case.tumor_mask.as_mask()?;
        scored.push(CaseMetrics::from_masks(case.case_id.clone(), pred, truth)?);
        per_case_marginal.push((
            case.case_id.clone(),
            marginal_slice_tpr(pred, truth, case.pv.dims)?,
        ));
    }
    let report = aggregate(scored)?;
    let defined: Vec<f64> = per_case_marginal.iter().filter_map(|(_, v)| *v).collect();
    let marginal_tpr =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EvalOutcome { report, marginal_tpr, per_case_marginal })
}

/// Segment every case and aggregate whole-volume metrics.
pub fn evaluate(model: &Model, cases: &[CaseRecord]) -> Result<MetricsReport> {
    Ok(evaluate_cases(model, cases)?.report)
}

// ---------------------------------------------------------------------------
// Ablation matrix
// ---------------------------------------------------------------------------

/// One trained and evaluated (strategy, loss, seed) combination.
#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub strategy: Fusion,
    pub loss_kind: LossKind,
    pub seed: u64,
    pub report: MetricsReport,
    pub marginal_tpr: Option<f64>,
    pub epoch_losses: Vec<f64>,
}

/// All cells of one ablation sweep.
#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    fn matching(&self, strategy: Fusion, loss: LossKind) -> impl Iterator<Item = &AblationCell> {
        self.cells
            .iter()
            .filter(move |c| c.strategy == strategy && c.loss_kind == loss)
    }

    /// Mean dice-per-case over the seeds of one combination.
    pub fn mean_dpc(&self, strategy: Fusion, loss: LossKind) -> Option<f64> {
        let vals: Vec<f64> = self.matching(strategy, loss).map(|c| c.report.dice_per_case).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean marginal-slice sensitivity over the seeds of one combination.
    pub fn mean_marginal_tpr(&self, strategy: Fusion, loss: LossKind) -> Option<f64> {
        let vals: Vec<f64> = self.matching(strategy, loss).filter_map(|c| c.marginal_tpr).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    fn combinations(&self) -> Vec<(Fusion, LossKind)> {
        let mut seen = Vec::new();
        for c in &self.cells {
            if !seen.contains(&(c.strategy, c.loss_kind)) {
                seen.push((c.strategy, c.loss_kind));
            }
        }
        seen
    }

    /// Fixed-width comparison table: one row per cell, then per-combination
    /// seed means.
    pub fn to_table(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
        }
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:<4} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "fusion", "loss", "seed", "DPC", "DG", "VOE", "RVD", "mTPR"
        ));
        for c in &self.cells {
            out.push_str(&format!(
                "{:<8} {:<4} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8}\n",
                c.strategy.name(),
                c.loss_kind.name(),
                c.seed,
                c.report.dice_per_case,
                c.report.dice_global,
                c.report.mean_voe,
                opt(c.report.mean_rvd),
                opt(c.marginal_tpr),
            ));
        }
        for (s, l) in self.combinations() {
            let dpc = self.mean_dpc(s, l);
            let dg: Vec<f64> = self.matching(s, l).map(|c| c.report.dice_global).collect();
            let voe: Vec<f64> = self.matching(s, l).map(|c| c.report.mean_voe).collect();
            let rvd: Vec<f64> = self.matching(s, l).filter_map(|c| c.report.mean_rvd).collect();
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            out.push_str(&format!(
                "{:<8} {:<4} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
                s.name(),
                l.name(),
                "mean",
                opt(dpc),
                opt(mean(&dg)),
                opt(mean(&voe)),
                opt(mean(&rvd)),
                opt(self.mean_marginal_tpr(s, l)),
            ));
        }
        out
    }

    /// The same rows as [`Self::to_table`] in machine-readable form.
    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(String::new, |x| format!("{x}"))
        }
        let mut out = String::from("fusion,loss,seed,dpc,dg,voe,rvd,marginal_tpr\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.strategy.name(),
                c.loss_kind.name(),
                c.seed,
                c.report.dice_per_case,
                c.report.dice_global,
                c.report.mean_voe,
                opt(c.report.mean_rvd),
                opt(c.marginal_tpr),
            ));
        }
        out
    }
}

/// Derive the per-cell network from a template by swapping the fusion
/// strategy (input width follows: stacked-input fusion sees both phases).
pub fn network_with_fusion(template: &NetworkConfig, fusion: Fusion) -> NetworkConfig {
    let phase = template.phase_channels();
    let mut net = template.clone();
    net.fusion = fusion;
    net.input_channels = if fusion == Fusion::Dmp { 2 * phase } else { phase };
    net
}

/// Train and evaluate every (strategy, loss, seed) combination.
///
/// Training cases are prepared once and shared; every cell trains a fresh
/// network on `train_cases` and is scored on `test_cases`.
pub fn ablation_matrix(
    train_cases: &[CaseRecord],
    test_cases: &[CaseRecord],
    strategies: &[Fusion],
    losses: &[LossKind],
    seeds: &[u64],
    base: &TrainConfig,
) -> Result<AblationTable> {
    if strategies.is_empty() || losses.is_empty() || seeds.is_empty() {
        return Err(Error::usage(
            "the ablation needs at least one strategy, loss kind, and seed",
        ));
    }
    if train_cases.is_empty() || test_cases.is_empty() {
        return Err(Error::usage("the ablation needs training and test cases"));
    }
    let with_weights = losses.contains(&LossKind::Be);
    let prepared = prepare_cases(train_cases, with_weights)?;
    let mut cells = Vec::with_capacity(strategies.len() * losses.len() * seeds.len());
    for &strategy in strategies {
        for &loss_kind in losses {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.network = network_with_fusion(&base.network, strategy);
                cfg.loss_kind = loss_kind;
                cfg.seed = seed;
                cfg.validate()?;
                let mut model = build_network(&cfg.network, seed)?;
                let trace = fit_model(&mut model, &prepared, &cfg)?;
                let outcome = evaluate_cases(&model, test_cases)?;
                cells.push(AblationCell {
                    strategy,
                    loss_kind,
                    seed,
                    report: outcome.report,
                    marginal_tpr: outcome.marginal_tpr,
                    epoch_losses: trace.epoch_losses,
                });
            }
        }
    }
    Ok(AblationTable { cells })
}
