//! Patch sampling, augmentation, overlap-tile planning, and fold splitting.

use super::case::CaseRecord;
use super::preprocess::ROI_DILATION_RADIUS;
use super::volume::VoxelData;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One training example: stacks of three adjacent slices from each phase,
/// cropped at identical coordinates, with the center slice's label and loss
/// weights. Intensities are already windowed to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub size: usize,
    /// 3 × size × size, slices z−1, z, z+1 (edge slices replicated).
    pub pv_patch: Vec<f64>,
    /// 3 × size × size, same crop as `pv_patch`.
    pub art_patch: Vec<f64>,
    /// size × size binary target from the center slice.
    pub label_patch: Vec<f64>,
    /// size × size loss weights from the center slice; ones when the case
    /// carries no weight cache.
    pub weight_patch: Vec<f64>,
    /// Crop origin `[z, y, x]` of the center slice, shared by all planes.
    pub origin: [usize; 3],
}

const SAMPLE_ATTEMPTS: usize = 100;

fn f32_plane(data: &VoxelData, what: &str) -> Result<()> {
    match data {
        VoxelData::F32(_) => Ok(()),
        other => Err(Error::usage(format!(
            "{what} must be windowed to f32 before sampling, got {}",
            other.dtype().name()
        ))),
    }
}

/// Rows `lo..=hi` (inclusive) of the set pixels in one slice, per axis.
fn slice_bbox(mask: &[u8], ys: usize, xs: usize) -> Option<(usize, usize, usize, usize)> {
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    let mut any = false;
    for y in 0..ys {
        for x in 0..xs {
            if mask[y * xs + x] != 0 {
                any = true;
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    any.then_some((y0, y1, x0, x1))
}

/// Whether a crop window touches the mask after in-plane dilation. Expanding
/// the window by the dilation radius and scanning the raw mask is equivalent
/// to dilating the mask, because the structuring element is a square.
fn crop_touches_dilated(
    mask: &[u8],
    ys: usize,
    xs: usize,
    oy: usize,
    ox: usize,
    size: usize,
    radius: usize,
) -> bool {
    let y0 = oy.saturating_sub(radius);
    let y1 = (oy + size + radius).min(ys);
    let x0 = ox.saturating_sub(radius);
    let x1 = (ox + size + radius).min(xs);
    for y in y0..y1 {
        for x in x0..x1 {
            if mask[y * xs + x] != 0 {
                return true;
            }
        }
    }
    false
}

fn extract_plane(data: &VoxelData, plane_start: usize, xs: usize, oy: usize, ox: usize, size: usize, out: &mut Vec<f64>) {
    match data {
        VoxelData::F32(v) => {
            for y in 0..size {
                let row = plane_start + (oy + y) * xs + ox;
                out.extend(v[row..row + size].iter().map(|&p| p as f64));
            }
        }
        VoxelData::U8(v) => {
            for y in 0..size {
                let row = plane_start + (oy + y) * xs + ox;
                out.extend(v[row..row + size].iter().map(|&p| p as f64));
            }
        }
        VoxelData::I16(v) => {
            for y in 0..size {
                let row = plane_start + (oy + y) * xs + ox;
                out.extend(v[row..row + size].iter().map(|&p| p as f64));
            }
        }
    }
}

/// Draw one training patch from a preprocessed case.
///
/// The center slice is chosen uniformly among slices intersecting the liver;
/// the in-plane origin is drawn so the crop overlaps that slice's liver
/// bounding box and is redrawn (up to 100 times) until the crop touches the
/// dilated liver region. The same crop is applied to both phases, the label,
/// and the weight map.
pub fn sample_patch(
    case: &CaseRecord,
    rng: &mut impl Rng,
    size: usize,
) -> Result<TrainSample> {
    let [zs, ys, xs] = case.pv.dims;
    if size == 0 || size > ys || size > xs {
        return Err(Error::usage(format!(
            "patch size {size} does not fit in-plane dims {ys}x{xs}"
        )));
    }
    f32_plane(&case.pv.data, "the portal-venous phase")?;
    f32_plane(&case.art.data, "the arterial phase")?;

    let liver = case.liver_mask.as_mask()?;
    let plane = ys * xs;
    let liver_slices: Vec<usize> = (0..zs)
        .filter(|&z| liver[z * plane..(z + 1) * plane].iter().any(|&v| v != 0))
        .collect();
    if liver_slices.is_empty() {
        return Err(Error::sampling("the liver mask is empty"));
    }

    let mut chosen: Option<[usize; 3]> = None;
    for _ in 0..SAMPLE_ATTEMPTS {
        let z = liver_slices[rng.gen_range(0..liver_slices.len())];
        let slice = &liver[z * plane..(z + 1) * plane];
        let (y0, y1, x0, x1) =
            slice_bbox(slice, ys, xs).expect("slice was pre-checked to intersect the liver");
        // Any origin in [lo, hi] makes the crop overlap the bounding box.
        let oy_lo = y0.saturating_sub(size - 1);
        let oy_hi = y1.min(ys - size);
        let ox_lo = x0.saturating_sub(size - 1);
        let ox_hi = x1.min(xs - size);
        let oy = rng.gen_range(oy_lo..=oy_hi);
        let ox = rng.gen_range(ox_lo..=ox_hi);
        if crop_touches_dilated(slice, ys, xs, oy, ox, size, ROI_DILATION_RADIUS) {
            chosen = Some([z, oy, ox]);
            break;
        }
    }
    let origin = chosen.ok_or_else(|| {
        Error::sampling(format!(
            "no liver-overlapping crop found in {SAMPLE_ATTEMPTS} attempts"
        ))
    })?;
    let [z, oy, ox] = origin;

    let mut pv_patch = Vec::with_capacity(3 * size * size);
    let mut art_patch = Vec::with_capacity(3 * size * size);
    for dz in -1i64..=1 {
        // Replicate the edge slice at the volume ends.
        let zz = (z as i64 + dz).clamp(0, zs as i64 - 1) as usize;
        extract_plane(&case.pv.data, zz * plane, xs, oy, ox, size, &mut pv_patch);
        extract_plane(&case.art.data, zz * plane, xs, oy, ox, size, &mut art_patch);
    }
    let mut label_patch = Vec::with_capacity(size * size);
    extract_plane(&case.tumor_mask.data, z * plane, xs, oy, ox, size, &mut label_patch);
    let weight_patch = match &case.weight_map {
        Some(w) => {
            let mut wp = Vec::with_capacity(size * size);
            extract_plane(&w.data, z * plane, xs, oy, ox, size, &mut wp);
            wp
        }
        None => vec![1.0; size * size],
    };

    Ok(TrainSample {
        size,
        pv_patch,
        art_patch,
        label_patch,
        weight_patch,
        origin,
    })
}

fn rotate_quarter(src: &[f64], size: usize) -> Vec<f64> {
    // Counter-clockwise quarter turn: source (y, x) lands at (size-1-x, y).
    let mut dst = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            dst[y * size + x] = src[x * size + (size - 1 - y)];
        }
    }
    dst
}

fn flip_horizontal(src: &[f64], size: usize) -> Vec<f64> {
    let mut dst = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            dst[y * size + x] = src[y * size + (size - 1 - x)];
        }
    }
    dst
}

fn transform_plane(src: &[f64], size: usize, quarter_turns: usize, flip: bool) -> Vec<f64> {
    let mut cur = src.to_vec();
    for _ in 0..(quarter_turns % 4) {
        cur = rotate_quarter(&cur, size);
    }
    if flip {
        cur = flip_horizontal(&cur, size);
    }
    cur
}

/// Apply a fixed rotation/flip to every plane of a sample. Exposed separately
/// from `augment` so the geometry is testable without randomness.
pub fn apply_transform(sample: &TrainSample, quarter_turns: usize, flip: bool) -> TrainSample {
    let s = sample.size;
    let per_plane = s * s;
    let map_stack = |stack: &[f64]| -> Vec<f64> {
        stack
            .chunks_exact(per_plane)
            .flat_map(|plane| transform_plane(plane, s, quarter_turns, flip))
            .collect()
    };
    TrainSample {
        size: s,
        pv_patch: map_stack(&sample.pv_patch),
        art_patch: map_stack(&sample.art_patch),
        label_patch: transform_plane(&sample.label_patch, s, quarter_turns, flip),
        weight_patch: transform_plane(&sample.weight_patch, s, quarter_turns, flip),
        origin: sample.origin,
    }
}

/// Randomly rotate (0°/90°/180°/270°) and optionally mirror a sample; one
/// draw applies identically to every plane.
pub fn augment(sample: &TrainSample, rng: &mut impl Rng) -> TrainSample {
    let quarter_turns = rng.gen_range(0..4usize);
    let flip = rng.gen_bool(0.5);
    apply_transform(sample, quarter_turns, flip)
}

/// One crop window of an overlap-tile plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileWindow {
    pub y: usize,
    pub x: usize,
    pub size: usize,
}

fn axis_positions(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = extent - patch;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < last {
        out.push(pos);
        pos += stride;
    }
    out.push(last);
    out
}

/// Plan covering crop windows over one slice: fixed stride of
/// `patch · (1 − overlap_frac)`, final row/column clamped to the border.
pub fn tile_plan(
    height: usize,
    width: usize,
    patch: usize,
    overlap_frac: f64,
) -> Result<Vec<TileWindow>> {
    if patch == 0 || patch > height || patch > width {
        return Err(Error::usage(format!(
            "patch {patch} does not fit a {height}x{width} slice"
        )));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::config(format!(
            "overlap fraction {overlap_frac} must lie in [0, 1)"
        )));
    }
    let stride = ((patch as f64 * (1.0 - overlap_frac)).round() as usize).max(1);
    let mut windows = Vec::new();
    for &y in &axis_positions(height, patch, stride) {
        for &x in &axis_positions(width, patch, stride) {
            windows.push(TileWindow { y, x, size: patch });
        }
    }
    Ok(windows)
}

/// Average per-window probability patches into one slice-sized map. Every
/// pixel must be covered by at least one window.
pub fn stitch(
    height: usize,
    width: usize,
    windows: &[TileWindow],
    patches: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if windows.len() != patches.len() {
        return Err(Error::dim(format!(
            "{} windows but {} patches",
            windows.len(),
            patches.len()
        )));
    }
    let mut sum = vec![0.0; height * width];
    let mut count = vec![0u32; height * width];
    for (w, patch) in windows.iter().zip(patches) {
        if patch.len() != w.size * w.size {
            return Err(Error::dim(format!(
                "window expects {} values, patch holds {}",
                w.size * w.size,
                patch.len()
            )));
        }
        if w.y + w.size > height || w.x + w.size > width {
            return Err(Error::dim(format!(
                "window at ({}, {}) size {} leaves the {height}x{width} slice",
                w.y, w.x, w.size
            )));
        }
        for yy in 0..w.size {
            for xx in 0..w.size {
                let i = (w.y + yy) * width + w.x + xx;
                sum[i] += patch[yy * w.size + xx];
                count[i] += 1;
            }
        }
    }
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::usage(format!(
            "pixel ({}, {}) is covered by no window",
            i / width,
            i % width
        )));
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| s / c as f64)
        .collect())
}

/// Deterministically partition case ids into `k` folds whose sizes differ by
/// at most one.
pub fn fold_split(case_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k == 0 || k > case_ids.len() {
        return Err(Error::usage(format!(
            "cannot split {} cases into {k} folds",
            case_ids.len()
        )));
    }
    let mut ids = case_ids.to_vec();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}
