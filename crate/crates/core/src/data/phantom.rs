//! Seeded synthetic multi-phase CT phantoms.
//!
//! Each case is an ellipsoidal liver holding a few ellipsoidal tumors. Tumors
//! wash out in the portal-venous phase (darker than liver) and enhance in the
//! arterial phase (brighter). A configurable fraction of cases is "PV-faint":
//! their tumors have no portal-venous contrast at all and are only visible in
//! the arterial phase — the phenomenon that makes multi-phase fusion pay off.
//! Cases also carry arterial-only pseudo-lesions: bright arterial blobs that
//! are not tumors, which punish models that trust the arterial phase blindly.

use super::case::CaseRecord;
use super::volume::{Volume, VoxelData};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Knobs for synthetic dataset generation. Intensities are in Hounsfield
/// units; geometry is in voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub cases: usize,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Inclusive range of tumors per case.
    pub tumor_count: (usize, usize),
    /// Range of tumor semi-axis lengths, voxels.
    pub tumor_radius: (f64, f64),
    pub liver_hu: f64,
    pub background_hu: f64,
    /// Portal-venous washout: tumor is darker than liver by this much.
    pub pv_tumor_drop_hu: (f64, f64),
    /// Arterial enhancement: tumor is brighter than liver by this much.
    pub art_tumor_boost_hu: (f64, f64),
    pub noise_std_hu: f64,
    /// Fraction of cases whose tumors carry zero portal-venous contrast.
    pub pv_faint_fraction: f64,
    /// Inclusive range of arterial-only pseudo-lesions per case.
    pub art_only_blob_count: (usize, usize),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            cases: 8,
            dims: [64, 64, 64],
            spacing_mm: [1.0, 1.0, 1.0],
            tumor_count: (1, 3),
            tumor_radius: (5.0, 10.0),
            liver_hu: 100.0,
            background_hu: -120.0,
            pv_tumor_drop_hu: (50.0, 80.0),
            art_tumor_boost_hu: (50.0, 80.0),
            noise_std_hu: 6.0,
            pv_faint_fraction: 0.5,
            art_only_blob_count: (1, 2),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cases == 0 {
            return Err(Error::config("case count must be positive"));
        }
        if self.dims.iter().any(|&d| d < 8) {
            return Err(Error::config(format!(
                "dims {:?} are too small for a liver phantom (need >= 8 per axis)",
                self.dims
            )));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config(format!(
                "spacing must be positive, got {:?}",
                self.spacing_mm
            )));
        }
        let ranges = [
            ("tumor_count", self.tumor_count.0 as f64, self.tumor_count.1 as f64),
            ("tumor_radius", self.tumor_radius.0, self.tumor_radius.1),
            ("pv_tumor_drop_hu", self.pv_tumor_drop_hu.0, self.pv_tumor_drop_hu.1),
            ("art_tumor_boost_hu", self.art_tumor_boost_hu.0, self.art_tumor_boost_hu.1),
            (
                "art_only_blob_count",
                self.art_only_blob_count.0 as f64,
                self.art_only_blob_count.1 as f64,
            ),
        ];
        for (name, lo, hi) in ranges {
            if lo > hi || lo < 0.0 {
                return Err(Error::config(format!(
                    "{name} range ({lo}, {hi}) must satisfy 0 <= lo <= hi"
                )));
            }
        }
        if self.tumor_count.0 == 0 {
            return Err(Error::config("every case needs at least one tumor"));
        }
        if !(self.tumor_radius.0 > 0.0) {
            return Err(Error::config("tumor radius must be positive"));
        }
        if !(0.0..=1.0).contains(&self.pv_faint_fraction) {
            return Err(Error::config(format!(
                "pv_faint_fraction {} must lie in [0, 1]",
                self.pv_faint_fraction
            )));
        }
        if self.noise_std_hu < 0.0 {
            return Err(Error::config("noise level must be non-negative"));
        }
        Ok(())
    }
}

struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let dz = (z as f64 - self.center[0]) / self.semi[0];
        let dy = (y as f64 - self.center[1]) / self.semi[1];
        let dx = (x as f64 - self.center[2]) / self.semi[2];
        dz * dz + dy * dy + dx * dx <= 1.0
    }

    /// Voxels inside the ellipsoid, scanning only its bounding box.
    fn voxels(&self, dims: [usize; 3]) -> Vec<usize> {
        let mut out = Vec::new();
        let lo = |c: f64, s: f64| (c - s).floor().max(0.0) as usize;
        let hi = |c: f64, s: f64, d: usize| ((c + s).ceil() as usize + 1).min(d);
        for z in lo(self.center[0], self.semi[0])..hi(self.center[0], self.semi[0], dims[0]) {
            for y in lo(self.center[1], self.semi[1])..hi(self.center[1], self.semi[1], dims[1]) {
                for x in lo(self.center[2], self.semi[2])..hi(self.center[2], self.semi[2], dims[2])
                {
                    if self.contains(z, y, x) {
                        out.push((z * dims[1] + y) * dims[2] + x);
                    }
                }
            }
        }
        out
    }
}

const PLACEMENT_ATTEMPTS: usize = 100;

/// Place an ellipsoid with semi-axes drawn from `radius` so that every voxel
/// lies inside the liver and none touches `occupied`.
fn place_blob(
    rng: &mut ChaCha8Rng,
    dims: [usize; 3],
    liver: &[u8],
    occupied: &[u8],
    radius: (f64, f64),
    liver_bbox: ([usize; 3], [usize; 3]),
) -> Option<Vec<usize>> {
    let (blo, bhi) = liver_bbox;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let semi = [
            rng.gen_range(radius.0..=radius.1),
            rng.gen_range(radius.0..=radius.1),
            rng.gen_range(radius.0..=radius.1),
        ];
        let center = [
            rng.gen_range(blo[0] as f64..=bhi[0] as f64),
            rng.gen_range(blo[1] as f64..=bhi[1] as f64),
            rng.gen_range(blo[2] as f64..=bhi[2] as f64),
        ];
        let blob = Ellipsoid { center, semi };
        let voxels = blob.voxels(dims);
        if voxels.is_empty() {
            continue;
        }
        let ok = voxels
            .iter()
            .all(|&i| liver[i] != 0 && occupied[i] == 0);
        if ok {
            return Some(voxels);
        }
    }
    None
}

fn bbox_of(mask: &[u8], dims: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    let mut lo = dims;
    let mut hi = [0usize; 3];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                if mask[(z * dims[1] + y) * dims[2] + x] != 0 {
                    lo = [lo[0].min(z), lo[1].min(y), lo[2].min(x)];
                    hi = [hi[0].max(z), hi[1].max(y), hi[2].max(x)];
                }
            }
        }
    }
    (lo, hi)
}

fn synth_one(
    spec: &PhantomSpec,
    rng: &mut ChaCha8Rng,
    case_id: String,
    pv_faint: bool,
) -> Result<CaseRecord> {
    let dims = spec.dims;
    let n = dims[0] * dims[1] * dims[2];

    // Liver: a large ellipsoid jittered around the volume center, kept a
    // voxel clear of the borders.
    let semi: Vec<f64> = dims
        .iter()
        .map(|&d| rng.gen_range(0.30..0.40) * d as f64)
        .collect();
    let center: Vec<f64> = dims
        .iter()
        .zip(&semi)
        .map(|(&d, &s)| {
            let mid = d as f64 / 2.0;
            let slack = (mid - s - 1.0).max(0.0).min(2.0);
            mid + rng.gen_range(-slack..=slack)
        })
        .collect();
    let liver_shape = Ellipsoid {
        center: [center[0], center[1], center[2]],
        semi: [semi[0], semi[1], semi[2]],
    };
    let mut liver = vec![0u8; n];
    for &i in &liver_shape.voxels(dims) {
        liver[i] = 1;
    }
    let liver_bbox = bbox_of(&liver, dims);

    // Tumors: fully inside the liver, pairwise disjoint.
    let mut tumor = vec![0u8; n];
    let tumor_count = rng.gen_range(spec.tumor_count.0..=spec.tumor_count.1);
    let mut tumor_voxel_sets = Vec::with_capacity(tumor_count);
    for t in 0..tumor_count {
        let voxels = place_blob(rng, dims, &liver, &tumor, spec.tumor_radius, liver_bbox)
            .ok_or_else(|| {
                Error::generation(format!(
                    "case {case_id}: tumor {t} found no position inside the liver after \
                     {PLACEMENT_ATTEMPTS} attempts"
                ))
            })?;
        for &i in &voxels {
            tumor[i] = 1;
        }
        tumor_voxel_sets.push(voxels);
    }

    // Arterial-only pseudo-lesions: bright in ART, absent from the masks.
    // Placement is best-effort; a crowded liver simply gets fewer of them.
    let blob_count = rng.gen_range(spec.art_only_blob_count.0..=spec.art_only_blob_count.1);
    let mut decoys = Vec::new();
    let mut blocked = tumor.clone();
    for _ in 0..blob_count {
        if let Some(voxels) = place_blob(rng, dims, &liver, &blocked, spec.tumor_radius, liver_bbox)
        {
            for &i in &voxels {
                blocked[i] = 1;
            }
            decoys.push(voxels);
        }
    }

    // Intensity fields, then per-phase noise, then i16 rounding.
    let mut pv = vec![spec.background_hu; n];
    let mut art = vec![spec.background_hu; n];
    for i in 0..n {
        if liver[i] != 0 {
            pv[i] = spec.liver_hu;
            art[i] = spec.liver_hu;
        }
    }
    for voxels in &tumor_voxel_sets {
        let drop = if pv_faint {
            0.0
        } else {
            rng.gen_range(spec.pv_tumor_drop_hu.0..=spec.pv_tumor_drop_hu.1)
        };
        let boost = rng.gen_range(spec.art_tumor_boost_hu.0..=spec.art_tumor_boost_hu.1);
        for &i in voxels {
            pv[i] = spec.liver_hu - drop;
            art[i] = spec.liver_hu + boost;
        }
    }
    for voxels in &decoys {
        let boost = rng.gen_range(spec.art_tumor_boost_hu.0..=spec.art_tumor_boost_hu.1);
        for &i in voxels {
            art[i] = spec.liver_hu + boost;
        }
    }

    let noise = Normal::new(0.0, spec.noise_std_hu.max(f64::MIN_POSITIVE))
        .expect("validated noise level");
    let quantize = |field: &[f64], rng: &mut ChaCha8Rng| -> Vec<i16> {
        field
            .iter()
            .map(|&v| {
                let noisy = v + noise.sample(rng);
                noisy.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
            })
            .collect()
    };
    let pv = quantize(&pv, rng);
    let art = quantize(&art, rng);

    let case = CaseRecord {
        case_id,
        pv: Volume::new(dims, spec.spacing_mm, VoxelData::I16(pv))?,
        art: Volume::new(dims, spec.spacing_mm, VoxelData::I16(art))?,
        tumor_mask: Volume::new(dims, spec.spacing_mm, VoxelData::U8(tumor))?,
        liver_mask: Volume::new(dims, spec.spacing_mm, VoxelData::U8(liver))?,
        weight_map: None,
    };
    case.validate()?;
    Ok(case)
}

/// Generate a seeded dataset. Exactly `round(fraction · cases)` cases are
/// PV-faint, chosen by a seeded shuffle so they spread across case ids.
pub fn synth_dataset(spec: &PhantomSpec, seed: u64) -> Result<Vec<CaseRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let faint_count = (spec.pv_faint_fraction * spec.cases as f64).round() as usize;
    let mut faint_flags: Vec<bool> = (0..spec.cases).map(|i| i < faint_count).collect();
    faint_flags.shuffle(&mut rng);

    (0..spec.cases)
        .map(|idx| synth_one(spec, &mut rng, format!("{idx:03}"), faint_flags[idx]))
        .collect()
}
