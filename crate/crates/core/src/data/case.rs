//! A case: the two contrast phases plus tumor and liver masks, with an
//! optional cached loss-weight volume.

use super::volume::{load_volume, save_volume, Volume, VoxelData};
use crate::error::{Error, Result};
use crate::loss::{boundary_weight_map, soften_mask, BoundaryWeights};
use std::fs;
use std::path::{Path, PathBuf};

/// One aligned multi-phase case. All volumes share dims; masks are binary and
/// the tumor mask lies inside the liver mask.
#[derive(Debug, Clone)]
pub struct CaseRecord {
    pub case_id: String,
    /// Portal-venous phase, the primary phase predictions are made in.
    pub pv: Volume,
    /// Arterial phase, pre-aligned to the primary phase.
    pub art: Volume,
    pub tumor_mask: Volume,
    pub liver_mask: Volume,
    /// Cached per-voxel loss weights; absent until computed.
    pub weight_map: Option<Volume>,
}

const WEIGHT_DIR: &str = "weight_map";

impl CaseRecord {
    /// Enforce the structural invariants; violations are dataset defects.
    pub fn validate(&self) -> Result<()> {
        let id = &self.case_id;
        for (name, vol) in [
            ("art", &self.art),
            ("tumor_mask", &self.tumor_mask),
            ("liver_mask", &self.liver_mask),
        ] {
            if vol.dims != self.pv.dims {
                return Err(Error::format(format!(
                    "case {id}: {name} dims {:?} differ from pv dims {:?}",
                    vol.dims, self.pv.dims
                )));
            }
        }
        if let Some(w) = &self.weight_map {
            if w.dims != self.pv.dims {
                return Err(Error::format(format!(
                    "case {id}: weight_map dims {:?} differ from pv dims {:?}",
                    w.dims, self.pv.dims
                )));
            }
        }
        self.tumor_mask
            .validate_binary()
            .map_err(|e| Error::format(format!("case {id}: tumor_mask: {e}")))?;
        self.liver_mask
            .validate_binary()
            .map_err(|e| Error::format(format!("case {id}: liver_mask: {e}")))?;

        let tumor = self.tumor_mask.as_mask()?;
        let liver = self.liver_mask.as_mask()?;
        let escaped = tumor
            .iter()
            .zip(liver)
            .filter(|&(&t, &l)| t != 0 && l == 0)
            .count();
        if escaped > 0 {
            return Err(Error::format(format!(
                "case {id}: tumor mask escapes the liver mask at {escaped} voxels"
            )));
        }
        Ok(())
    }

    /// Directory name this case is stored under.
    pub fn dir_name(&self) -> String {
        format!("case_{}", self.case_id)
    }

    /// Write the case as `<root>/case_<id>/{pv,art,tumor_mask,liver_mask}`
    /// (plus `weight_map` when cached).
    pub fn save(&self, root: &Path) -> Result<()> {
        self.validate()?;
        let dir = root.join(self.dir_name());
        save_volume(&self.pv, &dir.join("pv"))?;
        save_volume(&self.art, &dir.join("art"))?;
        save_volume(&self.tumor_mask, &dir.join("tumor_mask"))?;
        save_volume(&self.liver_mask, &dir.join("liver_mask"))?;
        if let Some(w) = &self.weight_map {
            save_volume(w, &dir.join(WEIGHT_DIR))?;
        }
        Ok(())
    }

    /// Load a case from its directory; the name must look like `case_<id>`.
    pub fn load(dir: &Path) -> Result<CaseRecord> {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::format(format!("unreadable case directory {dir:?}")))?;
        let case_id = name
            .strip_prefix("case_")
            .ok_or_else(|| {
                Error::format(format!(
                    "case directory must be named case_<id>, got \"{name}\""
                ))
            })?
            .to_string();
        let pv = load_volume(&dir.join("pv"))?;
        let art = load_volume(&dir.join("art"))?;
        let tumor_mask = load_volume(&dir.join("tumor_mask"))?;
        let liver_mask = load_volume(&dir.join("liver_mask"))?;
        let weight_dir = dir.join(WEIGHT_DIR);
        let weight_map = if weight_dir.is_dir() {
            Some(load_volume(&weight_dir)?)
        } else {
            None
        };
        let case = CaseRecord {
            case_id,
            pv,
            art,
            tumor_mask,
            liver_mask,
            weight_map,
        };
        case.validate()?;
        Ok(case)
    }

    /// Compute and attach the loss-weight volume if absent. Weights are
    /// quantized to f32 so cached and freshly computed maps agree bitwise.
    /// Returns whether a computation happened.
    pub fn ensure_weight_map(&mut self) -> Result<bool> {
        if self.weight_map.is_some() {
            return Ok(false);
        }
        let mask = self.tumor_mask.as_mask()?;
        let dims = self.tumor_mask.dims;
        let soft = soften_mask(mask, dims)?;
        let weights = boundary_weight_map(mask, &soft, BoundaryWeights::default())?;
        let quantized: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
        self.weight_map = Some(Volume::new(
            dims,
            self.tumor_mask.spacing_mm,
            VoxelData::F32(quantized),
        )?);
        Ok(true)
    }
}

/// Sorted list of case directories under a dataset root.
pub fn list_cases(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::Io(e.to_string()))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io(e.to_string()))?;
        let path = entry.path();
        let is_case = path.is_dir()
            && path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("case_"));
        if is_case {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Load every case under a dataset root, sorted by directory name.
pub fn load_dataset(root: &Path) -> Result<Vec<CaseRecord>> {
    list_cases(root)?
        .iter()
        .map(|dir| CaseRecord::load(dir))
        .collect()
}

/// Write a list of cases under a dataset root.
pub fn write_dataset(cases: &[CaseRecord], root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::Io(e.to_string()))?;
    for case in cases {
        case.save(root)?;
    }
    Ok(())
}
