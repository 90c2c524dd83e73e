//! Bit-exact volume container.
//!
//! A volume is a directory holding `meta.json` (dims, spacing, dtype, axis
//! order, endianness) and `data.raw` (the voxel payload). Payloads are stored
//! row-major with Z the slowest axis, little-endian.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Element type of a stored volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    I16,
    U8,
    F32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::I16 => "i16",
            Dtype::U8 => "u8",
            Dtype::F32 => "f32",
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Dtype::I16 => 2,
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "i16" => Ok(Dtype::I16),
            "u8" => Ok(Dtype::U8),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::format(format!("unknown dtype \"{other}\""))),
        }
    }
}

/// Voxel payload; the variant carries the element type.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    I16(Vec<i16>),
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::I16(v) => v.len(),
            VoxelData::U8(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            VoxelData::I16(_) => Dtype::I16,
            VoxelData::U8(_) => Dtype::U8,
            VoxelData::F32(_) => Dtype::F32,
        }
    }
}

/// A voxel grid with physical spacing. `dims` is `[Z, Y, X]`; the payload is
/// row-major with Z slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub data: VoxelData,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], data: VoxelData) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("dims must be positive, got {dims:?}")));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::config(format!(
                "spacing must be positive and finite, got {spacing_mm:?}"
            )));
        }
        let numel = dims[0] * dims[1] * dims[2];
        if data.len() != numel {
            return Err(Error::dim(format!(
                "payload holds {} voxels but dims {:?} require {}",
                data.len(),
                dims,
                numel
            )));
        }
        Ok(Volume {
            dims,
            spacing_mm,
            data,
        })
    }

    pub fn numel(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Voxels per axial slice.
    pub fn plane(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    /// Read one voxel as f64 regardless of storage type.
    pub fn get_f64(&self, i: usize) -> f64 {
        match &self.data {
            VoxelData::I16(v) => v[i] as f64,
            VoxelData::U8(v) => v[i] as f64,
            VoxelData::F32(v) => v[i] as f64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            VoxelData::I16(v) => v.iter().map(|&x| x as f64).collect(),
            VoxelData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            VoxelData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Borrow the payload of a mask volume.
    pub fn as_mask(&self) -> Result<&[u8]> {
        match &self.data {
            VoxelData::U8(v) => Ok(v),
            other => Err(Error::usage(format!(
                "expected a u8 mask volume, got {}",
                other.dtype().name()
            ))),
        }
    }

    /// Check that a mask volume holds only 0 and 1.
    pub fn validate_binary(&self) -> Result<()> {
        let m = self.as_mask()?;
        if let Some(bad) = m.iter().find(|&&v| v > 1) {
            return Err(Error::format(format!(
                "mask contains value {bad}; only 0 and 1 are allowed"
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    order: String,
    endian: String,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

/// Write a volume as `meta.json` + `data.raw` inside `dir` (created if
/// absent).
pub fn save_volume(vol: &Volume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err)?;
    let meta = Meta {
        dims: vol.dims,
        spacing_mm: vol.spacing_mm,
        dtype: vol.data.dtype().name().to_string(),
        order: "ZYX".to_string(),
        endian: "little".to_string(),
    };
    let text = serde_json::to_vec_pretty(&meta)
        .map_err(|e| Error::format(format!("metadata did not serialize: {e}")))?;
    fs::write(dir.join("meta.json"), text).map_err(io_err)?;

    let mut raw = Vec::with_capacity(vol.numel() * vol.data.dtype().byte_width());
    match &vol.data {
        VoxelData::I16(v) => {
            for &x in v {
                raw.extend_from_slice(&x.to_le_bytes());
            }
        }
        VoxelData::U8(v) => raw.extend_from_slice(v),
        VoxelData::F32(v) => {
            for &x in v {
                raw.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    fs::write(dir.join("data.raw"), raw).map_err(io_err)
}

/// Load a volume from `dir`, validating the header and the payload size.
pub fn load_volume(dir: &Path) -> Result<Volume> {
    let meta_bytes = fs::read(dir.join("meta.json")).map_err(io_err)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::format(format!("meta.json does not parse: {e}")))?;
    if meta.order != "ZYX" {
        return Err(Error::format(format!(
            "unsupported axis order \"{}\" (expected \"ZYX\")",
            meta.order
        )));
    }
    if meta.endian != "little" {
        return Err(Error::format(format!(
            "unsupported endianness \"{}\" (expected \"little\")",
            meta.endian
        )));
    }
    let dtype = Dtype::parse(&meta.dtype)?;
    if meta.dims.iter().any(|&d| d == 0) {
        return Err(Error::format(format!(
            "dims must be positive, got {:?}",
            meta.dims
        )));
    }
    if meta.spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::format(format!(
            "spacing must be positive and finite, got {:?}",
            meta.spacing_mm
        )));
    }

    let raw = fs::read(dir.join("data.raw")).map_err(io_err)?;
    let numel = meta.dims[0] * meta.dims[1] * meta.dims[2];
    let expected = numel * dtype.byte_width();
    if raw.len() != expected {
        return Err(Error::format(format!(
            "data.raw holds {} bytes but dims {:?} as {} require {}",
            raw.len(),
            meta.dims,
            dtype.name(),
            expected
        )));
    }

    let data = match dtype {
        Dtype::I16 => VoxelData::I16(
            raw.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        Dtype::U8 => VoxelData::U8(raw),
        Dtype::F32 => VoxelData::F32(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    Volume::new(meta.dims, meta.spacing_mm, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::PathBuf;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn scratch_dir(tag: &str) -> PathBuf {
        static COUNTER: AtomicU32 = AtomicU32::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let p = std::env::temp_dir().join(format!(
            "paresseg-vol-{}-{}-{}",
            std::process::id(),
            tag,
            n
        ));
        std::fs::create_dir_all(&p).unwrap();
        p
    }

    #[test]
    fn ct_volume_round_trips_bitwise_with_exact_metadata() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = [4, 6, 5];
        let data: Vec<i16> = (0..120).map(|_| rng.gen_range(-1100..1500)).collect();
        let vol = Volume::new(dims, [5.0, 0.7, 0.7], VoxelData::I16(data)).unwrap();
        let dir = scratch_dir("i16");
        save_volume(&vol, &dir).unwrap();
        let back = load_volume(&dir).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(back, vol);
        assert_eq!(back.spacing_mm, [5.0, 0.7, 0.7]);
    }

    #[test]
    fn mask_and_float_volumes_round_trip_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = [3, 4, 4];
        let mask = Volume::new(
            dims,
            [1.0, 1.0, 1.0],
            VoxelData::U8((0..48).map(|_| rng.gen_range(0..2)).collect()),
        )
        .unwrap();
        let floats = Volume::new(
            dims,
            [2.0, 0.5, 0.5],
            VoxelData::F32((0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        )
        .unwrap();
        for vol in [&mask, &floats] {
            let dir = scratch_dir("rt");
            save_volume(vol, &dir).unwrap();
            let back = load_volume(&dir).unwrap();
            std::fs::remove_dir_all(&dir).unwrap();
            assert_eq!(&back, vol);
        }
    }

    #[test]
    fn truncated_payload_names_expected_and_actual_byte_counts() {
        let vol = Volume::new(
            [2, 3, 3],
            [1.0, 1.0, 1.0],
            VoxelData::I16(vec![7; 18]),
        )
        .unwrap();
        let dir = scratch_dir("trunc");
        save_volume(&vol, &dir).unwrap();
        let raw = std::fs::read(dir.join("data.raw")).unwrap();
        std::fs::write(dir.join("data.raw"), &raw[..raw.len() - 4]).unwrap();
        let r = load_volume(&dir);
        std::fs::remove_dir_all(&dir).unwrap();
        match r {
            Err(Error::Format(msg)) => {
                assert!(msg.contains("32"), "actual byte count missing: {msg}");
                assert!(msg.contains("36"), "expected byte count missing: {msg}");
            }
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_is_a_format_error_naming_the_field() {
        let vol = Volume::new([1, 2, 2], [1.0, 1.0, 1.0], VoxelData::U8(vec![0; 4])).unwrap();
        let dir = scratch_dir("dtype");
        save_volume(&vol, &dir).unwrap();
        let text = std::fs::read_to_string(dir.join("meta.json")).unwrap();
        std::fs::write(dir.join("meta.json"), text.replace("\"u8\"", "\"f64\"")).unwrap();
        let r = load_volume(&dir);
        std::fs::remove_dir_all(&dir).unwrap();
        match r {
            Err(Error::Format(msg)) => assert!(msg.contains("f64"), "{msg}"),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_and_wrong_order_are_format_errors() {
        let vol = Volume::new([1, 2, 2], [1.0, 1.0, 1.0], VoxelData::U8(vec![0; 4])).unwrap();
        let dir = scratch_dir("header");
        save_volume(&vol, &dir).unwrap();
        let good = std::fs::read_to_string(dir.join("meta.json")).unwrap();

        std::fs::write(dir.join("meta.json"), &good[..good.len() / 2]).unwrap();
        assert!(matches!(load_volume(&dir), Err(Error::Format(_))));

        std::fs::write(dir.join("meta.json"), good.replace("ZYX", "XYZ")).unwrap();
        let r = load_volume(&dir);
        std::fs::remove_dir_all(&dir).unwrap();
        match r {
            Err(Error::Format(msg)) => assert!(msg.contains("XYZ"), "{msg}"),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn construction_rejects_bad_shapes_and_payloads() {
        assert!(matches!(
            Volume::new([0, 2, 2], [1.0, 1.0, 1.0], VoxelData::U8(vec![])),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Volume::new([1, 2, 2], [1.0, -1.0, 1.0], VoxelData::U8(vec![0; 4])),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Volume::new([1, 2, 2], [1.0, 1.0, 1.0], VoxelData::U8(vec![0; 3])),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn binary_validation_flags_stray_values() {
        let ok = Volume::new([1, 2, 2], [1.0; 3], VoxelData::U8(vec![0, 1, 1, 0])).unwrap();
        ok.validate_binary().unwrap();
        let bad = Volume::new([1, 2, 2], [1.0; 3], VoxelData::U8(vec![0, 2, 1, 0])).unwrap();
        assert!(matches!(bad.validate_binary(), Err(Error::Format(_))));
        let not_mask = Volume::new([1, 2, 2], [1.0; 3], VoxelData::F32(vec![0.0; 4])).unwrap();
        assert!(matches!(not_mask.validate_binary(), Err(Error::Usage(_))));
    }
}
