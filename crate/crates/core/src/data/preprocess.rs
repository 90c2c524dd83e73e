//! Intensity windowing and liver-ROI masking.

use super::volume::{Volume, VoxelData};
use crate::error::{Error, Result};

/// Default CT window, chosen to span liver parenchyma and lesions.
pub const HU_WINDOW_LO: f64 = -70.0;
pub const HU_WINDOW_HI: f64 = 180.0;

/// In-plane dilation radius used when masking to the liver region; radius 2
/// gives the 5-by-5 square structuring element.
pub const ROI_DILATION_RADIUS: usize = 2;

/// Clamp intensities to `[lo, hi]` and rescale linearly to `[0, 1]`.
///
/// The result is a float volume regardless of input storage; masks are not
/// accepted.
pub fn hu_window(vol: &Volume, lo: f64, hi: f64) -> Result<Volume> {
    if !(lo < hi) {
        return Err(Error::config(format!(
            "window bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    if vol.data.dtype() == super::Dtype::U8 {
        return Err(Error::usage(
            "windowing expects CT intensities (i16 or f32), not a u8 mask",
        ));
    }
    let span = hi - lo;
    let mapped: Vec<f32> = (0..vol.numel())
        .map(|i| {
            let v = vol.get_f64(i).clamp(lo, hi);
            ((v - lo) / span) as f32
        })
        .collect();
    Volume::new(vol.dims, vol.spacing_mm, VoxelData::F32(mapped))
}

/// `hu_window` with the default liver window.
pub fn hu_window_default(vol: &Volume) -> Result<Volume> {
    hu_window(vol, HU_WINDOW_LO, HU_WINDOW_HI)
}

/// Dilate a binary mask slice-by-slice with a square structuring element of
/// the given radius (`2r+1` on a side). Returns a u8 volume.
pub fn dilate_in_plane(mask: &Volume, radius: usize) -> Result<Volume> {
    let m = mask.as_mask()?;
    let [zs, ys, xs] = mask.dims;
    let plane = ys * xs;
    let mut out = vec![0u8; m.len()];
    for z in 0..zs {
        let src = &m[z * plane..(z + 1) * plane];
        let dst = &mut out[z * plane..(z + 1) * plane];
        for y in 0..ys {
            for x in 0..xs {
                if src[y * xs + x] == 0 {
                    continue;
                }
                let y0 = y.saturating_sub(radius);
                let y1 = (y + radius + 1).min(ys);
                let x0 = x.saturating_sub(radius);
                let x1 = (x + radius + 1).min(xs);
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        dst[yy * xs + xx] = 1;
                    }
                }
            }
        }
    }
    Volume::new(mask.dims, mask.spacing_mm, VoxelData::U8(out))
}

/// Zero every voxel outside the per-slice 5-by-5 dilation of the liver mask.
pub fn apply_liver_roi(vol: &Volume, liver: &Volume) -> Result<Volume> {
    if vol.dims != liver.dims {
        return Err(Error::dim(format!(
            "volume dims {:?} and liver mask dims {:?} differ",
            vol.dims, liver.dims
        )));
    }
    let values = match &vol.data {
        VoxelData::F32(v) => v,
        other => {
            return Err(Error::usage(format!(
                "liver masking expects an f32 windowed volume, got {}",
                other.dtype().name()
            )))
        }
    };
    let dilated = dilate_in_plane(liver, ROI_DILATION_RADIUS)?;
    let keep = dilated.as_mask()?;
    let out: Vec<f32> = values
        .iter()
        .zip(keep)
        .map(|(&v, &k)| if k != 0 { v } else { 0.0 })
        .collect();
    Volume::new(vol.dims, vol.spacing_mm, VoxelData::F32(out))
}
