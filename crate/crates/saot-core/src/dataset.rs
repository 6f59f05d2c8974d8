//! On-disk dataset container: magic "SAOTDS1", an element-type tag, a
//! sample count, then per-sample shape headers (H, W, d_a, d_u as u32)
//! followed by the row-major a and u payloads. Everything little-endian
//! with a trailing SHA-256, so reads validate the whole file up front.

use std::fs;
use std::path::Path;

use crate::container::{Reader, Writer, F64_TAG};
use crate::error::{Error, Result};
use crate::model::GridSample;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"SAOTDS1\0";

pub fn write_dataset(samples: &[GridSample], path: &Path) -> Result<()> {
    let mut w = Writer::new(DATASET_MAGIC);
    w.u8(F64_TAG);
    w.u64(samples.len() as u64);
    for (i, s) in samples.iter().enumerate() {
        if !s.a.is_finite() || !s.u.is_finite() {
            return Err(Error::Numeric(format!(
                "sample {i} contains non-finite values"
            )));
        }
        let (h, wd) = s.resolution();
        let da = s.a.shape[2];
        let du = s.u.shape[2];
        for dim in [h, wd, da, du] {
            if dim > u32::MAX as usize {
                return Err(Error::Format(format!("sample {i} dimension {dim} overflows the header")));
            }
            w.u32(dim as u32);
        }
        w.f64_slice(&s.a.values);
        w.f64_slice(&s.u.values);
    }
    fs::write(path, w.finish())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<GridSample>> {
    let data = fs::read(path)?;
    let mut r = Reader::new(&data, DATASET_MAGIC)?;
    let tag = r.u8()?;
    if tag != F64_TAG {
        return Err(Error::Format(format!("unknown element type tag {tag:#04x}")));
    }
    let count = r.u64()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let da = r.u32()? as usize;
        let du = r.u32()? as usize;
        let a = Tensor::from_values(&[h, w, da], r.f64_vec(h * w * da)?)?;
        let u = Tensor::from_values(&[h, w, du], r.f64_vec(h * w * du)?)?;
        samples.push(GridSample::new(a, u)?);
    }
    r.finish()?;
    Ok(samples)
}
