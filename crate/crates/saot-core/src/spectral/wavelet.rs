//! Single-level 2-D Haar wavelet transform.
//!
//! Filters f_L = (1/sqrt2, 1/sqrt2), f_H = (1/sqrt2, -1/sqrt2), applied along
//! rows then columns at stride 2. Orientation convention, fixed by the 2x2
//! oracle below: the first letter is the row-pass filter, the second the
//! column-pass filter, so LH carries vertical detail and HL horizontal.
//! On a 2x2 block [[a,b],[c,d]]:
//!   LL=(a+b+c+d)/2  LH=(a+b-c-d)/2  HL=(a-b+c-d)/2  HH=(a-b-c+d)/2
//! The map is orthonormal, so the inverse is its transpose and energy is
//! preserved exactly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four quarter-size coefficient blocks of one decomposition level.
#[derive(Debug, Clone)]
pub struct WaveletSubbands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl WaveletSubbands {
    pub fn shape(&self) -> &[usize] {
        &self.ll.shape
    }

    pub fn total_energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|t| t.values.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Forward transform on a raw [h, w, c] buffer into a stacked
/// [(h/2), (w/2), 4c] buffer with channel blocks ordered LL, LH, HL, HH.
pub(crate) fn fwt_stacked(x: &[f64], h: usize, w: usize, c: usize, out: &mut [f64]) {
    let (h2, w2) = (h / 2, w / 2);
    debug_assert_eq!(x.len(), h * w * c);
    debug_assert_eq!(out.len(), h2 * w2 * 4 * c);
    for bi in 0..h2 {
        for bj in 0..w2 {
            let base = ((2 * bi) * w + 2 * bj) * c;
            let base_next = ((2 * bi + 1) * w + 2 * bj) * c;
            let ob = (bi * w2 + bj) * 4 * c;
            for ch in 0..c {
                let a = x[base + ch];
                let b = x[base + c + ch];
                let cc = x[base_next + ch];
                let d = x[base_next + c + ch];
                out[ob + ch] = 0.5 * (a + b + cc + d);
                out[ob + c + ch] = 0.5 * (a + b - cc - d);
                out[ob + 2 * c + ch] = 0.5 * (a - b + cc - d);
                out[ob + 3 * c + ch] = 0.5 * (a - b - cc + d);
            }
        }
    }
}

/// Inverse of `fwt_stacked`.
pub(crate) fn ifwt_stacked(s: &[f64], h: usize, w: usize, c: usize, out: &mut [f64]) {
    let (h2, w2) = (h / 2, w / 2);
    debug_assert_eq!(s.len(), h2 * w2 * 4 * c);
    debug_assert_eq!(out.len(), h * w * c);
    for bi in 0..h2 {
        for bj in 0..w2 {
            let sb = (bi * w2 + bj) * 4 * c;
            let base = ((2 * bi) * w + 2 * bj) * c;
            let base_next = ((2 * bi + 1) * w + 2 * bj) * c;
            for ch in 0..c {
                let ll = s[sb + ch];
                let lh = s[sb + c + ch];
                let hl = s[sb + 2 * c + ch];
                let hh = s[sb + 3 * c + ch];
                out[base + ch] = 0.5 * (ll + lh + hl + hh);
                out[base + c + ch] = 0.5 * (ll + lh - hl - hh);
                out[base_next + ch] = 0.5 * (ll - lh + hl - hh);
                out[base_next + c + ch] = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
}

fn even_spatial_shape(t: &Tensor) -> Result<(usize, usize, usize)> {
    let (h, w, c) = match t.shape.as_slice() {
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(Error::Dimension(format!(
                "expected an H×W×C tensor, got shape {other:?}"
            )))
        }
    };
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(format!(
            "wavelet transform requires even H and W, got {h}×{w}"
        )));
    }
    Ok((h, w, c))
}

/// One level of the 2-D Haar decomposition.
pub fn fwt_haar(x: &Tensor) -> Result<WaveletSubbands> {
    let (h, w, c) = even_spatial_shape(x)?;
    let (h2, w2) = (h / 2, w / 2);
    let mut stacked = vec![0.0; h2 * w2 * 4 * c];
    fwt_stacked(&x.values, h, w, c, &mut stacked);
    let mut bands: Vec<Vec<f64>> = (0..4).map(|_| vec![0.0; h2 * w2 * c]).collect();
    for idx in 0..h2 * w2 {
        for band in 0..4 {
            let src = idx * 4 * c + band * c;
            let dst = idx * c;
            bands[band][dst..dst + c].copy_from_slice(&stacked[src..src + c]);
        }
    }
    let shape = [h2, w2, c];
    let mut it = bands.into_iter();
    Ok(WaveletSubbands {
        ll: Tensor::from_values(&shape, it.next().unwrap())?,
        lh: Tensor::from_values(&shape, it.next().unwrap())?,
        hl: Tensor::from_values(&shape, it.next().unwrap())?,
        hh: Tensor::from_values(&shape, it.next().unwrap())?,
    })
}

/// Exact inverse of `fwt_haar`.
pub fn ifwt_haar(s: &WaveletSubbands) -> Result<Tensor> {
    let shape = s.ll.shape.clone();
    for (name, band) in [("LH", &s.lh), ("HL", &s.hl), ("HH", &s.hh)] {
        if band.shape != shape {
            return Err(Error::Dimension(format!(
                "subband {name} has shape {:?}, LL has {:?}",
                band.shape, shape
            )));
        }
    }
    let (h2, w2, c) = match shape.as_slice() {
        [h2, w2, c] => (*h2, *w2, *c),
        other => {
            return Err(Error::Dimension(format!(
                "expected H×W×C subbands, got shape {other:?}"
            )))
        }
    };
    let mut stacked = vec![0.0; h2 * w2 * 4 * c];
    for idx in 0..h2 * w2 {
        for (band, t) in [&s.ll, &s.lh, &s.hl, &s.hh].iter().enumerate() {
            let dst = idx * 4 * c + band * c;
            stacked[dst..dst + c].copy_from_slice(&t.values[idx * c..idx * c + c]);
        }
    }
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = vec![0.0; h * w * c];
    ifwt_stacked(&stacked, h, w, c, &mut out);
    Tensor::from_values(&[h, w, c], out)
}
