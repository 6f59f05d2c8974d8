//! Per-channel 2-D discrete Fourier transform.
//!
//! Convention: the forward transform is unscaled, the inverse carries the
//! 1/(H*W) factor. Radix-2 for power-of-two lengths, direct table-driven DFT
//! otherwise (correctness over speed for odd sizes; the pipeline only meets
//! non-power-of-two grids in small tests).

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scaling convention carried by every spectral field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftScaling {
    /// Forward sum is unscaled; the inverse divides by H*W.
    NonUnitary,
}

/// Complex DFT coefficients of an H×W×C field, mode (k1,k2) of channel ch at
/// flat index (k1*W + k2)*C + ch in both planes.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub scaling: FftScaling,
}

impl SpectralField {
    pub fn coef(&self, k1: usize, k2: usize, ch: usize) -> (f64, f64) {
        let i = (k1 * self.w + k2) * self.c + ch;
        (self.re[i], self.im[i])
    }

    /// Sum of squared magnitudes over all modes and channels.
    pub fn total_power(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r * r + i * i)
            .sum()
    }
}

struct FftPlan {
    n: usize,
    // radix-2: tw[p] = exp(sign*2*pi*i*p/n) for p < n/2
    // naive:   tw[t] = exp(sign*2*pi*i*t/n) for t < n, indexed by (j*k) mod n
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl FftPlan {
    fn new(n: usize, inverse: bool) -> FftPlan {
        let sign = if inverse { 1.0 } else { -1.0 };
        let count = if n.is_power_of_two() { (n / 2).max(1) } else { n };
        let mut tw_re = Vec::with_capacity(count);
        let mut tw_im = Vec::with_capacity(count);
        for t in 0..count {
            let ang = sign * 2.0 * PI * t as f64 / n as f64;
            tw_re.push(ang.cos());
            tw_im.push(ang.sin());
        }
        FftPlan { n, tw_re, tw_im }
    }

    fn run(&self, re: &mut [f64], im: &mut [f64]) {
        debug_assert_eq!(re.len(), self.n);
        if self.n <= 1 {
            return;
        }
        if self.n.is_power_of_two() {
            self.radix2(re, im);
        } else {
            self.naive(re, im);
        }
    }

    fn radix2(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let stride = n / len;
            let half = len / 2;
            for start in (0..n).step_by(len) {
                for p in 0..half {
                    let wr = self.tw_re[p * stride];
                    let wi = self.tw_im[p * stride];
                    let a = start + p;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }

    fn naive(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for k in 0..n {
            let mut sr = 0.0;
            let mut si = 0.0;
            for j in 0..n {
                let t = (j * k) % n;
                let (wr, wi) = (self.tw_re[t], self.tw_im[t]);
                sr += re[j] * wr - im[j] * wi;
                si += re[j] * wi + im[j] * wr;
            }
            out_re[k] = sr;
            out_im[k] = si;
        }
        re.copy_from_slice(&out_re);
        im.copy_from_slice(&out_im);
    }
}

/// Unscaled in-place 2-D DFT of every channel. Planes are channel-interleaved
/// row-major [h*w, c]. Callers apply normalization.
pub(crate) fn dft2_channels(
    re: &mut [f64],
    im: &mut [f64],
    h: usize,
    w: usize,
    c: usize,
    inverse: bool,
) {
    debug_assert_eq!(re.len(), h * w * c);
    let row_plan = FftPlan::new(w, inverse);
    let col_plan = FftPlan::new(h, inverse);
    let mut sr = vec![0.0; h * w];
    let mut si = vec![0.0; h * w];
    let mut cr = vec![0.0; h];
    let mut ci = vec![0.0; h];
    for ch in 0..c {
        for idx in 0..h * w {
            sr[idx] = re[idx * c + ch];
            si[idx] = im[idx * c + ch];
        }
        for i in 0..h {
            row_plan.run(&mut sr[i * w..(i + 1) * w], &mut si[i * w..(i + 1) * w]);
        }
        for j in 0..w {
            for i in 0..h {
                cr[i] = sr[i * w + j];
                ci[i] = si[i * w + j];
            }
            col_plan.run(&mut cr, &mut ci);
            for i in 0..h {
                sr[i * w + j] = cr[i];
                si[i * w + j] = ci[i];
            }
        }
        for idx in 0..h * w {
            re[idx * c + ch] = sr[idx];
            im[idx * c + ch] = si[idx];
        }
    }
}

fn spatial_shape(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape.as_slice() {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::Dimension(format!(
            "expected an H×W×C tensor, got shape {other:?}"
        ))),
    }
}

/// Per-channel 2-D DFT of a real field.
pub fn fft2(x: &Tensor) -> Result<SpectralField> {
    let (h, w, c) = spatial_shape(x)?;
    if h == 0 || w == 0 {
        return Err(Error::Dimension("fft2 requires H, W >= 1".into()));
    }
    let mut re = x.values.clone();
    let mut im = vec![0.0; re.len()];
    dft2_channels(&mut re, &mut im, h, w, c, false);
    Ok(SpectralField {
        h,
        w,
        c,
        re,
        im,
        scaling: FftScaling::NonUnitary,
    })
}

/// Inverse transform demanding a real result: errors if the coefficients are
/// not conjugate-symmetric enough to keep the imaginary residual below 1e-8.
pub fn ifft2(s: &SpectralField) -> Result<Tensor> {
    let (t, residual) = ifft2_real_part(s);
    if residual > 1e-8 {
        return Err(Error::Numeric(format!(
            "symmetry violation: inverse transform has imaginary residual {residual:.3e} \
             but a real output was requested"
        )));
    }
    Ok(t)
}

/// Inverse transform of an arbitrary spectrum: real part plus the maximum
/// absolute imaginary residual.
pub fn ifft2_real_part(s: &SpectralField) -> (Tensor, f64) {
    let mut re = s.re.clone();
    let mut im = s.im.clone();
    dft2_channels(&mut re, &mut im, s.h, s.w, s.c, true);
    let scale = 1.0 / (s.h * s.w) as f64;
    let mut residual = 0.0f64;
    for v in &mut re {
        *v *= scale;
    }
    for v in &im {
        residual = residual.max((v * scale).abs());
    }
    let t = Tensor::from_values(&[s.h, s.w, s.c], re).expect("shape fixed by construction");
    (t, residual)
}
