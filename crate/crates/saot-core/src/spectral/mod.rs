//! Invertible frequency-domain transforms: per-channel 2-D DFT and
//! single-level 2-D Haar wavelets. Differentiable counterparts live on the
//! autodiff tape (`tape::Tape::{fft2, ifft2_real, fwt_haar, ifwt_haar}`);
//! the functions here are the plain forward maps shared by both paths.

mod fft;
mod wavelet;

pub use fft::{fft2, ifft2, ifft2_real_part, FftScaling, SpectralField};
pub use wavelet::{fwt_haar, ifwt_haar, WaveletSubbands};

pub(crate) use fft::dft2_channels;
pub(crate) use wavelet::{fwt_stacked, ifwt_stacked};
