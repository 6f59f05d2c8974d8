//! Radial energy spectra: bin 2-D DFT power into integer wavenumber
//! shells. Convention (also stamped into CSV output): unscaled forward
//! transform, E(k) = Σ |X(k1,k2)|² over modes with round(|k'|) = k using
//! centered frequencies k' ∈ (−dim/2, dim/2].

use crate::error::{Error, Result};
use crate::ops::grid_dims;
use crate::spectral::fft2;
use crate::tensor::Tensor;

pub const SPECTRUM_CONVENTION: &str =
    "E(k) sums |X|^2 of the unscaled forward DFT over shells k = round(sqrt(k1'^2+k2'^2))";

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// summed power per shell, indexed by k = 0..=k_max
    pub energy: Vec<f64>,
    pub h: usize,
    pub w: usize,
    /// total spectral power; equals the sum of `energy` by construction
    pub total_power: f64,
}

impl SpectrumReport {
    pub fn k_max(&self) -> usize {
        self.energy.len() - 1
    }

    /// Energy outside the DC shell.
    pub fn non_dc_power(&self) -> f64 {
        self.energy[1..].iter().sum()
    }

    /// Fraction of total power sitting in shells >= k_from; the
    /// high-wavenumber alignment statistic.
    pub fn high_shell_fraction(&self, k_from: usize) -> f64 {
        if self.total_power == 0.0 {
            return 0.0;
        }
        let high: f64 = self.energy[k_from.min(self.energy.len())..].iter().sum();
        high / self.total_power
    }
}

fn centered(k: usize, dim: usize) -> f64 {
    if k <= dim / 2 {
        k as f64
    } else {
        k as f64 - dim as f64
    }
}

pub fn energy_spectrum(field: &Tensor) -> Result<SpectrumReport> {
    let (h, w, c) = grid_dims(field)?;
    if c != 1 {
        return Err(Error::Dimension(format!(
            "spectrum expects a single-channel field, got {c} channels"
        )));
    }
    let spec = fft2(field)?;
    let k_max = ((h as f64 / 2.0).powi(2) + (w as f64 / 2.0).powi(2))
        .sqrt()
        .round() as usize;
    let mut energy = vec![0.0; k_max + 1];
    for k1 in 0..h {
        for k2 in 0..w {
            let (re, im) = spec.coef(k1, k2, 0);
            let r = (centered(k1, h).powi(2) + centered(k2, w).powi(2)).sqrt();
            energy[r.round() as usize] += re * re + im * im;
        }
    }
    let total_power = energy.iter().sum();
    Ok(SpectrumReport { energy, h, w, total_power })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    #[test]
    fn pure_harmonic_lands_in_its_shell() {
        let n = 32;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = (TAU * 3.0 * i as f64 / n as f64).cos();
            }
        }
        let field = Tensor::from_values(&[n, n, 1], values).unwrap();
        let report = energy_spectrum(&field).unwrap();
        let non_dc = report.non_dc_power();
        assert!(non_dc > 0.0);
        assert!(
            report.energy[3] >= 0.99 * non_dc,
            "shell 3 holds {:.4} of non-DC power",
            report.energy[3] / non_dc
        );
    }

    #[test]
    fn constant_field_is_pure_dc() {
        let field = Tensor::constant(&[16, 16, 1], 2.5);
        let report = energy_spectrum(&field).unwrap();
        assert!(report.energy[0] > 0.0);
        assert!(report.energy[1..].iter().all(|&e| e == 0.0));
        assert_eq!(report.high_shell_fraction(1), 0.0);
    }

    #[test]
    fn shell_sums_recover_total_power_for_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (h, w) = (24, 40);
        let values: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let field = Tensor::from_values(&[h, w, 1], values.clone()).unwrap();
        let report = energy_spectrum(&field).unwrap();

        let shell_sum: f64 = report.energy.iter().sum();
        assert!((shell_sum - report.total_power).abs() <= 1e-8 * report.total_power);

        // Parseval for the unscaled transform: sum |X|^2 = HW * sum |x|^2
        let direct: f64 = values.iter().map(|v| v * v).sum::<f64>() * (h * w) as f64;
        let rel = (report.total_power - direct).abs() / direct;
        assert!(rel < 1e-8, "Parseval mismatch {rel:.3e}");
    }

    #[test]
    fn energies_are_nonnegative_and_cover_the_grid_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let values: Vec<f64> = (0..12 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let field = Tensor::from_values(&[12, 12, 1], values).unwrap();
        let report = energy_spectrum(&field).unwrap();
        assert!(report.energy.iter().all(|&e| e >= 0.0));
        // corner mode (6, 6) rounds to shell 8 on a 12x12 grid
        assert_eq!(report.k_max(), 8);
    }

    #[test]
    fn multi_channel_fields_are_rejected() {
        let field = Tensor::constant(&[8, 8, 2], 1.0);
        assert!(matches!(energy_spectrum(&field), Err(Error::Dimension(_))));
    }
}
