//! Flat `key = value` run configuration. Every tunable lives in the one
//! defaults table below; a config file overrides the defaults, command-line
//! flags override the file, and each command echoes its full effective
//! configuration into its output artifact. Echoed sidecars parse back in
//! unchanged.

use std::fmt::Display;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use saot_core::darcy::GenerationConfig;
use saot_core::model::{ModelConfig, Variant};
use saot_core::tape::Activation;
use saot_core::train::TrainConfig;
use saot_core::{Error, Result};

pub const DATA_DIR_ENV: &str = "SAOT_DATA_DIR";

/// One row per key: name, default, unit/meaning note.
const SCHEMA: &[(&str, &str, &str)] = &[
    ("count", "64", "training samples to generate (samples)"),
    ("test_count", "16", "held-out samples to generate (samples)"),
    ("resolution", "32", "emitted grid side length (grid points, even)"),
    ("source_resolution", "128", "solve-then-downsample grid side length (grid points, even)"),
    ("smoothness", "4.0", "random-field spectral decay exponent (dimensionless)"),
    ("lo", "3.0", "low permeability level (dimensionless)"),
    ("hi", "12.0", "high permeability level (dimensionless)"),
    ("threshold", "0.0", "level-set cut on the standardized field (standard deviations)"),
    ("forcing", "1.0", "constant source term of the flow equation (dimensionless)"),
    ("variant", "sa", "attention mixer: fa, wa, or sa"),
    ("blocks", "2", "transformer depth (layers)"),
    ("width", "16", "token width (channels; multiple of 4 for wa and sa)"),
    ("ratio", "2", "hidden-width multiplier of block MLPs and mode maps (dimensionless)"),
    ("fourier_blocks", "8", "block-diagonal mode-map count (must divide width)"),
    ("locality_conv", "true", "3x3 convolution on wavelet subbands: true or false"),
    ("activation", "gelu", "mode-map and MLP nonlinearity: gelu or identity"),
    ("epochs", "200", "training epochs (epochs)"),
    ("batch_size", "8", "samples per optimizer step (samples)"),
    ("learning_rate", "1e-3", "peak step size before cosine decay (per step)"),
    ("weight_decay", "1e-4", "decoupled weight decay (per step)"),
    ("beta1", "0.9", "first-moment decay (dimensionless)"),
    ("beta2", "0.999", "second-moment decay (dimensionless)"),
    ("adam_eps", "1e-8", "denominator floor (dimensionless)"),
    ("clip_norm", "1.0", "global gradient-norm ceiling (dimensionless)"),
    ("seed", "0", "master seed for generation, init, and batching (dimensionless)"),
    ("threads", "1", "worker threads: a count, or auto for all cores"),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: IndexMap<&'static str, String>,
}

impl RunConfig {
    pub fn defaults() -> RunConfig {
        RunConfig {
            values: SCHEMA.iter().map(|(k, d, _)| (*k, d.to_string())).collect(),
        }
    }

    /// Defaults, then the file if one was given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut config = RunConfig::defaults();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            config.parse_into(&text, &path.display().to_string())?;
        }
        Ok(config)
    }

    fn parse_into(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Override one key; unknown keys are rejected so typos surface early.
    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        let slot = SCHEMA.iter().find(|(k, _, _)| *k == key).ok_or_else(|| {
            Error::Config(format!("unknown config key '{key}'"))
        })?;
        self.values.insert(slot.0, value.to_string());
        Ok(())
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).unwrap_or_else(|| panic!("key {key} missing from schema"))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} must be a nonnegative integer, got '{}'", self.raw(key))))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} must be a nonnegative integer, got '{}'", self.raw(key))))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.raw(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key} must be a number, got '{}'", self.raw(key))))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(Error::Config(format!("{key} must be true or false, got '{other}'"))),
        }
    }

    /// Worker count; `auto` resolves to all available cores downstream.
    pub fn threads(&self) -> Result<usize> {
        parse_threads(self.raw("threads"))
    }

    pub fn variant(&self) -> Result<Variant> {
        self.raw("variant").parse()
    }

    pub fn activation(&self) -> Result<Activation> {
        match self.raw("activation") {
            "gelu" => Ok(Activation::Gelu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "activation must be gelu or identity, got '{other}'"
            ))),
        }
    }

    pub fn generation(&self) -> Result<GenerationConfig> {
        Ok(GenerationConfig {
            count: self.usize("count")?,
            seed: self.u64("seed")?,
            resolution: self.usize("resolution")?,
            source_resolution: self.usize("source_resolution")?,
            smoothness: self.f64("smoothness")?,
            lo: self.f64("lo")?,
            hi: self.f64("hi")?,
            threshold: self.f64("threshold")?,
            forcing: self.f64("forcing")?,
        })
    }

    /// Test split: same distribution, seeds offset past the training range.
    pub fn test_generation(&self) -> Result<GenerationConfig> {
        let base = self.generation()?;
        Ok(GenerationConfig {
            count: self.usize("test_count")?,
            seed: base.seed.wrapping_add(base.count as u64),
            ..base
        })
    }

    pub fn model_config(&self, in_channels: usize, out_channels: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            variant: self.variant()?,
            blocks: self.usize("blocks")?,
            width: self.usize("width")?,
            in_channels,
            out_channels,
            ratio: self.usize("ratio")?,
            fourier_blocks: self.usize("fourier_blocks")?,
            use_locality_conv: self.bool("locality_conv")?,
            activation: self.activation()?,
            seed: self.u64("seed")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            epochs: self.usize("epochs")?,
            batch_size: self.usize("batch_size")?,
            learning_rate: self.f64("learning_rate")?,
            weight_decay: self.f64("weight_decay")?,
            beta1: self.f64("beta1")?,
            beta2: self.f64("beta2")?,
            adam_eps: self.f64("adam_eps")?,
            clip_norm: self.f64("clip_norm")?,
            seed: self.u64("seed")?,
            threads: self.threads()?,
        };
        config.validate()?;
        Ok(config)
    }

    /// The full effective configuration as a parseable sidecar document.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (key, _, note) in SCHEMA {
            let _ = writeln!(out, "{key} = {}  # {note}", self.raw(key));
        }
        out
    }

    /// The same echo as CSV comment lines.
    pub fn echo_csv(&self) -> String {
        let mut out = String::new();
        for (key, _, _) in SCHEMA {
            let _ = writeln!(out, "# {key} = {}", self.raw(key));
        }
        out
    }
}

/// `auto` means zero, which downstream resolves to all available cores.
pub fn parse_threads(s: &str) -> Result<usize> {
    match s {
        "auto" => Ok(0),
        n => n.parse().ok().filter(|&t| t >= 1).ok_or_else(|| {
            Error::Config(format!("threads must be a positive count or auto, got '{n}'"))
        }),
    }
}

/// Dataset root: an explicit flag wins, then the environment, then here.
pub fn data_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_valid_configs() {
        let config = RunConfig::defaults();
        config.generation().unwrap().validate().unwrap();
        config.test_generation().unwrap().validate().unwrap();
        config.model_config(1, 1).unwrap();
        config.train_config().unwrap();
        assert_eq!(config.threads().unwrap(), 1);
    }

    #[test]
    fn echo_round_trips_through_the_parser() {
        let mut config = RunConfig::defaults();
        config.set("variant", "fa").unwrap();
        config.set("threads", "auto").unwrap();
        config.set("threshold", "-inf").unwrap();
        let mut reparsed = RunConfig::defaults();
        reparsed.parse_into(&config.echo(), "echo").unwrap();
        assert_eq!(reparsed.variant().unwrap(), Variant::Fa);
        assert_eq!(reparsed.threads().unwrap(), 0);
        assert_eq!(reparsed.f64("threshold").unwrap(), f64::NEG_INFINITY);
        assert_eq!(config.echo(), reparsed.echo());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut config = RunConfig::defaults();
        assert!(matches!(config.set("epoch", "3"), Err(Error::Config(_))));
        config.set("epochs", "many").unwrap();
        assert!(matches!(config.usize("epochs"), Err(Error::Config(_))));
        config.set("threads", "0").unwrap();
        assert!(matches!(config.threads(), Err(Error::Config(_))));
        let mut broken = RunConfig::defaults();
        assert!(matches!(
            broken.parse_into("count 64", "test"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut config = RunConfig::defaults();
        config
            .parse_into("# a comment\n\nwidth = 8  # trailing note\n", "test")
            .unwrap();
        assert_eq!(config.usize("width").unwrap(), 8);
    }

    #[test]
    fn test_split_seeds_start_past_the_training_range() {
        let config = RunConfig::defaults();
        let train = config.generation().unwrap();
        let test = config.test_generation().unwrap();
        assert_eq!(test.seed, train.seed + train.count as u64);
        assert_eq!(test.count, 16);
    }
}
