use std::time::Instant;

use indexmap::IndexMap;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{relative_l2_node, GridSample, ModelParams};
use crate::tape::{Binding, Tape};
use crate::tensor::ParameterStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Worker threads for the per-sample passes; 0 picks the machine's
    /// parallelism. The gradient reduction is fixed-order either way, so the
    /// result is bit-identical across thread counts.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config("weight decay must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("adam eps and clip norm must be positive".into()));
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }
}

/// First-moment / second-moment accumulators of the decoupled-weight-decay
/// adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: usize,
    pub m: IndexMap<String, Vec<f64>>,
    pub v: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> AdamState {
        let mut m = IndexMap::new();
        let mut v = IndexMap::new();
        for (name, t) in store.iter() {
            m.insert(name.to_string(), vec![0.0; t.numel()]);
            v.insert(name.to_string(), vec![0.0; t.numel()]);
        }
        AdamState { step: 0, m, v }
    }

    /// One optimizer step; decay is decoupled from the gradient direction.
    pub fn apply(
        &mut self,
        store: &mut ParameterStore,
        grads: &IndexMap<String, Vec<f64>>,
        lr: f64,
        cfg: &TrainConfig,
    ) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for name in self.m.keys().cloned().collect::<Vec<_>>() {
            let g = grads
                .get(&name)
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            let m = self.m.get_mut(&name).unwrap();
            let theta = &mut store.get_mut(&name)?.values;
            for i in 0..m.len() {
                let gi = g.get(i).copied().unwrap_or(0.0);
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            }
            let v = self.v.get_mut(&name).unwrap();
            let m = &self.m[&name];
            for i in 0..v.len() {
                let gi = g.get(i).copied().unwrap_or(0.0);
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= lr * (mhat / (vhat.sqrt() + cfg.adam_eps)
                    + cfg.weight_decay * theta[i]);
            }
        }
        Ok(())
    }
}

/// Cosine decay from `lr0` at step 0 to zero at `total` steps.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = (step as f64 / total as f64).min(1.0);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut IndexMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .values()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_rel_l2: f64,
    pub test_rel_l2: f64,
    pub wall_seconds: f64,
}

/// Everything the trainer hands back: the parameter snapshot that scored
/// best on the test split, the optimizer state at that point, and the
/// per-epoch metric log.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub best_params: ParameterStore,
    pub best_adam: AdamState,
    pub best_epoch: usize,
    pub best_test_rel_l2: f64,
    pub step: usize,
    pub metrics: Vec<EpochMetrics>,
}

fn sample_loss_and_grads(
    model: &ModelParams,
    store: &ParameterStore,
    sample: &GridSample,
) -> Result<(f64, IndexMap<String, Vec<f64>>)> {
    let (h, w) = sample.resolution();
    let c = *sample.a.shape.last().unwrap();
    let mut tape = Tape::new();
    let mut bind = Binding::new();
    let aid = tape.leaf(sample.a.values.clone(), &[h * w, c]);
    let out = model.build(&mut tape, &mut bind, store, aid, h, w)?;
    let loss = relative_l2_node(&mut tape, out, &sample.u)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), bind.grads(&grads)))
}

fn sample_loss(model: &ModelParams, store: &ParameterStore, sample: &GridSample) -> Result<f64> {
    let pred = model.forward(store, &sample.a)?;
    crate::model::relative_l2(&pred, &sample.u)
}

/// Mean per-sample loss and mean gradients over one batch. Results are
/// reduced in sample order regardless of how many workers ran the passes.
fn batch_loss_and_grads(
    model: &ModelParams,
    store: &ParameterStore,
    batch: &[&GridSample],
    workers: usize,
) -> Result<(f64, IndexMap<String, Vec<f64>>)> {
    let n = batch.len();
    let mut per_sample: Vec<Option<Result<(f64, IndexMap<String, Vec<f64>>)>>> =
        (0..n).map(|_| None).collect();
    if workers <= 1 || n <= 1 {
        for (i, sample) in batch.iter().enumerate() {
            per_sample[i] = Some(sample_loss_and_grads(model, store, sample));
        }
    } else {
        let chunk = n.div_ceil(workers);
        std::thread::scope(|scope| {
            for (slot_chunk, sample_chunk) in
                per_sample.chunks_mut(chunk).zip(batch.chunks(chunk))
            {
                scope.spawn(move || {
                    for (slot, sample) in slot_chunk.iter_mut().zip(sample_chunk) {
                        *slot = Some(sample_loss_and_grads(model, store, sample));
                    }
                });
            }
        });
    }
    let mut total_loss = 0.0;
    let mut total: IndexMap<String, Vec<f64>> = IndexMap::new();
    for slot in per_sample {
        let (loss, grads) = slot.expect("every batch slot is filled")?;
        total_loss += loss;
        for (name, g) in grads {
            match total.get_mut(&name) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    total.insert(name, g);
                }
            }
        }
    }
    let scale = 1.0 / n as f64;
    total_loss *= scale;
    for g in total.values_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total_loss, total))
}

/// Mean relative-L2 of the model over a set of samples.
pub fn evaluate(
    model: &ModelParams,
    store: &ParameterStore,
    samples: &[GridSample],
    workers: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation over an empty sample set".into()));
    }
    let n = samples.len();
    let mut per_sample: Vec<Option<Result<f64>>> = (0..n).map(|_| None).collect();
    if workers <= 1 || n <= 1 {
        for (i, sample) in samples.iter().enumerate() {
            per_sample[i] = Some(sample_loss(model, store, sample));
        }
    } else {
        let chunk = n.div_ceil(workers);
        std::thread::scope(|scope| {
            for (slot_chunk, sample_chunk) in
                per_sample.chunks_mut(chunk).zip(samples.chunks(chunk))
            {
                scope.spawn(move || {
                    for (slot, sample) in slot_chunk.iter_mut().zip(sample_chunk) {
                        *slot = Some(sample_loss(model, store, sample));
                    }
                });
            }
        });
    }
    let mut total = 0.0;
    for slot in per_sample {
        total += slot.expect("every eval slot is filled")?;
    }
    Ok(total / n as f64)
}

/// Minimize mean relative-L2 over minibatches. The train metric of an epoch
/// is the mean of the minibatch losses seen during it; the test metric is a
/// full pass after the epoch. Any non-finite loss or numeric failure during
/// a step surfaces as a divergence error carrying the step index.
pub fn train(
    model: &ModelParams,
    store: &mut ParameterStore,
    train_set: &[GridSample],
    test_set: &[GridSample],
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Config("training needs non-empty train and test sets".into()));
    }
    let workers = cfg.workers();
    if cfg.epochs == 0 {
        // no-op run: the "best" checkpoint is the initialization itself
        let best_test_rel_l2 = evaluate(model, store, test_set, workers)?;
        return Ok(TrainRun {
            best_params: store.clone(),
            best_adam: AdamState::new(store),
            best_epoch: 0,
            best_test_rel_l2,
            step: 0,
            metrics: Vec::new(),
        });
    }
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut adam = AdamState::new(store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParameterStore, AdamState, usize)> = None;
    let started = Instant::now();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&GridSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_loss_and_grads(model, store, &batch, workers)
                .map_err(|e| if e.is_numeric() { Error::Divergence { step } } else { e })?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            epoch_loss += loss;
            clip_global_norm(&mut grads, cfg.clip_norm);
            let lr = cosine_lr(cfg.learning_rate, step, total_steps);
            adam.apply(store, &grads, lr, cfg)?;
            step += 1;
        }
        let train_rel_l2 = epoch_loss / batches_per_epoch as f64;
        let test_rel_l2 = evaluate(model, store, test_set, workers)
            .map_err(|e| if e.is_numeric() { Error::Divergence { step } } else { e })?;
        metrics.push(EpochMetrics {
            epoch,
            train_rel_l2,
            test_rel_l2,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        let improved = best.as_ref().map_or(true, |(_, b, ..)| test_rel_l2 < *b);
        if improved {
            best = Some((epoch, test_rel_l2, store.clone(), adam.clone(), step));
        }
    }
    let (best_epoch, best_test_rel_l2, best_params, best_adam, best_step) =
        best.expect("at least one epoch ran");
    Ok(TrainRun {
        best_params,
        best_adam,
        best_epoch,
        best_test_rel_l2,
        step: best_step,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::tape::Activation;
    use crate::Tensor;

    fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            blocks: 1,
            width: 8,
            in_channels: 1,
            out_channels: 1,
            ratio: 1,
            fourier_blocks: 4,
            use_locality_conv: true,
            activation: Activation::Gelu,
            seed: 3,
        }
    }

    fn one_sample(seed: u64, h: usize, w: usize) -> GridSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::from_values(
            &[h, w, 1],
            (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let u = Tensor::from_values(
            &[h, w, 1],
            (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        GridSample::new(a, u).unwrap()
    }

    #[test]
    fn cosine_schedule_hits_its_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 100), 1e-3);
        assert!((cosine_lr(1e-3, 50, 100) - 5e-4).abs() < 1e-18);
        assert!(cosine_lr(1e-3, 100, 100).abs() < 1e-19);
        assert!(cosine_lr(1e-3, 99, 100) > 0.0);
    }

    #[test]
    fn clip_rescales_only_above_the_threshold() {
        let mut g = IndexMap::new();
        g.insert("a".to_string(), vec![3.0, 4.0]);
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        let after: f64 = g["a"].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);

        let mut g = IndexMap::new();
        g.insert("a".to_string(), vec![0.3, 0.4]);
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g["a"], vec![0.3, 0.4]);
    }

    #[test]
    fn adam_single_step_matches_hand_computation() {
        let mut store = ParameterStore::new(0);
        store.init_constant("w", &[1], 1.0).unwrap();
        let mut adam = AdamState::new(&store);
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), vec![0.5]);
        let cfg = TrainConfig { weight_decay: 0.01, ..TrainConfig::default() };
        adam.apply(&mut store, &grads, 0.1, &cfg).unwrap();
        // bias-corrected first step: mhat = g, vhat = g^2, so the adaptive
        // direction is sign(g); decay pulls theta toward zero
        let expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
        assert!((store.get("w").unwrap().values[0] - expected).abs() < 1e-12);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn overfitting_one_sample_halves_the_loss() {
        for variant in [Variant::Fa, Variant::Wa, Variant::Sa] {
            let mut store = ParameterStore::new(5);
            let model = ModelParams::init(&mut store, &tiny_config(variant)).unwrap();
            let sample = one_sample(6, 8, 8);
            let set = vec![sample];
            let cfg = TrainConfig {
                epochs: 200,
                batch_size: 1,
                learning_rate: 3e-3,
                threads: 1,
                ..TrainConfig::default()
            };
            let run = train(&model, &mut store, &set, &set, &cfg).unwrap();
            let first = run.metrics.first().unwrap().train_rel_l2;
            let last = run.metrics.last().unwrap().train_rel_l2;
            assert!(
                last < 0.5 * first,
                "variant {variant}: loss went {first:.4} -> {last:.4}"
            );
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing()  {
        let mut store = ParameterStore::new(7);
        let model = ModelParams::init(&mut store, &tiny_config(Variant::Sa)).unwrap();
        let before = store.clone();
        let set = vec![one_sample(8, 4, 4)];
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 1,
            learning_rate: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        train(&model, &mut store, &set, &set, &cfg).unwrap();
        for (name, t) in before.iter() {
            assert_eq!(t.values, store.get(name).unwrap().values, "{name} moved");
        }
    }

    #[test]
    fn same_seed_reproduces_the_metric_log() {
        let samples: Vec<GridSample> = (0..4).map(|i| one_sample(10 + i, 4, 4)).collect();
        let mut logs = Vec::new();
        for _ in 0..2 {
            let mut store = ParameterStore::new(11);
            let model = ModelParams::init(&mut store, &tiny_config(Variant::Fa)).unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 2,
                seed: 9,
                ..TrainConfig::default()
            };
            let run = train(&model, &mut store, &samples, &samples, &cfg).unwrap();
            logs.push(
                run.metrics
                    .iter()
                    .map(|m| (m.train_rel_l2, m.test_rel_l2))
                    .collect::<Vec<_>>(),
            );
        }
        assert_eq!(logs[0], logs[1]);
    }

    #[test]
    fn thread_count_does_not_change_the_result() {
        let samples: Vec<GridSample> = (0..4).map(|i| one_sample(20 + i, 4, 4)).collect();
        let mut logs = Vec::new();
        for threads in [1usize, 3] {
            let mut store = ParameterStore::new(13);
            let model = ModelParams::init(&mut store, &tiny_config(Variant::Sa)).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 4,
                seed: 14,
                threads,
                ..TrainConfig::default()
            };
            let run = train(&model, &mut store, &samples, &samples, &cfg).unwrap();
            logs.push(
                run.metrics
                    .iter()
                    .map(|m| (m.train_rel_l2, m.test_rel_l2))
                    .collect::<Vec<_>>(),
            );
        }
        assert_eq!(logs[0], logs[1]);
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let mut store = ParameterStore::new(15);
        let model = ModelParams::init(&mut store, &tiny_config(Variant::Fa)).unwrap();
        let set = vec![one_sample(16, 4, 4)];
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 1,
            learning_rate: 1e8,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&model, &mut store, &set, &set, &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn zero_epochs_return_the_initialization() {
        let mut store = ParameterStore::new(19);
        let model = ModelParams::init(&mut store, &tiny_config(Variant::Fa)).unwrap();
        let before = store.clone();
        let set = vec![one_sample(21, 4, 4)];
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let run = train(&model, &mut store, &set, &set, &cfg).unwrap();
        assert!(run.metrics.is_empty());
        assert_eq!(run.step, 0);
        for (name, t) in before.iter() {
            assert_eq!(t.values, run.best_params.get(name).unwrap().values, "{name}");
        }
    }

    #[test]
    fn best_checkpoint_tracks_the_test_metric() {
        let samples: Vec<GridSample> = (0..2).map(|i| one_sample(30 + i, 4, 4)).collect();
        let mut store = ParameterStore::new(17);
        let model = ModelParams::init(&mut store, &tiny_config(Variant::Fa)).unwrap();
        let cfg = TrainConfig { epochs: 5, batch_size: 2, ..TrainConfig::default() };
        let run = train(&model, &mut store, &samples, &samples, &cfg).unwrap();
        let best_logged = run
            .metrics
            .iter()
            .map(|m| m.test_rel_l2)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(run.best_test_rel_l2, best_logged);
        let eval = evaluate(&model, &run.best_params, &samples, 1).unwrap();
        assert!((eval - run.best_test_rel_l2).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig { beta1: 1.0, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig { clip_norm: 0.0, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
