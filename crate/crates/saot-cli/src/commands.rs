//! One function per subcommand. Artifact conventions: datasets are named
//! `train_{r}.saotds` / `test_{r}.saotds` by grid side length, every output
//! directory gets a reparseable `config.txt` sidecar, CSV files carry the
//! effective configuration as leading `#` comment lines, and JSON artifacts
//! embed it as fields.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use saot_core::attention::{fourier_attention, linear_attention, FourierAttentionParams};
use saot_core::checkpoint::Checkpoint;
use saot_core::darcy;
use saot_core::dataset::{read_dataset, write_dataset};
use saot_core::model::{relative_l2, GridSample, ModelParams, Normalizer};
use saot_core::spectrum::{energy_spectrum, SpectrumReport, SPECTRUM_CONVENTION};
use saot_core::tape::Activation;
use saot_core::train::{train, EpochMetrics};
use saot_core::{Error, ParameterStore, Result, Tensor};

use crate::config::{data_root, RunConfig};

fn sha256_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn read_samples(path: &Path) -> Result<Vec<GridSample>> {
    read_dataset(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read dataset {}: {io}", path.display())),
        Error::Format(m) => Error::Format(format!("dataset {}: {m}", path.display())),
        other => other,
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read checkpoint {}: {io}", path.display())),
        Error::Format(m) => Error::Format(format!("checkpoint {}: {m}", path.display())),
        other => other,
    })
}

fn resolve_workers(threads: usize) -> usize {
    if threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    }
}

/// Per-sample relative-L2 in dataset order, optionally fanned out over
/// threads; the order (and therefore every downstream mean) is fixed.
fn per_sample_errors(
    samples: &[GridSample],
    workers: usize,
    one: impl Fn(&GridSample) -> Result<f64> + Sync,
) -> Result<Vec<f64>> {
    let one = &one;
    let n = samples.len();
    let mut slots: Vec<Option<Result<f64>>> = (0..n).map(|_| None).collect();
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 {
        for (slot, s) in slots.iter_mut().zip(samples) {
            *slot = Some(one(s));
        }
    } else {
        let chunk = n.div_ceil(workers);
        std::thread::scope(|scope| {
            for (sc, tc) in slots.chunks_mut(chunk).zip(samples.chunks(chunk)) {
                scope.spawn(move || {
                    for (slot, s) in sc.iter_mut().zip(tc) {
                        *slot = Some(one(s));
                    }
                });
            }
        });
    }
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean rel-L2 of a loaded checkpoint on raw samples.
fn checkpoint_errors(
    cp: &Checkpoint,
    model: &ModelParams,
    samples: &[GridSample],
    workers: usize,
) -> Result<Vec<f64>> {
    per_sample_errors(samples, workers, |s| {
        let pred = cp.predict(model, &s.a)?;
        relative_l2(&pred, &s.u)
    })
}

pub fn generate(config: &RunConfig, out: PathBuf) -> Result<()> {
    let train_cfg = config.generation()?;
    let test_cfg = config.test_generation()?;
    train_cfg.validate()?;
    test_cfg.validate()?;
    let train_set = darcy::generate(&train_cfg)?;
    let test_set = darcy::generate(&test_cfg)?;
    fs::create_dir_all(&out)?;
    let r = train_cfg.resolution;
    let train_path = out.join(format!("train_{r}.saotds"));
    let test_path = out.join(format!("test_{r}.saotds"));
    write_dataset(&train_set, &train_path)?;
    write_dataset(&test_set, &test_path)?;
    let sidecar = out.join(format!("config_{r}.txt"));
    fs::write(
        &sidecar,
        format!("# test split draws seeds starting at seed + count\n{}", config.echo()),
    )?;
    for path in [&train_path, &test_path] {
        println!("{}  {}", sha256_hex(&fs::read(path)?), path.display());
    }
    println!("config sidecar: {}", sidecar.display());
    Ok(())
}

struct TrainOutcome {
    checkpoint: Checkpoint,
    param_count: usize,
    initial_train: f64,
    final_train: f64,
    final_test: f64,
    best_epoch: usize,
    best_test: f64,
}

fn fit(config: &RunConfig, data: &Path) -> Result<TrainOutcome> {
    let r = config.usize("resolution")?;
    let train_set = read_samples(&data.join(format!("train_{r}.saotds")))?;
    let test_set = read_samples(&data.join(format!("test_{r}.saotds")))?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Config("training needs nonempty train and test sets".into()));
    }
    let model_cfg = config.model_config(train_set[0].a.shape[2], train_set[0].u.shape[2])?;
    let train_cfg = config.train_config()?;
    let workers = train_cfg.workers();

    // fit the data transform on the train split; rel-L2 numbers are the
    // same in raw and transformed space because targets are only rescaled
    let normalizer = Normalizer::fit(&train_set)?;
    let train_set: Vec<GridSample> =
        train_set.iter().map(|s| normalizer.encode_sample(s)).collect::<Result<_>>()?;
    let test_set: Vec<GridSample> =
        test_set.iter().map(|s| normalizer.encode_sample(s)).collect::<Result<_>>()?;

    let mut store = ParameterStore::new(model_cfg.seed);
    let params = ModelParams::init(&mut store, &model_cfg)?;
    let param_count = store.param_count();
    let errors_now = |store: &ParameterStore, set: &[GridSample]| -> Result<f64> {
        let errs = per_sample_errors(set, workers, |s| {
            let pred = params.forward(store, &s.a)?;
            relative_l2(&pred, &s.u)
        })?;
        Ok(mean(&errs))
    };
    let initial_train = errors_now(&store, &train_set)?;
    let run = train(&params, &mut store, &train_set, &test_set, &train_cfg)?;
    let final_train = errors_now(&store, &train_set)?;
    let final_test = errors_now(&store, &test_set)?;

    // the checkpoint keeps the best-on-test snapshot, not the last step
    let checkpoint = Checkpoint {
        model: model_cfg,
        train: train_cfg,
        normalizer,
        train_resolution: train_set[0].resolution().0,
        step: run.step,
        metrics: run.metrics,
        params: run.best_params,
        adam: run.best_adam,
    };
    Ok(TrainOutcome {
        checkpoint,
        param_count,
        initial_train,
        final_train,
        final_test,
        best_epoch: run.best_epoch,
        best_test: run.best_test_rel_l2,
    })
}

fn write_metrics_csv(path: &Path, config: &RunConfig, metrics: &[EpochMetrics]) -> Result<()> {
    let mut text = config.echo_csv();
    text.push_str("epoch,train_rel_l2,test_rel_l2,wall_seconds\n");
    for m in metrics {
        let _ = writeln!(text, "{},{},{},{}", m.epoch, m.train_rel_l2, m.test_rel_l2, m.wall_seconds);
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn train_cmd(config: &RunConfig, data: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let data = data_root(data);
    let outcome = fit(config, &data)?;
    fs::create_dir_all(&out)?;
    write_metrics_csv(&out.join("metrics.csv"), config, &outcome.checkpoint.metrics)?;
    outcome.checkpoint.save(&out.join("model.saotcp"))?;
    fs::write(out.join("config.txt"), config.echo())?;
    println!(
        "trained {} ({} parameters): train rel-L2 {:.6} -> {:.6}, final test {:.6}, best test {:.6} at epoch {}",
        outcome.checkpoint.model.variant,
        outcome.param_count,
        outcome.initial_train,
        outcome.final_train,
        outcome.final_test,
        outcome.best_test,
        outcome.best_epoch,
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

pub fn ablate_cmd(config: &RunConfig, data: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let data = data_root(data);
    fs::create_dir_all(&out)?;
    let mut rows = Vec::new();
    for variant in ["fa", "wa", "sa"] {
        let mut c = config.clone();
        c.set("variant", variant)?;
        let outcome = fit(&c, &data)?;
        write_metrics_csv(&out.join(format!("metrics_{variant}.csv")), &c, &outcome.checkpoint.metrics)?;
        outcome.checkpoint.save(&out.join(format!("model_{variant}.saotcp")))?;
        rows.push((variant, outcome));
    }
    let mut text = config.echo_csv();
    text.push_str(
        "variant,parameters,initial_train_rel_l2,final_train_rel_l2,final_test_rel_l2,best_test_rel_l2\n",
    );
    println!("variant  parameters  initial_train  final_train  final_test  best_test");
    for (variant, o) in &rows {
        let _ = writeln!(
            text,
            "{variant},{},{},{},{},{}",
            o.param_count, o.initial_train, o.final_train, o.final_test, o.best_test
        );
        println!(
            "{variant:<7}  {:<10}  {:<13.6}  {:<11.6}  {:<10.6}  {:.6}",
            o.param_count, o.initial_train, o.final_train, o.final_test, o.best_test
        );
    }
    fs::write(out.join("ablation.csv"), text)?;
    fs::write(out.join("config.txt"), config.echo())?;
    println!("artifacts in {}", out.display());
    Ok(())
}

pub fn eval_cmd(
    checkpoint: PathBuf,
    data: PathBuf,
    out: Option<PathBuf>,
    threads: usize,
) -> Result<()> {
    let cp = load_checkpoint(&checkpoint)?;
    let model = cp.rebuild()?;
    let samples = read_samples(&data)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("dataset {} has no samples", data.display())));
    }
    let errors = checkpoint_errors(&cp, &model, &samples, resolve_workers(threads))?;
    let mean_err = mean(&errors);
    let report = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "dataset": data.display().to_string(),
        "count": samples.len(),
        "mean_rel_l2": mean_err,
        "per_sample_rel_l2": errors,
        "model": cp.model,
        "train": cp.train,
        "train_resolution": cp.train_resolution,
    });
    let text = format!("{:#}\n", report);
    match out {
        Some(path) => {
            fs::write(&path, text)?;
            println!(
                "mean rel-L2 {mean_err:.6} over {} samples -> {}",
                samples.len(),
                path.display()
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Shell sums must agree with direct field energy under the unscaled
/// transform; enforced on every emitted report.
fn parseval_guard(field: &Tensor, report: &SpectrumReport) -> Result<()> {
    let direct: f64 =
        field.values.iter().map(|v| v * v).sum::<f64>() * (report.h * report.w) as f64;
    let diff = (report.total_power - direct).abs();
    if diff > 1e-8 * direct.max(f64::MIN_POSITIVE) {
        return Err(Error::Numeric(format!(
            "spectrum energy {} disagrees with field energy {direct}",
            report.total_power
        )));
    }
    Ok(())
}

pub fn spectrum_cmd(
    checkpoints: Vec<PathBuf>,
    data: PathBuf,
    index: usize,
    out: PathBuf,
) -> Result<()> {
    if checkpoints.is_empty() || checkpoints.len() > 2 {
        return Err(Error::Config(format!(
            "pass one checkpoint, or two for a three-series comparison, got {}",
            checkpoints.len()
        )));
    }
    let samples = read_samples(&data)?;
    let sample = samples.get(index).ok_or_else(|| {
        Error::Config(format!(
            "sample index {index} is out of range; dataset has {} samples",
            samples.len()
        ))
    })?;
    let gt = energy_spectrum(&sample.u)?;
    parseval_guard(&sample.u, &gt)?;
    let mut series: Vec<(String, SpectrumReport)> = vec![("gt".into(), gt)];
    for path in &checkpoints {
        let cp = load_checkpoint(path)?;
        let model = cp.rebuild()?;
        let pred = cp.predict(&model, &sample.a)?;
        let report = energy_spectrum(&pred)?;
        parseval_guard(&pred, &report)?;
        let mut label = cp.model.variant.to_string();
        if series.iter().any(|(l, _)| *l == label) {
            label.push_str("_b");
        }
        series.push((label, report));
    }

    let k_max = series.iter().map(|(_, r)| r.k_max()).max().unwrap();
    let mut text = format!("# {SPECTRUM_CONVENTION}\n");
    let _ = writeln!(
        text,
        "# dataset = {}, sample = {index}, grid = {}x{}",
        data.display(),
        series[0].1.h,
        series[0].1.w
    );
    // upper-half-shell energy relative to ground truth, reported not gated
    let k_from = k_max.div_ceil(2);
    let gt_high: f64 = series[0].1.energy[k_from.min(series[0].1.energy.len())..].iter().sum();
    for (label, report) in &series[1..] {
        let high: f64 = report.energy[k_from.min(report.energy.len())..].iter().sum();
        let ratio = high / gt_high;
        let _ = writeln!(text, "# high_shell_energy_ratio_{label} (k >= {k_from}) = {ratio}");
        println!("high-shell energy ratio (k >= {k_from}) {label}: {ratio:.6}");
    }
    let header: Vec<String> = series.iter().map(|(l, _)| format!("E_{l}")).collect();
    let _ = writeln!(text, "k,{}", header.join(","));
    for k in 0..=k_max {
        let _ = write!(text, "{k}");
        for (_, report) in &series {
            let _ = write!(text, ",{}", report.energy.get(k).copied().unwrap_or(0.0));
        }
        text.push('\n');
    }
    fs::write(&out, text)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn sweep_cmd(
    checkpoint: PathBuf,
    data_dir: Option<PathBuf>,
    resolutions: Vec<usize>,
    out: PathBuf,
    threads: usize,
) -> Result<()> {
    if resolutions.is_empty() {
        return Err(Error::Config("pass at least one resolution to sweep".into()));
    }
    let dir = data_root(data_dir);
    let mut rs = resolutions;
    rs.sort_unstable();
    rs.dedup();
    let missing: Vec<String> = rs
        .iter()
        .map(|r| dir.join(format!("test_{r}.saotds")))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing test files: {}", missing.join(", "))));
    }
    let cp = load_checkpoint(&checkpoint)?;
    let model = cp.rebuild()?;
    let workers = resolve_workers(threads);

    let mut text = format!(
        "# checkpoint = {}, variant = {}, train_resolution = {}\n",
        checkpoint.display(),
        cp.model.variant,
        cp.train_resolution
    );
    text.push_str("resolution,mean_rel_l2,is_training_resolution\n");
    let mut best: Option<(usize, f64)> = None;
    for &r in &rs {
        let samples = read_samples(&dir.join(format!("test_{r}.saotds")))?;
        if samples.is_empty() {
            return Err(Error::Config(format!("test_{r}.saotds has no samples")));
        }
        let m = mean(&checkpoint_errors(&cp, &model, &samples, workers)?);
        if !m.is_finite() {
            return Err(Error::Numeric(format!("mean rel-L2 at resolution {r} is not finite")));
        }
        let marker = r == cp.train_resolution;
        let _ = writeln!(text, "{r},{m},{marker}");
        println!("{r:>5}  {m:.6}{}", if marker { "  <- training resolution" } else { "" });
        if best.map_or(true, |(_, b)| m < b) {
            best = Some((r, m));
        }
    }
    if let Some((r, _)) = best {
        println!("minimum at resolution {r}");
    }
    fs::write(&out, text)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn time_median(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?; // warm-up, untimed
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_values(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("bench shapes are valid")
}

pub fn bench_cmd(sizes: Vec<usize>, dim: usize, repeats: usize, out: PathBuf) -> Result<()> {
    if sizes.is_empty() || repeats == 0 || dim == 0 {
        return Err(Error::Config("bench needs token counts, a width, and repeats".into()));
    }
    for &n in &sizes {
        if !n.is_power_of_two() || n < 4 {
            return Err(Error::Config(format!(
                "token counts must be powers of two >= 4 so the grid mixer gets fast-transform sides, got {n}"
            )));
        }
    }
    let mode_blocks = if dim % 8 == 0 { 8 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rows: Vec<(&str, usize, f64)> = Vec::new();

    for &n in &sizes {
        let q = random_tensor(&mut rng, &[n, dim]);
        let k = random_tensor(&mut rng, &[n, dim]);
        let v = random_tensor(&mut rng, &[n, dim]);
        let secs = time_median(repeats, || linear_attention(&q, &k, &v).map(|_| ()))?;
        rows.push(("linear_attention", n, secs));
    }
    for &n in &sizes {
        let h = 1usize << (n.trailing_zeros() / 2);
        let w = n / h;
        let x = random_tensor(&mut rng, &[h, w, dim]);
        let mut store = ParameterStore::new(7);
        let params =
            FourierAttentionParams::init(&mut store, "bench", dim, mode_blocks, 1, Activation::Gelu)?;
        let secs = time_median(repeats, || fourier_attention(&x, &store, &params).map(|_| ()))?;
        rows.push(("fourier_attention", n, secs));
    }

    let mut text = format!(
        "# width = {dim}, repeats = {repeats} (median), grids are the most-square power-of-two split of n\n"
    );
    text.push_str("mixer,n,seconds\n");
    for (mixer, n, secs) in &rows {
        let _ = writeln!(text, "{mixer},{n},{secs}");
    }
    fs::write(&out, text)?;
    for mixer in ["linear_attention", "fourier_attention"] {
        let series: Vec<(usize, f64)> = rows
            .iter()
            .filter(|(m, _, _)| *m == mixer)
            .map(|&(_, n, s)| (n, s))
            .collect();
        print!("{mixer}:");
        for window in series.windows(2) {
            print!("  {}->{}: x{:.2}", window[0].0, window[1].0, window[1].1 / window[0].1);
        }
        println!();
    }
    println!("wrote {}", out.display());
    Ok(())
}
