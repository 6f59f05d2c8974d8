//! Acceptance gate: ten structural checks covering transforms, attention,
//! gradients, the Darcy pipeline, training behavior, and the CLI contract.
//! Each test prints one `criterion N: PASS/FAIL` line; run with
//! `cargo test --test acceptance -- --nocapture` to see them all. Tests are
//! named so the expensive trained-model fixture is built by criterion 6 and
//! reused by 7 and 8.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use saot_core::attention::{linear_attention, FourierAttentionParams, ATTENTION_EPS};
use saot_core::checkpoint::Checkpoint;
use saot_core::darcy::{
    generate, sample_coefficient, solve_grid, solver_residual, GenerationConfig,
    SOLVER_TOLERANCE,
};
use saot_core::dataset::{read_dataset, write_dataset};
use saot_core::gradcheck::{grad_check, LossAndGrads};
use saot_core::model::{relative_l2_node, ModelConfig, ModelParams, Variant};
use saot_core::spectral::{fft2, fwt_haar, ifft2, ifwt_haar};
use saot_core::spectrum::energy_spectrum;
use saot_core::tape::{Activation, Binding, NodeId, Tape};
use saot_core::tensor::{ParameterStore, Tensor};

type Check = Result<String, String>;

fn verdict(n: usize, outcome: Check) {
    match outcome {
        Ok(detail) => println!("criterion {n}: PASS - {detail}"),
        Err(detail) => {
            println!("criterion {n}: FAIL - {detail}");
            panic!("criterion {n}: {detail}");
        }
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_values(shape, values).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn saot() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_saot"));
    c.env_remove("SAOT_DATA_DIR");
    c
}

/// Run the binary expecting success; returns stdout.
fn run_ok(cmd: &mut Command) -> Result<String, String> {
    let out = cmd.output().map_err(err)?;
    if !out.status.success() {
        return Err(format!(
            "{cmd:?} exited with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Run the binary expecting a specific failure exit code.
fn run_expecting(cmd: &mut Command, code: i32) -> Result<String, String> {
    let out = cmd.output().map_err(err)?;
    let got = out.status.code();
    if got != Some(code) {
        return Err(format!(
            "{cmd:?} exited with {got:?}, wanted {code}; stderr: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Data rows of a CSV artifact, with `#` comment lines and the header split
/// off for inspection.
fn read_csv(path: &Path) -> Result<(String, String, Vec<Vec<String>>), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut comments = String::new();
    let mut header = String::new();
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') {
            comments.push_str(line);
            comments.push('\n');
        } else if header.is_empty() {
            header = line.to_string();
        } else if !line.is_empty() {
            rows.push(line.split(',').map(str::to_string).collect());
        }
    }
    Ok((comments, header, rows))
}

// ---------------------------------------------------------------------------
// criterion 1: transform round trips and energy identities

#[test]
fn criterion_01_transform_exactness() {
    verdict(1, check_transforms());
}

fn check_transforms() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let x = rand_tensor(&mut rng, &[64, 64, 8]);
    let energy: f64 = x.values.iter().map(|v| v * v).sum();

    let sub = fwt_haar(&x).map_err(err)?;
    let back = ifwt_haar(&sub).map_err(err)?;
    let haar_rt = max_abs_diff(&back.values, &x.values);
    let haar_energy = (sub.total_energy() - energy).abs() / energy;

    let spec = fft2(&x).map_err(err)?;
    let back = ifft2(&spec).map_err(err)?;
    let fft_rt = max_abs_diff(&back.values, &x.values);
    let parseval = (spec.total_power() - 64.0 * 64.0 * energy).abs() / (64.0 * 64.0 * energy);

    let secs = t0.elapsed().as_secs_f64();
    if haar_rt >= 1e-10 || fft_rt >= 1e-10 {
        return Err(format!("round trip error haar {haar_rt:.3e}, fft {fft_rt:.3e}"));
    }
    if haar_energy >= 1e-10 || parseval >= 1e-10 {
        return Err(format!(
            "energy identities off: haar {haar_energy:.3e}, parseval {parseval:.3e} relative"
        ));
    }
    if secs >= 5.0 {
        return Err(format!("took {secs:.1} s, budget 5 s"));
    }
    Ok(format!(
        "64x64x8 round trips {haar_rt:.1e}/{fft_rt:.1e} max abs, energy identities \
         {haar_energy:.1e}/{parseval:.1e} relative, {secs:.2} s"
    ))
}

// ---------------------------------------------------------------------------
// criterion 2: linearized attention against a direct quadratic evaluation

fn phi(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// O(n^2 d) evaluation: out_i = sum_j phi(q_i).phi(k_j) v_j / (sum_j phi(q_i).phi(k_j) + eps).
fn direct_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<f64> {
    let (n, d) = (q.shape[0], q.shape[1]);
    let fq: Vec<f64> = q.values.iter().copied().map(phi).collect();
    let fk: Vec<f64> = k.values.iter().copied().map(phi).collect();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let mut denom = 0.0;
        let mut numer = vec![0.0; d];
        for j in 0..n {
            let sim: f64 = (0..d).map(|c| fq[i * d + c] * fk[j * d + c]).sum();
            denom += sim;
            for c in 0..d {
                numer[c] += sim * v.values[j * d + c];
            }
        }
        for c in 0..d {
            out[i * d + c] = numer[c] / (denom + ATTENTION_EPS);
        }
    }
    out
}

#[test]
fn criterion_02_attention_oracle_equivalence() {
    verdict(2, check_attention_oracle());
}

fn check_attention_oracle() -> Check {
    let t0 = Instant::now();
    let mut worst = (0.0f64, 0usize, 0usize, 0u64);
    for &n in &[1usize, 7, 64, 256] {
        for &d in &[4usize, 16] {
            for seed in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(20_000 + seed * 97 + (n * 16 + d) as u64);
                let q = rand_tensor(&mut rng, &[n, d]);
                let k = rand_tensor(&mut rng, &[n, d]);
                let v = rand_tensor(&mut rng, &[n, d]);
                let fast = linear_attention(&q, &k, &v).map_err(err)?;
                let slow = direct_attention(&q, &k, &v);
                let rel = rel_l2(&fast.values, &slow);
                if rel > worst.0 {
                    worst = (rel, n, d, seed);
                }
                if rel >= 1e-8 {
                    return Err(format!("n={n} d={d} seed={seed}: relative error {rel:.3e}"));
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 30.0 {
        return Err(format!("took {secs:.1} s, budget 30 s"));
    }
    Ok(format!(
        "160 cases, worst relative error {:.1e} at n={} d={} seed={}, {secs:.2} s",
        worst.0, worst.1, worst.2, worst.3
    ))
}

// ---------------------------------------------------------------------------
// criterion 3: fourier-attention identities

fn shift_grid(x: &Tensor, dh: usize, dw: usize) -> Tensor {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let mut out = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            let (si, sj) = ((i + dh) % h, (j + dw) % w);
            for ch in 0..c {
                out[(si * w + sj) * c + ch] = x.values[(i * w + j) * c + ch];
            }
        }
    }
    Tensor::from_values(&[h, w, c], out).unwrap()
}

#[test]
fn criterion_03_fourier_attention_identities() {
    verdict(3, check_fourier_identities());
}

fn check_fourier_identities() -> Check {
    use saot_core::attention::fourier_attention;

    let mut rng = ChaCha8Rng::seed_from_u64(301);

    let mut store = ParameterStore::new(302);
    let p = FourierAttentionParams::init(&mut store, "fa", 8, 4, 1, Activation::Identity)
        .map_err(err)?;
    p.set_identity(&mut store).map_err(err)?;
    let x = rand_tensor(&mut rng, &[16, 16, 8]);
    let out = fourier_attention(&x, &store, &p).map_err(err)?;
    let doubled: Vec<f64> = x.values.iter().map(|v| 2.0 * v).collect();
    let identity_rel = rel_l2(&out.values, &doubled);
    if identity_rel >= 1e-8 {
        return Err(format!("identity mode map: relative error {identity_rel:.3e} vs 2X"));
    }

    let mut store = ParameterStore::new(303);
    let p = FourierAttentionParams::init(&mut store, "fa", 8, 2, 2, Activation::Gelu)
        .map_err(err)?;
    p.set_zero(&mut store).map_err(err)?;
    let x = rand_tensor(&mut rng, &[12, 16, 8]);
    let out = fourier_attention(&x, &store, &p).map_err(err)?;
    if out.values != x.values {
        let diff = max_abs_diff(&out.values, &x.values);
        return Err(format!("zero mode map is not an exact identity, max abs diff {diff:.3e}"));
    }

    // integer circular shifts phase-rotate each mode; with identity
    // activation and zero biases the mode map is complex-linear and the
    // mixer commutes with the shift
    let mut store = ParameterStore::new(304);
    let p = FourierAttentionParams::init(&mut store, "fa", 8, 4, 1, Activation::Identity)
        .map_err(err)?;
    p.zero_biases(&mut store).map_err(err)?;
    let x = rand_tensor(&mut rng, &[16, 12, 8]);
    let base = fourier_attention(&x, &store, &p).map_err(err)?;
    let mut shift_worst = 0.0f64;
    for (dh, dw) in [(1usize, 0usize), (0, 1), (3, 2), (7, 5)] {
        let out = fourier_attention(&shift_grid(&x, dh, dw), &store, &p).map_err(err)?;
        let want = shift_grid(&base, dh, dw);
        let rel = rel_l2(&out.values, &want.values);
        shift_worst = shift_worst.max(rel);
        if rel >= 1e-8 {
            return Err(format!("shift ({dh},{dw}) equivariance error {rel:.3e}"));
        }
    }

    Ok(format!(
        "identity mode {identity_rel:.1e}, zero mode exact, worst shift error {shift_worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// criterion 4: finite-difference gradient verification, all variants

fn token_leaf(tape: &mut Tape, t: &Tensor) -> NodeId {
    let c = *t.shape.last().unwrap();
    tape.leaf(t.values.clone(), &[t.numel() / c, c])
}

#[test]
fn criterion_04_gradient_correctness() {
    verdict(4, check_gradients());
}

fn check_gradients() -> Check {
    let t0 = Instant::now();
    let mut details = Vec::new();
    for variant in [Variant::Fa, Variant::Wa, Variant::Sa] {
        let config = ModelConfig {
            variant,
            blocks: 1,
            width: 8,
            in_channels: 1,
            out_channels: 1,
            ratio: 1,
            fourier_blocks: 4,
            use_locality_conv: true,
            activation: Activation::Gelu,
            seed: 401,
        };
        let mut store = ParameterStore::new(402);
        let params = ModelParams::init(&mut store, &config).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(403);
        let pairs: Vec<(Tensor, Tensor)> = (0..2)
            .map(|_| {
                (
                    rand_tensor(&mut rng, &[8, 8, 1]),
                    rand_tensor(&mut rng, &[8, 8, 1]),
                )
            })
            .collect();
        // the loss sums two independent samples: a single probe can leave
        // individual gradient entries at a near-zero crossing, where the
        // finite-difference quotient is all roundoff and its relative error
        // unbounded; two summed probes keep every entry away from zero
        let f = move |store: &ParameterStore| -> saot_core::Result<LossAndGrads> {
            let mut total = 0.0;
            let mut grads = indexmap::IndexMap::new();
            for (a, u) in &pairs {
                let mut tape = Tape::new();
                let mut bind = Binding::new();
                let aid = token_leaf(&mut tape, a);
                let out = params.build(&mut tape, &mut bind, store, aid, 8, 8)?;
                let loss = relative_l2_node(&mut tape, out, u)?;
                let g = tape.backward(loss)?;
                total += tape.scalar(loss);
                for (name, vec) in bind.grads(&g) {
                    grads
                        .entry(name)
                        .and_modify(|acc: &mut Vec<f64>| {
                            acc.iter_mut().zip(&vec).for_each(|(x, y)| *x += y)
                        })
                        .or_insert(vec);
                }
            }
            Ok((total, grads))
        };
        // step 4e-4: the smallest gradient entries sit near 1e-8, so the
        // difference quotient needs a signal 2h|g| well above the loss's
        // f64 rounding jitter; h^2 truncation stays under the gate at this
        // step while smaller steps drown those entries in roundoff
        let report = grad_check(&f, &mut store, 4e-4).map_err(err)?;
        if report.max_rel_error >= 1e-4 {
            return Err(format!(
                "{variant}: worst offender {:?} at {:.3e} relative",
                report.worst(),
                report.max_rel_error
            ));
        }
        details.push(format!(
            "{variant} {:.1e} over {} entries",
            report.max_rel_error, report.entries_checked
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 300.0 {
        return Err(format!("took {secs:.0} s, budget 300 s"));
    }
    Ok(format!("{}, {secs:.1} s", details.join("; ")))
}

// ---------------------------------------------------------------------------
// criterion 5: darcy solver against a dense direct solve plus structure

/// Gaussian elimination with partial pivoting on a dense system.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, String> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err("singular dense system".into());
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            if m == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= m * a[col][c];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

#[test]
fn criterion_05_darcy_oracle() {
    verdict(5, check_darcy());
}

fn check_darcy() -> Check {
    // constant coefficient on 33x33: the five-point system is the plain
    // Laplacian, assembled here independently and solved densely
    let side = 33usize;
    let m = side - 2;
    let n = m * m;
    let inv_h2 = ((side - 1) * (side - 1)) as f64;
    let mut mat = vec![vec![0.0; n]; n];
    let mut rhs = vec![1.0; n];
    for i in 0..m {
        for j in 0..m {
            let p = i * m + j;
            mat[p][p] = 4.0 * inv_h2;
            if i > 0 {
                mat[p][p - m] = -inv_h2;
            }
            if i + 1 < m {
                mat[p][p + m] = -inv_h2;
            }
            if j > 0 {
                mat[p][p - 1] = -inv_h2;
            }
            if j + 1 < m {
                mat[p][p + 1] = -inv_h2;
            }
        }
    }
    let direct = dense_solve(mat, std::mem::take(&mut rhs))?;
    let ones = Tensor::constant(&[side, side, 1], 1.0);
    let u = solve_grid(&ones, 1.0).map_err(err)?;
    let interior: Vec<f64> = (1..side - 1)
        .flat_map(|i| (1..side - 1).map(move |j| (i, j)))
        .map(|(i, j)| u.values[i * side + j])
        .collect();
    let dense_rel = rel_l2(&interior, &direct);
    if dense_rel >= 1e-8 {
        return Err(format!("dense direct solve disagrees at {dense_rel:.3e} relative"));
    }

    // mirror symmetry and the discrete maximum principle on random fields
    let mut mirror_worst = 0.0f64;
    let mut min_value = f64::INFINITY;
    for s in 0..20u64 {
        let field = sample_coefficient(500 + s, 20, 20, 4.0, (3.0, 12.0), 0.0).map_err(err)?;
        let u = solve_grid(&field.a, 1.0).map_err(err)?;
        let (h, w) = (20usize, 20usize);
        let mut flipped = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                flipped[i * w + j] = field.a.values[i * w + (w - 1 - j)];
            }
        }
        let af = Tensor::from_values(&[h, w, 1], flipped).unwrap();
        let uf = solve_grid(&af, 1.0).map_err(err)?;
        for i in 0..h {
            for j in 0..w {
                let d = (uf.values[i * w + j] - u.values[i * w + (w - 1 - j)]).abs();
                mirror_worst = mirror_worst.max(d);
            }
        }
        min_value = min_value.min(u.values.iter().copied().fold(f64::INFINITY, f64::min));
    }
    if mirror_worst >= 1e-8 {
        return Err(format!("mirrored solve differs by {mirror_worst:.3e} max abs"));
    }
    if min_value <= -1e-10 {
        return Err(format!("maximum principle violated: minimum value {min_value:.3e}"));
    }

    // every emitted sample satisfies its own discrete system (checked at the
    // solve resolution, where the stencil equations are defined)
    let cfg = GenerationConfig {
        count: 20,
        seed: 900,
        resolution: 32,
        source_resolution: 32,
        ..GenerationConfig::default()
    };
    let samples = generate(&cfg).map_err(err)?;
    let mut residual_worst = 0.0f64;
    for s in &samples {
        let r = solver_residual(&s.a, &s.u, cfg.forcing).map_err(err)?;
        residual_worst = residual_worst.max(r);
        if r >= SOLVER_TOLERANCE {
            return Err(format!("emitted sample has residual {r:.3e}"));
        }
    }

    Ok(format!(
        "dense agreement {dense_rel:.1e}, mirror {mirror_worst:.1e}, minimum {min_value:.1e}, \
         worst residual {residual_worst:.1e} over {} samples",
        samples.len()
    ))
}

// ---------------------------------------------------------------------------
// criteria 6-8 share one expensive fixture: generated data at three
// resolutions plus the three-variant ablation trained at 32x32

struct AblationRow {
    variant: String,
    parameters: usize,
    initial_train: f64,
    final_train: f64,
    final_test: f64,
}

struct Fixture {
    data: PathBuf,
    ablate: PathBuf,
    rows: Vec<AblationRow>,
    table: String,
    wall: Duration,
}

fn fixture() -> Result<&'static Fixture, String> {
    static FIXTURE: OnceLock<Result<Fixture, String>> = OnceLock::new();
    FIXTURE.get_or_init(build_fixture).as_ref().map_err(Clone::clone)
}

fn build_fixture() -> Result<Fixture, String> {
    let base = scratch("trained");
    let data = base.join("data");
    let ablate = base.join("ablate");
    let t0 = Instant::now();
    run_ok(saot().args(["generate", "--out"]).arg(&data))?;
    run_ok(saot().args(["generate", "--set", "resolution=16", "--out"]).arg(&data))?;
    run_ok(saot().args(["generate", "--set", "resolution=64", "--out"]).arg(&data))?;
    let table = run_ok(saot().args(["ablate", "--data"]).arg(&data).arg("--out").arg(&ablate))?;
    let wall = t0.elapsed();

    let (_, header, raw) = read_csv(&ablate.join("ablation.csv"))?;
    if header != "variant,parameters,initial_train_rel_l2,final_train_rel_l2,final_test_rel_l2,best_test_rel_l2" {
        return Err(format!("unexpected ablation header: {header}"));
    }
    let mut rows = Vec::new();
    for r in &raw {
        if r.len() != 6 {
            return Err(format!("short ablation row: {r:?}"));
        }
        rows.push(AblationRow {
            variant: r[0].clone(),
            parameters: r[1].parse().map_err(err)?,
            initial_train: r[2].parse().map_err(err)?,
            final_train: r[3].parse().map_err(err)?,
            final_test: r[4].parse().map_err(err)?,
        });
    }
    Ok(Fixture { data, ablate, rows, table, wall })
}

#[test]
fn criterion_06_training_sanity() {
    verdict(6, check_training());
}

fn check_training() -> Check {
    let f = fixture()?;
    if f.rows.len() != 3 {
        return Err(format!("expected three ablation rows, got {}", f.rows.len()));
    }
    let mut details = Vec::new();
    for (row, want) in f.rows.iter().zip(["fa", "wa", "sa"]) {
        if row.variant != want {
            return Err(format!("row order: expected {want}, got {}", row.variant));
        }
        if row.parameters == 0 {
            return Err(format!("{want}: zero parameter count"));
        }
        let ok = [row.initial_train, row.final_train, row.final_test]
            .iter()
            .all(|v| v.is_finite());
        if !ok {
            return Err(format!("{want}: non-finite errors in the ablation table"));
        }
        if row.final_train >= 0.5 * row.initial_train {
            return Err(format!(
                "{want}: train rel-L2 {:.4} -> {:.4} misses the halving gate",
                row.initial_train, row.final_train
            ));
        }
        details.push(format!(
            "{want} {}p {:.3}->{:.3}",
            row.parameters, row.initial_train, row.final_train
        ));
    }
    let table_rows = f
        .table
        .lines()
        .filter(|l| ["fa ", "wa ", "sa "].iter().any(|v| l.starts_with(v)))
        .count();
    if table_rows < 3 {
        return Err(format!("printed table has {table_rows} data rows"));
    }
    let mins = f.wall.as_secs_f64() / 60.0;
    if mins >= 30.0 {
        return Err(format!("generation plus three trainings took {mins:.1} min, budget 30"));
    }
    Ok(format!("{}, {mins:.1} min for data plus three 200-epoch runs", details.join("; ")))
}

#[test]
fn criterion_07_super_resolution_sweep() {
    verdict(7, check_sweep());
}

fn check_sweep() -> Check {
    let f = fixture()?;
    let t0 = Instant::now();
    let out = f.data.parent().unwrap().join("sweep.csv");
    run_ok(
        saot()
            .args(["sweep", "--checkpoint"])
            .arg(f.ablate.join("model_sa.saotcp"))
            .args(["--data-dir"])
            .arg(&f.data)
            .args(["--resolutions", "16,32,64", "--out"])
            .arg(&out),
    )?;
    let (_, header, rows) = read_csv(&out)?;
    if header != "resolution,mean_rel_l2,is_training_resolution" {
        return Err(format!("unexpected sweep header: {header}"));
    }
    let mut parsed = Vec::new();
    for r in &rows {
        let res: usize = r[0].parse().map_err(err)?;
        let mean: f64 = r[1].parse().map_err(err)?;
        parsed.push((res, mean, r[2] == "true"));
    }
    if parsed.len() != 3 {
        return Err(format!("expected three sweep rows, got {}", parsed.len()));
    }
    let marked: Vec<usize> = parsed.iter().filter(|p| p.2).map(|p| p.0).collect();
    if marked != [32] {
        return Err(format!("training-resolution marker on {marked:?}, wanted [32]"));
    }
    let best = parsed
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    if best.0 != 32 {
        return Err(format!(
            "minimum mean rel-L2 at {}x{} ({:.4}), not at the training resolution; full sweep {:?}",
            best.0,
            best.0,
            best.1,
            parsed.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>()
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 300.0 {
        return Err(format!("sweep took {secs:.0} s, budget 300 s"));
    }
    Ok(format!(
        "mean rel-L2 {}, minimum at the training resolution, {secs:.1} s",
        parsed
            .iter()
            .map(|p| format!("{}:{:.4}", p.0, p.1))
            .collect::<Vec<_>>()
            .join(" ")
    ))
}

#[test]
fn criterion_08_spectrum_tooling() {
    verdict(8, check_spectrum());
}

fn check_spectrum() -> Check {
    // pure harmonic: cos(2 pi k i / h) with k = 3 lands in shell 3
    let (h, w) = (32usize, 32usize);
    let values: Vec<f64> = (0..h * w)
        .map(|p| (2.0 * std::f64::consts::PI * 3.0 * (p / w) as f64 / h as f64).cos())
        .collect();
    let harmonic = Tensor::from_values(&[h, w, 1], values).unwrap();
    let report = energy_spectrum(&harmonic).map_err(err)?;
    let share = report.energy[3] / report.non_dc_power();
    if share < 0.99 {
        return Err(format!("harmonic shell share {share:.4}, wanted at least 0.99"));
    }

    // Parseval on every report produced here
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let mut parseval_worst = 0.0f64;
    for field in [
        harmonic,
        rand_tensor(&mut rng, &[32, 32, 1]),
        rand_tensor(&mut rng, &[24, 16, 1]),
        rand_tensor(&mut rng, &[17, 9, 1]),
    ] {
        let rep = energy_spectrum(&field).map_err(err)?;
        let direct: f64 = field.values.iter().map(|v| v * v).sum::<f64>()
            * (field.shape[0] * field.shape[1]) as f64;
        let rel = (rep.total_power - direct).abs() / direct;
        let binned: f64 = rep.energy.iter().sum();
        let shells = (binned - rep.total_power).abs() / direct;
        parseval_worst = parseval_worst.max(rel).max(shells);
        if rel >= 1e-8 || shells >= 1e-8 {
            return Err(format!("parseval off by {rel:.3e}, shell sum by {shells:.3e}"));
        }
    }

    // three-series CSV from the two single-mixer checkpoints
    let f = fixture()?;
    let out = f.data.parent().unwrap().join("spectrum.csv");
    let stdout = run_ok(
        saot()
            .args(["spectrum", "--checkpoint"])
            .arg(f.ablate.join("model_fa.saotcp"))
            .args(["--checkpoint"])
            .arg(f.ablate.join("model_wa.saotcp"))
            .args(["--data"])
            .arg(f.data.join("test_32.saotds"))
            .args(["--index", "0", "--out"])
            .arg(&out),
    )?;
    let (comments, header, rows) = read_csv(&out)?;
    if header != "k,E_gt,E_fa,E_wa" {
        return Err(format!("unexpected spectrum header: {header}"));
    }
    if rows.len() < 17 {
        return Err(format!("only {} shells for a 32x32 grid", rows.len()));
    }
    for r in &rows {
        for cell in &r[1..] {
            let v: f64 = cell.parse().map_err(err)?;
            if !v.is_finite() || v < 0.0 {
                return Err(format!("bad energy value {cell}"));
            }
        }
    }
    if !comments.contains("high_shell_energy_ratio_fa")
        || !comments.contains("high_shell_energy_ratio_wa")
    {
        return Err("high-shell energy ratios missing from the CSV header".into());
    }
    let ratios: Vec<&str> = stdout
        .lines()
        .filter(|l| l.contains("high-shell energy ratio"))
        .collect();
    if ratios.len() != 2 {
        return Err(format!("expected two reported ratios, got {ratios:?}"));
    }

    Ok(format!(
        "harmonic share {share:.4}, parseval worst {parseval_worst:.1e}, \
         three-series CSV with {} shells; {}",
        rows.len(),
        ratios.join("; ")
    ))
}

// ---------------------------------------------------------------------------
// criterion 9: linearized attention scales close to linearly

#[test]
fn criterion_09_complexity_scaling() {
    verdict(9, check_scaling());
}

fn check_scaling() -> Check {
    let t0 = Instant::now();
    let d = 64usize;
    let sizes = [1024usize, 2048, 4096, 8192];
    let mut medians = Vec::new();
    for &n in &sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + n as u64);
        let q = rand_tensor(&mut rng, &[n, d]);
        let k = rand_tensor(&mut rng, &[n, d]);
        let v = rand_tensor(&mut rng, &[n, d]);
        linear_attention(&q, &k, &v).map_err(err)?;
        let mut times: Vec<f64> = (0..5)
            .map(|_| {
                let s = Instant::now();
                let out = linear_attention(&q, &k, &v).unwrap();
                let dt = s.elapsed().as_secs_f64();
                assert!(out.values[0].is_finite());
                dt
            })
            .collect();
        times.sort_by(f64::total_cmp);
        medians.push(times[2]);
    }
    let mut worst_ratio = 0.0f64;
    for pair in medians.windows(2) {
        worst_ratio = worst_ratio.max(pair[1] / pair[0]);
    }
    let secs = t0.elapsed().as_secs_f64();
    if worst_ratio > 2.5 {
        return Err(format!(
            "doubling ratio {worst_ratio:.2} over medians {medians:?}"
        ));
    }
    if secs >= 120.0 {
        return Err(format!("took {secs:.0} s, budget 120 s"));
    }
    Ok(format!(
        "medians {} ms, worst doubling ratio {worst_ratio:.2}, {secs:.1} s",
        medians
            .iter()
            .map(|t| format!("{:.2}", t * 1e3))
            .collect::<Vec<_>>()
            .join("/")
    ))
}

// ---------------------------------------------------------------------------
// criterion 10: serialization round trips and corruption handling

#[test]
fn criterion_10_serialization() {
    verdict(10, check_serialization());
}

fn check_serialization() -> Check {
    let base = scratch("serialization");

    // dataset bytes survive a read/write cycle untouched
    let cfg = GenerationConfig {
        count: 3,
        seed: 1000,
        resolution: 16,
        source_resolution: 16,
        ..GenerationConfig::default()
    };
    let samples = generate(&cfg).map_err(err)?;
    let first = base.join("a.saotds");
    let second = base.join("b.saotds");
    write_dataset(&samples, &first).map_err(err)?;
    let back = read_dataset(&first).map_err(err)?;
    write_dataset(&back, &second).map_err(err)?;
    let bytes_a = fs::read(&first).map_err(err)?;
    let bytes_b = fs::read(&second).map_err(err)?;
    if bytes_a != bytes_b {
        return Err("dataset round trip is not bit-exact".into());
    }

    // a small training run provides a real checkpoint and eval baseline
    let data = base.join("data");
    let run = base.join("run");
    run_ok(
        saot()
            .args([
                "generate", "--set", "count=4", "--set", "test_count=2", "--set",
                "resolution=8", "--set", "source_resolution=16", "--out",
            ])
            .arg(&data),
    )?;
    run_ok(
        saot()
            .args(["train", "--data"])
            .arg(&data)
            .args([
                "--epochs", "2", "--set", "resolution=8", "--set", "width=8", "--set",
                "fourier_blocks=4", "--set", "blocks=1", "--set", "batch_size=2", "--out",
            ])
            .arg(&run),
    )?;
    let model = run.join("model.saotcp");
    let cp = Checkpoint::load(&model).map_err(err)?;
    let copy = base.join("copy.saotcp");
    cp.save(&copy).map_err(err)?;
    let bytes_cp = fs::read(&model).map_err(err)?;
    let bytes_copy = fs::read(&copy).map_err(err)?;
    if bytes_cp != bytes_copy {
        return Err("checkpoint round trip is not bit-exact".into());
    }
    let test_set = data.join("test_8.saotds");
    run_ok(
        saot()
            .args(["eval", "--checkpoint"])
            .arg(&model)
            .args(["--data"])
            .arg(&test_set),
    )?;

    // flipped payload byte: validation failure, exit 2
    let mut corrupt = fs::read(&test_set).map_err(err)?;
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x01;
    let bad_data = base.join("corrupt.saotds");
    fs::write(&bad_data, &corrupt).map_err(err)?;
    let stderr_data = run_expecting(
        saot()
            .args(["eval", "--checkpoint"])
            .arg(&model)
            .args(["--data"])
            .arg(&bad_data),
        2,
    )?;
    if !stderr_data.contains("checksum") {
        return Err(format!("corrupt dataset error does not mention the checksum: {stderr_data}"));
    }

    // truncated dataset: exit 2
    let cut = base.join("truncated.saotds");
    fs::write(&cut, &corrupt[..corrupt.len() / 3]).map_err(err)?;
    run_expecting(
        saot().args(["eval", "--checkpoint"]).arg(&model).args(["--data"]).arg(&cut),
        2,
    )?;

    // flipped checkpoint byte: exit 2
    let mut bad_cp_bytes = bytes_cp.clone();
    let mid = bad_cp_bytes.len() / 2;
    bad_cp_bytes[mid] ^= 0x01;
    let bad_cp = base.join("corrupt.saotcp");
    fs::write(&bad_cp, &bad_cp_bytes).map_err(err)?;
    run_expecting(
        saot()
            .args(["eval", "--checkpoint"])
            .arg(&bad_cp)
            .args(["--data"])
            .arg(&test_set),
        2,
    )?;

    Ok(format!(
        "bit-exact round trips ({} dataset bytes, {} checkpoint bytes); corrupt and \
         truncated files exit 2",
        bytes_a.len(),
        bytes_cp.len()
    ))
}

