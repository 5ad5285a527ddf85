//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use dlpr::dataio::{
    load_dir, preprocess_dataset, split_indices, Provenance, SplitSpec, WindowedDataset,
};
use dlpr::features::{feature_dataset, TdThresholds};
use dlpr::nn::gradcheck::{layer_suite, model_check, LAYER_TOLERANCE, MODEL_TOLERANCE};
use dlpr::nn::{AdamConfig, Model, ModelSpec};
use dlpr::signal::{compute_moments, dft, mpp_mzp, preprocess_window, MomentSet};
use dlpr::trainer::{evaluate, run_baseline, train_dlpr, train_with_spec, Baseline, TrainConfig};
use rand::{RngExt, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(
        t < limit,
        format!("took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs()),
    )
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, format!("{what}: {a} vs {b}"))
}

fn rel_close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    let scale = a.abs().max(b.abs());
    ensure((a - b).abs() <= tol * scale, format!("{what}: {a} vs {b}"))
}

/// Moments straight from the definitions, with the second difference taken
/// in one step rather than by differencing twice.
fn oracle_moments(x: &[f64]) -> (f64, f64, f64) {
    let mu0 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mu2 = x
        .windows(2)
        .map(|w| (w[1] - w[0]).powi(2))
        .sum::<f64>()
        .sqrt();
    let mu4 = x
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).powi(2))
        .sum::<f64>()
        .sqrt();
    (mu0, mu2, mu4)
}

fn all_fields(m: &MomentSet) -> [f64; 7] {
    [m.mu0, m.mu2, m.mu4, m.psi, m.phi, m.mpp, m.mzp]
}

fn moment_oracle_suite() -> Outcome {
    let start = Instant::now();
    // (window, mu0, mu2, mu4, psi, phi, mpp, mzp) by hand
    let s3 = 3f64.sqrt();
    let fixtures: [(&[f64], [f64; 7]); 3] = [
        (
            &[1.0, 2.0, 3.0, 4.0],
            [30f64.sqrt(), s3, 0.0, 0.0, 0.1f64.sqrt(), 0.0, s3],
        ),
        (&[0.0, 0.0, 0.0, 0.0], [0.0; 7]),
        (
            &[1.0, -1.0, 1.0, -1.0],
            [
                2.0,
                12f64.sqrt(),
                32f64.sqrt(),
                32f64.sqrt() / 12f64.sqrt(),
                12f64.sqrt() / 2.0,
                2.0 * 32f64.sqrt() / 12f64.sqrt(),
                12f64.sqrt(),
            ],
        ),
    ];
    for (x, want) in &fixtures {
        let m = mpp_mzp(compute_moments(x).map_err(|e| e.to_string())?);
        for (got, exp) in all_fields(&m).iter().zip(want) {
            close(*got, *exp, 1e-12, &format!("fixture {x:?}"))?;
        }
    }
    // published rounded values
    let m = mpp_mzp(compute_moments(&[1.0, -1.0, 1.0, -1.0]).unwrap());
    close(m.psi, 1.6330, 5e-5, "psi")?;
    close(m.mpp, 3.2660, 5e-5, "mpp")?;
    let v = preprocess_window(&[&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, 1.0, -1.0]]).unwrap();
    for (got, exp) in v
        .iter()
        .zip([0.0, 2.0 * 32f64.sqrt() / 12f64.sqrt(), s3, 12f64.sqrt()])
    {
        close(*got, exp, 1e-12, "two-channel preprocessed vector")?;
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2024);
    for i in 0..10_000 {
        let n = rng.random_range(3..=300);
        let x: Vec<f64> = match i % 20 {
            0 => vec![0.0; n],
            1 => vec![rng.random_range(-5.0..5.0); n],
            _ => {
                let scale = 10f64.powf(rng.random_range(-3.0..3.0));
                (0..n)
                    .map(|_| scale * rng.random_range(-1.0..1.0))
                    .collect()
            }
        };
        let m = mpp_mzp(compute_moments(&x).map_err(|e| e.to_string())?);
        ensure(
            all_fields(&m).iter().all(|v| v.is_finite() && *v >= 0.0),
            format!("negative or non-finite field for window {i}"),
        )?;
        if i % 20 == 0 {
            ensure(all_fields(&m) == [0.0; 7], "zero window must map to zeros")?;
            continue;
        }
        if i % 20 == 1 {
            ensure(
                m.psi == 0.0 && m.phi == 0.0 && m.mzp == 0.0,
                "constant window guard",
            )?;
            continue;
        }
        let (mu0, mu2, mu4) = oracle_moments(&x);
        rel_close(m.mu0, mu0, 1e-12, "mu0")?;
        rel_close(m.mu2, mu2, 1e-12, "mu2")?;
        rel_close(m.mu4, mu4, 1e-12, "mu4")?;
        let a = 10f64.powf(rng.random_range(-2.0..2.0));
        let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
        let ms = mpp_mzp(compute_moments(&scaled).unwrap());
        rel_close(ms.psi, m.psi, 1e-9, "psi scale invariance")?;
        rel_close(ms.phi, m.phi, 1e-9, "phi scale invariance")?;
        rel_close(ms.mpp, a * m.mpp, 1e-9, "mpp scaling")?;
        rel_close(ms.mzp, a * m.mzp, 1e-9, "mzp scaling")?;
    }
    within(start, Duration::from_secs(5))?;
    Ok("3 fixtures + 10000 fuzzed windows".into())
}

fn parseval() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=512);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = dft(&x).energy.iter().sum();
        worst = worst.max((time - freq).abs() / time);
    }
    ensure(worst < 1e-9, format!("max relative error {worst:e}"))?;
    within(start, Duration::from_secs(5))?;
    Ok(format!("max relative error {worst:.2e}"))
}

fn shape_chain() -> Outcome {
    let spec = ModelSpec::dlpr(24, 13);
    let got: Vec<(usize, usize)> = spec
        .shape_chain()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|s| (s.length, s.maps))
        .collect();
    let want = [
        (18, 128),
        (14, 128),
        (7, 128),
        (5, 64),
        (1, 64),
        (1, 512),
        (1, 128),
    ];
    ensure(got[..7] == want, format!("chain {got:?}"))?;
    // the same shapes out of an actual forward pass
    let model = Model::new(spec, 0).map_err(|e| e.to_string())?;
    let traced = model.trace_shapes(2).map_err(|e| e.to_string())?;
    let seen: Vec<Vec<usize>> = traced.into_iter().map(|(_, s)| s).collect();
    for s in [
        vec![2, 128, 18],
        vec![2, 128, 14],
        vec![2, 128, 7],
        vec![2, 64, 5],
        vec![2, 64],
        vec![2, 512],
        vec![2, 128],
    ] {
        ensure(
            seen.contains(&s),
            format!("forward pass never produced {s:?}"),
        )?;
    }
    Ok("18x128 14x128 7x128 5x64 64 512 128".into())
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst_layer = 0.0f64;
    for r in layer_suite(3).map_err(|e| e.to_string())? {
        ensure(
            r.passes(LAYER_TOLERANCE),
            format!("{}: {:e}", r.name, r.max_rel_error),
        )?;
        worst_layer = worst_layer.max(r.max_rel_error);
    }
    let m = model_check(3).map_err(|e| e.to_string())?;
    ensure(
        m.passes(MODEL_TOLERANCE),
        format!("full model: {:e}", m.max_rel_error),
    )?;
    within(start, Duration::from_secs(60))?;
    Ok(format!(
        "worst layer {worst_layer:.2e}, full model {:.2e}",
        m.max_rel_error
    ))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(32);
    let mut ds = WindowedDataset::default();
    for i in 0..32 {
        let row = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let label = rng.random_range(0..4);
        ds.push(
            row,
            label,
            "noise",
            Provenance {
                start: i,
                ..Default::default()
            },
        );
    }
    // full-batch steps so batch statistics match the running statistics
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 200,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::with_seed(32)
    };
    let (model, metrics) =
        train_with_spec(&ds, None, &cfg, ModelSpec::toy(4)).map_err(|e| e.to_string())?;
    let acc = evaluate(&model, &ds).map_err(|e| e.to_string())?.accuracy;
    ensure(acc == 1.0, format!("training accuracy {acc}"))?;
    within(start, Duration::from_secs(60))?;
    let first = metrics
        .train_curve
        .iter()
        .position(|&a| a == 1.0)
        .map_or(0, |e| e + 1);
    Ok(format!(
        "100% training accuracy, first reached at epoch {first}"
    ))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dlpr")
}

fn dlpr(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!(
            "dlpr {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

fn metrics(dir: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(dir.join("metrics.json")).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn accuracy_of(dir: &Path) -> Result<f64, String> {
    metrics(dir)?["accuracy"]
        .as_f64()
        .ok_or_else(|| "metrics.json has no accuracy".into())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn train_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data", data, "--window", "300", "--shift", "50", "--batch", "100", "--epochs",
        "50", "--seed", "1", "--out", out,
    ]
}

fn end_to_end(root: &Path) -> Outcome {
    let start = Instant::now();
    let data = root.join("synth");
    let run = root.join("run1");
    dlpr(&[
        "synth",
        "--classes",
        "5",
        "--channels",
        "4",
        "--seed",
        "7",
        "--out",
        s(&data),
    ])?;
    dlpr(&train_args(s(&data), s(&run)))?;
    let acc = accuracy_of(&run)?;
    ensure(run.join("model.dlprm").is_file(), "no model file written")?;
    ensure(acc >= 0.95, format!("dlpr accuracy {acc}"))?;
    let mut baselines = Vec::new();
    for model in ["knn", "lda"] {
        let out = root.join(model);
        dlpr(&[
            "train",
            "--data",
            s(&data),
            "--model",
            model,
            "--window-ms",
            "200",
            "--increment-ms",
            "75",
            "--seed",
            "1",
            "--out",
            s(&out),
        ])?;
        let a = accuracy_of(&out)?;
        ensure(a >= 0.80, format!("{model} accuracy {a}"))?;
        baselines.push(a);
    }
    within(start, Duration::from_secs(300))?;
    Ok(format!(
        "dlpr {acc:.4}, knn {:.4}, lda {:.4} in {:.0} s",
        baselines[0],
        baselines[1],
        start.elapsed().as_secs_f64()
    ))
}

fn determinism(root: &Path) -> Outcome {
    let data = root.join("synth");
    let (a, b) = (root.join("run1"), root.join("run2"));
    ensure(a.join("model.dlprm").is_file(), "first run missing")?;
    dlpr(&train_args(s(&data), s(&b)))?;
    let read = |p: PathBuf| std::fs::read(p).map_err(|e| e.to_string());
    ensure(
        read(a.join("model.dlprm"))? == read(b.join("model.dlprm"))?,
        "model files differ",
    )?;
    let strip = |mut v: serde_json::Value| {
        v.as_object_mut().map(|o| o.remove("training_time_sec"));
        v
    };
    ensure(strip(metrics(&a)?) == strip(metrics(&b)?), "metrics differ")?;
    for f in ["confusion.csv", "curves.csv"] {
        ensure(read(a.join(f))? == read(b.join(f))?, format!("{f} differs"))?;
    }
    Ok("model.dlprm, metrics.json (timing excluded), confusion.csv, curves.csv identical".into())
}

fn batch_sweep(root: &Path) -> Outcome {
    let data = root.join("synth");
    let out = root.join("sweep");
    dlpr(&["sweep", "--data", s(&data), "--seed", "1", "--out", s(&out)])?;
    let summary = std::fs::read_to_string(out.join("summary.csv")).map_err(|e| e.to_string())?;
    let batches: Vec<&str> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap_or(""))
        .collect();
    ensure(
        batches == ["50", "100", "150"],
        format!("summary rows {batches:?}"),
    )?;
    let mut accs = Vec::new();
    for b in [50, 100, 150] {
        let dir = out.join(format!("batch_{b}"));
        let m = metrics(&dir)?;
        ensure(
            m["batch_size"].as_u64() == Some(b),
            format!("batch_{b} metrics mislabeled"),
        )?;
        ensure(
            dir.join("model.dlprm").is_file(),
            format!("batch_{b} model missing"),
        )?;
        accs.push(format!("{b}: {:.4}", accuracy_of(&dir)?));
    }
    Ok(accs.join(", "))
}

/// Real-data floor on one converted DB1 subject.
fn ninapro_db1(path: &Path) -> Outcome {
    let recs = load_dir(path).map_err(|e| e.to_string())?;
    let pre = preprocess_dataset(&recs, 100, 10).map_err(|e| e.to_string())?;
    let td = feature_dataset(&recs, 100, 10, TdThresholds::default()).map_err(|e| e.to_string())?;
    // rest plus the 12 basic finger movements
    let keep: Vec<usize> = (0..pre.len()).filter(|&i| pre.labels[i] <= 12).collect();
    let (pre, td) = (pre.subset(&keep), td.subset(&keep));
    let (tr, te) = split_indices(&pre, &SplitSpec::with_seed(1)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::with_seed(1);
    let (_, m) =
        train_dlpr(&pre.subset(&tr), Some(&pre.subset(&te)), &cfg).map_err(|e| e.to_string())?;
    let lda = run_baseline(
        &td.subset(&tr),
        &td.subset(&te),
        Baseline::Lda {
            priors: Default::default(),
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(m.accuracy >= 0.25, format!("dlpr accuracy {}", m.accuracy))?;
    ensure(
        m.accuracy > lda.accuracy,
        format!("dlpr {} does not beat lda {}", m.accuracy, lda.accuracy),
    )?;
    Ok(format!("dlpr {:.4} vs lda {:.4}", m.accuracy, lda.accuracy))
}

fn report(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|_| Err("panicked".into()));
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS  {name:<24} {secs:>7.2} s  {detail}");
            true
        }
        Err(why) => {
            println!("FAIL  {name:<24} {secs:>7.2} s  {why}");
            false
        }
    }
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let root = root.path();
    let mut ok = true;
    ok &= report("moment_oracle_suite", moment_oracle_suite);
    ok &= report("parseval", parseval);
    ok &= report("shape_chain", shape_chain);
    ok &= report("gradient_checks", gradient_checks);
    ok &= report("overfit_toy", overfit);
    ok &= report("end_to_end_synthetic", || end_to_end(root));
    ok &= report("determinism", || determinism(root));
    ok &= report("batch_sweep", || batch_sweep(root));
    match std::env::var_os("DLPR_NINAPRO_DB1") {
        Some(p) => ok &= report("ninapro_db1_sanity", || ninapro_db1(Path::new(&p))),
        None => println!(
            "SKIP  {:<24} set DLPR_NINAPRO_DB1 to a converted DB1 exercise-A recording or directory",
            "ninapro_db1_sanity"
        ),
    }
    if !ok {
        std::process::exit(1);
    }
}
