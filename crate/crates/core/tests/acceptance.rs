//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use opticnn::cnn::{
    median_by_sigma, perturbation_experiment, predicted_class, ImageTensor, LayerSpec, Network, SweepConfig,
};
use opticnn::delayline::{simulate_repatching, table1_plan, DelayParams};
use opticnn::energy::{
    alexnet, alexnet_optical, electronic_report, hybrid_energy, optical_energy, ElectronicParams, HybridParams,
    OpticalEnergyParams,
};
use opticnn::io::{parse_idx, Dataset, IdxFile, IMAGES_MAGIC, LABELS_MAGIC};
use opticnn::photonic::PatchStream;
use opticnn::reck::{extract_phases, random_orthogonal, reconstruct_orthogonal, rotation_count};
use opticnn::{Error, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_test() -> Dataset {
    let dir = repo_root().join("data/mnist");
    Dataset::load(&dir.join("t10k-images-idx3-ubyte.gz"), &dir.join("t10k-labels-idx1-ubyte.gz"))
        .expect("committed MNIST test set")
}

fn reference_network() -> Network {
    let text = std::fs::read_to_string(repo_root().join("data/reference_weights.json")).expect("reference weights");
    Network::from_json(&text).expect("valid weights file")
}

fn mesh_round_trip() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for n in [2usize, 4, 8, 16, 32, 64] {
        let errors = Execution::default().map_range(100, |i| {
            let u = random_orthogonal(n, (n * 1000 + i) as u64);
            let s = extract_phases(&u);
            assert_eq!(s.thetas().len(), rotation_count(n));
            assert_eq!(rotation_count(n), n * (n - 1) / 2);
            reconstruct_orthogonal(&s).matrix().max_abs_diff(u.matrix())
        });
        worst = errors.into_iter().fold(worst, f64::max);
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-9 && elapsed < Duration::from_secs(30),
        format!("600 matrices, max error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn delay_table() -> Outcome {
    let rows = table1_plan(3e9).map_err(|e| e.to_string())?;
    let got: Vec<_> = rows.iter().map(|r| (r.dt, r.d_t, r.max_len)).collect();
    let want = vec![(1, 55, 224), (2, 110, 224), (4, 220, 448), (8, 440, 896), (8, 440, 5376)];
    check(got == want, format!("(dt, dT, max) = {got:?}"))
}

fn small_repatch() -> Outcome {
    let outputs = PatchStream::from_flat(1, (0..9).map(f64::from).collect()).unwrap();
    let g = opticnn::cnn::LayerGeometry::new(3, 2, 1, 0, 1, 1).unwrap();
    let trace = simulate_repatching(&outputs, &g, &DelayParams::new(1, 3, 1.0).unwrap()).map_err(|e| e.to_string())?;
    let groups: Vec<Vec<f64>> = [[0, 1, 3, 4], [1, 2, 4, 5], [3, 4, 6, 7], [4, 5, 7, 8]]
        .iter()
        .map(|g| g.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let (v, i) = (trace.schedule.valid_times.len(), trace.schedule.invalid_count());
    check(
        v == 4 && i == 5 && trace.patches.to_vectors() == groups,
        format!("{v} valid at {:?}, {i} invalid", trace.schedule.valid_times),
    )
}

/// Window slicing of a `w×w×d` pixel-major tensor.
fn im2col(flat: &[f64], w: usize, d: usize, k: usize, s: usize) -> Vec<Vec<f64>> {
    let n = (w - k) / s + 1;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let mut v = Vec::with_capacity(k * k * d);
            for a in 0..k {
                for b in 0..k {
                    let base = ((i * s + a) * w + j * s + b) * d;
                    v.extend_from_slice(&flat[base..base + d]);
                }
            }
            out.push(v);
        }
    }
    out
}

fn repatch_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut done = 0;
    let mut worst = 0.0f64;
    while done < 50 {
        let (w, k, s, d) = (rng.random_range(1..=12), rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=4));
        if k > w || (w - k) % s != 0 {
            continue;
        }
        let flat: Vec<f64> = (0..w * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let outputs = PatchStream::from_flat(d, flat.clone()).unwrap();
        let g = opticnn::cnn::LayerGeometry::new(w, k, s, 0, d, 1).unwrap();
        let params = DelayParams::new(1, w as u64, 1.0).unwrap();
        let trace = simulate_repatching(&outputs, &g, &params).map_err(|e| e.to_string())?;
        let oracle = im2col(&flat, w, d, k, s);
        if trace.patches.len() != oracle.len() {
            return Err(format!("w={w} k={k} s={s} d={d}: {} patches vs {}", trace.patches.len(), oracle.len()));
        }
        for (a, b) in trace.patches.iter().zip(&oracle) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        done += 1;
    }
    check(worst < 1e-12, format!("50 geometries, max deviation {worst:.1e}"))
}

fn optical_table() -> Outcome {
    let r = optical_energy(&alexnet_optical(), &OpticalEnergyParams::published()).map_err(|e| e.to_string())?;
    let published = [1452000.0, 3872000.0, 5808000.0, 5808000.0, 3872000.0, 20480.0, 20480.0, 5000.0];
    let worst_row = r.rows.iter().zip(published).map(|(row, p)| rel(row.energy_j, p * 1e-10)).fold(0.0, f64::max);
    let total = rel(r.total_energy_j, 20_857_960e-10);
    let coef = r.metric("closed_form_coefficient").unwrap();
    check(
        worst_row <= 0.005 && total <= 0.005 && rel(coef, 1.26e11) <= 0.01,
        format!(
            "worst row {:.3}%, total {:.6e} J ({:.3}%), coefficient {coef:.4e}, unrounded total {:.4e} J",
            worst_row * 100.0,
            r.total_energy_j,
            total * 100.0,
            r.metric("total_energy_unrounded_j").unwrap()
        ),
    )
}

fn electronic_table() -> Outcome {
    let r = electronic_report(&alexnet(), &ElectronicParams::published()).map_err(|e| e.to_string())?;
    let t = r.metric("time_per_image_s").unwrap();
    let opt = r.metric("optical_time_s").unwrap();
    let speedup = r.metric("speedup").unwrap();
    check(
        r.total_count == 2_549_433_408
            && rel(r.total_energy_j, 5.7e-3) <= 0.01
            && rel(t, 2.28e-5) <= 0.01
            && rel(opt, 1.008e-6) <= 1e-3
            && rel(speedup, 22.6) <= 0.01
            && r.metric("published_speedup") == Some(30.0)
            && !r.notes.is_empty(),
        format!(
            "{} FLOPs, {:.4e} J, {t:.4e} s electronic, {opt:.4e} s optical, speedup {speedup:.2} (published 30, flagged)",
            r.total_count, r.total_energy_j
        ),
    )
}

fn hybrid_table() -> Outcome {
    let r = hybrid_energy(&alexnet(), &HybridParams::published()).map_err(|e| e.to_string())?;
    let ops = r.total_count as f64;
    let laser = r.metric("laser_energy_j").unwrap();
    let mono = r.metric("monolithic_energy_j").unwrap();
    let parts = [
        ("ops", rel(ops, 8.96e6), 0.005),
        ("energy", rel(r.total_energy_j, 2e-3), 0.01),
        ("laser", rel(laser, 8.5e-6), 0.01),
        ("monolithic", rel(mono, 44.8e-9), 0.01),
    ];
    let failed: Vec<_> = parts.iter().filter(|(_, e, tol)| e > tol).map(|(n, _, _)| *n).collect();
    check(
        failed.is_empty(),
        format!(
            "ops {} ({:.3}% off 8.96e6), energy {:.4e} J ({:.2}% off 2 mJ), laser {laser:.4e} J, monolithic {mono:.4e} J{}",
            r.total_count,
            parts[0].1 * 100.0,
            r.total_energy_j,
            parts[1].1 * 100.0,
            if failed.is_empty() { String::new() } else { format!("; out of tolerance: {}", failed.join(", ")) }
        ),
    )
}

/// Direct nested-loop evaluation of a conv/dense stack.
fn direct_forward(net: &Network, img: &ImageTensor) -> Vec<f64> {
    let mut x = img.as_slice().to_vec();
    for (layer, m) in net.spec().layers().iter().zip(net.weights()) {
        let m = m.matrix();
        x = match *layer {
            LayerSpec::Conv { geometry: g, nonlinearity } => {
                let (w, k, s, p, c, d) = (g.w(), g.k(), g.s(), g.p(), g.c(), g.d());
                let ow = (w + 2 * p - k) / s + 1;
                let mut out = vec![0.0; ow * ow * d];
                for i in 0..ow {
                    for j in 0..ow {
                        for f in 0..d {
                            let mut acc = 0.0;
                            for a in 0..k {
                                for b in 0..k {
                                    let r = (i * s + a) as isize - p as isize;
                                    let q = (j * s + b) as isize - p as isize;
                                    if r < 0 || q < 0 || r >= w as isize || q >= w as isize {
                                        continue;
                                    }
                                    for ch in 0..c {
                                        acc += m[(f, (a * k + b) * c + ch)] * x[(r as usize * w + q as usize) * c + ch];
                                    }
                                }
                            }
                            out[(i * ow + j) * d + f] = nonlinearity.apply(acc);
                        }
                    }
                }
                out
            }
            LayerSpec::FullyConnected { out_dim, nonlinearity, .. } => (0..out_dim)
                .map(|o| nonlinearity.apply(x.iter().enumerate().map(|(i, v)| m[(o, i)] * v).sum()))
                .collect(),
        };
    }
    x
}

fn toy_cnn() -> Outcome {
    let net = reference_network();
    let ds = mnist_test();
    let scores = net.infer_batch(&ds.images, Execution::default()).map_err(|e| e.to_string())?;
    let right = scores.iter().zip(&ds.labels).filter(|(s, &l)| predicted_class(s) == l as usize).count();
    let acc = right as f64 / ds.len() as f64;
    let mut worst = 0.0f64;
    for (img, s) in ds.images.iter().zip(&scores).take(100) {
        for (a, b) in direct_forward(&net, img).iter().zip(s) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        acc >= 0.95 && worst < 1e-9,
        format!("test accuracy {:.2}% ({right}/{}), oracle deviation {worst:.1e} on 100 images", acc * 100.0, ds.len()),
    )
}

fn noise_sweep() -> Outcome {
    let start = Instant::now();
    let net = reference_network();
    let ds = mnist_test().truncate(1000);
    let zero = SweepConfig { sigmas: vec![0.0], trials: 3, seed: 1, execution: Execution::default() };
    let clean = perturbation_experiment(&net, &ds.images, &zero).map_err(|e| e.to_string())?;
    let sweep = SweepConfig::log_spaced(1e-4, 0.05, 9, 20, 2026).map_err(|e| e.to_string())?;
    let rows = perturbation_experiment(&net, &ds.images, &sweep).map_err(|e| e.to_string())?;
    let medians = median_by_sigma(&rows);
    let monotone = medians.windows(2).all(|w| w[1].1 <= w[0].1);
    let (lo, hi) = (medians[0].1, medians[medians.len() - 1].1);
    let elapsed = start.elapsed();
    let curve: Vec<String> = medians.iter().map(|(s, m)| format!("{s:.1e}:{m:.3}")).collect();
    check(
        clean.iter().all(|r| r.agreement == 1.0) && monotone && lo - hi >= 0.2 && elapsed < Duration::from_secs(1800),
        format!("medians [{}], drop {:.3}, {:.0} s", curve.join(" "), lo - hi, elapsed.as_secs_f64()),
    )
}

fn idx_parser() -> Outcome {
    let labels = IdxFile { magic: LABELS_MAGIC, dims: vec![2], payload: vec![7, 2] };
    let images = IdxFile { magic: IMAGES_MAGIC, dims: vec![1, 2, 2], payload: vec![0, 64, 128, 255] };
    let round = parse_idx(&labels.to_bytes()).ok() == Some(labels.clone())
        && parse_idx(&images.to_bytes()).ok() == Some(images.clone());
    let mut bad = labels.to_bytes();
    bad[..4].copy_from_slice(&0xDEAD_BEEFu32.to_be_bytes());
    let magic = matches!(parse_idx(&bad), Err(Error::BadMagic { offset: 0, .. }));
    let full = images.to_bytes();
    let trunc = matches!(
        parse_idx(&full[..full.len() - 1]),
        Err(Error::TruncatedPayload { offset: 16, expected: 4, found: 3 })
    ) && matches!(parse_idx(&full[..10]), Err(Error::TruncatedPayload { offset: 8, .. }));
    let ds = mnist_test();
    let official = ds.len() == 10_000 && ds.images[0].width() == 28;
    check(
        round && magic && trunc && official,
        format!("round trip {round}, bad magic {magic}, truncation {trunc}, official test set {official}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("mesh round trip", mesh_round_trip),
        ("delay table golden", delay_table),
        ("repatching 4x4 instance", small_repatch),
        ("repatching oracle equivalence", repatch_oracle),
        ("optical energy golden", optical_table),
        ("electronic energy golden", electronic_table),
        ("hybrid energy golden", hybrid_table),
        ("toy CNN accuracy and oracle", toy_cnn),
        ("phase-noise sweep", noise_sweep),
        ("IDX parser", idx_parser),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
