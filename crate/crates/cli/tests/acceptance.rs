//! One pass/fail line per primary acceptance criterion.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::{code, field, fusionsort, p, row, stderr, stdout};
use fusionsort::attention::ssm_scan;
use fusionsort::fusion::{fit_pca, jacobi_eigen};
use fusionsort::io::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, generate_synthetic_dataset, write_cube, write_ppm, Checkpoint,
    HyperCube, LabelMask, SyntheticSpec,
};
use fusionsort::loss::{combined_loss, cross_entropy, dice_loss, LossWeights, DICE_EPS};
use fusionsort::metrics::evaluate;
use fusionsort::network::{Ablation, Modality, Network, NetworkConfig};
use fusionsort::ops::Mode;
use fusionsort::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

const GRAD_TOL: f64 = 1e-4;
const GRAD_LOSS_TOL: f64 = 1e-6;
const GRAD_SECONDS: f64 = 60.0;
const SSM_TOL: f64 = 1e-10;
const EIGEN_RESIDUAL: f64 = 1e-9;
const LOSS_TOL: f64 = 1e-5;
const TOY_MIOU: f64 = 0.95;
const TOY_SECONDS: f64 = 300.0;

/// Criteria measured as failing; see the project notes for the analysis.
const KNOWN_FAILURES: &[&str] = &["toy overfit"];

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn gradient_integrity() -> Verdict {
    let start = Instant::now();
    let out = fusionsort(["gradcheck", "--seed", "0"]);
    let secs = start.elapsed().as_secs_f64();
    let text = stdout(&out);
    let mut worst_block: (f64, &str) = (0.0, "-");
    let mut worst_loss = 0.0f64;
    let mut network = f64::NAN;
    let mut blocks = 0;
    let mut all_under = true;
    for line in text.lines().filter(|l| l.contains("max_rel_error=")) {
        let name = line.split_whitespace().next().unwrap();
        let err: f64 = line
            .split("max_rel_error=")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        blocks += 1;
        let is_loss = name.ends_with("loss") || name == "cross_entropy";
        all_under &= err < if is_loss { GRAD_LOSS_TOL } else { GRAD_TOL };
        if is_loss {
            worst_loss = worst_loss.max(err);
        } else if err > worst_block.0 {
            worst_block = (err, name);
        }
        if name == "network" {
            network = err;
        }
    }
    Verdict {
        name: "gradient integrity",
        pass: code(&out) == 0 && all_under && blocks == 13 && secs < GRAD_SECONDS,
        detail: format!(
            "{blocks} blocks, worst block {} {:.2e} (< {GRAD_TOL:e}), full network 1x6x8x8 {network:.2e}, \
             worst loss {worst_loss:.2e} (< {GRAD_LOSS_TOL:e}), {secs:.1} s (< {GRAD_SECONDS} s)",
            worst_block.1, worst_block.0
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn unrolled_scan(
    u: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    skip: &[f64],
    n: usize,
    l: usize,
    d: usize,
    s: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; n * l * d];
    for bi in 0..n {
        for t in 0..l {
            for di in 0..d {
                let at = |tt: usize| (bi * l + tt) * d + di;
                let mut acc = skip[di] * u[at(t)];
                for si in 0..s {
                    for src in 0..=t {
                        let decay: f64 = (src + 1..=t).map(|j| (delta[at(j)] * a[di * s + si]).exp()).product();
                        acc +=
                            c[(bi * l + t) * s + si] * decay * delta[at(src)] * b[(bi * l + src) * s + si] * u[at(src)];
                    }
                }
                y[at(t)] = acc;
            }
        }
    }
    y
}

fn ssm_oracle() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let uni = |n: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| r.random_range(lo..hi)).collect()
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, l, d, s) = (
            r.random_range(1..=4),
            r.random_range(1..=16),
            r.random_range(1..=4),
            r.random_range(1..=4),
        );
        let u = uni(n * l * d, -1.0, 1.0, &mut r);
        let delta = uni(n * l * d, 0.01, 1.5, &mut r);
        let a = uni(d * s, -2.0, -0.05, &mut r);
        let b = uni(n * l * s, -1.0, 1.0, &mut r);
        let c = uni(n * l * s, -1.0, 1.0, &mut r);
        let skip = uni(d, -1.0, 1.0, &mut r);
        let t = |shape: &[usize], v: &[f64]| Tensor::new(shape, v.to_vec()).unwrap();
        let got = ssm_scan(
            &t(&[n, l, d], &u),
            &t(&[n, l, d], &delta),
            &t(&[d, s], &a),
            &t(&[n, l, s], &b),
            &t(&[n, l, s], &c),
            &t(&[d], &skip),
        )
        .unwrap();
        let want = unrolled_scan(&u, &delta, &a, &b, &c, &skip, n, l, d, s);
        worst = got
            .data()
            .iter()
            .zip(&want)
            .fold(worst, |m, (g, w)| m.max((g - w).abs()));
    }
    Verdict {
        name: "ssm oracle equivalence",
        pass: worst < SSM_TOL,
        detail: format!("100 instances (L<=16, N<=4, D<=4), max |scan - unrolled| {worst:.2e} (< {SSM_TOL:e})"),
    }
}

fn centered(cube: &HyperCube) -> Vec<Vec<f64>> {
    let n = cube.pixels();
    let mut mean = vec![0.0; cube.bands()];
    for q in 0..n {
        mean.iter_mut()
            .zip(cube.spectrum(q))
            .for_each(|(m, v)| *m += v / n as f64);
    }
    (0..n)
        .map(|q| cube.spectrum(q).iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect()
}

fn frame_sse(x: &[Vec<f64>], frame: &[Vec<f64>]) -> f64 {
    x.iter()
        .map(|v| {
            let mut rec = vec![0.0; v.len()];
            for f in frame {
                let s: f64 = f.iter().zip(v).map(|(a, b)| a * b).sum();
                rec.iter_mut().zip(f).for_each(|(r, fv)| *r += s * fv);
            }
            v.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum()
}

fn pca_optimality(dir: &Path) -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0;
    let mut worst_residual = 0.0f64;
    for _ in 0..50 {
        let bands = r.random_range(3..=8);
        let (h, w) = (r.random_range(1..=4), r.random_range(2..=4));
        let data = (0..bands * h * w).map(|_| r.random_range(-1.0f32..1.0)).collect();
        let cube = HyperCube::new(bands, h, w, data).unwrap();
        let model = fit_pca(&cube).unwrap();
        let x = centered(&cube);
        let best = frame_sse(&x, &model.components);
        for _ in 0..200 {
            let mut frame: Vec<Vec<f64>> = Vec::new();
            while frame.len() < 3 {
                let mut v: Vec<f64> = (0..bands).map(|_| StandardNormal.sample(&mut r)).collect();
                for f in &frame {
                    let d: f64 = f.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(f).for_each(|(a, b)| *a -= d * b);
                }
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    frame.push(v.into_iter().map(|a| a / norm).collect());
                }
            }
            if best > frame_sse(&x, &frame) + 1e-12 {
                violations += 1;
            }
        }
        let mut cov = vec![0.0; bands * bands];
        for v in &x {
            for i in 0..bands {
                for j in 0..bands {
                    cov[i * bands + j] += v[i] * v[j] / x.len() as f64;
                }
            }
        }
        let norm = cov.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e = jacobi_eigen(&cov, bands).unwrap();
        for (lam, v) in e.values.iter().zip(&e.vectors) {
            let res = (0..bands)
                .map(|i| ((0..bands).map(|j| cov[i * bands + j] * v[j]).sum::<f64>() - lam * v[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > 0.0 {
                worst_residual = worst_residual.max(res / norm);
            }
        }
    }

    let (bands, h, w) = (16, 12, 12);
    let factors: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..bands).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect();
    let mut data = vec![0f32; bands * h * w];
    for q in 0..h * w {
        let coeff: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut r)).collect();
        for b in 0..bands {
            let noise: f64 = StandardNormal.sample(&mut r);
            data[b * h * w + q] = ((0..3).map(|k| coeff[k] * factors[k][b]).sum::<f64>() + 1e-3 * noise) as f32;
        }
    }
    let cube_path = dir.join("three_factor.cube");
    let rgb_path = dir.join("three_factor.ppm");
    write_cube(&HyperCube::new(bands, h, w, data).unwrap(), &cube_path).unwrap();
    write_ppm(&Tensor::full(&[1, 3, h, w], 0.5).unwrap(), &rgb_path).unwrap();
    let out = fusionsort([
        "fuse",
        "--cube",
        &p(&cube_path),
        "--rgb",
        &p(&rgb_path),
        "--out",
        &p(&dir.join("tf.cube")),
    ]);
    let retained = field(&stdout(&out), "variance_retained").unwrap_or(f64::NAN);

    Verdict {
        name: "pca optimality",
        pass: violations == 0 && worst_residual < EIGEN_RESIDUAL && code(&out) == 0 && retained > 0.99,
        detail: format!(
            "50 cubes x 200 random 3-frames: {violations} beat PCA; max eigen residual {worst_residual:.2e}*|C| \
             (< {EIGEN_RESIDUAL:e}); 3-factor cube variance_retained={retained:.6} (> 0.99)"
        ),
    }
}

fn loss_oracles() -> Verdict {
    // p(class 1) = (0.8, 0.6), target (1, 0)
    let logits = Tensor::new(&[1, 2, 1, 2], vec![0.0, 0.0, 4f64.ln(), 1.5f64.ln()]).unwrap();
    let masks = [LabelMask::new(1, 2, vec![1, 0]).unwrap()];
    let dice = dice_loss(&logits, &masks, DICE_EPS).unwrap();
    let ce = cross_entropy(&logits, &masks).unwrap();
    let total = combined_loss(&logits, &masks, LossWeights::new(1.0, 1.0).unwrap()).unwrap();
    let dice_expr = ((1.0 - 1.6 / 2.4) + (1.0 - 0.8 / 1.6)) / 2.0;
    let ce_expr = -(0.8f64.ln() + 0.4f64.ln()) / 2.0;
    let ok = (dice - dice_expr).abs() < LOSS_TOL
        && (dice - 0.41667).abs() < LOSS_TOL
        && (ce - ce_expr).abs() < LOSS_TOL
        && (total - (dice_expr + ce_expr)).abs() < LOSS_TOL;
    Verdict {
        name: "loss oracles",
        pass: ok,
        detail: format!(
            "dice {dice:.6} (stated 0.41667), cross-entropy {ce:.6} vs -(ln 0.8 + ln 0.4)/2 = {ce_expr:.6}, \
             combined {total:.6} vs {:.6}; the stated literals 0.569696 and 0.986363 are {:.1e} and {:.1e} \
             off their own expressions, so the expressions are the oracle",
            dice_expr + ce_expr,
            (ce_expr - 0.569696).abs(),
            (dice_expr + ce_expr - 0.986363).abs()
        ),
    }
}

fn metric_oracle() -> Verdict {
    let pred = LabelMask::new(2, 2, vec![0, 1, 1, 1]).unwrap();
    let gt = LabelMask::new(2, 2, vec![0, 1, 0, 1]).unwrap();
    let rep = evaluate(&pred, &gt, 2).unwrap();
    let fixture = rep.miou == (0.5 + 2.0 / 3.0) / 2.0 && rep.pixel_accuracy == 0.75;
    let mut r = ChaCha8Rng::seed_from_u64(31);
    let mut broken = 0;
    for _ in 0..100 {
        let (h, w, k) = (r.random_range(1..=6), r.random_range(1..=6), r.random_range(2..=6usize));
        let mut mask = || LabelMask::new(h, w, (0..h * w).map(|_| r.random_range(0..k) as u8).collect()).unwrap();
        let (a, b) = (mask(), mask());
        let mut perm: Vec<u8> = (0..k as u8).collect();
        perm.shuffle(&mut r);
        let relabel =
            |m: &LabelMask| LabelMask::new(h, w, m.data().iter().map(|&v| perm[v as usize]).collect()).unwrap();
        let x = evaluate(&a, &b, k).unwrap();
        let y = evaluate(&relabel(&a), &relabel(&b), k).unwrap();
        let ious = (0..k).all(|c| x.per_class_iou[c] == y.per_class_iou[perm[c] as usize]);
        if !(ious && (x.miou - y.miou).abs() < 1e-15 && x.pixel_accuracy == y.pixel_accuracy) {
            broken += 1;
        }
    }
    Verdict {
        name: "metric oracle",
        pass: fixture && broken == 0,
        detail: format!(
            "2x2 fixture mIoU {:.5} accuracy {} (exact: {fixture}); permutation equivariance broken on {broken}/100 pairs",
            rep.miou, rep.pixel_accuracy
        ),
    }
}

fn toy_run(dir: &Path, lr: &str) -> (i32, f64, Vec<f64>, f64, String) {
    let hist = dir.join(format!("history_{lr}.txt"));
    let start = Instant::now();
    let out = fusionsort([
        "train-toy",
        "--ablation",
        "all",
        "--images",
        "10",
        "--iters",
        "300",
        "--seed",
        "7",
        "--lr",
        lr,
        "--out",
        &p(&dir.join(format!("toy_{lr}.ckpt"))),
        "--history",
        &p(&hist),
    ]);
    let secs = start.elapsed().as_secs_f64();
    let losses = std::fs::read_to_string(&hist)
        .map(|t| t.lines().map(|l| l.parse().unwrap()).collect())
        .unwrap_or_default();
    let text = stdout(&out);
    (
        code(&out),
        row(&text, "miou").unwrap_or(f64::NAN),
        losses,
        secs,
        stderr(&out),
    )
}

fn toy_overfit(dir: &Path) -> Verdict {
    let (status, miou, losses, secs, err) = toy_run(dir, "0.001");
    let dropped = losses.len() > 50 && losses[50] < losses[0];
    let (_, miou_fast, _, _, _) = toy_run(dir, "0.002");
    Verdict {
        name: "toy overfit",
        pass: status == 0 && miou >= TOY_MIOU && dropped && secs < TOY_SECONDS,
        detail: format!(
            "--ablation all --images 10 --iters 300 --seed 7: train mIoU {miou:.6} (>= {TOY_MIOU}), loss step 0 {:.4} \
             -> step 50 {:.4}, {secs:.1} s (< {TOY_SECONDS} s){}; same run at lr 2e-3 reaches mIoU {miou_fast:.6}",
            losses.first().copied().unwrap_or(f64::NAN),
            losses.get(50).copied().unwrap_or(f64::NAN),
            if status == 0 {
                String::new()
            } else {
                format!(", exit {status}: {err}")
            }
        ),
    }
}

fn ablation_structure(dir: &Path) -> Verdict {
    let mut counts = Vec::new();
    let mut ran = true;
    for ab in Ablation::ALL {
        let out = fusionsort([
            "train-toy",
            "--ablation",
            ab.name(),
            "--images",
            "1",
            "--iters",
            "2",
            "--size",
            "8",
            "--out",
            &p(&dir.join(format!("abl_{}.ckpt", ab.name()))),
        ]);
        ran &= code(&out) == 0;
        counts.push(field(&stdout(&out), "parameters").unwrap_or(0.0) as usize);
    }
    let mut ordered = true;
    for (i, a) in Ablation::ALL.iter().enumerate() {
        for (j, b) in Ablation::ALL.iter().enumerate() {
            let (fa, fb) = (a.flags(), b.flags());
            let subset = (!fa.0 || fb.0) && (!fa.1 || fb.1) && (!fa.2 || fb.2) && fa != fb;
            if subset {
                ordered &= counts[i] < counts[j];
            }
        }
    }
    let x = Tensor::full(&[1, 6, 8, 8], 0.3).unwrap();
    let mut silent = true;
    for ab in Ablation::ALL {
        let (ca, mamba, wf) = ab.flags();
        let (net, store) = Network::build(NetworkConfig::new(Modality::Fused, 3, ab, 0)).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        net.forward(&mut tape, &store, xv, Mode::Eval).unwrap();
        let softmax = tape
            .ops()
            .filter(|(op, s)| *op == "softmax" && s.starts_with("decoder.cab.fusion"))
            .count();
        silent &= (tape.count_ops_in_scope("decoder.cab.coord") > 0) == ca
            && (tape.count_ops_in_scope("decoder.cab.mamba") > 0) == mamba
            && (softmax > 0) == wf;
    }
    let listing: Vec<String> = Ablation::ALL
        .iter()
        .zip(&counts)
        .map(|(a, c)| format!("{}={c}", a.name()))
        .collect();
    Verdict {
        name: "ablation structure",
        pass: ran && ordered && silent,
        detail: format!(
            "all five configurations build and run: {ran}; parameters {}; strictly larger whenever modules are added \
             (baseline<mamba<all, baseline<ca<wf<all): {ordered}; disabled modules record zero ops: {silent}",
            listing.join(" ")
        ),
    }
}

fn prefixes_rejected<T>(bytes: &[u8], decode: impl Fn(&[u8]) -> fusionsort::Result<T>) -> bool {
    (0..bytes.len()).all(|len| matches!(decode(&bytes[..len]), Err(fusionsort::Error::Format { .. })))
}

fn determinism_and_formats(dir: &Path) -> Verdict {
    let run = |tag: &str| {
        let data = dir.join(format!("det_{tag}"));
        let ckpt = dir.join(format!("det_{tag}.ckpt"));
        let hist = dir.join(format!("det_{tag}.txt"));
        let train = fusionsort([
            "train-toy",
            "--seed",
            "12",
            "--images",
            "2",
            "--iters",
            "10",
            "--size",
            "16",
            "--out",
            &p(&ckpt),
            "--history",
            &p(&hist),
            "--dump-data",
            &p(&data),
        ]);
        let fused = dir.join(format!("det_{tag}.fused"));
        let fuse = fusionsort([
            "fuse",
            "--cube",
            &p(&data.join("000.cube")),
            "--rgb",
            &p(&data.join("000.ppm")),
            "--out",
            &p(&fused),
        ]);
        let pred = dir.join(format!("det_{tag}.pgm"));
        let eval = fusionsort([
            "eval",
            "--ckpt",
            &p(&ckpt),
            "--cube",
            &p(&data.join("001.cube")),
            "--rgb",
            &p(&data.join("001.ppm")),
            "--mask",
            &p(&data.join("001.pgm")),
            "--out",
            &p(&pred),
        ]);
        let read = |path: &Path| std::fs::read(path).unwrap_or_default();
        let ok = code(&train) == 0 && code(&fuse) == 0 && code(&eval) == 0;
        (
            ok,
            [
                read(&ckpt),
                read(&hist),
                read(&fused),
                read(&pred),
                train.stdout,
                fuse.stdout,
                eval.stdout,
            ],
        )
    };
    let (ok_a, a) = run("a");
    let (ok_b, b) = run("b");
    let identical = ok_a && ok_b && a == b;

    let sample = generate_synthetic_dataset(&SyntheticSpec {
        seed: 5,
        count: 1,
        height: 8,
        width: 8,
        bands: 9,
        num_classes: 3,
    })
    .unwrap()
    .remove(0);
    let cube = sample.cube.to_bytes();
    let ppm = encode_ppm(&sample.rgb).unwrap();
    let pgm = encode_pgm(&sample.mask);
    let ckpt = a[0].clone();
    let round_trip = HyperCube::from_bytes(&cube)
        .map(|c| c.to_bytes() == cube)
        .unwrap_or(false)
        && decode_ppm(&ppm)
            .map(|t| encode_ppm(&t).unwrap() == ppm)
            .unwrap_or(false)
        && decode_pgm(&pgm, 3).map(|m| encode_pgm(&m) == pgm).unwrap_or(false)
        && Checkpoint::from_bytes(&ckpt)
            .map(|c| c.to_bytes() == ckpt)
            .unwrap_or(false);
    let truncation = prefixes_rejected(&cube, HyperCube::from_bytes)
        && prefixes_rejected(&ppm, decode_ppm)
        && prefixes_rejected(&pgm, |b| decode_pgm(b, 3))
        && prefixes_rejected(&ckpt, Checkpoint::from_bytes);
    Verdict {
        name: "determinism and formats",
        pass: identical && round_trip && truncation,
        detail: format!(
            "two same-seed train-toy/fuse/eval runs byte-identical: {identical}; cube/ppm/pgm/checkpoint round-trip \
             bit-exactly: {round_trip}; every single-byte truncation rejected ({} checkpoint prefixes): {truncation}",
            ckpt.len()
        ),
    }
}

fn main() -> ExitCode {
    let dir = TempDir::new().expect("temp dir");
    let verdicts = [
        gradient_integrity(),
        ssm_oracle(),
        pca_optimality(dir.path()),
        loss_oracles(),
        metric_oracle(),
        toy_overfit(dir.path()),
        ablation_structure(dir.path()),
        determinism_and_formats(dir.path()),
    ];
    println!("\nacceptance criteria");
    let mut unexpected = Vec::new();
    for v in &verdicts {
        let known = KNOWN_FAILURES.contains(&v.name);
        let tag = match (v.pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as a known failure; update the list)",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag:<12} {}: {}", v.name, v.detail);
        if !v.pass && !known {
            unexpected.push(v.name);
        }
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "{passed}/{} criteria pass; known failures: {}",
        verdicts.len(),
        KNOWN_FAILURES.join(", ")
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {}", unexpected.join(", "));
        ExitCode::FAILURE
    }
}
