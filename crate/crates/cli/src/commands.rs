use std::fmt::Write as _;
use std::time::Instant;

use fusionsort::fusion::fuse_cube;
use fusionsort::gradcheck::suite::{run_suite, KNOWN_OPS};
use fusionsort::gradcheck::GradChecker;
use fusionsort::io::{
    generate_synthetic_dataset, read_checkpoint, read_cube, read_pgm, read_ppm, write_atomic, write_checkpoint,
    write_cube, write_pgm, write_ppm, HyperCube, SyntheticSpec,
};
use fusionsort::metrics::ConfusionMatrix;
use fusionsort::network::{
    evaluate_examples, model_input, parameter_count, prepare_examples, train_toy as train, Modality, Network,
    NetworkConfig, TrainConfig,
};
use fusionsort::{Error, Result};

use crate::{EvalArgs, FuseArgs, GradcheckArgs, TrainArgs, EXIT_NUMERICAL};

pub fn fuse(a: FuseArgs) -> Result<u8> {
    let cube = read_cube(&a.cube)?;
    let rgb = read_ppm(&a.rgb)?;
    let (fused, pca) = fuse_cube(&rgb, &cube)?;
    let out = HyperCube::from_tensor(&fused)?;
    let mut report = format!("variance_retained={:.6}\n", pca.variance_retained);
    for (i, v) in pca.eigenvalues.iter().take(3).enumerate() {
        let _ = writeln!(report, "eigenvalue_{}={v:.6}", i + 1);
    }
    write_cube(&out, &a.out)?;
    if let Some(path) = &a.report {
        write_atomic(path, report.as_bytes())?;
    }
    println!("bands={} height={} width={}", out.bands(), out.height(), out.width());
    print!("{report}");
    Ok(0)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<u8> {
    let mut checker = GradChecker::new(a.eps)?;
    if let Some(op) = &a.sabotage {
        if !KNOWN_OPS.contains(&op.as_str()) {
            return Err(Error::Config(format!(
                "unknown op '{op}' for --sabotage; known ops: {}",
                KNOWN_OPS.join(", ")
            )));
        }
        checker = checker.sabotage(op.clone());
    }
    let start = Instant::now();
    let results = run_suite(&checker, a.seed)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "pass" } else { "FAIL" };
        if !r.passed() {
            failed += 1;
        }
        println!(
            "{:<26}max_rel_error={:.6e} tolerance={:.0e} {verdict} worst={}",
            r.name,
            r.report.max_rel_error,
            r.tolerance,
            r.report.worst.as_deref().unwrap_or("-")
        );
    }
    println!(
        "blocks={} failed={failed} eps={:e} seconds={:.1}",
        results.len(),
        a.eps,
        start.elapsed().as_secs_f64()
    );
    Ok(if failed == 0 { 0 } else { EXIT_NUMERICAL })
}

pub fn train_toy(a: TrainArgs) -> Result<u8> {
    if a.images == 0 {
        return Err(Error::Config("--images must be at least 1".into()));
    }
    if !a.size.is_multiple_of(4) {
        return Err(Error::Config(format!("--size must be a multiple of 4, got {}", a.size)));
    }
    let config = NetworkConfig::new(a.modality, a.classes, a.ablation, a.seed);
    config.validate()?;
    let tc = TrainConfig {
        learning_rate: a.lr,
        iterations: a.iters,
        ..TrainConfig::default()
    };
    tc.validate()?;
    let samples = generate_synthetic_dataset(&SyntheticSpec {
        seed: a.seed,
        count: a.images,
        height: a.size,
        width: a.size,
        bands: a.bands,
        num_classes: a.classes,
    })?;
    let data = prepare_examples(&samples, a.modality)?;
    let (net, mut store) = Network::build(config)?;
    let history = train(&net, &mut store, &data, &tc)?;
    let (report, _) = evaluate_examples(&net, &store, &data)?;

    write_checkpoint(&net.checkpoint(&store), &a.out)?;
    if let Some(path) = &a.history {
        let text: String = history.losses.iter().map(|l| format!("{l}\n")).collect();
        write_atomic(path, text.as_bytes())?;
    }
    if let Some(dir) = &a.dump_data {
        std::fs::create_dir_all(dir)?;
        for (i, s) in samples.iter().enumerate() {
            write_cube(&s.cube, dir.join(format!("{i:03}.cube")))?;
            write_ppm(&s.rgb, dir.join(format!("{i:03}.ppm")))?;
            write_pgm(&s.mask, dir.join(format!("{i:03}.pgm")))?;
        }
    }

    println!("config={}", net.config);
    println!("parameters={}", parameter_count(&store));
    if let (Some(first), Some(last)) = (history.losses.first(), history.losses.last()) {
        println!("loss_first={first:.6}");
        println!("loss_last={last:.6}");
    }
    print!("{}", report.to_text());
    Ok(0)
}

fn check_expected(a: &EvalArgs, config: &NetworkConfig) -> Result<()> {
    let mut problems = Vec::new();
    if let Some(ab) = a.ablation {
        let have = (
            config.use_comprehensive_attention,
            config.use_mamba,
            config.use_weighted_fusion,
        );
        if ab.flags() != have {
            problems.push(format!("ablation {} (checkpoint has ca/mamba/wf {have:?})", ab.name()));
        }
    }
    if let Some(k) = a.classes {
        if k != config.num_classes {
            problems.push(format!("{k} classes (checkpoint has {})", config.num_classes));
        }
    }
    if let Some(m) = a.modality {
        if m != config.modality {
            problems.push(format!(
                "modality {} (checkpoint has {})",
                m.name(),
                config.modality.name()
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Mismatch(format!("requested {}", problems.join(", "))))
    }
}

pub fn eval(a: EvalArgs) -> Result<u8> {
    let ckpt = read_checkpoint(&a.ckpt)?;
    let (net, store) = Network::from_checkpoint(&ckpt, None)?;
    check_expected(&a, &net.config)?;
    let modality = net.config.modality;
    let n = a.mask.len();
    if n == 0 {
        return Err(Error::Config("eval needs at least one --mask".into()));
    }
    let needs_cube = modality != Modality::Rgb;
    let needs_rgb = matches!(modality, Modality::Rgb | Modality::Fused);
    for (flag, count, needed) in [("--cube", a.cube.len(), needs_cube), ("--rgb", a.rgb.len(), needs_rgb)] {
        if needed && count != n {
            return Err(Error::Config(format!(
                "{} input needs one {flag} per --mask ({n}), got {count}",
                modality.name()
            )));
        }
    }
    if !a.out.is_empty() && a.out.len() != n {
        return Err(Error::Config(format!("got {} --out paths for {n} images", a.out.len())));
    }

    let k = net.config.num_classes;
    let mut cm = ConfusionMatrix::new(k);
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let gt = read_pgm(&a.mask[i], k)?;
        let pred = if a.self_check {
            gt.clone()
        } else {
            let cube = if needs_cube { Some(read_cube(&a.cube[i])?) } else { None };
            let rgb = if needs_rgb { Some(read_ppm(&a.rgb[i])?) } else { None };
            let x = model_input(modality, rgb.as_ref(), cube.as_ref())?;
            net.predict(&store, &x)?.remove(0)
        };
        cm.add(&pred, &gt)?;
        preds.push(pred);
    }
    let report = cm.report();
    for (pred, path) in preds.iter().zip(&a.out) {
        write_pgm(pred, path)?;
    }
    if let Some(path) = &a.report {
        write_atomic(path, report.to_csv().as_bytes())?;
    }
    print!("{}", report.to_text());
    Ok(0)
}
