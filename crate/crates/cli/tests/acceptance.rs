//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the test
//! fails if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reflect_core::calibration::{
    fit_alpha, fit_full, monte_carlo_relative_errors, simulate_sweep, FullFitOptions, SweepConfig,
};
use reflect_core::dataset::{load_manifest, Category, Split};
use reflect_core::demo::{generate, DemoConfig};
use reflect_core::grasp::{
    plan_advance, run_protocol, GraspOutcome, GraspScene, MethodBinding, ProtocolConfig,
};
use reflect_core::head::{
    fuse, gradient_check, mse_loss, train_head, FusionMode, HeadParams, TrainConfig, TrainSet,
};
use reflect_core::metrics::{
    grasp_summary, mann_whitney_u, reflectance_error_table, render_fusion_table,
    render_grasp_summary, significance_matrix, Correction, EvalSplit, FusionRow, SignificanceTest,
    StdEstimator, FUSION_TABLE_COLUMNS,
};
use reflect_core::par::Exec;
use reflect_core::prompt::{build_prompt, parse_reply, PromptSpec};
use reflect_core::sensor::{forward_current, invert_distance};
use reflect_core::{Reflectance, SensorIntrinsics};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(
        elapsed < limit,
        format!("took {elapsed:?}, limit {limit:?}"),
    )
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn random_intrinsics(rng: &mut ChaCha8Rng) -> SensorIntrinsics {
    SensorIntrinsics::new(rng.random_range(0.0..5.0), rng.random_range(0.5..4.0)).unwrap()
}

fn sensor_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let intr = random_intrinsics(&mut rng);
        let alpha = Reflectance::new(rng.random_range(0.01..=1.0)).unwrap();
        let d = rng.random_range(0.1..=100.0);
        let back = invert_distance(&intr, alpha, forward_current(&intr, alpha, d).unwrap());
        worst = worst.max((back - d).abs() / (1.0 + d));
    }
    check(worst <= 1e-9, format!("max |d' - d| / (1 + d) = {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "1000 cases, max scaled error {worst:.1e}, {:?}",
        start.elapsed()
    ))
}

fn overshoot_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let intr = random_intrinsics(&mut rng);
        let alpha = rng.random_range(0.01..=1.0);
        let alpha_hat = rng.random_range(0.01..=1.0);
        let d = rng.random_range(0.1..=100.0);
        let scene = GraspScene {
            true_alpha: Reflectance::new(alpha).unwrap(),
            true_distance: d,
            intrinsics: intr,
            stiffness: 1.0,
            max_force: 5.2,
        };
        let adv = plan_advance(&scene, Reflectance::new(alpha_hat).unwrap(), 0.0).unwrap();
        let want = (alpha_hat / alpha).powf(1.0 / intr.n()) * (d + intr.d0()) - intr.d0();
        let err = (adv - want).abs() / want.abs().max(1.0);
        worst = worst.max(err);
        check(err <= 1e-9, format!("case {i}: advance {adv} vs {want}"))?;
        let sign = |x: f64| {
            if x > 0.0 {
                1
            } else if x < 0.0 {
                -1
            } else {
                0
            }
        };
        check(
            sign(adv - d) == sign(alpha_hat - alpha),
            format!("case {i}: sign law violated"),
        )?;
    }
    Ok(format!(
        "1000 cases, max relative error {worst:.1e}, sign law holds"
    ))
}

fn calibration_exactness() -> Outcome {
    let start = Instant::now();
    let intr = SensorIntrinsics::EXAMPLE;
    let exact = SweepConfig::default();
    check(
        exact.distances() == vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        "sweep grid is not {5..30} mm",
    )?;
    let mut worst: f64 = 0.0;
    for k in 1..=100 {
        let alpha = k as f64 / 100.0;
        let sweep =
            simulate_sweep("x", &intr, Reflectance::new(alpha).unwrap(), &exact, 0).unwrap();
        worst = worst.max((fit_alpha(&intr, &sweep).unwrap().alpha - alpha).abs());
    }
    check(worst <= 1e-12, format!("noiseless error {worst:e}"))?;
    let noisy = SweepConfig {
        noise_rel: 0.01,
        repeats: 200,
        ..SweepConfig::default()
    };
    let seeds: Vec<u64> = (0..100).collect();
    let errs = monte_carlo_relative_errors(
        &intr,
        Reflectance::new(0.4).unwrap(),
        &noisy,
        &seeds,
        Exec::default(),
    )
    .unwrap();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    check(mean < 0.005, format!("mean relative error {mean:e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!(
        "noiseless max error {worst:.1e}; 1% noise mean relative error {:.3}% over 100 seeds",
        mean * 100.0
    ))
}

fn joint_fit() -> Outcome {
    let cfg = SweepConfig {
        steps: 12,
        ..SweepConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (alpha, d0, n) = (
            rng.random_range(0.1..1.0),
            rng.random_range(0.5..3.0),
            rng.random_range(1.0..3.0),
        );
        let intr = SensorIntrinsics::new(d0, n).unwrap();
        let sweep = simulate_sweep("x", &intr, Reflectance::new(alpha).unwrap(), &cfg, 0).unwrap();
        let mut jitter = || 1.0 + rng.random_range(-0.2..=0.2);
        let init = (alpha * jitter(), d0 * jitter(), n * jitter());
        let fit = fit_full(&sweep, init, &FullFitOptions::default())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        for (got, want) in [(fit.alpha, alpha), (fit.d0, d0), (fit.n, n)] {
            worst = worst.max((got - want).abs() / want);
        }
    }
    check(
        worst <= 1e-6,
        format!("max relative parameter error {worst:e}"),
    )?;
    Ok(format!(
        "50 seeds, 12-point sweeps, max relative error {worst:.1e}"
    ))
}

/// Independent MSE of a one-hidden-layer ReLU head, straight from the layer definitions.
fn reference_loss(p: &HeadParams, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let (d, h) = (p.input_dim(), p.hidden_units());
    let mut total = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let mut out = p.b_out();
        for j in 0..h {
            let pre: f64 =
                p.b_hidden()[j] + (0..d).map(|i| p.w_hidden()[j * d + i] * x[i]).sum::<f64>();
            out += p.w_out()[j] * pre.max(0.0);
        }
        total += (out - y).powi(2);
    }
    total / xs.len() as f64
}

fn gradient_correctness() -> Outcome {
    let mut report = Vec::new();
    for (k, dim) in [8usize, 512, 1024].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + k as u64);
        let params = HeadParams::init(dim, 32, 20 + k as u64);
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let gc = gradient_check(&params, &xs, &ys, Exec::default()).map_err(|e| e.to_string())?;
        check(
            gc.max_relative_error < 1e-4,
            format!("dim {dim}: max relative error {:e}", gc.max_relative_error),
        )?;
        report.push(format!("d={dim}: {:.1e}", gc.max_relative_error));
    }
    // Cross-check against central differences of an independent loss at d = 8.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = HeadParams::init(8, 32, 5);
    let xs: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
    let (loss, grad) = params.loss_and_gradient(&xs, &ys).unwrap();
    check(
        (loss - reference_loss(&params, &xs, &ys)).abs() < 1e-12,
        "loss differs from reference",
    )?;
    let mut worst: f64 = 0.0;
    for (i, g) in grad.iter().enumerate() {
        let (mut plus, mut minus) = (params.clone(), params.clone());
        plus.as_flat_mut()[i] += 1e-6;
        minus.as_flat_mut()[i] -= 1e-6;
        let num = (reference_loss(&plus, &xs, &ys) - reference_loss(&minus, &xs, &ys)) / 2e-6;
        worst = worst.max((num - g).abs() / num.abs().max(g.abs()).max(1e-7));
    }
    check(
        worst < 1e-4,
        format!("independent finite differences disagree: {worst:e}"),
    )?;
    report.push(format!("independent FD {worst:.1e}"));
    Ok(report.join(", "))
}

fn training_recovery() -> Outcome {
    let start = Instant::now();
    let data = generate(&DemoConfig::default()).map_err(|e| e.to_string())?;
    let m = &data.manifest;
    let fusion = FusionMode::ImageOnly;
    let train = TrainSet::from_objects(m, m.objects_in(Split::Train), fusion).unwrap();
    let test = TrainSet::from_objects(m, m.objects_in(Split::Test), fusion).unwrap();
    check(
        m.objects_in(Split::Train).count() == 40 && train.len() == 240,
        "expected 40 objects x 6 views",
    )?;
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    check(
        cfg.learning_rate == 1e-3 && cfg.epochs == 200,
        "recipe defaults changed",
    )?;
    let a = train_head(&train, &cfg, fusion).map_err(|e| e.to_string())?;
    let b = train_head(&train, &cfg, fusion).map_err(|e| e.to_string())?;
    check(
        a.loss_history == b.loss_history && a.params == b.params,
        "training is not deterministic",
    )?;
    let tr = mse_loss(
        &a.params
            .predict_batch(&train.inputs, Exec::default())
            .unwrap(),
        &train.targets,
    )
    .unwrap();
    let te = mse_loss(
        &a.params
            .predict_batch(&test.inputs, Exec::default())
            .unwrap(),
        &test.targets,
    )
    .unwrap();
    check(tr < 1e-3, format!("train MSE {tr:e}"))?;
    check(te < 5e-3, format!("held-out MSE {te:e}"))?;
    let smooth: Vec<f64> = a
        .loss_history
        .windows(10)
        .map(|w| w.iter().sum::<f64>() / 10.0)
        .collect();
    check(
        smooth.windows(2).all(|w| w[1] <= w[0]),
        "10-epoch moving average of the loss increases",
    )?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "train MSE {tr:.2e}, held-out MSE {te:.2e}, deterministic, {:?} for two runs",
        start.elapsed()
    ))
}

fn fusion_contract() -> Outcome {
    let img = vec![0.5; 512];
    let txt = vec![0.25; 512];
    let dims: Vec<usize> = FusionMode::ALL
        .iter()
        .map(|&f| fuse(&img, &txt, f).unwrap().len())
        .collect();
    check(
        dims == vec![512, 512, 512, 1024],
        format!("fused dims {dims:?}"),
    )?;
    check(
        fuse(&img, &txt[..10], FusionMode::Add).is_err(),
        "add accepted mismatched dims",
    )?;
    let data = generate(&DemoConfig {
        objects: 20,
        test_objects: 5,
        ..DemoConfig::default()
    })
    .unwrap();
    let m = &data.manifest;
    let mut rows = Vec::new();
    for fusion in FusionMode::ALL {
        let set = TrainSet::from_objects(m, m.objects_in(Split::Train), fusion).unwrap();
        let out = train_head(
            &set,
            &TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            fusion,
        )
        .map_err(|e| format!("{fusion}: {e}"))?;
        check(
            out.params.input_dim() == set.input_dim().unwrap(),
            "head input_dim mismatch",
        )?;
        rows.push(FusionRow {
            backbone: "enc".into(),
            pretraining: "synthetic".into(),
            fusion,
            unseen: None,
        });
    }
    let table = render_fusion_table(&rows, false);
    let header = table.lines().next().unwrap_or_default();
    check(
        FUSION_TABLE_COLUMNS.iter().all(|c| header.contains(c)),
        format!("header `{header}`"),
    )?;
    let concat = table
        .lines()
        .find(|l| l.contains("Concatenation"))
        .ok_or("no concat row")?;
    check(
        concat.contains("Image and text"),
        "concat row lacks input modal",
    )?;
    Ok("dims 512/512/512/1024; trained all four modes; fusion table columns present".into())
}

fn prompt_fixture_replay() -> Outcome {
    let transcript =
        fs::read_to_string(fixtures().join("prompt_transcript.txt")).map_err(|e| e.to_string())?;
    let (prompt_part, reply) = transcript
        .split_once("You:\n")
        .ok_or("fixture has no reply")?;
    let parsed = parse_reply(reply);
    check(
        parsed.issues.is_empty(),
        format!("parse issues: {:?}", parsed.issues),
    )?;
    let got: Vec<(String, f64, f64, f64)> = parsed
        .entries
        .iter()
        .map(|e| (e.name.clone(), e.range_lo, e.range_hi, e.prediction))
        .collect();
    let want = vec![
        ("energy drink".to_string(), 0.41, 0.46, 0.422),
        ("yogurt".to_string(), 0.68, 0.79, 0.762),
    ];
    check(got == want, format!("parsed {got:?}"))?;

    let examples: Vec<(String, f64)> = prompt_part
        .lines()
        .filter_map(|l| l.rsplit_once(" : "))
        .map(|(n, v)| (n.to_string(), v.trim().parse().unwrap()))
        .collect();
    check(examples.len() >= 4, "fixture examples not found")?;
    let spec = PromptSpec::new(
        examples.clone(),
        vec!["energy drink".into(), "yogurt".into()],
    );
    let prompt = build_prompt(&spec).map_err(|e| e.to_string())?;
    for line in prompt_part.lines().filter(|l| l.contains(" : ")) {
        check(
            prompt.lines().any(|p| p == line.trim_end()),
            format!("missing few-shot line `{line}`"),
        )?;
    }
    check(
        prompt.contains("User: get_reflectance([\"energy drink\", \"yogurt\"])\nYou:"),
        "query line differs",
    )?;
    Ok(format!(
        "2 entries match exactly; {} few-shot lines verbatim",
        examples.len()
    ))
}

fn grasp_qualitative() -> Outcome {
    let data = generate(&DemoConfig {
        embedding_dim: 8,
        ..DemoConfig::default()
    })
    .unwrap();
    let m = &data.manifest;
    let test: Vec<_> = m.objects_in(Split::Test).collect();
    check(
        test.iter().all(|o| o.true_alpha.unwrap().get() < 1.0),
        "test set has alpha = 1",
    )?;
    let cfg = ProtocolConfig::default();
    let over = run_protocol(m, &test, &[MethodBinding::fixed(1.0)], &cfg).unwrap();
    check(
        over.results
            .iter()
            .all(|r| matches!(r.outcome, GraspOutcome::Overreach { force } if force > 0.0)),
        "fixed 1.0 produced a non-overreach trial",
    )?;
    let gt = run_protocol(m, &test, &[MethodBinding::ground_truth()], &cfg).unwrap();
    check(
        gt.results
            .iter()
            .all(|r| r.outcome == GraspOutcome::CleanGrasp),
        "ground truth produced a failed grasp",
    )?;

    let eleven: Vec<_> = test.iter().take(11).copied().collect();
    let table: BTreeMap<String, f64> = eleven.iter().map(|o| (o.object_id.clone(), 0.5)).collect();
    let methods = vec![
        MethodBinding::fixed(0.5),
        MethodBinding::fixed(1.0),
        MethodBinding::Table {
            method_id: "a".into(),
            estimates: table.clone(),
        },
        MethodBinding::Table {
            method_id: "b".into(),
            estimates: table.clone(),
        },
        MethodBinding::Table {
            method_id: "c".into(),
            estimates: table,
        },
        MethodBinding::ground_truth(),
    ];
    let run = run_protocol(
        m,
        &eleven,
        &methods,
        &ProtocolConfig {
            noise_rel: 0.01,
            ..cfg
        },
    )
    .unwrap();
    check(
        run.results.len() == 330 && run.failures.is_empty(),
        format!("{} results", run.results.len()),
    )?;
    Ok(format!(
        "fixed 1.0: {}/{} overreach; ground truth: {}/{} clean; 11 x 6 x 5 = {} results",
        over.results.len(),
        over.results.len(),
        gt.results.len(),
        gt.results.len(),
        run.results.len()
    ))
}

fn table_reproduction() -> Outcome {
    let m = load_manifest(fixtures().join("table/manifest.toml")).map_err(|e| e.to_string())?;
    let table = reflectance_error_table(&m.resolved.predictions, &m, StdEstimator::Population)
        .map_err(|e| e.to_string())?;
    let unseen = table
        .iter()
        .find(|r| r.split == EvalSplit::Unseen)
        .ok_or("no unseen row")?;
    let known = table
        .iter()
        .find(|r| r.split == EvalSplit::Known)
        .ok_or("no known row")?;
    // Errors 0.1, 0.1, 0.2, 0.2: mean 0.15, population std 0.05.
    check(
        (unseen.mean_abs_error - 0.15).abs() <= 1e-12,
        format!("unseen mean {}", unseen.mean_abs_error),
    )?;
    check(
        (unseen.std_abs_error - 0.05).abs() <= 1e-12,
        format!("unseen std {}", unseen.std_abs_error),
    )?;
    check(
        unseen.n == 4 && known.n == 1 && (known.mean_abs_error - 0.05).abs() <= 1e-12,
        "known/unseen split wrong",
    )?;
    let cat = |c: Category| {
        unseen
            .per_category
            .get(&c)
            .map(|s| s.mean)
            .unwrap_or(f64::NAN)
    };
    check(
        (cat(Category::Regular) - 0.1).abs() <= 1e-12
            && (cat(Category::Irregular) - 0.2).abs() <= 1e-12
            && (cat(Category::Transparent) - 0.2).abs() <= 1e-12,
        "per-category means differ from hand arithmetic",
    )?;

    let data = generate(&DemoConfig {
        embedding_dim: 8,
        ..DemoConfig::default()
    })
    .unwrap();
    let test: Vec<_> = data.manifest.objects_in(Split::Test).collect();
    let methods = vec![
        MethodBinding::fixed(0.5),
        MethodBinding::fixed(1.0),
        MethodBinding::ground_truth(),
    ];
    let run = run_protocol(
        &data.manifest,
        &test,
        &methods,
        &ProtocolConfig {
            noise_rel: 0.02,
            seed: 4,
            ..ProtocolConfig::default()
        },
    )
    .unwrap();
    let rows = grasp_summary(&run.results, StdEstimator::Population).unwrap();
    for r in &rows {
        let nd = r.distance.map_or(0, |s| s.n);
        let nf = r.force.map_or(0, |s| s.n);
        check(
            nd + nf + r.clean == r.total,
            format!("{}: trials counted twice or dropped", r.method_id),
        )?;
    }
    let fixed_one = rows.iter().find(|r| r.method_id == "fixed-1.0").unwrap();
    check(
        fixed_one.distance.is_none(),
        "fixed 1.0 has distance samples",
    )?;
    let rendered = render_grasp_summary(&rows, false);
    let line = rendered
        .lines()
        .find(|l| l.starts_with("fixed-1.0"))
        .unwrap();
    check(
        line.split_whitespace().nth(1) == Some("-"),
        format!("hyphen cell missing: `{line}`"),
    )?;

    let separated = mann_whitney_u(&[0.0; 5], &[10.0; 5]).unwrap();
    let identical = mann_whitney_u(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    check(separated <= 0.01, format!("separated p = {separated}"))?;
    check(identical == 1.0, format!("identical p = {identical}"))?;
    let matrix = significance_matrix(
        &[("a".into(), vec![0.0; 5]), ("b".into(), vec![10.0; 5])],
        SignificanceTest::default(),
        Correction::default(),
    )
    .unwrap();
    check(
        matrix.p_value("a", "b") == Some(separated),
        "matrix disagrees with the pairwise test",
    )?;
    Ok(format!(
        "mean 0.15 / std 0.05 exact; hyphen partition holds; p = {separated:.4} and {identical}"
    ))
}

fn reflect(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_reflect"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`reflect {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    let m = "cal/manifest.toml";
    reflect(dir, &["demo", "--out", "data", "--seed", "7"])?;
    reflect(
        dir,
        &["calibrate", "--manifest", "data/manifest.toml", "--out", m],
    )?;
    reflect(
        dir,
        &[
            "train-head",
            "--manifest",
            m,
            "--out",
            "head",
            "--seed",
            "7",
        ],
    )?;
    reflect(
        dir,
        &[
            "estimate",
            "--manifest",
            m,
            "--method",
            "fixed",
            "--alpha",
            "0.5",
            "--out",
            "pred/fixed-0.5.csv",
        ],
    )?;
    reflect(
        dir,
        &[
            "estimate",
            "--manifest",
            m,
            "--method",
            "fixed",
            "--alpha",
            "1.0",
            "--out",
            "pred/fixed-1.0.csv",
        ],
    )?;
    reflect(
        dir,
        &[
            "estimate",
            "--manifest",
            m,
            "--method",
            "head",
            "--params",
            "head/head.params",
            "--out",
            "pred/head.csv",
        ],
    )?;
    reflect(
        dir,
        &[
            "estimate",
            "--manifest",
            m,
            "--method",
            "categorical",
            "--out",
            "pred/categorical.csv",
        ],
    )?;
    let mut prompt = vec![
        "estimate",
        "--manifest",
        m,
        "--method",
        "prompt",
        "--out",
        "pred/prompt.csv",
        "--replies",
    ];
    let replies: Vec<String> = (0..6)
        .map(|k| format!("data/replies/trial-{k}.md"))
        .collect();
    prompt.extend(replies.iter().map(String::as_str));
    reflect(dir, &prompt)?;
    reflect(
        dir,
        &[
            "grasp-sim",
            "--manifest",
            m,
            "--out",
            "grasp/results.csv",
            "--ground-truth",
            "--noise",
            "0.01",
            "--seed",
            "3",
            "--predictions",
            "pred/fixed-0.5.csv",
            "pred/fixed-1.0.csv",
            "pred/head.csv",
            "pred/categorical.csv",
            "pred/prompt.csv",
        ],
    )?;
    reflect(
        dir,
        &[
            "evaluate",
            "--manifest",
            m,
            "--out",
            "eval",
            "--grasp",
            "grasp/results.csv",
            "--predictions",
            "pred/fixed-0.5.csv",
            "pred/fixed-1.0.csv",
            "pred/head.csv",
            "pred/categorical.csv",
            "pred/prompt.csv",
        ],
    )
}

fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if !p.to_string_lossy().ends_with(".run.json") {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn end_to_end_demo() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let start = Instant::now();
    pipeline(a.path())?;
    let elapsed = start.elapsed();
    pipeline(b.path())?;
    within(elapsed, Duration::from_secs(120))?;
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    check(fa.len() > 20, format!("only {} artifacts", fa.len()))?;
    check(fa.keys().eq(fb.keys()), "runs produced different file sets")?;
    let differing: Vec<String> = fa
        .iter()
        .filter(|(k, v)| fb[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    check(
        differing.is_empty(),
        format!("not bit-reproducible: {differing:?}"),
    )?;
    for required in [
        "eval/errors.csv",
        "eval/grasp_summary.csv",
        "eval/significance_force.csv",
        "head/loss.csv",
    ] {
        check(
            fa.contains_key(Path::new(required)),
            format!("missing {required}"),
        )?;
    }
    check(
        a.path().join("grasp/results.csv.run.json").exists(),
        "missing run metadata",
    )?;
    Ok(format!(
        "{} artifacts bit-identical across two runs; one run took {elapsed:?}",
        fa.len()
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        ("sensor round trip", sensor_round_trip),
        ("overshoot identity", overshoot_identity),
        ("calibration exactness", calibration_exactness),
        ("joint fit", joint_fit),
        ("gradient correctness", gradient_correctness),
        ("training recovery", training_recovery),
        ("fusion contract", fusion_contract),
        ("prompt fixture replay", prompt_fixture_replay),
        ("grasp protocol qualitative match", grasp_qualitative),
        ("table reproduction on fixtures", table_reproduction),
        ("end-to-end demo", end_to_end_demo),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
