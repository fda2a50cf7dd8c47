use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use reflect_core::calibration::fit_many;
use reflect_core::dataset::{
    load_manifest, load_predictions, save_manifest, save_predictions, Category, Manifest,
    ObjectRecord, PredictionRecord, Split,
};
use reflect_core::demo::{generate, write_demo, DemoConfig};
use reflect_core::error::Error;
use reflect_core::grasp::{
    load_results, run_protocol, save_results, MethodBinding, ProtocolConfig,
};
use reflect_core::head::{
    categorical_expectation, fused_inputs, load_params, save_loss_history, save_params, train_head,
    Activation, FusionMode, TrainConfig, TrainSet,
};
use reflect_core::metrics::{
    self, Correction, FusionRow, GraspQuantity, SignificanceTest, Stat, StdEstimator,
};
use reflect_core::par::Exec;
use reflect_core::prompt::{self, ClientConfig, CompletionClient, MockClient, PromptSpec, Query};
use reflect_core::SensorIntrinsics;

use crate::config::{self, env_var, parse_field, pick, FileConfig};
use crate::meta::{sidecar, RunMetadata};
use crate::{
    CalibrateArgs, Cli, CliError, Command, DemoArgs, EstimateArgs, EvaluateArgs, GraspArgs,
    IntrinsicsArgs, MethodKind, SplitArg, TrainArgs,
};

struct Ctx {
    verbose: bool,
    exec: Exec,
    file: FileConfig,
}

impl Ctx {
    fn show(&self, resolved: &impl Serialize) {
        if self.verbose {
            eprintln!("config precedence: {}", config::PRECEDENCE);
            eprintln!(
                "resolved config: {}",
                serde_json::to_string_pretty(resolved).unwrap_or_default()
            );
        }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        verbose: cli.verbose,
        exec: if cli.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        },
        file: FileConfig::load(cli.config.as_deref())?,
    };
    match cli.command {
        Command::Demo(a) => demo(&ctx, a),
        Command::Calibrate(a) => calibrate(&ctx, a),
        Command::TrainHead(a) => train(&ctx, a),
        Command::Estimate(a) => estimate(&ctx, a),
        Command::GraspSim(a) => grasp(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn parent_dir(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn resolve_intrinsics(
    ctx: &Ctx,
    a: &IntrinsicsArgs,
    m: &Manifest,
) -> Result<SensorIntrinsics, CliError> {
    let flag = a.d0.zip(a.n);
    let file = ctx.file.intrinsics.map(|i| (i.d0, i.n));
    match flag.or(file) {
        Some((d0, n)) => Ok(SensorIntrinsics::new(d0, n)?),
        None => m.intrinsics.ok_or_else(|| {
            CliError::Usage(
                "sensor intrinsics are required: declare them in the manifest or pass --d0 and --n"
                    .into(),
            )
        }),
    }
}

fn objects_for(m: &Manifest, split: SplitArg) -> Vec<&ObjectRecord> {
    m.objects
        .iter()
        .filter(|o| match split {
            SplitArg::All => true,
            SplitArg::Train => o.split == Split::Train,
            SplitArg::Test => o.split == Split::Test,
        })
        .collect()
}

fn failure_summary(what: &str, items: &[String]) -> String {
    format!("{} {what} failed:\n  {}", items.len(), items.join("\n  "))
}

fn demo(ctx: &Ctx, a: DemoArgs) -> Result<(), CliError> {
    let f = &ctx.file.demo;
    let base = DemoConfig::default();
    let mut cfg = DemoConfig {
        objects: pick(a.objects, f.objects, base.objects),
        test_objects: pick(a.test_objects, f.test_objects, base.test_objects),
        embedding_dim: pick(a.embedding_dim, f.embedding_dim, base.embedding_dim),
        image_views: pick(a.views, f.views, base.image_views),
        seed: pick(a.seed, f.seed, base.seed),
        ..base
    };
    cfg.sweep.noise_rel = pick(a.sweep_noise, f.sweep_noise, base.sweep.noise_rel);
    ctx.show(&cfg);
    let mut meta = RunMetadata::start("demo");
    meta.config(&cfg);
    meta.seeds.insert("demo".into(), cfg.seed);
    meta.synthetic_data = true;

    let data = generate(&cfg)?;
    create_dir(&a.out)?;
    let files = write_demo(&data, &a.out)?;
    for p in [&files.manifest, &files.sweeps, &files.embeddings]
        .into_iter()
        .chain(&files.replies)
    {
        meta.output(p);
    }
    meta.finish(a.out.join("demo.run.json"))?;
    let (train, test) = data.manifest.split_counts();
    println!(
        "synthetic demo data: {} objects ({train} train, {test} test), {}-d embeddings, {} mock replies -> {}",
        cfg.objects,
        cfg.embedding_dim,
        files.replies.len(),
        files.manifest.display()
    );
    Ok(())
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> Result<(), CliError> {
    let mut m = load_manifest(&a.manifest)?;
    let intr = resolve_intrinsics(ctx, &a.intrinsics, &m)?;
    if m.intrinsics.is_some_and(|mi| mi != intr) {
        eprintln!(
            "warning: overriding manifest intrinsics with d0 = {}, n = {}",
            intr.d0(),
            intr.n()
        );
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        manifest: &'a Path,
        intrinsics: SensorIntrinsics,
        keep_going: bool,
    }
    ctx.show(&Resolved {
        manifest: &a.manifest,
        intrinsics: intr,
        keep_going: a.keep_going,
    });
    let mut meta = RunMetadata::start("calibrate");
    meta.config(&Resolved {
        manifest: &a.manifest,
        intrinsics: intr,
        keep_going: a.keep_going,
    });
    meta.input(&a.manifest);
    meta.synthetic_data = m.synthetic;

    let fits = fit_many(&intr, &m.resolved.sweeps, ctx.exec);
    let mut report = String::from("object_id,alpha,rms_residual,samples,out_of_range,status\n");
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut fitted = BTreeMap::new();
    for (sweep, fit) in m.resolved.sweeps.iter().zip(fits) {
        let id = sweep.object_id();
        match fit {
            Ok(r) => {
                let status = if r.out_of_range {
                    failures.push(format!("{id}: fitted alpha {} outside (0, 1]", r.alpha));
                    "out_of_range"
                } else {
                    "ok"
                };
                report.push_str(&format!(
                    "{id},{},{},{},{},{status}\n",
                    r.alpha, r.rms_residual, r.sample_count, r.out_of_range
                ));
                worst = worst.max(r.rms_residual);
                fitted.insert(id.to_string(), r.clamped());
            }
            Err(e) => {
                report.push_str(&format!("{id},,,{},,error\n", sweep.len()));
                failures.push(format!("{id}: {e}"));
            }
        }
    }
    for o in &mut m.objects {
        match fitted.get(&o.object_id) {
            Some(alpha) => o.true_alpha = Some(*alpha),
            None if m
                .resolved
                .sweeps
                .iter()
                .all(|s| s.object_id() != o.object_id) =>
            {
                failures.push(format!("{}: no sweep", o.object_id));
                report.push_str(&format!("{},,,0,,no_sweep\n", o.object_id));
            }
            None => {}
        }
    }
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.out.with_file_name("calibration.csv"));
    parent_dir(&report_path)?;
    write(&report_path, &report)?;
    meta.output(&report_path);

    if !failures.is_empty() && !a.keep_going {
        meta.finish(sidecar(&report_path))?;
        return Err(CliError::Failures {
            code: 3,
            summary: failure_summary("object fits", &failures)
                + "\n(no manifest written; rerun with --keep-going to accept)",
        });
    }
    m.revision += 1;
    m.intrinsics = Some(intr);
    parent_dir(&a.out)?;
    save_manifest(&m, &a.out)?;
    meta.output(&a.out);
    meta.finish(sidecar(&a.out))?;
    println!(
        "calibrated {} objects (max rms residual {worst:.3e}); manifest revision {} -> {}",
        fitted.len(),
        m.revision,
        a.out.display()
    );
    for f in &failures {
        eprintln!("warning: {f}");
    }
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<(), CliError> {
    let f = &ctx.file.train;
    let m = load_manifest(&a.manifest)?;
    let fusion: FusionMode = pick(
        a.fusion
            .as_deref()
            .map(str::parse)
            .transpose()
            .map_err(CliError::Usage)?,
        parse_field(f.fusion.as_ref(), "train.fusion")?,
        FusionMode::ImageOnly,
    );
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: pick(a.learning_rate, f.learning_rate, base.learning_rate),
        epochs: pick(a.epochs, f.epochs, base.epochs),
        batch_size: a.batch_size.or(f.batch_size),
        lr_floor: pick(a.lr_floor, f.lr_floor, base.lr_floor),
        hidden_units: pick(a.hidden_units, f.hidden_units, base.hidden_units),
        activation: pick(
            a.activation
                .as_deref()
                .map(str::parse::<Activation>)
                .transpose()
                .map_err(CliError::Usage)?,
            parse_field(f.activation.as_ref(), "train.activation")?,
            base.activation,
        ),
        seed: pick(a.seed, f.seed, base.seed),
        keep_best: a.keep_best,
        ..base
    };
    let train_objects: Vec<&ObjectRecord> = m.objects_in(Split::Train).collect();
    if train_objects.is_empty() {
        return Err(CliError::Usage("manifest has no training objects".into()));
    }
    let set = TrainSet::from_objects(&m, train_objects.iter().copied(), fusion)?;
    let input_dim = set.input_dim().unwrap_or(0);

    #[derive(Serialize)]
    struct Resolved {
        fusion: FusionMode,
        input_dim: usize,
        train_objects: usize,
        train_samples: usize,
        train: TrainConfig,
    }
    let resolved = Resolved {
        fusion,
        input_dim,
        train_objects: train_objects.len(),
        train_samples: set.len(),
        train: cfg,
    };
    ctx.show(&resolved);
    let mut meta = RunMetadata::start("train-head");
    meta.config(&resolved);
    meta.seeds.insert("train".into(), cfg.seed);
    meta.input(&a.manifest);
    meta.synthetic_data = m.synthetic;

    ctx.note(format!("training on {} samples", set.len()));
    let outcome = train_head(&set, &cfg, fusion)?;
    create_dir(&a.out)?;
    let params_path = a.out.join("head.params");
    let loss_path = a.out.join("loss.csv");
    save_params(&outcome.params, &params_path)?;
    save_loss_history(&outcome, &loss_path)?;
    meta.output(&params_path);
    meta.output(&loss_path);
    meta.finish(a.out.join("train-head.run.json"))?;
    let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {fusion} head (input_dim {input_dim}, {} samples, {} epochs), final train MSE {last:.3e} -> {}",
        set.len(),
        cfg.epochs,
        params_path.display()
    );
    Ok(())
}

fn replicate(
    objects: &[&ObjectRecord],
    method_id: &str,
    trials: u32,
    value: impl Fn(&ObjectRecord) -> Result<f64, CliError>,
) -> Result<Vec<PredictionRecord>, CliError> {
    let mut out = Vec::with_capacity(objects.len() * trials as usize);
    for o in objects {
        let v = value(o)?;
        for t in 0..trials {
            out.push(PredictionRecord {
                method_id: method_id.into(),
                object_id: o.object_id.clone(),
                trial_index: t,
                predicted_alpha: v,
            });
        }
    }
    Ok(out)
}

/// Mean `true_alpha` of training objects per category.
fn category_alphas(m: &Manifest) -> Result<Vec<f64>, CliError> {
    Category::ALL
        .iter()
        .map(|&c| {
            let xs: Vec<f64> = m
                .objects_in(Split::Train)
                .filter(|o| o.category == c)
                .filter_map(|o| o.true_alpha.map(|a| a.get()))
                .collect();
            if xs.is_empty() {
                Err(Error::InsufficientSamples(format!(
                    "no calibrated training objects in category `{c}`"
                ))
                .into())
            } else {
                Ok(xs.iter().sum::<f64>() / xs.len() as f64)
            }
        })
        .collect()
}

fn estimate(ctx: &Ctx, a: EstimateArgs) -> Result<(), CliError> {
    let f = &ctx.file.estimate;
    let m = load_manifest(&a.manifest)?;
    let split = pick(
        a.split,
        parse_field(f.split.as_ref(), "estimate.split")?,
        SplitArg::Test,
    );
    let trials = pick(a.trials, f.trials, 6);
    if trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let objects = objects_for(&m, split);
    if objects.is_empty() {
        return Err(CliError::Usage(format!("no objects in split {split:?}")));
    }
    let mut meta = RunMetadata::start("estimate");
    meta.input(&a.manifest);
    meta.synthetic_data = m.synthetic;
    let mut failures = Vec::new();

    #[derive(Serialize)]
    struct Resolved {
        method: MethodKind,
        method_id: String,
        split: SplitArg,
        trials: u32,
        detail: serde_json::Value,
    }

    let (method_id, records, detail) = match a.method {
        MethodKind::Fixed => {
            let alpha = a.alpha.unwrap_or(0.5);
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(CliError::Usage(format!(
                    "--alpha must lie in (0, 1], got {alpha}"
                )));
            }
            let id = a
                .method_id
                .clone()
                .unwrap_or_else(|| MethodBinding::fixed(alpha).method_id().to_string());
            let recs = replicate(&objects, &id, trials, |_| Ok(alpha))?;
            (id, recs, serde_json::json!({ "alpha": alpha }))
        }
        MethodKind::Head => {
            let path = a.params.as_ref().ok_or_else(|| {
                CliError::Usage("--params is required for the head method".into())
            })?;
            let params = load_params(path)?;
            meta.input(path);
            let id = a
                .method_id
                .clone()
                .unwrap_or_else(|| format!("head-{}", params.fusion));
            let recs = replicate(&objects, &id, trials, |o| {
                let xs = fused_inputs(&m, &o.object_id, params.fusion)?;
                let preds = params.predict_batch(&xs, ctx.exec)?;
                Ok(preds.iter().sum::<f64>() / preds.len() as f64)
            })?;
            (
                id,
                recs,
                serde_json::json!({ "params": path, "fusion": params.fusion, "view_policy": "average" }),
            )
        }
        MethodKind::Categorical => {
            let alphas = category_alphas(&m)?;
            let id = a.method_id.clone().unwrap_or_else(|| "categorical".into());
            let recs = replicate(&objects, &id, trials, |o| {
                let one_hot: Vec<f64> = Category::ALL
                    .iter()
                    .map(|&c| if c == o.category { 1.0 } else { 0.0 })
                    .collect();
                let l = o.category_likelihoods.clone().unwrap_or(one_hot);
                Ok(categorical_expectation(&l, &alphas)?)
            })?;
            (id, recs, serde_json::json!({ "category_alphas": alphas }))
        }
        MethodKind::Prompt => {
            let r = &ctx.file.remote;
            let base = ClientConfig::default();
            let client_cfg = ClientConfig {
                endpoint: a
                    .endpoint
                    .clone()
                    .or(r.endpoint.clone())
                    .or(env_var(config::ENV_ENDPOINT))
                    .unwrap_or(base.endpoint),
                model: a
                    .model
                    .clone()
                    .or(r.model.clone())
                    .or(env_var(config::ENV_MODEL))
                    .unwrap_or(base.model),
                timeout: a
                    .timeout_s
                    .or(r.timeout_s)
                    .map(Duration::from_secs)
                    .unwrap_or(base.timeout),
                max_retries: pick(a.max_retries, r.max_retries, base.max_retries),
                parallelism: pick(a.parallelism, r.parallelism, base.parallelism),
            };
            let client: Box<dyn CompletionClient> = if a.remote {
                remote_client(&client_cfg)?
            } else {
                if a.replies.is_empty() {
                    return Err(CliError::Usage(
                        "the prompt method needs --replies files or --remote".into(),
                    ));
                }
                let replies = a
                    .replies
                    .iter()
                    .map(|p| {
                        meta.input(p);
                        fs::read_to_string(p).map_err(|e| CliError::Io(p.clone(), e))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Box::new(MockClient::new(replies)?)
            };
            let examples: Vec<(String, f64)> = m
                .objects_in(Split::Train)
                .filter_map(|o| o.true_alpha.map(|t| (o.name.clone(), t.get())))
                .collect();
            let mut spec = PromptSpec::new(examples, Vec::new());
            spec.precision = a.precision.or(f.precision);
            let queries: Vec<Query> = objects
                .iter()
                .map(|o| Query {
                    object_id: o.object_id.clone(),
                    name: o.name.clone(),
                })
                .collect();
            let id = a.method_id.clone().unwrap_or_else(|| "prompt".into());
            let outcome =
                prompt::estimate(&queries, &spec, client.as_ref(), &client_cfg, &id, trials)?;
            let tpath = a
                .transcripts
                .clone()
                .unwrap_or_else(|| a.out.with_extension("transcripts.json"));
            parent_dir(&tpath)?;
            prompt::save_transcripts(&outcome.transcripts, &tpath)?;
            meta.output(&tpath);
            failures = outcome
                .failures
                .iter()
                .map(|q| format!("{} trial {}: {}", q.object_id, q.trial, q.error))
                .collect();
            let detail = serde_json::json!({
                "client": client.describe(),
                "endpoint": client_cfg.endpoint,
                "model": client_cfg.model,
                "examples": spec.examples.len(),
                "precision": spec.precision,
            });
            (id, outcome.records(), detail)
        }
    };
    let resolved = Resolved {
        method: a.method,
        method_id: method_id.clone(),
        split,
        trials,
        detail,
    };
    ctx.show(&resolved);
    meta.config(&resolved);

    parent_dir(&a.out)?;
    save_predictions(&records, &a.out)?;
    meta.output(&a.out);
    meta.finish(sidecar(&a.out))?;
    println!(
        "{} predictions from `{method_id}` ({} objects x {trials} trials) -> {}",
        records.len(),
        objects.len(),
        a.out.display()
    );
    if !failures.is_empty() {
        return Err(CliError::Failures {
            code: 5,
            summary: failure_summary("queries", &failures),
        });
    }
    Ok(())
}

#[cfg(feature = "remote")]
fn remote_client(cfg: &ClientConfig) -> Result<Box<dyn CompletionClient>, CliError> {
    let key = env_var(config::ENV_API_KEY).ok_or_else(|| {
        CliError::Usage(format!(
            "--remote needs the {} environment variable",
            config::ENV_API_KEY
        ))
    })?;
    if cfg.endpoint == "mock" {
        return Err(CliError::Usage(format!(
            "--remote needs --endpoint or {}",
            config::ENV_ENDPOINT
        )));
    }
    Ok(Box::new(prompt::RemoteClient::new(cfg.clone(), key)?))
}

#[cfg(not(feature = "remote"))]
fn remote_client(_cfg: &ClientConfig) -> Result<Box<dyn CompletionClient>, CliError> {
    Err(CliError::Usage(
        "this build has no remote client; rebuild with `--features remote`".into(),
    ))
}

fn grasp(ctx: &Ctx, a: GraspArgs) -> Result<(), CliError> {
    let f = &ctx.file.grasp;
    let mut m = load_manifest(&a.manifest)?;
    m.intrinsics = Some(resolve_intrinsics(ctx, &a.intrinsics, &m)?);
    let base = ProtocolConfig::default();
    let cfg = ProtocolConfig {
        repetitions: pick(a.repetitions, f.repetitions, base.repetitions),
        seed: pick(a.seed, f.seed, base.seed),
        noise_rel: pick(a.noise, f.noise, base.noise_rel),
        standoff: pick(a.standoff, f.standoff, base.standoff),
        max_force: pick(a.max_force, f.max_force, base.max_force),
        tolerance: pick(a.tolerance, f.tolerance, base.tolerance),
        exec: ctx.exec,
    };
    let mut objects = objects_for(&m, a.split.unwrap_or(SplitArg::Test));
    if !a.object_ids.is_empty() {
        let unknown: Vec<String> = a
            .object_ids
            .iter()
            .filter(|id| m.object(id).is_none())
            .map(|id| format!("unknown object `{id}`"))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Referential(unknown).into());
        }
        objects.retain(|o| a.object_ids.contains(&o.object_id));
    }
    if objects.is_empty() {
        return Err(CliError::Usage("no objects selected".into()));
    }

    let mut meta = RunMetadata::start("grasp-sim");
    meta.input(&a.manifest);
    meta.synthetic_data = m.synthetic;
    let mut methods: Vec<MethodBinding> =
        a.fixed.iter().map(|&x| MethodBinding::fixed(x)).collect();
    for p in &a.predictions {
        meta.input(p);
        methods.extend(MethodBinding::from_predictions(&load_predictions(p)?));
    }
    if a.ground_truth {
        methods.push(MethodBinding::ground_truth());
    }
    if methods.is_empty() {
        return Err(CliError::Usage(
            "no methods: pass --fixed, --predictions or --ground-truth".into(),
        ));
    }

    #[derive(Serialize)]
    struct Resolved {
        methods: Vec<String>,
        objects: Vec<String>,
        intrinsics: Option<SensorIntrinsics>,
        protocol: ProtocolConfig,
    }
    let resolved = Resolved {
        methods: methods.iter().map(|b| b.method_id().to_string()).collect(),
        objects: objects.iter().map(|o| o.object_id.clone()).collect(),
        intrinsics: m.intrinsics,
        protocol: cfg,
    };
    ctx.show(&resolved);
    meta.config(&resolved);
    meta.seeds.insert("grasp".into(), cfg.seed);

    ctx.note(format!(
        "running {} trials",
        methods.len() * objects.len() * cfg.repetitions as usize
    ));
    let run = run_protocol(&m, &objects, &methods, &cfg)?;
    parent_dir(&a.out)?;
    save_results(&run.results, &a.out)?;
    meta.output(&a.out);
    let summary_path = a.out.with_extension("summary.csv");
    if !run.results.is_empty() {
        let rows = metrics::grasp_summary(&run.results, StdEstimator::Population)?;
        write(&summary_path, &metrics::grasp_summary_csv(&rows))?;
        meta.output(&summary_path);
        print!("{}", metrics::render_grasp_summary(&rows, false));
    }
    meta.finish(sidecar(&a.out))?;
    println!(
        "{} trials ({} methods x {} objects x {} repetitions) -> {}",
        run.results.len(),
        methods.len(),
        objects.len(),
        cfg.repetitions,
        a.out.display()
    );
    if !run.failures.is_empty() {
        let items: Vec<String> = run
            .failures
            .iter()
            .map(|f| format!("{} / {}: {}", f.method_id, f.object_id, f.error))
            .collect();
        return Err(CliError::Failures {
            code: 3,
            summary: failure_summary("method/object pairs", &items),
        });
    }
    Ok(())
}

fn parse_test(s: &str) -> Result<SignificanceTest, String> {
    match s.replace('-', "_").as_str() {
        "mann_whitney" | "mw" => Ok(SignificanceTest::MannWhitney),
        "welch_t" | "welch" => Ok(SignificanceTest::WelchT),
        _ => Err(format!("unknown test `{s}` (mann_whitney, welch_t)")),
    }
}

fn parse_correction(s: &str) -> Result<Correction, String> {
    match s {
        "none" => Ok(Correction::None),
        "bonferroni" => Ok(Correction::Bonferroni),
        "holm" => Ok(Correction::Holm),
        _ => Err(format!("unknown correction `{s}` (none, bonferroni, holm)")),
    }
}

fn parse_std(s: &str) -> Result<StdEstimator, String> {
    match s {
        "population" => Ok(StdEstimator::Population),
        "sample" => Ok(StdEstimator::Sample),
        _ => Err(format!("unknown std estimator `{s}` (population, sample)")),
    }
}

fn choose<T>(
    flag: Option<&String>,
    file: Option<&String>,
    parse: fn(&str) -> Result<T, String>,
    default: T,
) -> Result<T, CliError> {
    match flag.or(file) {
        Some(s) => parse(s).map_err(CliError::Usage),
        None => Ok(default),
    }
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<(), CliError> {
    let f = &ctx.file.evaluate;
    let m = load_manifest(&a.manifest)?;
    let test = choose(
        a.test.as_ref(),
        f.test.as_ref(),
        parse_test,
        SignificanceTest::default(),
    )?;
    let correction = choose(
        a.correction.as_ref(),
        f.correction.as_ref(),
        parse_correction,
        Correction::default(),
    )?;
    let est = choose(
        a.std.as_ref(),
        f.std.as_ref(),
        parse_std,
        StdEstimator::default(),
    )?;
    let pretraining: BTreeMap<String, String> = a
        .pretraining
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| {
                    CliError::Usage(format!("--pretraining expects METHOD=LABEL, got `{kv}`"))
                })
        })
        .collect::<Result<_, _>>()?;

    #[derive(Serialize)]
    struct Resolved {
        test: SignificanceTest,
        correction: Correction,
        std: StdEstimator,
        markup: bool,
        predictions: Vec<PathBuf>,
        grasp: Option<PathBuf>,
    }
    let resolved = Resolved {
        test,
        correction,
        std: est,
        markup: a.markup,
        predictions: a.predictions.clone(),
        grasp: a.grasp.clone(),
    };
    ctx.show(&resolved);
    let mut meta = RunMetadata::start("evaluate");
    meta.config(&resolved);
    meta.input(&a.manifest);
    meta.synthetic_data = m.synthetic;
    create_dir(&a.out)?;

    let mut predictions = Vec::new();
    for p in &a.predictions {
        meta.input(p);
        predictions.extend(load_predictions(p)?);
    }
    if a.predictions.is_empty() {
        predictions = m.resolved.predictions.clone();
    }
    if predictions.is_empty() && a.grasp.is_none() {
        return Err(CliError::Usage(
            "nothing to evaluate: pass --predictions and/or --grasp".into(),
        ));
    }

    let emit = |name: &str, text: &str, meta: &mut RunMetadata| -> Result<(), CliError> {
        let p = a.out.join(name);
        write(&p, text)?;
        meta.output(&p);
        Ok(())
    };

    if !predictions.is_empty() {
        let table = metrics::reflectance_error_table(&predictions, &m, est)?;
        emit("errors.csv", &metrics::error_table_csv(&table), &mut meta)?;
        let text = metrics::render_error_table(&table, &pretraining, a.markup);
        emit("errors.txt", &text, &mut meta)?;
        println!("Reflectance error (mean ± std of |predicted - true|)\n{text}");

        let fusion_rows: Vec<FusionRow> = table
            .iter()
            .filter(|r| r.split == metrics::EvalSplit::Unseen)
            .filter_map(|r| {
                let mode: FusionMode = r.method_id.strip_prefix("head-")?.parse().ok()?;
                Some(FusionRow {
                    backbone: a.backbone.clone(),
                    pretraining: pretraining
                        .get(&r.method_id)
                        .cloned()
                        .unwrap_or_else(|| "-".into()),
                    fusion: mode,
                    unseen: Some(Stat {
                        mean: r.mean_abs_error,
                        std: r.std_abs_error,
                        n: r.n,
                    }),
                })
            })
            .collect();
        if !fusion_rows.is_empty() {
            let text = metrics::render_fusion_table(&fusion_rows, a.markup);
            emit("fusion.txt", &text, &mut meta)?;
            println!("Fusion comparison\n{text}");
        }
    }

    if let Some(gp) = &a.grasp {
        meta.input(gp);
        let results = load_results(gp)?;
        let rows = metrics::grasp_summary(&results, est)?;
        emit(
            "grasp_summary.csv",
            &metrics::grasp_summary_csv(&rows),
            &mut meta,
        )?;
        let text = metrics::render_grasp_summary(&rows, a.markup);
        emit("grasp_summary.txt", &text, &mut meta)?;
        println!(
            "Grasp outcomes (distance over underreach trials, force over overreach trials)\n{text}"
        );
        let by_object = metrics::grasp_summary_by_object(&results, est);
        let mut csv = String::from("object_id,method_id,distance_mean_mm,distance_std_mm,distance_n,force_mean_N,force_std_N,force_n,clean_n,total_n\n");
        for ((o, _), row) in &by_object {
            let body = metrics::grasp_summary_csv(std::slice::from_ref(row));
            csv.push_str(&format!("{o},{}", body.lines().nth(1).unwrap_or_default()));
            csv.push('\n');
        }
        emit("grasp_by_object.csv", &csv, &mut meta)?;

        for (quantity, name) in [
            (GraspQuantity::Distance, "distance"),
            (GraspQuantity::Force, "force"),
        ] {
            let samples = metrics::grasp_samples(&results, quantity);
            if samples.len() < 2 {
                continue;
            }
            let matrix = metrics::significance_matrix(&samples, test, correction)?;
            emit(
                &format!("significance_{name}.csv"),
                &matrix.csv(),
                &mut meta,
            )?;
            let text = matrix.render();
            emit(&format!("significance_{name}.txt"), &text, &mut meta)?;
            println!("Pairwise significance: {name}\n{text}");
        }
    }
    meta.finish(a.out.join("evaluate.run.json"))?;
    Ok(())
}
