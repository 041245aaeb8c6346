use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use slidebench_core::bench::{
    evaluate, make_splits, patient_counts, read_metrics, report_csv, report_grid, train_model, write_metrics, Correlation,
    MetricsReport, SplitOptions, SplitRatios, TrainConfig,
};
use slidebench_core::dataset_store::{load_dataset, write_splits, Subset, SPLITS_FILE};
use slidebench_core::embedder::{embed_dataset, validate_features, EmbedOptions, EmbedderKind, EmbedderSpec, SlideOutcome};
use slidebench_core::mil_core::{AdamConfig, ModelKind};
use slidebench_core::pipeline::{crop_slide_file, write_fixture, CropStatus, FixtureSpec, MaskParams, FIXTURE_DATASET_DIR};
use slidebench_core::slide_io::{synth_slide, BlobSpec, SynthSpec};
use slidebench_core::tiler::TilePlan;

use crate::args::*;

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Serialize)]
struct RunConfig<'a, A: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    workers: usize,
    args: &'a A,
    resolved: R,
}

/// Logs the resolved configuration and writes it to
/// `<root>/runs/<subcommand>/run_config.json`.
fn record_run<A: Serialize, R: Serialize>(root: &Path, sub: &'static str, workers: usize, args: &A, resolved: R) -> Result<()> {
    let cfg = RunConfig { tool: "slidebench", version: env!("CARGO_PKG_VERSION"), subcommand: sub, workers, args, resolved };
    let text = serde_json::to_string_pretty(&cfg)?;
    log::info!("{sub} configuration: {}", serde_json::to_string(&cfg)?);
    let dir = root.join("runs").join(sub);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("run_config.json"), text + "\n")?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global()?;
    let w = cli.workers;
    match cli.command {
        Command::Synth(a) => synth(&a, w),
        Command::Crop(a) => crop(&a, w),
        Command::Embed(a) => embed(&a, w),
        Command::Validate(a) => validate(&a, w),
        Command::Split(a) => split(&a, w),
        Command::Train(a) => train(&a, w),
        Command::Eval(a) => eval(&a, w),
        Command::Report(a) => report(&a, w),
    }
}

fn parse_quad(s: &str, what: &str) -> Result<[f64; 4]> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("{what} {s:?} needs four comma-separated numbers").into())
}

fn synth(a: &SynthArgs, workers: usize) -> Result<()> {
    if a.fixture {
        let spec = FixtureSpec { slides: a.slides, size: a.width, mpp: a.mpp, seed: a.seed };
        record_run(&a.out, "synth", workers, a, &spec)?;
        let labels = a.out.join(FIXTURE_DATASET_DIR).join("task-settings").join("labels.csv");
        if labels.is_file() && !a.force {
            log::info!("fixture exists at {}; skipping (use --force to rewrite)", a.out.display());
            return Ok(());
        }
        let paths = write_fixture(&a.out, &spec)?;
        println!("wrote {} slides and task settings under {}", paths.len(), a.out.display());
        return Ok(());
    }
    let spec = match &a.spec {
        Some(p) => serde_json::from_str::<SynthSpec>(&fs::read_to_string(p)?)?,
        None => {
            let mut blobs = Vec::new();
            for b in &a.blobs {
                let [cx, cy, rx, ry] = parse_quad(b, "--blob")?;
                blobs.push(BlobSpec::ellipse(cx, cy, rx, ry));
            }
            for r in &a.rects {
                let [x0, y0, w, h] = parse_quad(r, "--rect")?;
                blobs.push(BlobSpec::rect(x0, y0, w, h));
            }
            SynthSpec { width: a.width, height: a.height, mpp: a.mpp, seed: a.seed, blobs, levels: a.levels, tile: None }
        }
    };
    let parent = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    record_run(parent, "synth", workers, a, &spec)?;
    if a.out.exists() && !a.force {
        log::info!("{} exists; skipping (use --force to rewrite)", a.out.display());
        return Ok(());
    }
    synth_slide(&spec, &a.out)?;
    println!("wrote {} ({} levels)", a.out.display(), spec.level_count());
    Ok(())
}

fn crop(a: &CropArgs, workers: usize) -> Result<()> {
    let plan = TilePlan {
        tile_size: a.tile_size,
        stride: a.stride.unwrap_or(a.tile_size),
        target_mpp: a.target_mpp,
        chunk_size: a.chunk_size,
        min_coverage: a.min_coverage,
        min_variance: a.min_variance,
    };
    plan.validate()?;
    let mask = MaskParams { mask_mpp: a.mask_mpp, min_region_area: a.min_region_area };
    fs::create_dir_all(&a.out)?;
    record_run(&a.out, "crop", workers, a, serde_json::json!({ "plan": &plan, "mask": &mask }))?;
    for s in &a.slides {
        match crop_slide_file(s, &a.out, &plan, &mask, workers, a.emit_qc, a.force)? {
            CropStatus::Cropped { slide_id, tiles, candidates } => {
                println!("{slide_id}: {tiles} tiles ({candidates} candidates)")
            }
            CropStatus::Skipped { slide_id } => println!("{slide_id}: skipped (manifest exists)"),
        }
    }
    Ok(())
}

fn embed(a: &EmbedArgs, workers: usize) -> Result<()> {
    let spec = match a.embedder {
        EmbedderChoice::Native => {
            let spec = EmbedderSpec::native(a.seed, a.dim);
            if let Some(id) = a.embedder_id.as_ref().filter(|id| **id != spec.embedder_id) {
                return Err(format!("native embedder id is {:?}; --embedder-id {id:?} does not match", spec.embedder_id).into());
            }
            spec
        }
        EmbedderChoice::External => {
            let id = a.embedder_id.as_deref().ok_or("--embedder external requires --embedder-id")?;
            if a.adapter_cmd.is_none() {
                return Err("--embedder external requires --adapter-cmd".into());
            }
            EmbedderSpec::external(id, a.dim)
        }
    };
    let opts = EmbedOptions {
        batch: a.batch,
        workers,
        force: a.force,
        fallback_mpp: a.fallback_mpp,
        adapter_cmd: a.adapter_cmd.clone(),
    };
    record_run(&a.dataset, "embed", workers, a, &spec)?;
    let summary = embed_dataset(&a.dataset, &spec, &opts)?;
    for (id, outcome) in &summary.slides {
        match outcome {
            SlideOutcome::Written { tiles } => println!("{id}: {tiles} x {} features", spec.dim),
            SlideOutcome::Skipped => println!("{id}: skipped (feature file exists)"),
            SlideOutcome::NoTiles => println!("{id}: no tiles, no feature file"),
            SlideOutcome::Rejected(r) => println!("{id}: REJECTED {}", r.join("; ")),
        }
    }
    if spec.kind == EmbedderKind::External && summary.rejected() > 0 {
        return Err(format!("{} adapter output(s) failed validation and were deleted", summary.rejected()).into());
    }
    Ok(())
}

fn validate(a: &ValidateArgs, workers: usize) -> Result<()> {
    record_run(&a.dataset, "validate", workers, a, ())?;
    let report = validate_features(&a.dataset)?;
    println!("{report}");
    if !report.passed() {
        return Err(format!("{} slide(s) failed validation", report.failures()).into());
    }
    Ok(())
}

fn parse_ratios(s: &str) -> Result<SplitRatios> {
    let v: Vec<u32> = s.split(':').map(|p| p.trim().parse::<u32>()).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [train, val, test] if train + val + test > 0 => Ok(SplitRatios { train, val, test }),
        _ => Err(format!("--ratios {s:?} must look like 7:1:2").into()),
    }
}

fn split(a: &SplitArgs, workers: usize) -> Result<()> {
    let ratios = parse_ratios(&a.ratios)?;
    let ds = load_dataset(&a.dataset)?;
    record_run(&a.dataset, "split", workers, a, &ratios)?;
    let path = ds.task_settings().join(SPLITS_FILE);
    if path.is_file() && !a.force {
        log::info!("{} exists; skipping (use --force to rewrite)", path.display());
        return Ok(());
    }
    let stratify_by = match &a.stratify {
        Some(name) => Some(ds.task(name).cloned().ok_or_else(|| format!("unknown task {name:?}"))?),
        None => None,
    };
    let assignment = make_splits(&ds.labels, a.seed, &SplitOptions { ratios, stratify_by })?;
    write_splits(&path, &assignment.slides)?;
    let [tr, va, te] = patient_counts(&ds.labels, &assignment);
    println!("patients: {tr} train, {va} val, {te} test -> {}", path.display());
    Ok(())
}

fn train(a: &TrainArgs, workers: usize) -> Result<()> {
    let model: ModelKind = a.model.parse()?;
    let correlation: Correlation = a.correlation.parse()?;
    let cfg = TrainConfig {
        model,
        hidden: a.hidden,
        max_epochs: a.epochs,
        patience: a.patience,
        adam: AdamConfig { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, weight_decay: a.weight_decay },
        seed: a.seed,
        correlation,
    };
    let ds = load_dataset(&a.dataset)?;
    let tasks = if a.tasks.is_empty() { ds.tasks.iter().map(|t| t.name.clone()).collect() } else { a.tasks.clone() };
    let out = a.out.clone().unwrap_or_else(|| a.dataset.join("models"));
    let stem = format!("{}-{}", model.name(), tasks.join("+"));
    let ckpt = out.join(format!("{stem}.ckpt"));
    let log_path = out.join(format!("{stem}.log.jsonl"));
    record_run(&a.dataset, "train", workers, a, serde_json::json!({ "config": &cfg, "tasks": &tasks, "checkpoint": &ckpt }))?;
    if ckpt.is_file() && !a.force {
        log::info!("{} exists; skipping (use --force to retrain)", ckpt.display());
        return Ok(());
    }
    fs::create_dir_all(&out)?;
    let outcome = train_model(&ds, &tasks, &cfg, &ckpt, &log_path)?;
    println!(
        "{}: best epoch {} of {} (val {}) -> {}",
        stem,
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_val.map_or("n/a".to_string(), |v| format!("{v:.4}")),
        ckpt.display()
    );
    Ok(())
}

fn parse_subset(s: &str) -> Result<Subset> {
    Ok(s.parse::<Subset>()?)
}

fn eval(a: &EvalArgs, workers: usize) -> Result<()> {
    let subset = parse_subset(&a.subset)?;
    let correlation: Correlation = a.correlation.parse()?;
    let stem = a.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let out = a.out.clone().unwrap_or_else(|| a.dataset.join("metrics").join(format!("{stem}-{subset}.json")));
    record_run(&a.dataset, "eval", workers, a, serde_json::json!({ "subset": subset, "out": &out }))?;
    if out.is_file() && !a.force {
        log::info!("{} exists; skipping (use --force to rewrite)", out.display());
        return Ok(());
    }
    let ds = load_dataset(&a.dataset)?;
    let metrics = evaluate(&ds, &a.checkpoint, subset, correlation)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    write_metrics(&out, &metrics)?;
    for m in &metrics {
        println!("{} {} {} = {} (n={})", m.task, m.model, m.metric, m.value, m.n);
    }
    Ok(())
}

fn metric_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(format!("metrics path {} not found", p.display()).into());
        }
    }
    Ok(files)
}

fn model_rank(name: &str) -> usize {
    name.parse::<ModelKind>().ok().and_then(|k| ModelKind::ALL.iter().position(|&m| m == k)).unwrap_or(usize::MAX)
}

fn report(a: &ReportArgs, workers: usize) -> Result<()> {
    let sources = if a.metrics.is_empty() { vec![a.dataset.join("metrics")] } else { a.metrics.clone() };
    let out = a.out.clone().unwrap_or_else(|| a.dataset.clone());
    record_run(&a.dataset, "report", workers, a, serde_json::json!({ "sources": &sources, "out": &out }))?;
    let md_path = out.join("bench.md");
    if md_path.is_file() && !a.force {
        log::info!("{} exists; skipping (use --force to rewrite)", md_path.display());
        return Ok(());
    }
    let mut metrics: Vec<MetricsReport> = Vec::new();
    for f in metric_files(&sources)? {
        metrics.extend(read_metrics(&f)?);
    }
    let mut models: Vec<String> = Vec::new();
    let mut tasks: Vec<String> = load_dataset(&a.dataset).map(|d| d.tasks.iter().map(|t| t.name.clone()).collect()).unwrap_or_default();
    for m in &metrics {
        if !models.contains(&m.model) {
            models.push(m.model.clone());
        }
        if !tasks.contains(&m.task) {
            tasks.push(m.task.clone());
        }
    }
    tasks.retain(|t| metrics.iter().any(|m| &m.task == t));
    models.sort_by_key(|m| model_rank(m));
    let md = report_grid(&metrics, &models, &tasks);
    fs::create_dir_all(&out)?;
    fs::write(&md_path, &md)?;
    fs::write(out.join("bench.csv"), report_csv(&metrics)?)?;
    print!("{md}");
    Ok(())
}
