use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use cte::bench::{
    aggregate, read_jsonl, run_suite, summarize, write_jsonl, DataSource, Estimator, ModelSource, ResumeState,
    SuiteHooks, SuiteSpec, TimingRecord, TrialRecord,
};
use cte::compress::{compress as run_compress, CompressorConfig, CoresetSelection};
use cte::data::{fit_apply_preprocess, load_csv, split_75_25, write_csv, CategoricalEncoding, Dataset, PreprocessSpec};
use cte::explain::{
    explain_expected_gradients, explain_shap, feature_effects, kernel_sage, permutation_sage, EffectGrid,
    ExplainConfig, ShapEstimator,
};
use cte::kernels::GaussianKernel;
use cte::metrics::discrepancy_report;
use cte::models::{train as train_model, MlpModel, TrainConfig};
use cte::parallel::{with_workers, Exec};

use crate::manifest::{manifest_path_for, sha256_hex, RunManifest};
use crate::{BenchmarkArgs, CompressArgs, DataArgs, DistanceArgs, ExplainArgs, PreprocessArgs, ReportArgs, TrainArgs};

fn load(args: &DataArgs) -> Result<Dataset> {
    load_csv(&args.data, args.label.as_deref()).with_context(|| format!("loading {}", args.data.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(data, std::io::BufWriter::new(file))?;
    Ok(())
}

/// Sequential for one worker, otherwise a dedicated pool.
fn exec_for(workers: usize) -> Exec {
    if workers > 1 {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let raw = load(&a.data)?;
    let split = split_75_25(&raw, a.seed)?;
    let train = raw.subset(&split.train_indices)?;
    let valid = raw.subset(&split.valid_indices)?;
    let spec = PreprocessSpec {
        drop_degenerate: !a.keep_degenerate,
        standardize: !a.no_standardize,
        categorical_encoding: if a.no_target_encoding {
            CategoricalEncoding::None
        } else {
            CategoricalEncoding::TargetEncode
        },
        ..PreprocessSpec::default()
    };
    let (train, mut rest, fitted) = fit_apply_preprocess(&train, &[valid], &spec)?;
    let valid = rest.remove(0);
    std::fs::create_dir_all(&a.out_dir)?;
    let paths = ["train.csv", "valid.csv", "preprocess.json", "split.json"].map(|n| a.out_dir.join(n));
    write_dataset(&paths[0], &train)?;
    write_dataset(&paths[1], &valid)?;
    write_json(&paths[2], &fitted)?;
    write_json(&paths[3], &split)?;

    let mut m = RunManifest::new("preprocess", json!({ "label": a.data.label, "preprocess": spec }));
    m.input(&a.data.data)?;
    m.seed("split", a.seed);
    for p in &paths {
        m.artifact(p);
    }
    m.write(&a.out_dir.join("manifest.json"))?;
    println!("train={} valid={} features={}", train.n_rows(), valid.n_rows(), train.n_features());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = load(&a.data)?;
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(h) = a.hidden {
        cfg.hidden = h;
    }
    if let Some(v) = a.activation {
        cfg.activation = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let (model, report) = train_model(&data, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.save_weights(&a.out)?;

    let mut m = RunManifest::new("train", json!({ "label": a.data.label, "train": cfg, "report": report }));
    m.input(&a.data.data)?;
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    m.seed("init", cfg.seed);
    m.artifact(&a.out);
    m.write(&manifest_path_for(&a.out))?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn compress(a: CompressArgs) -> Result<()> {
    let data = load(&a.data)?;
    let mut cfg = CompressorConfig::new(a.method, a.seed);
    cfg.oversample_g = a.g;
    cfg.target_size = a.size;
    if let Some(s) = a.sigma {
        cfg.kernel = Some(GaussianKernel::new(s)?);
    }
    let sel = run_compress(&data, &cfg)?;
    write_json(&a.out, &sel)?;

    let mut m = RunManifest::new("compress", json!({ "label": a.data.label, "compressor": cfg }));
    m.input(&a.data.data)?;
    m.seed("compress", a.seed);
    m.artifact(&a.out);
    m.write(&manifest_path_for(&a.out))?;
    println!("size={} elapsed={:.3}s", sel.len(), sel.elapsed_seconds);
    Ok(())
}

fn read_coreset(path: &Path, n: usize) -> Result<CoresetSelection> {
    let sel: CoresetSelection = read_json(path)?;
    sel.validate_for(n).with_context(|| format!("coreset {}", path.display()))?;
    Ok(sel)
}

pub fn distance(a: DistanceArgs) -> Result<()> {
    let data = load(&a.data)?;
    let sel = read_coreset(&a.coreset, data.n_rows())?;
    let core = data.subset(&sel.indices)?;
    let kernel = match a.sigma {
        Some(s) => GaussianKernel::new(s)?,
        None => GaussianKernel::for_dim(data.n_features()),
    };
    let report = discrepancy_report(data.features(), core.features(), &kernel, a.bins)?;
    write_json(&a.out, &report)?;

    let mut m = RunManifest::new("distance", json!({ "label": a.data.label, "bins": a.bins, "sigma": kernel.sigma() }));
    m.input(&a.data.data)?;
    m.input(&a.coreset)?;
    m.artifact(&a.out);
    m.write(&manifest_path_for(&a.out))?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn explain(a: ExplainArgs) -> Result<()> {
    let mut model = MlpModel::load_weights(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    if let Some(c) = a.class {
        model = model.with_explained_output(c)?;
    }
    let data = load(&a.data)?;
    model.expect_inputs(data.n_features())?;
    let background = if a.background.extension().is_some_and(|e| e == "json") {
        let sel = read_coreset(&a.background, data.n_rows())?;
        data.subset(&sel.indices)?
    } else {
        load_csv(&a.background, a.data.label.as_deref())?
    };
    let explained = match a.rows {
        Some(r) => data.truncate(r.min(data.n_rows()))?,
        None => data.clone(),
    };
    let mut cfg: ExplainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ExplainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.npermutations {
        cfg.npermutations = v;
    }
    if let Some(v) = a.nsamples {
        cfg.shap_nsamples = v;
    }
    if let Some(v) = a.n_steps {
        cfg.n_steps = v;
    }
    let workers = a.workers.unwrap_or(1);
    cfg.exec = exec_for(workers);
    let names = explained.feature_names().to_vec();
    let csv_path = a.out.with_extension("csv");
    let csv = || -> Result<std::io::BufWriter<std::fs::File>> {
        Ok(std::io::BufWriter::new(std::fs::File::create(&csv_path)?))
    };
    let est = a.estimator;
    let rows = with_workers(workers, || -> Result<usize> {
        Ok(match est {
            Estimator::KernelShap | Estimator::PermutationShap | Estimator::ExpectedGradients => {
                let attr = match est {
                    Estimator::KernelShap => {
                        explain_shap(&model, explained.features(), background.features(), ShapEstimator::Kernel, &cfg)?
                    }
                    Estimator::PermutationShap => explain_shap(
                        &model,
                        explained.features(),
                        background.features(),
                        ShapEstimator::Permutation,
                        &cfg,
                    )?,
                    _ => explain_expected_gradients(&model, explained.features(), background.features(), &cfg)?,
                };
                write_json(&a.out, &attr)?;
                attr.write_csv(&names, csv()?)?;
                attr.values.nrows()
            }
            Estimator::KernelSage
            | Estimator::PermutationSage
            | Estimator::KernelSageFg
            | Estimator::PermutationSageFg => {
                let fg = if matches!(est, Estimator::KernelSageFg | Estimator::PermutationSageFg) {
                    &background
                } else {
                    &explained
                };
                if fg.labels().is_none() {
                    bail!("{est} needs labeled foreground rows (pass --label)");
                }
                let imp = if matches!(est, Estimator::KernelSage | Estimator::KernelSageFg) {
                    kernel_sage(&model, fg, background.features(), &cfg)?
                } else {
                    permutation_sage(&model, fg, background.features(), &cfg)?
                };
                write_json(&a.out, &imp)?;
                imp.write_csv(&names, csv()?)?;
                1
            }
            Estimator::FeatureEffects => {
                let grid = EffectGrid::from_data(explained.features())?;
                let fx = feature_effects(&model, background.features(), Some(&grid), &cfg)?;
                write_json(&a.out, &fx)?;
                fx.write_csv(&names, csv()?)?;
                1
            }
        })
    })?;

    let mut m = RunManifest::new(
        "explain",
        json!({
            "estimator": est,
            "label": a.data.label,
            "rows": a.rows,
            "class": model.explained_output(),
            "explain": cfg,
            "workers": workers,
        }),
    );
    m.input(&a.model)?;
    m.input(&a.data.data)?;
    m.input(&a.background)?;
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    m.seed("explain", cfg.seed);
    m.artifact(&a.out);
    m.artifact(&csv_path);
    m.write(&manifest_path_for(&a.out))?;
    println!("estimator={est} rows={rows} out={}", a.out.display());
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

const RECORDS: &str = "records.jsonl";
const TIMINGS: &str = "timings.jsonl";
const GROUND_TRUTH: &str = "ground_truth.jsonl";

pub fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let mut spec: SuiteSpec = read_json(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(r) = a.repeats {
        spec.repeats = r;
    }
    let base = a.spec.parent().map(Path::to_path_buf).unwrap_or_default();
    for ds in &mut spec.datasets {
        if let DataSource::Csv { path, .. } = &mut ds.source {
            resolve(&base, path);
        }
        if let ModelSource::File { path } = &mut ds.model {
            resolve(&base, path);
        }
    }
    spec.validate()?;
    let spec_hash = sha256_hex(serde_json::to_string(&spec)?.as_bytes());
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.json");

    let mut resume = ResumeState::default();
    if !a.fresh && manifest_path.exists() {
        let prev: RunManifest = read_json(&manifest_path)?;
        if prev.config.get("spec_hash").and_then(|v| v.as_str()) == Some(spec_hash.as_str()) {
            if dir.join(RECORDS).exists() {
                resume.records = read_jsonl(dir.join(RECORDS))?;
            }
            if dir.join(TIMINGS).exists() {
                resume.timings = read_jsonl(dir.join(TIMINGS))?;
            }
            if !a.quiet {
                eprintln!("resuming: {} finished records", resume.records.iter().filter(|r| r.ok()).count());
            }
        } else if !a.quiet {
            eprintln!("spec changed since the previous run in {}; starting over", dir.display());
        }
    }

    let workers = a.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let mut m = RunManifest::new("benchmark", json!({ "spec": spec, "spec_hash": spec_hash, "workers": workers }));
    m.input(&a.spec)?;
    for ds in &spec.datasets {
        if let DataSource::Csv { path, .. } = &ds.source {
            m.input(path)?;
        }
        if let ModelSource::File { path } = &ds.model {
            m.input(path)?;
        }
    }
    m.seed("suite", spec.seed);
    // written up front so an interrupted run can be resumed
    m.write(&manifest_path)?;

    let start = Instant::now();
    let quiet = a.quiet;
    let progress = |msg: &str| {
        if !quiet {
            eprintln!("[{:7.1}s] {msg}", start.elapsed().as_secs_f64());
        }
    };
    let checkpoint = |records: &[TrialRecord], timings: &[TimingRecord]| -> cte::Result<()> {
        write_jsonl(dir.join(RECORDS), records)?;
        write_jsonl(dir.join(TIMINGS), timings)
    };
    let out = with_workers(workers, || {
        run_suite(&spec, exec_for(workers), &resume, &SuiteHooks { progress: &progress, checkpoint: &checkpoint })
    })?;
    let mut artifacts = out.write_to(dir)?;
    write_jsonl(dir.join(GROUND_TRUTH), &out.ground_truths)?;
    artifacts.push(dir.join(GROUND_TRUTH));
    for p in &artifacts {
        m.artifact(p);
    }
    m.write(&manifest_path)?;

    print!("{}", out.summary.to_text());
    if !out.bounds.is_empty() {
        let ok = out.bounds.iter().filter(|b| b.record.satisfied).count();
        println!("bound checks satisfied: {ok}/{}", out.bounds.len());
    }
    let failed = out.records.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        println!("failed trials: {failed}");
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let records_path = a.in_dir.join(RECORDS);
    if !records_path.exists() {
        bail!("no benchmark records in {}", a.in_dir.display());
    }
    let records: Vec<TrialRecord> = read_jsonl(&records_path)?;
    if records.is_empty() {
        return Err(anyhow!("{} is empty", records_path.display()));
    }
    let timings_path = a.in_dir.join(TIMINGS);
    let timings: Vec<TimingRecord> = if timings_path.exists() { read_jsonl(&timings_path)? } else { Vec::new() };
    let aggregates = aggregate(&records, &timings);
    let summary = summarize(&aggregates, &records)?;
    let text = summary.to_text();
    print!("{text}");

    let mut m = RunManifest::new("report", json!({ "in_dir": a.in_dir }));
    m.input(&records_path)?;
    if timings_path.exists() {
        m.input(&timings_path)?;
    }
    let manifest_path = match &a.out {
        Some(out) => {
            if out.extension().is_some_and(|e| e == "json") {
                write_json(out, &json!({ "aggregates": aggregates, "summary": summary }))?;
            } else {
                std::fs::write(out, &text)?;
            }
            m.artifact(out);
            manifest_path_for(out)
        }
        None => a.in_dir.join("report.manifest.json"),
    };
    m.write(&manifest_path)?;
    Ok(())
}
