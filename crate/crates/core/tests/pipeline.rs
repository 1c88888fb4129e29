use approx::assert_abs_diff_eq;
use ndarray::Axis;

use cte::bench::{
    read_jsonl, run_suite, DataSource, DatasetSpec, Estimator, ModelSource, ResumeState, SuiteHooks, SuiteOutput,
    SuiteSpec, TrialRecord,
};
use cte::compress::{compress, CompressorConfig, Method};
use cte::data::synthetic::gaussian_classification;
use cte::data::{read_csv, split_75_25, write_csv};
use cte::explain::{explain_shap, ExplainConfig, ShapEstimator};
use cte::models::{train, ModelFunction, TrainConfig};
use cte::parallel::Exec;

fn small_spec() -> SuiteSpec {
    SuiteSpec {
        name: "small".into(),
        seed: 3,
        datasets: vec![DatasetSpec {
            id: "toy".into(),
            source: DataSource::GaussianClassification { n: 600, d: 5, clusters_per_class: 1 },
            model: ModelSource::Train(TrainConfig { hidden: vec![8], epochs: 5, ..Default::default() }),
            coreset_size: Some(16),
            preprocess: Default::default(),
        }],
        estimators: vec![Estimator::PermutationSage, Estimator::ExpectedGradients],
        methods: vec![Method::Iid, Method::Kt],
        repeats: 3,
        ground_truth_repeats: 1,
        coreset_size: None,
        oversample_g: 2,
        topk: None,
        truncate_factor: 4,
        explain: ExplainConfig { npermutations: 4, ..Default::default() },
        bound_draws: 10,
    }
}

fn run(exec: Exec, resume: &ResumeState) -> SuiteOutput {
    run_suite(&small_spec(), exec, resume, &SuiteHooks::default()).unwrap()
}

#[test]
fn suite_records_do_not_depend_on_exec() {
    let seq = run(Exec::Sequential, &ResumeState::default());
    let par = run(Exec::Parallel, &ResumeState::default());
    assert_eq!(seq.records, par.records);
    assert_eq!(seq.bounds, par.bounds);
    assert_eq!(seq.records.len(), 2 * 2 * 3);
    assert!(seq.records.iter().all(TrialRecord::ok));
}

#[test]
fn resumed_suite_matches_fresh_run() {
    let fresh = run(Exec::Sequential, &ResumeState::default());
    let partial: Vec<TrialRecord> = fresh.records.iter().filter(|r| r.method == Method::Iid).cloned().collect();
    let resume = ResumeState { records: partial, timings: fresh.timings.clone() };
    let resumed = run(Exec::Sequential, &resume);
    let key = |v: &SuiteOutput| {
        let mut r = v.records.clone();
        r.sort_by_key(TrialRecord::sort_key);
        r
    };
    assert_eq!(key(&fresh), key(&resumed));
}

#[test]
fn suite_artifacts_round_trip() {
    let out = run(Exec::Sequential, &ResumeState::default());
    let dir = tempfile::tempdir().unwrap();
    let written = out.write_to(dir.path()).unwrap();
    for name in ["records.jsonl", "timings.jsonl", "bounds.jsonl", "summary.json", "plot.csv"] {
        assert!(written.iter().any(|p| p.ends_with(name)), "missing {name}");
    }
    let back: Vec<TrialRecord> = read_jsonl(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(back, out.records);
    let csv = std::fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + out.aggregates.len());
}

#[test]
fn compressed_background_plugs_into_shap() {
    let data = gaussian_classification(800, 6, 1, 11).unwrap();
    let mut buf = Vec::new();
    write_csv(&data, &mut buf).unwrap();
    let data = read_csv(buf.as_slice(), Some("y")).unwrap();
    let split = split_75_25(&data, 1).unwrap();
    let (train_set, valid) = (data.subset(&split.train_indices).unwrap(), data.subset(&split.valid_indices).unwrap());
    let (model, _) = train(&train_set, &TrainConfig { hidden: vec![8], epochs: 3, ..Default::default() }).unwrap();

    let sel = compress(&valid, &CompressorConfig::new(Method::Kt, 5)).unwrap();
    let background = valid.subset(&sel.indices).unwrap();
    let x = valid.features().slice(ndarray::s![..4, ..]).to_owned();
    let cfg = ExplainConfig { npermutations: 6, ..Default::default() };
    let attr = explain_shap(&model, x.view(), background.features(), ShapEstimator::Permutation, &cfg).unwrap();

    assert_eq!(attr.values.dim(), (4, 6));
    let base = model.eval(background.features()).unwrap().mean().unwrap();
    let fx = model.eval(x.view()).unwrap();
    for (i, row) in attr.values.axis_iter(Axis(0)).enumerate() {
        assert_abs_diff_eq!(attr.base_value[i], base, epsilon = 1e-12);
        assert_abs_diff_eq!(row.sum(), fx[i] - base, epsilon = 1e-10);
    }
}
