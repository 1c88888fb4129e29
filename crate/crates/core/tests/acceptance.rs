use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cte::bench::{
    global_bound_check, run_suite, welch_one_sided, DataSource, DatasetSpec, Estimator, ModelSource, ResumeState,
    SuiteHooks, SuiteOutput, SuiteSpec,
};
use cte::compress::{compress, compresspp_indices, CompressorConfig, Method, DEFAULT_OVERSAMPLE_G};
use cte::data::synthetic::gaussian_mixture;
use cte::data::Dataset;
use cte::explain::{
    exact_shap, expected_gradients, integrated_gradients, kernel_shap, permutation_shap, ExplainConfig,
};
use cte::kernels::GaussianKernel;
use cte::metrics::{mae, mmd_biased_sq, topk_precision, tv_kl_top3, wasserstein, MmdReference};
use cte::models::{Activation, Head, Layer, LinearModel, Loss, MlpModel, ModelFunction, TrainConfig};
use cte::parallel::{with_workers, Exec};

const SEED: u64 = 7;
const REPEATS: usize = 33;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn out_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_matrix(r: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let nd = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_fn((n, d), |_| nd.sample(r))
}

fn random_mlp(d: usize, seed: u64) -> MlpModel {
    let mut r = rng(seed ^ 0x5eed);
    let act = if seed.is_multiple_of(2) { Activation::Relu } else { Activation::Tanh };
    let (head, loss, out) =
        if seed.is_multiple_of(3) { (Head::Softmax, Loss::CrossEntropy, 2) } else { (Head::Identity, Loss::Mse, 1) };
    let base = MlpModel::init(&[d, 8, out], act, head, loss, seed).unwrap();
    let layers = base
        .layers()
        .iter()
        .map(|l| Layer { weights: l.weights.clone(), bias: l.bias.mapv(|_| r.random_range(-0.5..0.5)) })
        .collect();
    MlpModel::from_layers(layers, act, head, loss).unwrap()
}

fn eval_row<M: ModelFunction>(f: &M, x: ArrayView1<'_, f64>) -> f64 {
    f.eval(x.insert_axis(Axis(0))).unwrap()[0]
}

/// Shapley values straight from the subset-sum definition with the
/// interventional value function.
fn shapley_oracle<M: ModelFunction>(f: &M, x: ArrayView1<'_, f64>, bg: ArrayView2<'_, f64>) -> Vec<f64> {
    let d = x.len();
    let value = |mask: u32| -> f64 {
        let mut z = bg.to_owned();
        for j in 0..d {
            if mask & (1 << j) != 0 {
                z.column_mut(j).fill(x[j]);
            }
        }
        f.eval(z.view()).unwrap().mean().unwrap()
    };
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let v: Vec<f64> = (0..1u32 << d).map(value).collect();
    (0..d)
        .map(|i| {
            (0..1u32 << d)
                .filter(|s| s & (1 << i) == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    fact(k) * fact(d - k - 1) / fact(d) * (v[(s | (1 << i)) as usize] - v[s as usize])
                })
                .sum()
        })
        .collect()
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

fn ac1() -> Outcome {
    let t = Instant::now();
    let (mut perm_dev, mut kern_dev, mut oracle_dev) = (0.0f64, 0.0f64, 0.0f64);
    let cfg = ExplainConfig::default().exhaustive();
    for m in 0..30u64 {
        let f = random_mlp(4, 100 + m);
        let mut r = rng(m);
        let bg = normal_matrix(&mut r, 16, 4);
        let x = normal_matrix(&mut r, 1, 4);
        let x = x.row(0);
        let exact = exact_shap(&f, x, bg.view()).unwrap().to_vec();
        let perm = permutation_shap(&f, x, bg.view(), &cfg).unwrap().to_vec();
        let kern = kernel_shap(&f, x, bg.view(), &cfg).unwrap().values.to_vec();
        let oracle = shapley_oracle(&f, x, bg.view());
        perm_dev = perm_dev.max(max_dev(&perm, &exact));
        kern_dev = kern_dev.max(max_dev(&kern, &exact));
        oracle_dev = oracle_dev.max(max_dev(&exact, &oracle));
    }
    let secs = t.elapsed().as_secs_f64();
    let worst = perm_dev.max(kern_dev).max(oracle_dev);
    outcome(
        worst <= 1e-8 && secs < 60.0,
        format!(
            "max |perm-exact|={perm_dev:.2e}, |kernel-exact|={kern_dev:.2e}, |exact-oracle|={oracle_dev:.2e} over 30 models in {secs:.2}s"
        ),
    )
}

/// MLP with input features `i` and `j` tied and feature `k` unused.
fn axiom_case(d: usize, seed: u64) -> (MlpModel, Array1<f64>, Array2<f64>, usize, usize, usize) {
    let f = random_mlp(d, seed);
    let (i, j, k) = (0, 1, d - 1);
    let mut layers = f.layers().to_vec();
    let w = &mut layers[0].weights;
    let wi = w.row(i).to_owned();
    w.row_mut(j).assign(&wi);
    w.row_mut(k).fill(0.0);
    let f = MlpModel::from_layers(layers, f.activation(), f.head(), f.loss()).unwrap();
    let mut r = rng(seed);
    let mut bg = normal_matrix(&mut r, 12, d);
    let ci = bg.column(i).to_owned();
    bg.column_mut(j).assign(&ci);
    let mut x = normal_matrix(&mut r, 1, d).row(0).to_owned();
    x[j] = x[i];
    (f, x, bg, i, j, k)
}

fn ac2() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        Config { cases: 100, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let worst = std::cell::Cell::new([0.0f64; 3]);
    let cases = std::cell::Cell::new(0usize);
    let result = runner.run(&(3usize..=6, any::<u64>()), |(d, seed)| {
        let (f, x, bg, i, j, k) = axiom_case(d, seed);
        let phi = exact_shap(&f, x.view(), bg.view()).unwrap();
        let gap = eval_row(&f, x.view()) - f.eval(bg.view()).unwrap().mean().unwrap();
        let eff = (phi.sum() - gap).abs();
        let sym = (phi[i] - phi[j]).abs();
        let dummy = phi[k].abs();
        let mut w = worst.get();
        w = [w[0].max(eff), w[1].max(sym), w[2].max(dummy)];
        worst.set(w);
        cases.set(cases.get() + 1);
        prop_assert!(eff <= 1e-8, "efficiency gap {eff}");
        prop_assert!(sym <= 1e-8, "symmetry gap {sym}");
        prop_assert!(dummy <= 1e-8, "dummy value {dummy}");
        Ok(())
    });
    let w = worst.get();
    let detail =
        format!("{} cases, max efficiency {:.1e}, symmetry {:.1e}, dummy {:.1e}", cases.get(), w[0], w[1], w[2]);
    match result {
        Ok(()) => outcome(true, detail),
        Err(e) => outcome(false, format!("{detail}; {e}")),
    }
}

fn ac3() -> Outcome {
    let mut r = rng(3);
    let cfg = ExplainConfig::default();

    let mut lin_dev = 0.0f64;
    for _ in 0..20 {
        let d = 6;
        let lin =
            LinearModel { weights: normal_matrix(&mut r, 1, d).row(0).to_owned(), bias: r.random_range(-1.0..1.0) };
        let bg = normal_matrix(&mut r, 10, d);
        let x = normal_matrix(&mut r, 1, d).row(0).to_owned();
        let eg = expected_gradients(&lin, x.view(), bg.view(), &cfg).unwrap();
        let want = &lin.weights * &(&x - &bg.mean_axis(Axis(0)).unwrap());
        lin_dev = lin_dev.max(max_dev(eg.as_slice().unwrap(), want.as_slice().unwrap()));
    }

    let d = 4;
    let f = MlpModel::init(&[d, 8, 8, 1], Activation::Tanh, Head::Identity, Loss::Mse, 33).unwrap();
    let x = normal_matrix(&mut r, 1, d).row(0).to_owned();
    let baselines = normal_matrix(&mut r, 5, d);
    let ig = integrated_gradients(&f, x.view(), baselines.view(), 50).unwrap();
    let (mut complete_ok, mut oracle_ok) = (true, true);
    let (mut worst_complete, mut worst_oracle) = (0.0f64, 0.0f64);
    for (b, attr) in baselines.rows().into_iter().zip(ig.rows()) {
        let delta_f = eval_row(&f, x.view()) - eval_row(&f, b);
        let tol = 1e-3 * delta_f.abs() + 1e-6;
        let complete = (attr.sum() - delta_f).abs();
        worst_complete = worst_complete.max(complete);
        complete_ok &= complete < tol;
        let riemann = riemann_ig(&f, x.view(), b, 10_000);
        let dev = max_dev(attr.as_slice().unwrap(), &riemann);
        worst_oracle = worst_oracle.max(dev);
        oracle_ok &= dev < tol;
    }
    outcome(
        lin_dev <= 1e-12 && complete_ok && oracle_ok,
        format!(
            "linear max dev {lin_dev:.1e}; tanh MLP completeness gap {worst_complete:.1e}, vs 10000-step Riemann {worst_oracle:.1e}"
        ),
    )
}

/// Midpoint-rule path integral with central-difference gradients.
fn riemann_ig<M: ModelFunction>(f: &M, x: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, steps: usize) -> Vec<f64> {
    let d = x.len();
    let delta = &x - &b;
    let path = Array2::from_shape_fn((steps, d), |(s, j)| b[j] + (s as f64 + 0.5) / steps as f64 * delta[j]);
    let h = 1e-5;
    (0..d)
        .map(|j| {
            let mut up = path.clone();
            let mut dn = path.clone();
            up.column_mut(j).mapv_inplace(|v| v + h);
            dn.column_mut(j).mapv_inplace(|v| v - h);
            let g = (f.eval(up.view()).unwrap() - f.eval(dn.view()).unwrap()) / (2.0 * h);
            delta[j] * g.mean().unwrap()
        })
        .collect()
}

fn kde_l2_numeric(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let lo = x.iter().chain(y).copied().fold(f64::INFINITY, f64::min) - 12.0 * sigma;
    let hi = x.iter().chain(y).copied().fold(f64::NEG_INFINITY, f64::max) + 12.0 * sigma;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let kde = |s: &[f64], t: f64| {
        s.iter().map(|v| norm * (-(t - v).powi(2) / (2.0 * sigma * sigma)).exp()).sum::<f64>() / s.len() as f64
    };
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let sq = |t: f64| (kde(x, t) - kde(y, t)).powi(2);
    let mut acc = sq(lo) + sq(hi);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * sq(lo + i as f64 * h);
    }
    acc * h / 3.0
}

fn ac4() -> Outcome {
    let mut r = rng(4);
    let kernel = GaussianKernel::for_dim(1);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let m = r.random_range(1..=30);
        let l = r.random_range(1..=30);
        let shift = r.random_range(-1.5..1.5);
        let x = normal_matrix(&mut r, m, 1);
        let y = normal_matrix(&mut r, l, 1).mapv(|v| v * 1.3 + shift);
        let closed = mmd_biased_sq(x.view(), y.view(), &kernel).unwrap();
        let numeric = kde_l2_numeric(x.as_slice().unwrap(), y.as_slice().unwrap(), kernel.sigma());
        worst = worst.max((closed - numeric).abs());
    }
    outcome(worst <= 1e-6, format!("max |closed form - Simpson| = {worst:.2e} over 10 pairs"))
}

fn ac5() -> Outcome {
    let suite = match suite_a() {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("suite failed: {e}")),
    };
    let mut parts = Vec::new();
    let mut all_ok = !suite.bounds.is_empty();
    for method in [Method::Iid, Method::Kt] {
        let recs: Vec<_> = suite.bounds.iter().filter(|b| b.method == method).collect();
        let sat = recs.iter().filter(|b| b.record.satisfied).count();
        let worst = recs.iter().map(|b| b.record.lhs - b.record.rhs).fold(f64::NEG_INFINITY, f64::max);
        all_ok &= sat == recs.len();
        parts.push(format!("local {method}: {sat}/{} (max lhs-rhs {worst:.2e})", recs.len()));
    }

    // global: g is the exact SHAP value of a 1-D toy model over the full data
    let mut r = rng(5);
    let full = normal_matrix(&mut r, 1000, 1).mapv(|v| if v > 0.0 { v + 1.0 } else { v });
    let toy = |t: f64| 1.0 / (1.0 + (-(3.0 * t - 1.0)).exp());
    let base = full.column(0).iter().map(|&t| toy(t)).sum::<f64>() / full.nrows() as f64;
    let g = |x: ArrayView1<'_, f64>| Array1::from_elem(1, toy(x[0]) - base);
    let data = Dataset::from_features(full.clone()).unwrap();
    let mut sat = 0;
    let mut worst = f64::NEG_INFINITY;
    for draw in 0..100u64 {
        let method = if draw % 2 == 0 { Method::Kt } else { Method::Iid };
        let sel = compress(&data, &CompressorConfig::new(method, draw).with_size(32)).unwrap();
        let core = full.select(Axis(0), &sel.indices);
        let rec = global_bound_check(&g, full.view(), core.view()).unwrap();
        worst = worst.max(rec.lhs - rec.rhs);
        sat += rec.satisfied as usize;
    }
    all_ok &= sat == 100;
    parts.push(format!("global 1-D toy: {sat}/100 (max lhs-rhs {worst:.2e})"));
    outcome(all_ok, parts.join("; "))
}

fn ac6() -> Outcome {
    let x = gaussian_mixture(4096, 8, 4, 6);
    let kernel = GaussianKernel::for_dim(8);
    let reference = MmdReference::new(x.view(), &kernel).unwrap();
    let data = Dataset::from_features(x.clone()).unwrap();
    let (mut kt, mut iid) = (Vec::new(), Vec::new());
    for s in 0..REPEATS as u64 {
        let k_idx = compresspp_indices(x.view(), &kernel, DEFAULT_OVERSAMPLE_G, Some(64), s).unwrap();
        let i_sel = compress(&data, &CompressorConfig::new(Method::Iid, s).with_size(64)).unwrap();
        kt.push(reference.unbiased_to(x.select(Axis(0), &k_idx).view()).unwrap());
        iid.push(reference.unbiased_to(x.select(Axis(0), &i_sel.indices).view()).unwrap());
    }
    let wins = kt.iter().zip(&iid).filter(|(a, b)| a < b).count();
    let w = welch_one_sided(&kt, &iid).unwrap();
    let (mk, mi) = (mean(&kt), mean(&iid));
    outcome(
        mk < mi && w.p_value < 0.01 && wins >= 28,
        format!("mean MMD kt {mk:.3e} vs iid {mi:.3e}, Welch p={:.1e}, kt wins {wins}/33", w.p_value),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn gaussian_spec() -> DatasetSpec {
    DatasetSpec {
        id: "gaussian".into(),
        source: DataSource::GaussianClassification { n: 5000, d: 20, clusters_per_class: 2 },
        model: ModelSource::Train(TrainConfig { hidden: vec![16, 8], epochs: 30, ..Default::default() }),
        coreset_size: Some(35),
        preprocess: Default::default(),
    }
}

fn regression_spec() -> DatasetSpec {
    DatasetSpec {
        id: "regression".into(),
        source: DataSource::NonlinearRegression { n: 4000, d: 8 },
        model: ModelSource::Train(TrainConfig { hidden: vec![16, 8], epochs: 30, ..Default::default() }),
        coreset_size: Some(32),
        preprocess: Default::default(),
    }
}

fn spec_a() -> SuiteSpec {
    SuiteSpec {
        name: "accuracy".into(),
        seed: SEED,
        datasets: vec![gaussian_spec(), regression_spec()],
        estimators: vec![Estimator::PermutationShap, Estimator::PermutationSage],
        methods: vec![Method::Iid, Method::Kt],
        repeats: REPEATS,
        ground_truth_repeats: 3,
        coreset_size: None,
        oversample_g: DEFAULT_OVERSAMPLE_G,
        topk: None,
        truncate_factor: 20,
        explain: ExplainConfig::default(),
        bound_draws: 100,
    }
}

fn spec_b() -> SuiteSpec {
    SuiteSpec {
        name: "effects".into(),
        datasets: vec![regression_spec()],
        estimators: vec![Estimator::FeatureEffects],
        bound_draws: 0,
        ..spec_a()
    }
}

fn run_and_write(spec: &SuiteSpec, exec: Exec, dir: &Path) -> Result<SuiteOutput, String> {
    let t = Instant::now();
    let progress = |m: &str| eprintln!("  [{:>7.1}s] {}: {m}", t.elapsed().as_secs_f64(), spec.name);
    let hooks = SuiteHooks { progress: &progress, ..Default::default() };
    let out = run_suite(spec, exec, &ResumeState::default(), &hooks).map_err(|e| e.to_string())?;
    out.write_to(dir).map_err(|e| e.to_string())?;
    Ok(out)
}

static SUITE_A: OnceLock<Result<SuiteOutput, String>> = OnceLock::new();
static SUITE_B: OnceLock<Result<SuiteOutput, String>> = OnceLock::new();

fn suite_a() -> Result<&'static SuiteOutput, String> {
    SUITE_A
        .get_or_init(|| run_and_write(&spec_a(), Exec::Sequential, &out_dir().join("run1/accuracy")))
        .as_ref()
        .map_err(Clone::clone)
}

fn suite_b() -> Result<&'static SuiteOutput, String> {
    SUITE_B
        .get_or_init(|| run_and_write(&spec_b(), Exec::Sequential, &out_dir().join("run1/effects")))
        .as_ref()
        .map_err(Clone::clone)
}

fn maes(out: &SuiteOutput, dataset: &str, est: Estimator, method: Method) -> Vec<f64> {
    out.records
        .iter()
        .filter(|r| r.dataset == dataset && r.estimator == est && r.method == method)
        .filter_map(|r| r.mae)
        .collect()
}

fn cell_seconds(out: &SuiteOutput, dataset: &str) -> f64 {
    let gt: f64 = out.ground_truths.iter().filter(|g| g.dataset == dataset).map(|g| g.elapsed_seconds).sum();
    let trials: f64 =
        out.timings.iter().filter(|t| t.dataset == dataset).map(|t| t.compress_seconds + t.explain_seconds).sum();
    gt + trials
}

fn ac7() -> Outcome {
    let out = match suite_a() {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("suite failed: {e}")),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for est in [Estimator::PermutationShap, Estimator::PermutationSage] {
        let kt = maes(out, "gaussian", est, Method::Kt);
        let iid = maes(out, "gaussian", est, Method::Iid);
        if kt.len() != REPEATS || iid.len() != REPEATS {
            return outcome(false, format!("{est}: {} kt and {} iid successful repeats", kt.len(), iid.len()));
        }
        let (mk, mi) = (mean(&kt), mean(&iid));
        let p = welch_one_sided(&kt, &iid).unwrap().p_value;
        pass &= mk <= 0.85 * mi && p < 0.05;
        parts.push(format!("{est}: kt {mk:.4} vs iid {mi:.4} ({:+.1}%), p={p:.1e}", 100.0 * (mk / mi - 1.0)));
    }
    let secs = cell_seconds(out, "gaussian");
    parts.push(format!("gaussian cells {secs:.0}s"));
    outcome(pass && secs < 1800.0, parts.join("; "))
}

fn ac8() -> Outcome {
    let out = match suite_a() {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("suite failed: {e}")),
    };
    let mut wins = 0;
    let mut parts = Vec::new();
    for ds in ["gaussian", "regression"] {
        for est in [Estimator::PermutationShap, Estimator::PermutationSage] {
            let (sk, si) = (sd(&maes(out, ds, est, Method::Kt)), sd(&maes(out, ds, est, Method::Iid)));
            wins += (sk <= si) as usize;
            parts.push(format!("{ds}/{est} sd kt {sk:.4} iid {si:.4}"));
        }
    }
    outcome(wins >= 3, format!("{wins}/4 cells: {}", parts.join(", ")))
}

fn ac9() -> Outcome {
    let out = match suite_b() {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("suite failed: {e}")),
    };
    let kt = maes(out, "regression", Estimator::FeatureEffects, Method::Kt);
    let iid = maes(out, "regression", Estimator::FeatureEffects, Method::Iid);
    let (mk, mi) = (mean(&kt), mean(&iid));
    outcome(
        kt.len() == REPEATS && iid.len() == REPEATS && mk < mi,
        format!("mean MAE kt {mk:.5} vs iid {mi:.5} over {} / {} repeats", kt.len(), iid.len()),
    )
}

fn ac10() -> Outcome {
    let time = |n: usize| -> f64 {
        let x = gaussian_mixture(n, 10, 4, 10);
        let kernel = GaussianKernel::for_dim(10);
        (0..3)
            .map(|s| {
                let t = Instant::now();
                with_workers(1, || compresspp_indices(x.view(), &kernel, DEFAULT_OVERSAMPLE_G, None, s)).unwrap();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let small = time(4096);
    let large = time(16384);
    let ratio = large / small;
    outcome(large <= 5.0 && ratio <= 8.0, format!("n=16384: {large:.3}s, n=4096: {small:.3}s, ratio {ratio:.2}"))
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    let ra = std::fs::read(a).map_err(|e| format!("{}: {e}", a.display()))?;
    let rb = std::fs::read(b).map_err(|e| format!("{}: {e}", b.display()))?;
    Ok(ra == rb)
}

fn ac11() -> Outcome {
    if let Err(e) = suite_a().and(suite_b()) {
        return outcome(false, format!("first run failed: {e}"));
    }
    let run2 = out_dir().join("run2");
    for (spec, name) in [(spec_a(), "accuracy"), (spec_b(), "effects")] {
        if let Err(e) = run_and_write(&spec, Exec::Parallel, &run2.join(name)) {
            return outcome(false, format!("rerun failed: {e}"));
        }
    }
    let mut compared = Vec::new();
    let mut identical = true;
    for (name, file) in [("accuracy", "records.jsonl"), ("accuracy", "bounds.jsonl"), ("effects", "records.jsonl")] {
        let a = out_dir().join("run1").join(name).join(file);
        let b = run2.join(name).join(file);
        match same_bytes(&a, &b) {
            Ok(same) => {
                identical &= same;
                compared.push(format!("{name}/{file} {}", if same { "identical" } else { "DIFFERS" }));
            }
            Err(e) => return outcome(false, e),
        }
    }
    outcome(identical, compared.join(", "))
}

fn ac12() -> Outcome {
    let mut runner = TestRunner::new_with_rng(
        Config { cases: 64, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let mut failures = Vec::new();

    let topk = runner.run(
        &(proptest::collection::vec(-10.0f64..10.0, 2..12), 0.01f64..100.0, 0.01f64..100.0, any::<u64>()),
        |(truth, a, b, s)| {
            let truth = Array1::from(truth);
            let mut r = rng(s);
            let est = truth.mapv(|v| v + r.random_range(-3.0..3.0));
            let k = 1 + (s as usize) % truth.len();
            let base = topk_precision(est.view(), truth.view(), k).unwrap();
            let scaled = topk_precision((&est * a).view(), (&truth * b).view(), k).unwrap();
            prop_assert_eq!(base, scaled);
            Ok(())
        },
    );
    if let Err(e) = topk {
        failures.push(format!("topk: {e}"));
    }

    let triple = (2usize..20).prop_flat_map(|n| {
        let v = || proptest::collection::vec(-100.0f64..100.0, n);
        (v(), v(), v())
    });
    let axioms = runner.run(&triple, |(a, b, c)| {
        let (a, b, c) = (Array1::from(a), Array1::from(b), Array1::from(c));
        let ab = mae(a.view(), b.view()).unwrap();
        let ba = mae(b.view(), a.view()).unwrap();
        let ac = mae(a.view(), c.view()).unwrap();
        let cb = mae(c.view(), b.view()).unwrap();
        prop_assert_eq!(mae(a.view(), a.view()).unwrap(), 0.0);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!(a == b || ab > 0.0);
        Ok(())
    });
    if let Err(e) = axioms {
        failures.push(format!("mae: {e}"));
    }

    let mut w_runner = TestRunner::new_with_rng(
        Config { cases: 24, failure_persistence: None, ..Config::default() },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let worst_rel = std::cell::Cell::new(0.0f64);
    let wass = w_runner.run(&(0.5f64..3.0, 0.5f64..2.0, 16usize..64, any::<u64>()), |(shift, scale, n, s)| {
        let mut r = rng(s);
        let x = normal_matrix(&mut r, n, 1);
        let y = normal_matrix(&mut r, n, 1).mapv(|v| v * scale + shift);
        let mut xs = x.as_slice().unwrap().to_vec();
        let mut ys = y.as_slice().unwrap().to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let exact = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        let w = wasserstein(x.view(), y.view()).unwrap();
        let rel = (w.value - exact).abs() / exact;
        worst_rel.set(worst_rel.get().max(rel));
        prop_assert!(rel <= 0.05, "sinkhorn {} vs sorted {}", w.value, exact);
        Ok(())
    });
    if let Err(e) = wass {
        failures.push(format!("wasserstein: {e}"));
    }

    let ident = runner.run(&((5usize..80), (1usize..5), any::<u64>()), |(n, d, s)| {
        let x = normal_matrix(&mut rng(s), n, d);
        let (tv, kl) = tv_kl_top3(x.view(), x.view(), 32, 1e-10).unwrap();
        prop_assert_eq!(tv, 0.0);
        prop_assert!(kl.abs() <= 1e-12);
        Ok(())
    });
    if let Err(e) = ident {
        failures.push(format!("tv/kl: {e}"));
    }

    let detail = format!("4 properties, worst 1-D Wasserstein relative error {:.2}%", 100.0 * worst_rel.get());
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {}", failures.join("; ")))
    }
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("oracle equivalence", ac1),
        ("Shapley axioms", ac2),
        ("expected gradients", ac3),
        ("biased MMD quadrature", ac4),
        ("marginalization bounds", ac5),
        ("compression quality", ac6),
        ("accuracy gain", ac7),
        ("stability gain", ac8),
        ("feature effects gain", ac9),
        ("compression runtime", ac10),
        ("determinism", ac11),
        ("metric properties", ac12),
    ];
    std::fs::create_dir_all(out_dir()).expect("output directory");
    let start = Instant::now();
    let mut failed = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !o.pass as usize;
        println!(
            "AC{:<2} {} {title}: {} [{:.1}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/12 passed in {:.0}s", 12 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
