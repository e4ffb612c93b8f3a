//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run alone with `cargo test -p xai-core --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xai_core::detector;
use xai_core::evaluator::{self, MetricId};
use xai_core::explainers::*;
use xai_core::graph::{ComputeGraph, LayerKind, LayerNode, Source};
use xai_core::io::{Dataset, RunConfig};
use xai_core::optimizer::{self, job_seed, Objective, Sample};
use xai_core::parallel::with_workers;
use xai_core::recommender::{self, Modality};
use xai_core::report;
use xai_core::synth;
use xai_core::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let nets = [
        ("mlp 6-10-3", synth::random_mlp(&[6, 10, 3], 0.1, 1).unwrap(), vec![6]),
        ("mlp 5-8-8-4", synth::random_mlp(&[5, 8, 8, 4], 0.1, 2).unwrap(), vec![5]),
        ("mlp 4-9-9-9-2", synth::random_mlp(&[4, 9, 9, 9, 2], 0.1, 3).unwrap(), vec![4]),
        ("residual cnn a", synth::random_residual_cnn(0.1, 4).unwrap(), vec![2, 6, 6]),
        ("residual cnn b", synth::random_residual_cnn(0.1, 5).unwrap(), vec![2, 6, 6]),
    ];
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for (_, g, shape) in &nets {
        for _ in 0..4 {
            let x = uniform(&mut rng, shape, -1.0, 1.0);
            let base = switching_pattern(g, &x);
            // Stencil points that flip a ReLU or a pooling winner are not smooth.
            let smooth: Vec<bool> = (0..x.len())
                .map(|i| {
                    [h, -h].iter().all(|&d| {
                        let mut p = x.clone();
                        p.data_mut()[i] += d;
                        switching_pattern(g, &p) == base
                    })
                })
                .collect();
            for class in 0..g.output_dim() {
                let grad = gradient(g, &x, class).unwrap();
                let fd = finite_difference(g, &x, class, h);
                for i in 0..x.len() {
                    if smooth[i] {
                        worst = worst.max(rel_err(grad.data()[i], fd[i]));
                        checked += 1;
                    } else {
                        skipped += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(10) && checked > 0,
        format!("max rel err {worst:.2e} over {checked} entries ({skipped} at switching boundaries), {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------- 2

fn ig_completeness(cnn: &ComputeGraph) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let baseline = Tensor::zeros(&[1, 16, 16]);
    let mut worst = 0.0f64;
    for _ in 0..32 {
        let x = uniform(&mut rng, &[1, 16, 16], -1.0, 1.0);
        let class = rng.random_range(0..2);
        let attr = integrated_gradients(cnn, &x, class, &baseline, 128).unwrap();
        let gap = logit(cnn, &x, class) - logit(cnn, &baseline, class);
        worst = worst.max((attr.sum() - gap).abs() / gap.abs());
    }
    outcome(worst < 0.01, format!("max relative completeness gap {worst:.2e} over 32 inputs"))
}

// ---------------------------------------------------------------- 3

fn lrp_conservation() -> Outcome {
    let nets = [
        (synth::random_mlp(&[6, 12, 8, 3], 0.0, 6).unwrap(), vec![6]),
        (synth::random_mlp(&[10, 16, 2], 0.0, 7).unwrap(), vec![10]),
        (synth::random_residual_cnn(0.0, 8).unwrap(), vec![2, 6, 6]),
        (synth::patch_cnn(9).unwrap(), vec![1, 16, 16]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut samples) = (0.0f64, 0);
    for (g, shape) in &nets {
        for _ in 0..16 {
            let x = uniform(&mut rng, shape, -1.0, 1.0);
            let class = rng.random_range(0..g.output_dim());
            let out = logit(g, &x, class);
            if out.abs() < 1e-6 {
                continue;
            }
            let r = lrp(g, &x, class, LrpRule::Epsilon, 1e-9, 0.25).unwrap();
            worst = worst.max((r.sum() - out).abs() / out.abs());
            samples += 1;
        }
    }
    outcome(worst < 1e-3, format!("max relative conservation error {worst:.2e} over {samples} samples"))
}

// ---------------------------------------------------------------- 4

fn kernel_shap_oracle() -> Outcome {
    let seg = grid_segments(&[8], 1).unwrap();
    let baseline = Tensor::zeros(&[8]);
    let default_budget = Method::KernelShap.schema().defaults()["n_samples"].as_usize().unwrap();
    let nets = [
        synth::trained_tabular_mlp(0).unwrap(),
        synth::random_mlp(&[8, 16, 16, 2], 0.2, 1).unwrap(),
        synth::random_mlp(&[8, 12, 2], 0.2, 2).unwrap(),
    ];
    let data = synth::tabular_task(16, 5);
    let (mut worst, mut worst_sampled) = (0.0f64, 0.0f64);
    for g in &nets {
        for (i, x) in data.samples.iter().enumerate() {
            let class = data.labels[i];
            let exact = brute_force_shapley(8, |keep| masked_logit(g, x, &baseline, class, keep));
            let range = exact.iter().copied().fold(f64::MIN, f64::max) - exact.iter().copied().fold(f64::MAX, f64::min);
            let phi = kernel_shap(g, x, class, &seg, default_budget, 0.0, &baseline, i as u64).unwrap();
            worst = worst.max(max_abs_diff(phi.data(), &exact) / range);
            let sampled = kernel_shap(g, x, class, &seg, 128, 0.0, &baseline, i as u64).unwrap();
            worst_sampled = worst_sampled.max(max_abs_diff(sampled.data(), &exact) / range);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_linear = 0.0f64;
    for budget in [16, 32, 64, 128, default_budget] {
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut weight = w.clone();
        weight.extend(w.iter().map(|v| -v));
        let kind = LayerKind::Linear { weight: Tensor::new(vec![2, 8], weight).unwrap(), bias: Tensor::from_vec(vec![0.3, -0.3]) };
        let g = ComputeGraph::new(vec![8], 2, vec![LayerNode::new(0, kind, vec![Source::Input])]).unwrap();
        let x = uniform(&mut rng, &[8], -2.0, 2.0);
        let phi = kernel_shap(&g, &x, 0, &seg, budget, 0.0, &baseline, budget as u64).unwrap();
        for i in 0..8 {
            worst_linear = worst_linear.max((phi.data()[i] - w[i] * x.data()[i]).abs());
        }
    }
    outcome(
        worst <= 0.01 && worst_linear < 1e-8,
        format!(
            "budget {default_budget}: max err {worst:.2e} x range; linear max err {worst_linear:.2e} \
             (budget 128, informational: {worst_sampled:.3} x range)"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn recommender_fidelity() -> Outcome {
    let table = recommender::default_table();
    let linear = detector::detect(&synth::random_mlp(&[4, 3, 2], 0.0, 0).unwrap());
    let conv = detector::detect(&synth::patch_cnn(0).unwrap());
    let nine = [
        "lime",
        "kernel_shap",
        "gradient",
        "grad_x_input",
        "fullgrad",
        "smoothgrad",
        "vargrad",
        "integrated_gradients",
        "lrp",
    ];
    let eleven = [
        "lime",
        "kernel_shap",
        "gradient",
        "grad_x_input",
        "grad_cam",
        "guided_grad_cam",
        "fullgrad",
        "smoothgrad",
        "vargrad",
        "integrated_gradients",
        "lrp",
    ];
    let agnostic = ["lime", "kernel_shap"];
    let golden: [(&detector::ArchitectureProfile, &[Modality], &[&str]); 9] = [
        (&linear, &[Modality::Vision], &nine),
        (&linear, &[Modality::Language], &nine),
        (&linear, &[Modality::Structured], &agnostic),
        (&linear, &[Modality::TimeSeries], &nine),
        (&conv, &[Modality::Vision], &eleven),
        (&conv, &[Modality::Language], &nine),
        (&conv, &[Modality::Structured], &agnostic),
        (&conv, &[Modality::TimeSeries], &eleven),
        (&conv, &[Modality::Vision, Modality::Language], &nine),
    ];
    let mut mismatches = Vec::new();
    for (profile, modalities, expected) in golden {
        let set: BTreeSet<Modality> = modalities.iter().copied().collect();
        let got = recommender::recommend(profile, &set, &table).unwrap().recommended;
        if got != expected {
            mismatches.push(format!("{modalities:?}/{:?}", profile.tags));
        }
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "9 golden cases match, {V,L} x conv gives nine".into()
        } else {
            format!("mismatch in {}", mismatches.join("; "))
        },
    )
}

// ---------------------------------------------------------------- 6

fn hpo_improvement(cnn: &ComputeGraph) -> Outcome {
    let start = Instant::now();
    let data = synth::patch_task(48, 7);
    let masks = data.masks.clone().unwrap();
    let samples: Vec<Sample> = (0..48)
        .map(|i| Sample { x: data.samples[i].clone(), target: data.labels[i], mask: Some(masks[i].clone()) })
        .collect();
    let (batch, test) = samples.split_at(16);
    let accuracy = synth::accuracy(cnn, &data.samples, &data.labels).unwrap();

    let ctx = ExplainContext::new(cnn);
    let objective = Objective::new(MetricId::Abpc);
    let seed = 6;
    let mut notes = Vec::new();
    let mut pass = accuracy >= 0.95;
    for method in Method::ALL {
        let schema = method.schema_for(cnn.input_shape());
        let record = optimizer::optimize_explainer(&ctx, batch, method, &schema, &objective, seed).unwrap();
        if record.best_score < record.default_score.unwrap_or(f64::NEG_INFINITY) {
            pass = false;
            notes.push(format!("{method}: best ABPC below default"));
        }
        if matches!(method, Method::Lime | Method::KernelShap) {
            let grid = optimizer::expand_grid(&schema);
            let mass = |point: usize| -> f64 {
                let values: Vec<f64> = test
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let e = explain(&ctx, method, &s.x, s.target, &grid[point], job_seed(seed, method, 16 + i, point)).unwrap();
                        let m = evaluator::relevance_mass_accuracy(&e.attributions, s.mask.as_ref().unwrap()).unwrap();
                        m.value.unwrap_or(0.0)
                    })
                    .collect();
                mean(&values)
            };
            let (default, optimized) = (mass(record.default_index), mass(record.best_index));
            pass &= optimized > default;
            notes.push(format!("{method} mass {default:.3} -> {optimized:.3}"));
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    outcome(pass, format!("cnn accuracy {accuracy:.3}; {}; best >= default ABPC for all 11 methods checked; {elapsed:.1?}", notes.join("; ")))
}

// ---------------------------------------------------------------- 7

fn null_explanation(cnn: &ComputeGraph) -> Outcome {
    let data = synth::patch_task(32, 8);
    let masks = data.masks.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let baseline = Tensor::zeros(&[1, 16, 16]);
    let (mut abpcs, mut ranks, mut fractions) = (Vec::new(), Vec::new(), Vec::new());
    for (i, x) in data.samples.iter().enumerate() {
        let attr = uniform(&mut rng, &[1, 16, 16], -1.0, 1.0);
        abpcs.push(evaluator::abpc_of(cnn, x, data.labels[i], &attr, 10, &baseline).unwrap().value.unwrap());
        ranks.push(evaluator::relevance_rank_accuracy(&attr, &masks[i]).unwrap().value.unwrap());
        fractions.push(masks[i].sum() / masks[i].len() as f64);
    }
    let (abpc, rank, fraction) = (mean(&abpcs), mean(&ranks), mean(&fractions));
    outcome(
        abpc.abs() < 0.05 && (rank - fraction).abs() <= 0.05,
        format!("mean ABPC {abpc:+.4}, rank accuracy {rank:.4} vs mask fraction {fraction:.4}"),
    )
}

// ---------------------------------------------------------------- 8

fn determinism(cnn: &ComputeGraph) -> Outcome {
    let data = synth::patch_task(8, 11);
    let mut dataset = Dataset::new(data.samples, Some(data.labels), data.masks).unwrap();
    dataset.modalities.insert(Modality::Vision);
    let config = RunConfig { optimization_samples: 4, seed: 3, ..RunConfig::default() };
    let table = recommender::default_table();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut listings = Vec::new();
    for (dir, workers) in dirs.iter().zip([1, 3]) {
        let r = with_workers(Some(workers), || report::auto_explain(cnn, &dataset, &config, &table)).unwrap().unwrap();
        report::write_outputs(&r, dir.path(), config.sidecar_samples, 0.0).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "timing.json")
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        listings.push(files);
    }
    let same = listings[0] == listings[1];
    outcome(same, format!("{} files compared across 1 and 3 workers, identical: {same}", listings[0].len()))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let cnn = synth::trained_patch_cnn(0).unwrap();
    println!("trained patch cnn in {:.1?}", start.elapsed());

    let criteria: [(&str, &dyn Fn() -> Outcome); 8] = [
        ("gradient correctness", &gradient_correctness),
        ("integrated gradients completeness", &|| ig_completeness(&cnn)),
        ("lrp conservation", &lrp_conservation),
        ("kernel shap oracle equivalence", &kernel_shap_oracle),
        ("recommender table fidelity", &recommender_fidelity),
        ("hyperparameter optimization improvement", &|| hpo_improvement(&cnn)),
        ("null explanation sanity", &|| null_explanation(&cnn)),
        ("determinism", &|| determinism(&cnn)),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!("criterion {}: {} {name}: {}", n + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} of 8 passed in {:.1?}", 8 - failed, start.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
