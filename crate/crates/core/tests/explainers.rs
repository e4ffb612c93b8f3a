mod common;

use common::*;
use proptest::prelude::*;
use xai_core::explainers::*;
use xai_core::graph::{ComputeGraph, GradientMode, LayerKind, LayerNode, Source};
use xai_core::synth;
use xai_core::Tensor;

fn input(shape: &[usize], seed: u64) -> Tensor {
    // Deterministic pseudo-random values in [-1, 1].
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn linear_model(weights: Vec<f64>, bias: f64) -> ComputeGraph {
    let n = weights.len();
    let mut w = weights.clone();
    w.extend(weights.iter().map(|v| -v));
    let kind = LayerKind::Linear {
        weight: Tensor::new(vec![2, n], w).unwrap(),
        bias: Tensor::from_vec(vec![bias, -bias]),
    };
    ComputeGraph::new(vec![n], 2, vec![LayerNode::new(0, kind, vec![Source::Input])]).unwrap()
}

fn params(pairs: &[(&str, ParamValue)]) -> HyperParams {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[test]
fn gradient_matches_finite_differences_on_residual_cnn() {
    let g = synth::random_residual_cnn(0.1, 11).unwrap();
    let x = input(&[2, 6, 6], 3);
    let h = 1e-6;
    let fd = finite_difference(&g, &x, 1, h);
    let grad = gradient(&g, &x, 1).unwrap();
    let base = switching_pattern(&g, &x);
    for i in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[i] += h;
        let mut down = x.clone();
        down.data_mut()[i] -= h;
        if switching_pattern(&g, &up) != base || switching_pattern(&g, &down) != base {
            continue;
        }
        let scale = grad.data()[i].abs().max(fd[i].abs()).max(1e-8);
        assert!((grad.data()[i] - fd[i]).abs() / scale < 1e-4, "feature {i}: {} vs {}", grad.data()[i], fd[i]);
    }
}

#[test]
fn grad_x_input_is_gradient_times_input() {
    let g = synth::random_mlp(&[5, 7, 3], 0.1, 2).unwrap();
    let x = input(&[5], 9);
    let gx = gradient_x_input(&g, &x, 2).unwrap();
    let expected = gradient(&g, &x, 2).unwrap().mul(&x).unwrap();
    assert_eq!(gx, expected);
}

#[test]
fn smoothgrad_without_noise_is_the_gradient() {
    let g = synth::random_mlp(&[4, 6, 2], 0.1, 5).unwrap();
    let x = input(&[4], 1);
    let grad = gradient(&g, &x, 0).unwrap();
    let sg = smoothgrad(&g, &x, 0, 16, 0.0, 7, NoiseAggregate::Mean).unwrap();
    let vg = smoothgrad(&g, &x, 0, 16, 0.0, 7, NoiseAggregate::Variance).unwrap();
    assert_eq!(sg, grad);
    assert!(vg.data().iter().all(|&v| v == 0.0));
}

#[test]
fn smoothgrad_is_seeded() {
    let g = synth::random_mlp(&[4, 6, 2], 0.1, 5).unwrap();
    let x = input(&[4], 1);
    let a = smoothgrad(&g, &x, 0, 8, 0.5, 1, NoiseAggregate::Mean).unwrap();
    let b = smoothgrad(&g, &x, 0, 8, 0.5, 1, NoiseAggregate::Mean).unwrap();
    let c = smoothgrad(&g, &x, 0, 8, 0.5, 2, NoiseAggregate::Mean).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn integrated_gradients_exact_on_linear_model() {
    let w = vec![0.5, -1.25, 2.0, 0.75];
    let g = linear_model(w.clone(), 0.3);
    let x = Tensor::from_vec(vec![1.0, 2.0, -0.5, 0.25]);
    let baseline = Tensor::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
    let ig = integrated_gradients(&g, &x, 0, &baseline, 3).unwrap();
    for i in 0..4 {
        let expected = w[i] * (x.data()[i] - baseline.data()[i]);
        assert!((ig.data()[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn lrp_epsilon_on_linear_layer_is_grad_x_input() {
    let w = vec![0.5, -1.25, 2.0, 0.75];
    let g = linear_model(w, 0.0);
    let x = Tensor::from_vec(vec![1.0, 2.0, -0.5, 0.25]);
    let r = lrp(&g, &x, 0, LrpRule::Epsilon, 1e-9, 0.25).unwrap();
    let gx = gradient_x_input(&g, &x, 0).unwrap();
    assert!(max_abs_diff(r.data(), gx.data()) < 1e-8);
}

#[test]
fn lrp_rules_conserve_on_zero_bias_cnn() {
    let g = synth::random_residual_cnn(0.0, 4).unwrap();
    let x = input(&[2, 6, 6], 8).map(f64::abs);
    let out = logit(&g, &x, 0);
    for rule in [LrpRule::Epsilon, LrpRule::Gamma, LrpRule::ZPlusComposite] {
        let r = lrp(&g, &x, 0, rule, 1e-9, 0.25).unwrap();
        assert!((r.sum() - out).abs() <= 1e-3 * out.abs(), "{rule:?}: {} vs {out}", r.sum());
    }
}

#[test]
fn kernel_shap_exact_enumeration_matches_brute_force() {
    let g = synth::random_mlp(&[6, 10, 2], 0.2, 21).unwrap();
    let x = input(&[6], 4);
    let baseline = Tensor::zeros(&[6]);
    let seg = grid_segments(&[6], 1).unwrap();
    let phi = kernel_shap(&g, &x, 1, &seg, 512, 0.0, &baseline, 0).unwrap();
    let exact = brute_force_shapley(6, |keep| masked_logit(&g, &x, &baseline, 1, keep));
    assert!(max_abs_diff(phi.data(), &exact) < 1e-8, "{:?} vs {exact:?}", phi.data());
}

#[test]
fn kernel_shap_respects_efficiency_when_sampling() {
    let g = synth::random_mlp(&[10, 12, 2], 0.2, 3).unwrap();
    let x = input(&[10], 6);
    let baseline = Tensor::zeros(&[10]);
    let seg = grid_segments(&[10], 1).unwrap();
    let phi = kernel_shap(&g, &x, 0, &seg, 100, 0.0, &baseline, 9).unwrap();
    let gap = logit(&g, &x, 0) - logit(&g, &baseline, 0);
    assert!((phi.sum() - gap).abs() < 1e-9);
}

#[test]
fn kernel_shap_shares_values_across_a_segment() {
    let g = synth::patch_cnn(0).unwrap();
    let x = input(&[1, 16, 16], 2);
    let seg = grid_segments(&[1, 16, 16], 8).unwrap();
    let phi = kernel_shap(&g, &x, 1, &seg, 64, 0.0, &Tensor::zeros(&[1, 16, 16]), 0).unwrap();
    assert_eq!(phi.data()[0], phi.data()[7 * 16 + 7]);
    let gap = logit(&g, &x, 1) - logit(&g, &Tensor::zeros(&[1, 16, 16]), 1);
    let per_segment: f64 = [0, 8, 128, 136].iter().map(|&i| phi.data()[i]).sum();
    assert!((per_segment - gap).abs() < 1e-9);
}

#[test]
fn lime_ranks_the_dominant_feature_first() {
    let g = linear_model(vec![0.1, 3.0, -0.2, 0.05], 0.0);
    let x = Tensor::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
    let seg = grid_segments(&[4], 1).unwrap();
    let a = lime(&g, &x, 0, &seg, 256, 0.25, 1.0, &Tensor::zeros(&[4]), 3).unwrap();
    assert_eq!(a.argmax(), 1);
}

#[test]
fn grad_cam_is_nonnegative_and_broadcast() {
    let g = synth::random_residual_cnn(0.1, 2).unwrap();
    let x = input(&[2, 6, 6], 5);
    let cam = grad_cam(&g, &x, 0, 2).unwrap();
    assert!(cam.data().iter().all(|&v| v >= 0.0));
    assert_eq!(&cam.data()[..36], &cam.data()[36..]);
    assert!(grad_cam(&g, &x, 0, 1).is_err());
}

#[test]
fn fullgrad_is_min_max_normalised() {
    let g = synth::patch_cnn(3).unwrap();
    let x = input(&[1, 16, 16], 1);
    let ctx = ExplainContext::new(&g);
    let e = explain(&ctx, Method::FullGrad, &x, 0, &HyperParams::new(), 0).unwrap();
    assert_eq!(e.attributions.min(), 0.0);
    assert_eq!(e.attributions.max(), 1.0);
}

#[test]
fn explain_validates_arguments() {
    let g = synth::random_mlp(&[4, 3, 2], 0.1, 1).unwrap();
    let ctx = ExplainContext::new(&g);
    let x = input(&[4], 1);
    assert!(explain(&ctx, Method::Gradient, &x, 2, &HyperParams::new(), 0).is_err());
    let bad = params(&[("n_steps", ParamValue::Int(8)), ("bogus", ParamValue::Int(1))]);
    assert!(explain(&ctx, Method::IntegratedGradients, &x, 0, &bad, 0).is_err());
    let mean = params(&[("baseline", ParamValue::Text("mean".into()))]);
    assert!(explain(&ctx, Method::IntegratedGradients, &x, 0, &mean, 0).is_err());
    assert!(explain(&ctx, Method::GradCam, &x, 0, &HyperParams::new(), 0).is_err());
}

#[test]
fn every_method_runs_on_a_cnn() {
    let g = synth::patch_cnn(1).unwrap();
    let mean = Tensor::full(&[1, 16, 16], 0.1);
    let mut ctx = ExplainContext::new(&g);
    ctx.mean_baseline = Some(&mean);
    let x = input(&[1, 16, 16], 4);
    for m in Method::ALL {
        let e = explain(&ctx, m, &x, 1, &HyperParams::new(), 0).unwrap();
        assert_eq!(e.attributions.shape(), x.shape(), "{m}");
        assert_eq!(e.params, m.schema().defaults(), "{m}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mlp_gradient_matches_finite_differences(seed in 0u64..10_000, class in 0usize..3) {
        let g = synth::random_mlp(&[5, 8, 6, 3], 0.1, seed).unwrap();
        let x = input(&[5], seed ^ 0xABCD);
        let h = 1e-6;
        let fd = finite_difference(&g, &x, class, h);
        let grad = gradient(&g, &x, class).unwrap();
        let base = switching_pattern(&g, &x);
        for i in 0..5 {
            let mut up = x.clone();
            up.data_mut()[i] += h;
            let mut down = x.clone();
            down.data_mut()[i] -= h;
            if switching_pattern(&g, &up) != base || switching_pattern(&g, &down) != base {
                continue;
            }
            let scale = grad.data()[i].abs().max(fd[i].abs()).max(1e-8);
            prop_assert!((grad.data()[i] - fd[i]).abs() / scale < 1e-4);
        }
    }

    #[test]
    fn lrp_epsilon_conserves_on_zero_bias_mlps(seed in 0u64..10_000) {
        let g = synth::random_mlp(&[6, 9, 7, 2], 0.0, seed).unwrap();
        let x = input(&[6], seed + 1);
        let out = logit(&g, &x, 1);
        let r = lrp(&g, &x, 1, LrpRule::Epsilon, 1e-9, 0.25).unwrap();
        prop_assert!((r.sum() - out).abs() <= 1e-3 * out.abs() + 1e-12);
    }

    #[test]
    fn kernel_shap_exact_on_linear_models(
        w in proptest::collection::vec(-2.0f64..2.0, 8),
        x in proptest::collection::vec(-2.0f64..2.0, 8),
        budget in 20usize..300,
        seed in any::<u64>(),
    ) {
        let g = linear_model(w.clone(), 0.4);
        let x = Tensor::from_vec(x);
        let seg = grid_segments(&[8], 1).unwrap();
        let phi = kernel_shap(&g, &x, 0, &seg, budget, 0.0, &Tensor::zeros(&[8]), seed).unwrap();
        for i in 0..8 {
            prop_assert!((phi.data()[i] - w[i] * x.data()[i]).abs() < 1e-8);
        }
    }
}

#[test]
fn gamma_rule_with_zero_gamma_is_the_epsilon_rule() {
    let g = synth::random_residual_cnn(0.1, 6).unwrap();
    let x = input(&[2, 6, 6], 2);
    let eps = lrp(&g, &x, 1, LrpRule::Epsilon, 1e-6, 0.0).unwrap();
    let gamma = lrp(&g, &x, 1, LrpRule::Gamma, 1e-6, 0.0).unwrap();
    assert_eq!(eps, gamma);
}

#[test]
fn fullgrad_without_biases_is_normalised_grad_x_input() {
    let g = synth::random_residual_cnn(0.0, 7).unwrap();
    let x = input(&[2, 6, 6], 3);
    let fg = fullgrad(&g, &x, 0).unwrap();
    let gx = gradient_x_input(&g, &x, 0).unwrap().map(f64::abs);
    let (lo, hi) = (gx.min(), gx.max());
    let expected = gx.map(|v| (v - lo) / (hi - lo));
    assert!(max_abs_diff(fg.data(), expected.data()) < 1e-12);
}

#[test]
fn bias_gradients_match_finite_differences() {
    let g = synth::random_residual_cnn(0.2, 8).unwrap();
    let x = input(&[2, 6, 6], 4);
    let trace = g.forward(&x).unwrap();
    let mut seed = Tensor::zeros(&[3]);
    seed.data_mut()[2] = 1.0;
    let sweep = g.sweep(&trace, &seed, GradientMode::Plain).unwrap();
    let grads = g.parameter_gradients(&trace, &sweep);
    let h = 1e-6;
    for (pos, node) in g.nodes().iter().enumerate() {
        let Some(pg) = &grads[pos] else { continue };
        for b in 0..pg.bias.len() {
            let shifted = |d: f64| {
                let mut nodes = g.nodes().to_vec();
                if let LayerKind::Conv2D { bias, .. } | LayerKind::Linear { bias, .. } = &mut nodes[pos].kind {
                    bias.data_mut()[b] += d;
                }
                logit(&ComputeGraph::new(vec![2, 6, 6], 3, nodes).unwrap(), &x, 2)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!((fd - pg.bias.data()[b]).abs() < 1e-6, "node {} bias {b}", node.id);
        }
    }
}

#[test]
fn grad_cam_finds_a_planted_patch() {
    // One box-filter channel responds to bright regions; the class-0 logit is its mean.
    let kinds = vec![
        LayerKind::Conv2D { weight: Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0), bias: Tensor::zeros(&[1]), stride: 1, padding: 1 },
        LayerKind::ReLU,
        LayerKind::GlobalAvgPool2D,
        LayerKind::Linear { weight: Tensor::from_vec(vec![1.0, -1.0]).reshape(&[2, 1]).unwrap(), bias: Tensor::zeros(&[2]) },
    ];
    let g = synth::sequential(vec![1, 12, 12], 2, kinds).unwrap();
    let mut x = Tensor::full(&[1, 12, 12], 0.05);
    for r in 6..10 {
        for c in 2..6 {
            x.data_mut()[r * 12 + c] = 1.0;
        }
    }
    let cam = grad_cam(&g, &x, 0, 0).unwrap();
    let (r, c) = (cam.argmax() / 12, cam.argmax() % 12);
    assert!((6..10).contains(&r) && (2..6).contains(&c), "argmax at ({r}, {c})");
}

#[test]
fn integrated_gradients_vanish_at_the_baseline() {
    let g = synth::patch_cnn(1).unwrap();
    let x = input(&[1, 16, 16], 5);
    assert!(integrated_gradients(&g, &x, 0, &x, 16).unwrap().data().iter().all(|&v| v == 0.0));
}
