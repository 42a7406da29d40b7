use relu2attn::attn::{resource_report, transformer_forward};
use relu2attn::compiler::{
    absorb_bias, certificate, compile_network, compile_network_with, compile_one_layer_matrix, compile_one_layer_vector,
    fuse_layers, tune_lambda, BudgetPolicy, CompileOptions, Decomposition, OneLayerSpec,
};
use relu2attn::numerics::DenseMatrix;
use relu2attn::par::Execution;
use relu2attn::relu::builders::build_max_net;
use relu2attn::relu::{ReluLayer, ReluNetwork};
use relu2attn::sampling::Sampler;
use relu2attn::verify::{max_error, relu_target, sample_inputs, verify_networks};
use relu2attn::Error;

fn random_layer(rng: &mut Sampler, rows: usize, cols: usize, w: f64, b: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let a = (0..rows).map(|_| (0..cols).map(|_| rng.symmetric(w)).collect()).collect();
    let bias = (0..rows).map(|_| rng.symmetric(b)).collect();
    (a, bias)
}

fn to_layer((a, b): &(Vec<Vec<f64>>, Vec<f64>)) -> ReluLayer {
    ReluLayer::new(DenseMatrix::from_rows(a).unwrap(), b.clone()).unwrap()
}

fn affine_relu(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(row, bi)| (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bi).max(0.0))
        .collect()
}

fn column_major(x: &DenseMatrix) -> Vec<f64> {
    (0..x.cols()).flat_map(|j| (0..x.rows()).map(move |i| x.get(i, j))).collect()
}

#[test]
fn single_relu_unit() {
    let spec = OneLayerSpec::new(1, 1, 1, 1, false, vec![1.0], vec![1.0]).unwrap();
    let block = compile_one_layer_vector(&spec, 1.0, 1e-2).unwrap();
    assert_eq!(block.network.layers().len(), 3);
    for x in [-1.0, -0.5, 0.0, 0.25, 0.5, 1.0] {
        let y = transformer_forward(&block.network, &DenseMatrix::new(1, 1, vec![x]).unwrap()).unwrap();
        assert!((y.get(0, 0) - f64::max(x, 0.0)).abs() <= 1e-2, "x={x}: {}", y.get(0, 0));
    }
}

#[test]
fn vector_output_requires_single_row() {
    let mut rng = Sampler::new(5);
    let spec = OneLayerSpec::random(2, 2, 2, 1, 1.0, &mut rng);
    assert!(matches!(
        compile_one_layer_vector(&spec, 1.0, 1e-2),
        Err(Error::Precondition { .. })
    ));
}

#[test]
fn random_vector_spec_meets_tolerance() {
    let mut rng = Sampler::new(11);
    let spec = OneLayerSpec::random(2, 2, 1, 3, 1.0, &mut rng);
    let relu = spec.to_relu_network().unwrap();
    let block = compile_one_layer_vector(&spec, 1.0, 1e-2).unwrap();
    let inputs = sample_inputs(2, 2, 1.0, 500, 3);
    let oracle = |x: &DenseMatrix| relu_target(&relu, x, 1);
    let err = max_error(&block.network, &oracle, &inputs, Execution::Parallel).unwrap();
    assert!(err <= 1e-2, "{err}");
}

#[test]
fn absorbed_bias_layer_compiles_to_its_relu() {
    let mut rng = Sampler::new(21);
    let raw = random_layer(&mut rng, 4, 4, 1.0, 0.5);
    let spec = absorb_bias(&to_layer(&raw), 2).unwrap();
    assert!(spec.has_constant());
    let block = compile_one_layer_matrix(&spec, 1.0, 1e-2).unwrap();
    let mut sampler = Sampler::new(4);
    for _ in 0..200 {
        let x = sampler.matrix(2, 2, 1.0);
        let want = affine_relu(&raw.0, &raw.1, &column_major(&x));
        let got = column_major(&transformer_forward(&block.network, &x).unwrap());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-2, "{g} vs {w}");
        }
    }
}

#[test]
fn fusing_two_blocks_gives_six_layers() {
    let mut rng = Sampler::new(31);
    let l0 = random_layer(&mut rng, 4, 4, 0.5, 0.5);
    let l1 = random_layer(&mut rng, 4, 4, 0.5, 0.5);
    let (eps0, eps1) = (0.02, 0.02);
    let b0 = compile_one_layer_matrix(&absorb_bias(&to_layer(&l0), 2).unwrap(), 1.0, eps0).unwrap();
    // Hidden values are bounded by 4 · 0.5 + 0.5 plus the first block's error.
    let b1 = compile_one_layer_matrix(&absorb_bias(&to_layer(&l1), 2).unwrap(), 3.0, eps1).unwrap();
    let fused = fuse_layers(&[b0, b1]).unwrap();
    assert_eq!(fused.layers().len(), 6);
    assert_eq!(resource_report(&fused).k, 6);
    let lipschitz = 4.0 * 0.5;
    let mut sampler = Sampler::new(8);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let x = sampler.matrix(2, 2, 1.0);
        let hidden = affine_relu(&l0.0, &l0.1, &column_major(&x));
        let want = affine_relu(&l1.0, &l1.1, &hidden);
        let got = column_major(&transformer_forward(&fused, &x).unwrap());
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    assert!(worst <= lipschitz * eps0 + eps1, "{worst}");
}

#[test]
fn fuse_rejects_mismatched_blocks() {
    let mut rng = Sampler::new(1);
    let a = compile_one_layer_matrix(&OneLayerSpec::random(2, 2, 2, 1, 1.0, &mut rng), 1.0, 0.1).unwrap();
    let b = compile_one_layer_matrix(&OneLayerSpec::random(2, 3, 2, 1, 1.0, &mut rng), 1.0, 0.1).unwrap();
    assert!(fuse_layers(&[]).is_err());
    assert!(fuse_layers(&[a, b]).is_err());
}

#[test]
fn max_net_under_every_mode() {
    let net = build_max_net(1).unwrap();
    for decomposition in [Decomposition::PerLayer, Decomposition::Sandwich] {
        for policy in [BudgetPolicy::Theory, BudgetPolicy::Sensitivity] {
            let opts = CompileOptions {
                decomposition,
                policy,
                ..Default::default()
            };
            let c = compile_network_with(&net, (2, 1), 5.0, 0.05, &opts).unwrap();
            let expected_k = match decomposition {
                Decomposition::PerLayer => 3 * net.depth(),
                Decomposition::Sandwich => 3 * (net.depth() - 1).max(1),
            };
            assert_eq!(c.network.layers().len(), expected_k);
            let r = verify_networks(&net, &c.network, 500, 42, 5.0, 0.05, Execution::Parallel).unwrap();
            assert!(r.pass, "{opts:?}: {}", r.measured_max_error);
        }
    }
}

#[test]
fn deep_wide_network_overflows_the_budget() {
    let layers: Vec<ReluLayer> = (0..10)
        .map(|_| ReluLayer::new(DenseMatrix::filled(10, 10, 2.0), vec![0.0; 10]).unwrap())
        .collect();
    let net = ReluNetwork::new(layers).unwrap();
    match compile_network(&net, (10, 1), 1.0, 0.1) {
        Err(Error::BudgetOverflow(msg)) => assert!(msg.contains("(W_f B)^K_f"), "{msg}"),
        other => panic!("expected a budget overflow, got {:?}", other.map(|c| c.report)),
    }
}

#[test]
fn preconditions_are_enforced() {
    let net = build_max_net(1).unwrap();
    assert!(matches!(compile_network(&net, (3, 1), 1.0, 0.1), Err(Error::Precondition { .. })));
    assert!(matches!(compile_network(&net, (2, 1), 1.0, 0.0), Err(Error::Precondition { .. })));
    assert!(matches!(compile_network(&net, (2, 1), 1.0, 1.5), Err(Error::Precondition { .. })));
    assert!(matches!(compile_network(&net, (2, 1), 0.5, 0.1), Err(Error::Precondition { .. })));
}

#[test]
fn tuned_temperatures_stay_within_tolerance() {
    let net = build_max_net(1).unwrap();
    let c = compile_network(&net, (2, 1), 2.0, 0.05).unwrap();
    let oracle = |x: &DenseMatrix| relu_target(&net, x, 1);
    let tuned = tune_lambda(&c.network, oracle, 2.0, 0.05, 200, 7, Execution::Parallel).unwrap();
    let before = resource_report(&c.network).lambda_per_layer;
    let after = resource_report(&tuned).lambda_per_layer;
    assert!(after.iter().zip(&before).all(|(a, b)| a <= b));
    assert!(after.iter().zip(&before).any(|(a, b)| a < b));
    let inputs = sample_inputs(2, 1, 2.0, 200, 7);
    assert!(max_error(&tuned, &oracle, &inputs, Execution::Sequential).unwrap() <= 0.05);
}

#[test]
fn certificate_lists_the_budget() {
    let net = build_max_net(1).unwrap();
    let c = compile_network(&net, (2, 1), 1.0, 0.1).unwrap();
    let cert = certificate(&c, 1e-5, 500, 42);
    for key in ["eps", "budget", "C_s", "theory_lambda", "measured_max_error", "samples", "seed"] {
        assert!(cert.get(key).is_some(), "missing {key}");
    }
    let eps_k = cert["budget"]["eps_k"].as_array().unwrap();
    assert_eq!(eps_k.len(), c.blocks.len());
    assert_eq!(cert["theory_lambda"].as_array().unwrap().len(), c.network.layers().len());
}

#[test]
fn per_block_error_stays_inside_its_budget() {
    let mut rng = Sampler::new(77);
    let raw: Vec<_> = (0..3).map(|_| random_layer(&mut rng, 2, 2, 0.5, 0.2)).collect();
    let net = ReluNetwork::new(raw.iter().map(to_layer).collect()).unwrap();
    let c = compile_network(&net, (1, 2), 1.0, 0.1).unwrap();
    assert_eq!(c.blocks.len(), 3);
    for (summary, eps_k) in c.blocks.iter().zip(&c.budget.eps_k) {
        assert!(summary.eps <= *eps_k + 1e-15);
        assert!(summary.eps1 + summary.eps2 + summary.eps_relu <= summary.eps * (1.0 + 1e-12));
    }
    let r = verify_networks(&net, &c.network, 500, 1, 1.0, 0.1, Execution::Parallel).unwrap();
    assert!(r.pass, "{}", r.measured_max_error);
}
