//! Acceptance criteria 1 to 11, one PASS/FAIL line each.
//!
//! Expected values come from oracles written here (direct loops, closed
//! forms and standard-library math), never from the code under test.

use std::time::{Duration, Instant};

use relu2attn::attn::{attn_layer_forward, preprocess, resource_report, transformer_forward, ResourceReport, TransformerNetwork};
use relu2attn::compiler::{budget_multilayer, compile_network, compile_one_layer_matrix, OneLayerSpec};
use relu2attn::gadgets::{
    build_entrywise_mult_layer, build_linear_map_head, hardmax_temperature, soft_relu, soft_relu_base_temperature,
};
use relu2attn::numerics::DenseMatrix;
use relu2attn::par::Execution;
use relu2attn::relu::builders::{build_clip_net, build_interpolant_1d, build_max_net, build_min_net};
use relu2attn::relu::{relu_forward, ReluLayer, ReluNetwork};
use relu2attn::sampling::Sampler;
use relu2attn::toolkit::{build_primitive, build_uap_1d, uniform_samples, PrimitiveName, PrimitiveRequest};
use relu2attn::verify::{hardmax_sweep, onelayer_sweep, softrelu_sweep, sweep_csv};

type Outcome = Result<String, String>;

/// Networks emitted by criteria 5 to 8 with their construction-time reports.
type Emitted = Vec<(String, TransformerNetwork, ResourceReport)>;

fn stable_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    if took <= limit {
        Ok(())
    } else {
        Err(format!("runtime {took:.2?} exceeds {limit:?}"))
    }
}

/// Plain loop forward pass `A_K ReLU(⋯ ReLU(A_1 x + b_1)) + b_K`.
fn naive_relu(layers: &[(Vec<Vec<f64>>, Vec<f64>)], x: &[f64]) -> Vec<f64> {
    let mut z = x.to_vec();
    for (k, (a, b)) in layers.iter().enumerate() {
        let input: Vec<f64> = if k == 0 { z.clone() } else { z.iter().map(|v| v.max(0.0)).collect() };
        z = a
            .iter()
            .zip(b)
            .map(|(row, bi)| row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>() + bi)
            .collect();
    }
    z
}

fn c1_hardmax() -> Outcome {
    let start = Instant::now();
    let mut rng = Sampler::new(1);
    let mut cases = 0usize;
    let mut worst_ratio = 0.0f64;
    for n in 2..=16usize {
        for gap in [0.05, 0.1, 1.0] {
            for eps in [1e-1f64, 1e-3] {
                let lambda = 2.0 * (((n - 1) as f64).ln() - eps.ln()) / gap;
                let lib = hardmax_temperature(n, gap, eps).map_err(|e| e.to_string())?;
                if (lib - lambda).abs() > 1e-12 * lambda {
                    return Err(format!("temperature mismatch at n={n}: {lib} vs {lambda}"));
                }
                for _ in 0..1000 {
                    let top = (rng.unit() * n as f64) as usize % n;
                    let v: Vec<f64> = (0..n)
                        .map(|j| if j == top { 1.0 + gap } else { 1.0 - rng.unit() * 3.0 })
                        .collect();
                    let p = stable_softmax(&v.iter().map(|x| lambda * x).collect::<Vec<_>>());
                    let err = p
                        .iter()
                        .enumerate()
                        .map(|(j, q)| if j == top { 1.0 - q } else { *q })
                        .fold(0.0, f64::max);
                    worst_ratio = worst_ratio.max(err / eps);
                    cases += 1;
                    if err > eps {
                        return Err(format!("n={n} gap={gap} eps={eps}: error {err:.3e}"));
                    }
                }
            }
        }
    }
    within(Duration::from_secs(5), start)?;
    Ok(format!("{cases} cases, worst error/eps {worst_ratio:.3e}, {:.2?}", start.elapsed()))
}

fn c2_soft_relu() -> Outcome {
    let start = Instant::now();
    let (c_s, n, eps_relu) = (10.0, 4usize, 1e-2);
    let lambda = 4000f64.ln() / 0.01;
    let lib = soft_relu_base_temperature(c_s, n, eps_relu).map_err(|e| e.to_string())?;
    if (lib - lambda).abs() > 1e-9 * lambda || (lambda - 829.4).abs() > 0.1 {
        return Err(format!("temperature {lib} differs from {lambda}"));
    }
    let (mut sup, mut sup_outside) = (0.0f64, 0.0f64);
    for g in 0..10_000 {
        let s = -10.0 + 20.0 * g as f64 / 9999.0;
        let oracle = s * sigmoid(lambda * s + 4f64.ln());
        let lib_val = soft_relu(s, lambda, n);
        if (oracle - lib_val).abs() > 1e-12 * (1.0 + s.abs()) {
            return Err(format!("soft_relu({s}) = {lib_val}, closed form {oracle}"));
        }
        let err = (s.max(0.0) - lib_val).abs();
        sup = sup.max(err);
        if s.abs() >= 1e-2 {
            sup_outside = sup_outside.max(err);
        }
    }
    within(Duration::from_secs(1), start)?;
    if sup > 2e-2 || sup_outside > 1e-2 {
        return Err(format!("sup {sup:.3e}, outside-band sup {sup_outside:.3e}"));
    }
    Ok(format!("sup {sup:.3e} (<= 2e-2), |s| >= 1e-2 sup {sup_outside:.3e} (<= 1e-2)"))
}

fn c3_linear_map() -> Outcome {
    let start = Instant::now();
    let mut rng = Sampler::new(3);
    let a = rng.matrix(3, 3, 1.0);
    let b = DenseMatrix::filled(4, 4, 2.0);
    let (layer, _) = build_linear_map_head(&a, &b, 1.0, 1e-3).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = rng.matrix(3, 4, 1.0);
        let out = attn_layer_forward(&layer, &preprocess(&x)).map_err(|e| e.to_string())?;
        for r in 0..3 {
            for q in 0..5 {
                let want = if q < 4 {
                    let mut s = 0.0;
                    for m in 0..3 {
                        for p in 0..4 {
                            s += a.get(r, m) * x.get(m, p) * b.get(p, q);
                        }
                    }
                    s
                } else {
                    0.0
                };
                worst = worst.max((out.get(r, q) - want).abs());
            }
        }
    }
    within(Duration::from_secs(1), start)?;
    if worst > 1e-3 {
        return Err(format!("max error {worst:.3e}"));
    }
    Ok(format!("max error {worst:.3e} over 100 inputs"))
}

fn c4_entrywise() -> Outcome {
    let start = Instant::now();
    let (d, n) = (3usize, 4usize);
    let mut rng = Sampler::new(4);
    let mut v: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.symmetric(1.0)).collect()).collect();
    v[0][0] = 1.0;
    let (layer, _) = build_entrywise_mult_layer(&v, 1.0, 1e-3).map_err(|e| e.to_string())?;
    let (mut data_err, mut pos_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = rng.matrix(d, n, 1.0);
        let out = attn_layer_forward(&layer, &preprocess(&x)).map_err(|e| e.to_string())?;
        for q in 0..=n {
            for m in 0..d {
                let want = if q < n { v[q][m] * x.get(m, q) } else { 0.0 };
                data_err = data_err.max((out.get(m, q) - want).abs());
            }
            for p in 0..=n {
                let want = if p == q { 1.0 } else { 0.0 };
                pos_err = pos_err.max((out.get(d + p, q) - want).abs());
            }
        }
    }
    within(Duration::from_secs(1), start)?;
    if data_err > 1e-3 || pos_err > 1e-3 {
        return Err(format!("data {data_err:.3e}, positional {pos_err:.3e}"));
    }
    Ok(format!("data block {data_err:.3e}, positional block {pos_err:.3e}"))
}

fn c5_one_layer(emitted: &mut Emitted) -> Outcome {
    let start = Instant::now();
    let mut worst_ratio = 0.0f64;
    let mut cells = 0;
    for d in 1..=2usize {
        for n in 1..=3usize {
            for units in 1..=4usize {
                let mut rng = Sampler::new((1000 + 100 * d + 10 * n + units) as u64);
                let spec = OneLayerSpec::random(d, n, d, units, 1.0, &mut rng);
                let relu = spec.to_relu_network().map_err(|e| e.to_string())?;
                for eps in [1e-1, 1e-2] {
                    for c_x in [1.0, 5.0] {
                        let block = compile_one_layer_matrix(&spec, c_x, eps).map_err(|e| e.to_string())?;
                        if block.network.layers().len() != 3 {
                            return Err(format!("K = {} for d={d} n={n} N={units}", block.network.layers().len()));
                        }
                        let mut sampler = Sampler::new(42);
                        let mut worst = 0.0f64;
                        for _ in 0..500 {
                            let x = sampler.matrix(d, n, c_x);
                            let got = transformer_forward(&block.network, &x).map_err(|e| e.to_string())?;
                            let mut vx = Vec::with_capacity(d * n);
                            for j in 0..n {
                                for m in 0..d {
                                    vx.push(x.get(m, j));
                                }
                            }
                            let col = DenseMatrix::new(d * n, 1, vx).map_err(|e| e.to_string())?;
                            let y = relu_forward(&relu, &col).map_err(|e| e.to_string())?;
                            for j in 0..n {
                                for r in 0..d {
                                    let e = (got.get(r, j) - y.get(j * d + r, 0)).abs();
                                    worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
                                }
                            }
                        }
                        if worst > eps {
                            return Err(format!("d={d} n={n} N={units} eps={eps} C_X={c_x}: error {worst:.3e}"));
                        }
                        worst_ratio = worst_ratio.max(worst / eps);
                        cells += 1;
                        emitted.push((
                            format!("one-layer d={d} n={n} N={units} eps={eps} C_X={c_x}"),
                            block.network.clone(),
                            resource_report(&block.network),
                        ));
                    }
                }
            }
        }
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("{cells} cells, K = 3, worst error/eps {worst_ratio:.3e}, {:.2?}", start.elapsed()))
}

fn random_two_layer(seed: u64) -> (ReluNetwork, Vec<(Vec<Vec<f64>>, Vec<f64>)>) {
    let mut rng = Sampler::new(seed);
    let mut raw = Vec::new();
    for (rows, cols) in [(4usize, 4usize), (4, 4)] {
        let a: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.symmetric(1.0)).collect()).collect();
        let b: Vec<f64> = (0..rows).map(|_| rng.symmetric(0.5)).collect();
        raw.push((a, b));
    }
    let layers = raw
        .iter()
        .map(|(a, b)| ReluLayer::new(DenseMatrix::from_rows(a).unwrap(), b.clone()).unwrap())
        .collect();
    (ReluNetwork::new(layers).unwrap(), raw)
}

fn c6_multi_layer(emitted: &mut Emitted) -> Outcome {
    let start = Instant::now();
    let (net, raw) = random_two_layer(6);
    let stats = net.stats();
    if stats.depth_kf != 2 || stats.width_wf > 4 || stats.weight_bound_b > 1.0 {
        return Err(format!("test network outside the class: {stats:?}"));
    }
    let eps = 0.1;
    let budget = budget_multilayer(eps, 2, stats.width_wf, stats.weight_bound_b, 1.0).map_err(|e| e.to_string())?;
    let growth = (stats.width_wf as f64 * stats.weight_bound_b).max(1.0);
    let expected = eps / (2.0 * growth * growth);
    if (budget.eps_k[0] - expected).abs() > 1e-15 {
        return Err(format!("eps_k {} differs from {expected}", budget.eps_k[0]));
    }
    let compiled = compile_network(&net, (2, 2), 1.0, eps).map_err(|e| e.to_string())?;
    if compiled.network.layers().len() != 6 {
        return Err(format!("K = {}", compiled.network.layers().len()));
    }
    let mut rng = Sampler::new(42);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let x = rng.matrix(2, 2, 1.0);
        let got = transformer_forward(&compiled.network, &x).map_err(|e| e.to_string())?;
        let want = naive_relu(&raw, &[x.get(0, 0), x.get(1, 0), x.get(0, 1), x.get(1, 1)]);
        for j in 0..2 {
            for r in 0..2 {
                worst = worst.max((got.get(r, j) - want[j * 2 + r]).abs());
            }
        }
    }
    if !(worst <= eps) {
        return Err(format!("two-layer error {worst:.3e}"));
    }
    emitted.push(("two-layer random".into(), compiled.network.clone(), compiled.report.clone()));

    let mut exact = Vec::new();
    let cases: [(&str, ReluNetwork, fn(f64, f64) -> Vec<f64>, (usize, usize)); 3] = [
        ("max", build_max_net(1).unwrap(), |a, b| vec![a.max(b)], (2, 1)),
        ("min", build_min_net(1).unwrap(), |a, b| vec![a.min(b)], (2, 1)),
        ("clip", build_clip_net(2, 1.0).unwrap(), |a, b| vec![a.clamp(-1.0, 1.0), b.clamp(-1.0, 1.0)], (2, 1)),
    ];
    for (name, net, f, layout) in cases {
        let compiled = compile_network(&net, layout, 5.0, 0.05).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for _ in 0..500 {
            let x = rng.matrix(2, 1, 5.0);
            let got = transformer_forward(&compiled.network, &x).map_err(|e| e.to_string())?;
            let want = f(x.get(0, 0), x.get(1, 0));
            for (o, w) in want.iter().enumerate() {
                worst = worst.max((got.data()[o] - w).abs());
            }
        }
        if !(worst <= 0.05) {
            return Err(format!("{name} error {worst:.3e}"));
        }
        exact.push(format!("{name} {worst:.2e}"));
        emitted.push((format!("{name} net"), compiled.network.clone(), compiled.report.clone()));
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("two-layer error {worst:.3e} (K = 6); {}", exact.join(", ")))
}

fn c7_exact_identities() -> Outcome {
    let start = Instant::now();
    let max = build_max_net(1).map_err(|e| e.to_string())?;
    let min = build_min_net(1).map_err(|e| e.to_string())?;
    let clip = build_clip_net(1, 1.5).map_err(|e| e.to_string())?;
    let mut rng = Sampler::new(7);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let (a, b) = (rng.symmetric(10.0), rng.symmetric(10.0));
        let e1 = (max.forward(&[a, b]).unwrap()[0] - a.max(b)).abs();
        let e2 = (min.forward(&[a, b]).unwrap()[0] - a.min(b)).abs();
        let e3 = (clip.forward(&[a]).unwrap()[0] - a.clamp(-1.5, 1.5)).abs();
        worst = worst.max(e1).max(e2).max(e3);
    }
    within(Duration::from_secs(1), start)?;
    if worst > 1e-12 {
        return Err(format!("max deviation {worst:.3e}"));
    }
    Ok(format!("max deviation {worst:.3e} over 1e5 pairs"))
}

fn c8_toolkit(emitted: &mut Emitted) -> Outcome {
    let start = Instant::now();
    let eval = |net: &TransformerNetwork, x: &[f64]| -> f64 {
        let m = DenseMatrix::new(x.len(), 1, x.to_vec()).unwrap();
        transformer_forward(net, &m).unwrap().get(0, 0)
    };
    let line = |lo: f64, hi: f64| (0..1001).map(move |k| lo + (hi - lo) * k as f64 / 1000.0);
    let mut notes = Vec::new();
    let scalar: [(PrimitiveName, f64, Option<f64>, f64, f64, f64, fn(f64) -> f64); 4] = [
        (PrimitiveName::Inv, 0.1, None, 0.1, 10.0, 0.2, |x| 1.0 / x),
        (PrimitiveName::Sqrt, 0.1, None, 0.1, 10.0, 0.2, f64::sqrt),
        (PrimitiveName::Alpha, 1e-2, Some(5.0), 0.0, 5.0, 1e-2, |t| (-t / 2.0).exp()),
        (PrimitiveName::Sigma, 0.1, Some(5.0), 0.1, 5.0, 0.1, |t| (1.0 - (-t).exp()).sqrt()),
    ];
    for (name, eps, c_x, lo, hi, bound, f) in scalar {
        let mut req = PrimitiveRequest::new(name, eps);
        req.c_x = c_x;
        let prim = build_primitive(&req, Execution::Parallel).map_err(|e| format!("{name:?}: {e}"))?;
        let worst = line(lo, hi)
            .map(|x| (eval(prim.network(), &[x]) - f(x)).abs())
            .fold(0.0, f64::max);
        if !(worst <= bound) {
            return Err(format!("{name:?}: grid error {worst:.3e} > {bound}"));
        }
        notes.push(format!("{} {worst:.2e}", name.as_str()));
        emitted.push((name.as_str().into(), prim.network().clone(), prim.compiled.report.clone()));
    }
    let mut req = PrimitiveRequest::new(PrimitiveName::Mult, 1e-2).with_cx(1.0);
    req.dim = Some(2);
    let prim = build_primitive(&req, Execution::Parallel).map_err(|e| format!("mult: {e}"))?;
    let mut worst = 0.0f64;
    for i in 0..41 {
        for j in 0..41 {
            let (a, b) = (-1.0 + i as f64 / 20.0, -1.0 + j as f64 / 20.0);
            worst = worst.max((eval(prim.network(), &[a, b]) - a * b).abs());
        }
    }
    if !(worst <= 1e-2) {
        return Err(format!("mult: grid error {worst:.3e}"));
    }
    notes.push(format!("mult {worst:.2e}"));
    emitted.push(("mult".into(), prim.network().clone(), prim.compiled.report.clone()));
    within(Duration::from_secs(120), start)?;
    Ok(notes.join(", "))
}

fn c9_resources(emitted: &Emitted) -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    for (name, net, built) in emitted {
        let text = relu2attn::json::to_canonical_string(&net.to_json());
        let reloaded = TransformerNetwork::from_json_str(&text).map_err(|e| format!("{name}: {e}"))?;
        let r = resource_report(&reloaded);
        let counts = r.h == built.h
            && r.w == built.w
            && r.k == built.k
            && r.heads_per_layer == built.heads_per_layer
            && r.lambda_per_layer.len() == built.lambda_per_layer.len();
        let norms = close(r.c_v, built.c_v)
            && close(r.c_kq, built.c_kq)
            && close(r.lambda_max, built.lambda_max)
            && r.lambda_per_layer.iter().zip(&built.lambda_per_layer).all(|(a, b)| close(*a, *b));
        if !counts || !norms {
            return Err(format!("{name}: reloaded report {r:?} differs from {built:?}"));
        }
    }
    Ok(format!("{} networks match after reload", emitted.len()))
}

fn c10_uap() -> Outcome {
    let start = Instant::now();
    let f = |x: f64| (std::f64::consts::PI * x).sin();
    let samples = uniform_samples(f, 65).map_err(|e| e.to_string())?;
    let interp = build_interpolant_1d(&samples).map_err(|e| e.to_string())?;
    let prim = build_uap_1d(&samples, f, 2e-2, Execution::Parallel).map_err(|e| e.to_string())?;
    let (mut interp_err, mut net_err) = (0.0f64, 0.0f64);
    for g in 0..10_000 {
        let x = g as f64 / 9999.0;
        interp_err = interp_err.max((interp.forward(&[x]).unwrap()[0] - f(x)).abs());
        let y = transformer_forward(prim.network(), &DenseMatrix::new(1, 1, vec![x]).unwrap()).unwrap();
        net_err = net_err.max((y.get(0, 0) - f(x)).abs());
    }
    within(Duration::from_secs(30), start)?;
    if interp_err > 5e-4 || !(net_err <= 2e-2) {
        return Err(format!("interpolant {interp_err:.3e}, compiled {net_err:.3e}"));
    }
    Ok(format!("interpolant {interp_err:.3e} (<= 5e-4), compiled {net_err:.3e} (<= 2e-2)"))
}

fn measured_column(csv: &str) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect()
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn c11_sweeps() -> Outcome {
    let start = Instant::now();
    let lambdas: Vec<f64> = (1..=20).map(|k| k as f64).collect();
    let hard = sweep_csv(&hardmax_sweep(4, 0.5, &lambdas, 500, 11).map_err(|e| e.to_string())?);
    let soft_l: Vec<f64> = (0..12).map(|k| 10.0 * 2f64.powi(k)).collect();
    let soft = sweep_csv(&softrelu_sweep(10.0, 4, &soft_l, 10_000, 11).map_err(|e| e.to_string())?);
    let eps_list = [1e-1, 5e-2, 2.5e-2, 1.25e-2];
    let one = sweep_csv(&onelayer_sweep(2, 2, 3, 1.0, &eps_list, 500, 11, Execution::Parallel).map_err(|e| e.to_string())?);
    let (h, s, o) = (measured_column(&hard), measured_column(&soft), measured_column(&one));
    within(Duration::from_secs(60), start)?;
    if !non_increasing(&h) || !non_increasing(&s) || !non_increasing(&o) {
        return Err(format!("hardmax {h:?}; softrelu {s:?}; onelayer {o:?}"));
    }
    Ok(format!(
        "hardmax {:.1e}->{:.1e}, softrelu {:.1e}->{:.1e}, onelayer {:.2e}->{:.2e}",
        h[0],
        h[h.len() - 1],
        s[0],
        s[s.len() - 1],
        o[0],
        o[o.len() - 1]
    ))
}

fn main() {
    let mut emitted: Emitted = Vec::new();
    let mut failed = 0;
    let mut report = |id: usize, title: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("PASS [{id}] {title}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{id}] {title}: {detail}");
            }
        }
    };
    report(1, "hardmax temperature", c1_hardmax());
    report(2, "soft-ReLU gate", c2_soft_relu());
    report(3, "linear-map head", c3_linear_map());
    report(4, "entry-wise multiplication layer", c4_entrywise());
    report(5, "one-layer compile matrix", c5_one_layer(&mut emitted));
    report(6, "multi-layer compile", c6_multi_layer(&mut emitted));
    report(7, "exact ReLU identities", c7_exact_identities());
    report(8, "toolkit bounds", c8_toolkit(&mut emitted));
    report(9, "resource-report exactness", c9_resources(&emitted));
    report(10, "1-D universal approximation demo", c10_uap());
    report(11, "monotonicity sweeps", c11_sweeps());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
