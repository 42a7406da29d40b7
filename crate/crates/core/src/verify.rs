//! Sampled verification of compiled networks and λ-versus-error sweeps.

use std::time::Instant;

use serde::Serialize;

use crate::attn::{transformer_forward, TransformerNetwork};
use crate::compiler::{compile_one_layer_matrix, matrix_to_vec, vec_to_matrix, OneLayerSpec};
use crate::error::{Error, Result};
use crate::gadgets::soft_relu;
use crate::numerics::{softmax_in_place, DenseMatrix};
use crate::par::{self, Execution};
use crate::relu::ReluNetwork;
use crate::sampling::Sampler;

pub const DEFAULT_SAMPLES: usize = 500;
pub const DEFAULT_SEED: u64 = 42;

/// `samples` inputs uniform on `[−c_x, c_x]^{d×n}`.
pub fn sample_inputs(d: usize, n: usize, c_x: f64, samples: usize, seed: u64) -> Vec<DenseMatrix> {
    Sampler::new(seed).matrices(samples, d, n, c_x)
}

/// `f(vec(X))` laid out as a `rows × n` matrix, column-major with zero padding.
pub fn relu_target(net: &ReluNetwork, x: &DenseMatrix, rows: usize) -> Result<DenseMatrix> {
    let y = net.forward(&matrix_to_vec(x))?;
    Ok(vec_to_matrix(&y, rows, x.cols()))
}

/// Largest max-norm deviation of `net` from `oracle` over `inputs`. NaN outputs yield NaN.
pub fn max_error<F>(net: &TransformerNetwork, oracle: &F, inputs: &[DenseMatrix], exec: Execution) -> Result<f64>
where
    F: Fn(&DenseMatrix) -> Result<DenseMatrix> + Sync,
{
    let per_sample = par::map(inputs.len(), exec, |s| -> Result<f64> {
        let got = transformer_forward(net, &inputs[s])?;
        let want = oracle(&inputs[s])?;
        if got.shape() != want.shape() {
            return Err(Error::Shape {
                op: "max_error",
                left: want.shape(),
                right: got.shape(),
            });
        }
        let mut worst = 0.0f64;
        for (a, b) in got.data().iter().zip(want.data()) {
            let e = (a - b).abs();
            if e.is_nan() {
                return Ok(f64::NAN);
            }
            worst = worst.max(e);
        }
        Ok(worst)
    });
    let mut worst = 0.0f64;
    for e in per_sample {
        let e = e?;
        if e.is_nan() {
            return Ok(f64::NAN);
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Checks that `attn` can stand in for `relu` on the attention layout.
pub fn check_compatible(relu: &ReluNetwork, attn: &TransformerNetwork) -> Result<()> {
    let (d, n) = attn.layout();
    if relu.in_dim() != d * n {
        return Err(Error::precondition(
            "verify",
            format!("ReLU input dimension {} does not match the attention layout {d}x{n}", relu.in_dim()),
        ));
    }
    if attn.output_rows() * n < relu.out_dim() {
        return Err(Error::precondition(
            "verify",
            format!(
                "attention output {}x{n} cannot hold the ReLU output of length {}",
                attn.output_rows(),
                relu.out_dim()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain {
    #[serde(rename = "C_X")]
    pub c_x: f64,
    pub layout: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub samples: usize,
    pub seed: u64,
    pub domain: Domain,
    pub measured_max_error: f64,
    pub target_eps: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

/// Measures `attn` against `relu` on uniform samples. `pass` is false for NaN errors.
pub fn verify_networks(
    relu: &ReluNetwork,
    attn: &TransformerNetwork,
    samples: usize,
    seed: u64,
    c_x: f64,
    eps: f64,
    exec: Execution,
) -> Result<VerificationReport> {
    if samples == 0 {
        return Err(Error::precondition("verify", "sample count must be positive"));
    }
    if !(c_x > 0.0) || !c_x.is_finite() {
        return Err(Error::precondition("verify", format!("C_X must be positive, got {c_x}")));
    }
    check_compatible(relu, attn)?;
    let start = Instant::now();
    let (d, n) = attn.layout();
    let rows = attn.output_rows();
    let inputs = sample_inputs(d, n, c_x, samples, seed);
    let measured = max_error(attn, &|x: &DenseMatrix| relu_target(relu, x, rows), &inputs, exec)?;
    Ok(VerificationReport {
        samples,
        seed,
        domain: Domain { c_x, layout: [d, n] },
        measured_max_error: measured,
        target_eps: eps,
        pass: measured <= eps,
        wall_time_ms: Some(start.elapsed().as_secs_f64() * 1e3),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub eps_target: f64,
    pub measured_error: f64,
    pub n: usize,
    pub gap_or_cs: f64,
    pub seed: u64,
}

pub const SWEEP_HEADER: &str = "lambda,eps_target,measured_error,n,gap_or_Cs,seed";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER.split(',')).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.lambda.to_string(),
            r.eps_target.to_string(),
            r.measured_error.to_string(),
            r.n.to_string(),
            r.gap_or_cs.to_string(),
            r.seed.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}

fn check_grid(context: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::precondition(context, "empty parameter range"));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::precondition(context, "range values must be positive and finite"));
    }
    Ok(())
}

/// Score vectors of length `n` whose largest entry exceeds the rest by at least `gap`,
/// with the runner-up exactly `gap` below.
pub fn gapped_vectors(n: usize, gap: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Sampler::new(seed);
    (0..count)
        .map(|_| {
            let top = ((rng.unit() * n as f64) as usize).min(n - 1);
            let base = rng.symmetric(1.0);
            (0..n)
                .map(|j| match j {
                    _ if j == top => base + gap,
                    _ if j == (top + 1) % n => base,
                    _ => base - rng.unit() * 2.0,
                })
                .collect()
        })
        .collect()
}

/// `‖softmax(λ v) − e_argmax‖_∞`.
pub fn hardmax_error(v: &[f64], lambda: f64) -> f64 {
    let arg = v
        .iter()
        .enumerate()
        .fold(0, |best, (j, x)| if *x > v[best] { j } else { best });
    let mut p: Vec<f64> = v.iter().map(|x| lambda * x).collect();
    softmax_in_place(&mut p);
    p.iter()
        .enumerate()
        .map(|(j, q)| if j == arg { (1.0 - q).abs() } else { q.abs() })
        .fold(0.0, f64::max)
}

pub fn hardmax_sweep(n: usize, gap: f64, lambdas: &[f64], samples: usize, seed: u64) -> Result<Vec<SweepRow>> {
    check_grid("sweep hardmax", lambdas)?;
    if n < 2 || !(gap > 0.0) || samples == 0 {
        return Err(Error::precondition("sweep hardmax", "need n >= 2, gap > 0 and at least one sample"));
    }
    let vectors = gapped_vectors(n, gap, samples, seed);
    Ok(lambdas
        .iter()
        .map(|&lambda| SweepRow {
            lambda,
            eps_target: (n - 1) as f64 * (-lambda * gap).exp(),
            measured_error: par::max(vectors.len(), Execution::Parallel, |s| hardmax_error(&vectors[s], lambda)),
            n,
            gap_or_cs: gap,
            seed,
        })
        .collect())
}

/// Gate tolerance whose used temperature `2 ln(C_s n/ε)/ε` equals `lambda`.
pub fn eps_relu_for_lambda(c_s: f64, n: usize, lambda: f64) -> f64 {
    let cap = c_s * n as f64;
    let temp = |e: f64| 2.0 * (cap / e).ln() / e;
    let (mut lo, mut hi) = (cap * 1e-300, cap);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if temp(mid) > lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

pub fn softrelu_sweep(c_s: f64, n: usize, lambdas: &[f64], grid: usize, seed: u64) -> Result<Vec<SweepRow>> {
    check_grid("sweep softrelu", lambdas)?;
    if !(c_s > 0.0) || n == 0 || grid < 2 {
        return Err(Error::precondition("sweep softrelu", "need C_s > 0, n >= 1 and a grid of at least 2 points"));
    }
    let points: Vec<f64> = (0..grid).map(|g| -c_s + 2.0 * c_s * g as f64 / (grid - 1) as f64).collect();
    Ok(lambdas
        .iter()
        .map(|&lambda| SweepRow {
            lambda,
            eps_target: eps_relu_for_lambda(c_s, n, lambda),
            measured_error: par::max(points.len(), Execution::Parallel, |g| {
                (points[g].max(0.0) - soft_relu(points[g], lambda, n)).abs()
            }),
            n,
            gap_or_cs: c_s,
            seed,
        })
        .collect())
}

/// Compiles one random one-layer spec at each tolerance and measures it on fixed samples.
#[allow(clippy::too_many_arguments)]
pub fn onelayer_sweep(
    d: usize,
    n: usize,
    units: usize,
    c_x: f64,
    eps_list: &[f64],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    check_grid("sweep onelayer", eps_list)?;
    if samples == 0 {
        return Err(Error::precondition("sweep onelayer", "sample count must be positive"));
    }
    let mut rng = Sampler::new(seed);
    let spec = OneLayerSpec::random(d, n, d, units, 1.0, &mut rng);
    let inputs = sample_inputs(d, n, c_x, samples, seed.wrapping_add(1));
    let oracle = |x: &DenseMatrix| spec.evaluate(x);
    eps_list
        .iter()
        .map(|&eps| {
            let block = compile_one_layer_matrix(&spec, c_x, eps)?;
            let measured = max_error(&block.network, &oracle, &inputs, exec)?;
            Ok(SweepRow {
                lambda: block.summary.lambda.iter().copied().fold(0.0, f64::max),
                eps_target: eps,
                measured_error: measured,
                n,
                gap_or_cs: block.summary.c_s,
                seed,
            })
        })
        .collect()
}
