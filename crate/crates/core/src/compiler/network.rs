use serde::Serialize;
use serde_json::{json, Value};

use super::block::{compile_block, fuse_layers, gate_temperature, theory_cs, BlockSummary, CompiledBlock, LAMBDA_CS_LIMIT};
use super::budget::{budget_multilayer, ErrorBudget};
use super::spec::{OneLayerSpec, Unit};
use crate::attn::{resource_report, AttnLayer, ResourceReport, TransformerNetwork};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::par::Execution;
use crate::relu::ReluNetwork;
use crate::verify;

/// How a ReLU network is cut into one-layer blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    /// One block per affine map, `K = 3 K_f`. The leading affine map is passed
    /// through as `z = ReLU(z) − ReLU(−z)`.
    #[default]
    PerLayer,
    /// The leading affine map is folded into the first hidden layer, `K = 3 max(1, K_f − 1)`.
    Sandwich,
}

/// How the tolerance is split across blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetPolicy {
    /// `ε_k = ε/(K_f (W_f B)^{K_f})` with domain bounds `C_k = W_f B C_{k−1} + max|b_k|`.
    #[default]
    Theory,
    /// Per-block tolerances weighted by the downstream Lipschitz bound, with
    /// coordinate-wise interval bounds for the domain and pre-activations.
    Sensitivity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileOptions {
    pub decomposition: Decomposition,
    pub policy: BudgetPolicy,
    pub lambda_cs_limit: f64,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            decomposition: Decomposition::PerLayer,
            policy: BudgetPolicy::Theory,
            lambda_cs_limit: LAMBDA_CS_LIMIT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub network: TransformerNetwork,
    pub budget: ErrorBudget,
    pub report: ResourceReport,
    pub blocks: Vec<BlockSummary>,
    /// Length of `f(vec(X))`; the output matrix holds it column-major with zero padding.
    pub out_len: usize,
    pub options: CompileOptions,
}

impl Compiled {
    /// Rows of the emitted output matrix.
    pub fn out_rows(&self) -> usize {
        self.network.output_rows()
    }

    /// Theory inverse temperatures, one per attention layer.
    pub fn theory_lambda(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.lambda).collect()
    }
}

/// One block: units per output coordinate over an input vector of `in_len` entries.
struct Stage {
    in_len: usize,
    units: Vec<Vec<Unit>>,
}

impl Stage {
    fn passthrough(a: &DenseMatrix, b: &[f64]) -> Self {
        let units = (0..a.rows())
            .map(|o| {
                let row: Vec<(usize, f64)> = nonzero(a.row(o)).collect();
                vec![
                    Unit {
                        sign: 1.0,
                        weights: row.clone(),
                        bias: b[o],
                    },
                    Unit {
                        sign: -1.0,
                        weights: row.into_iter().map(|(l, v)| (l, -v)).collect(),
                        bias: -b[o],
                    },
                ]
            })
            .collect();
        Self { in_len: a.cols(), units }
    }

    /// `z ↦ A ReLU(z) + b` written as signed units.
    fn relu_affine(a: &DenseMatrix, b: &[f64]) -> Self {
        let units = (0..a.rows())
            .map(|o| {
                let mut list: Vec<Unit> = nonzero(a.row(o))
                    .map(|(l, v)| Unit {
                        sign: v.signum(),
                        weights: vec![(l, v.abs())],
                        bias: 0.0,
                    })
                    .collect();
                list.extend(bias_unit(b[o]));
                list
            })
            .collect();
        Self { in_len: a.cols(), units }
    }

    /// `x ↦ A2 ReLU(A1 x + b1) + b2` written as signed units over `x`.
    fn sandwich(a1: &DenseMatrix, b1: &[f64], a2: &DenseMatrix, b2: &[f64]) -> Self {
        let units = (0..a2.rows())
            .map(|o| {
                let mut list: Vec<Unit> = nonzero(a2.row(o))
                    .map(|(l, c)| Unit {
                        sign: c.signum(),
                        weights: nonzero(a1.row(l)).map(|(m, v)| (m, c.abs() * v)).collect(),
                        bias: c.abs() * b1[l],
                    })
                    .collect();
                list.extend(bias_unit(b2[o]));
                list
            })
            .collect();
        Self { in_len: a1.cols(), units }
    }

    fn out_len(&self) -> usize {
        self.units.len()
    }

    /// Interval image of the box `|v_l| ≤ bounds[l]`.
    fn propagate(&self, bounds: &[f64]) -> Vec<f64> {
        self.units
            .iter()
            .map(|list| {
                let (mut lo, mut hi) = (0.0, 0.0);
                for u in list {
                    let spread: f64 = u.weights.iter().map(|&(l, w)| w.abs() * bounds[l]).sum();
                    let (plo, phi) = ((u.bias - spread).max(0.0), (u.bias + spread).max(0.0));
                    if u.sign > 0.0 {
                        lo += plo;
                        hi += phi;
                    } else {
                        lo -= phi;
                        hi -= plo;
                    }
                }
                f64::max(-lo, hi)
            })
            .collect()
    }

    /// Row sums of `|J|`, the entrywise Lipschitz bound of the stage, applied to `v`.
    fn abs_jacobian_apply(&self, v: &[f64]) -> Vec<f64> {
        self.units
            .iter()
            .map(|list| list.iter().flat_map(|u| &u.weights).map(|&(l, w)| w.abs() * v[l]).sum())
            .collect()
    }

    fn preactivation_bound(&self, bounds: &[f64], eta: f64) -> f64 {
        self.units
            .iter()
            .flatten()
            .map(|u| u.bias.abs() + u.weights.iter().map(|&(l, w)| w.abs() * (bounds[l] + eta)).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn nonzero(row: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    row.iter().copied().enumerate().filter(|(_, v)| *v != 0.0)
}

fn bias_unit(b: f64) -> Option<Unit> {
    (b != 0.0).then(|| Unit {
        sign: b.signum(),
        weights: Vec::new(),
        bias: b.abs(),
    })
}

fn stages(net: &ReluNetwork, mode: Decomposition) -> Vec<Stage> {
    let layers = net.layers();
    let mut out = Vec::with_capacity(layers.len());
    match mode {
        Decomposition::PerLayer => {
            out.push(Stage::passthrough(layers[0].a(), layers[0].b()));
            out.extend(layers[1..].iter().map(|l| Stage::relu_affine(l.a(), l.b())));
        }
        Decomposition::Sandwich if layers.len() == 1 => {
            out.push(Stage::passthrough(layers[0].a(), layers[0].b()));
        }
        Decomposition::Sandwich => {
            out.push(Stage::sandwich(layers[0].a(), layers[0].b(), layers[1].a(), layers[1].b()));
            out.extend(layers[2..].iter().map(|l| Stage::relu_affine(l.a(), l.b())));
        }
    }
    out
}

/// Compiles with the default options (per-layer blocks, theory budget).
pub fn compile_network(net: &ReluNetwork, layout: (usize, usize), c_x: f64, eps: f64) -> Result<Compiled> {
    compile_network_with(net, layout, c_x, eps, &CompileOptions::default())
}

pub fn compile_network_with(
    net: &ReluNetwork,
    layout: (usize, usize),
    c_x: f64,
    eps: f64,
    options: &CompileOptions,
) -> Result<Compiled> {
    let (d, n) = layout;
    if d == 0 || n == 0 || net.in_dim() != d * n {
        return Err(Error::precondition(
            "compile_network",
            format!("network input dimension {} does not equal d·n = {d}·{n}", net.in_dim()),
        ));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::precondition("compile_network", format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(c_x >= 1.0) || !c_x.is_finite() {
        return Err(Error::precondition("compile_network", format!("C_X must be a finite value >= 1, got {c_x}")));
    }
    let stats = net.stats();
    let stages = stages(net, options.decomposition);
    let m = stages.len();

    let theory = budget_multilayer(eps, stats.depth_kf, stats.width_wf, stats.weight_bound_b, c_x)?;
    let growth = stats.width_wf as f64 * stats.weight_bound_b;
    let overflow_note = format!(
        "(W_f B)^K_f = ({}·{})^{} = {:.6e}",
        stats.width_wf,
        stats.weight_bound_b,
        stats.depth_kf,
        growth.powi(stats.depth_kf as i32)
    );

    // Per-stage tolerance, input bound and pre-activation bound.
    let mut plan = Vec::with_capacity(m);
    match options.policy {
        BudgetPolicy::Theory => {
            let eps_k = theory.eps_k[0];
            let mut c_layer = Vec::with_capacity(net.depth());
            let mut c_prev = c_x;
            for l in net.layers() {
                c_prev = growth * c_prev + l.b().iter().fold(0.0, |a, b| f64::max(a, b.abs()));
                c_layer.push(c_prev);
            }
            let mut eta = 0.0;
            for (s, stage) in stages.iter().enumerate() {
                let c_in = if s == 0 { c_x } else { c_layer[layer_index(s, options.decomposition) - 1] + eta };
                let spec = OneLayerSpec::from_units(&stage.units, stage.in_len, n, false)?;
                let c_s = theory_cs(&spec, c_in).max(spec.tight_preactivation_bound(c_in));
                plan.push((spec, eps_k, c_in, c_s));
                eta = growth.max(1.0) * eta + eps_k;
            }
        }
        BudgetPolicy::Sensitivity => {
            let mut bounds = vec![c_x; stages[0].in_len];
            let mut eta = 0.0;
            for (b, stage) in stages.iter().enumerate() {
                let mut v = vec![1.0; stage.out_len()];
                for later in &stages[b + 1..] {
                    v = later.abs_jacobian_apply(&v);
                }
                let s_b = v.iter().copied().fold(0.0, f64::max);
                let eps_b = eps / (m as f64 * s_b.max(1.0));
                let c_in = bounds.iter().copied().fold(0.0, f64::max) + eta;
                let spec = OneLayerSpec::from_units(&stage.units, stage.in_len, n, false)?;
                let c_s = stage.preactivation_bound(&bounds, eta);
                plan.push((spec, eps_b, c_in.max(f64::MIN_POSITIVE), c_s));
                let lip = stage.abs_jacobian_apply(&vec![1.0; stage.in_len]).into_iter().fold(0.0, f64::max);
                eta = lip * eta + eps_b;
                bounds = stage.propagate(&bounds);
            }
        }
    }

    let annotate = |e: Error| match e {
        Error::BudgetOverflow(msg) => Error::BudgetOverflow(format!("{msg}; network budget {overflow_note}")),
        other => other,
    };
    for (spec, eps_b, _, c_s) in &plan {
        gate_temperature(spec, *c_s, *eps_b, options.lambda_cs_limit).map_err(annotate)?;
    }
    let mut blocks: Vec<CompiledBlock> = Vec::with_capacity(m);
    for (spec, eps_b, c_in, c_s) in &plan {
        blocks.push(compile_block(spec, *c_in, *c_s, *eps_b, options.lambda_cs_limit).map_err(annotate)?);
    }
    let network = fuse_layers(&blocks)?;
    let report = resource_report(&network);
    let budget = ErrorBudget {
        eps,
        eps1: blocks.iter().map(|b| b.budget.eps1).fold(f64::INFINITY, f64::min),
        eps2: blocks.iter().map(|b| b.budget.eps2).fold(f64::INFINITY, f64::min),
        eps_relu: blocks.iter().map(|b| b.budget.eps_relu).fold(f64::INFINITY, f64::min),
        eps_k: plan.iter().map(|p| p.1).collect(),
        c_s: plan.iter().map(|p| p.3).fold(0.0, f64::max),
        c_k: plan.iter().map(|p| p.2).collect(),
    };
    Ok(Compiled {
        network,
        budget,
        report,
        blocks: blocks.into_iter().map(|b| b.summary).collect(),
        out_len: net.out_dim(),
        options: *options,
    })
}

fn layer_index(stage: usize, mode: Decomposition) -> usize {
    match mode {
        Decomposition::PerLayer => stage,
        Decomposition::Sandwich => stage + 1,
    }
}

/// Halves each layer's λ in turn while the measured error on a validation
/// sample stays within `eps`; returns the input unchanged if it already misses `eps`.
pub fn tune_lambda<F>(
    net: &TransformerNetwork,
    oracle: F,
    c_x: f64,
    eps: f64,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<TransformerNetwork>
where
    F: Fn(&DenseMatrix) -> Result<DenseMatrix> + Sync,
{
    let (d, n) = net.layout();
    let inputs = verify::sample_inputs(d, n, c_x, samples.max(1), seed);
    let meets = |candidate: &TransformerNetwork| -> Result<bool> {
        let err = verify::max_error(candidate, &oracle, &inputs, exec)?;
        Ok(err.is_finite() && err <= eps)
    };
    if !meets(net)? {
        return Ok(net.clone());
    }
    let mut layers: Vec<AttnLayer> = net.layers().to_vec();
    for idx in 0..layers.len() {
        for _ in 0..60 {
            let mut trial = layers.clone();
            trial[idx] = layers[idx].with_lambda(layers[idx].lambda() / 2.0)?;
            let candidate = net.with_layers(trial.clone())?;
            if !meets(&candidate)? {
                break;
            }
            layers = trial;
        }
    }
    net.with_layers(layers)
}

/// Certificate JSON for a compiled network and its measured error.
pub fn certificate(compiled: &Compiled, measured_max_error: f64, samples: usize, seed: u64) -> Value {
    let b = &compiled.budget;
    json!({
        "eps": b.eps,
        "budget": {
            "eps1": b.eps1,
            "eps2": b.eps2,
            "eps_relu": b.eps_relu,
            "eps_k": b.eps_k,
        },
        "C_s": b.c_s,
        "C_k": b.c_k,
        "theory_lambda": compiled.theory_lambda(),
        "measured_max_error": measured_max_error,
        "samples": samples,
        "seed": seed,
        "decomposition": compiled.options.decomposition,
        "policy": compiled.options.policy,
        "blocks": compiled.blocks,
    })
}
