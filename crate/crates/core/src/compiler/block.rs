//! The three-layer translation of a one-layer network: zooming, accumulation
//! and soft-ReLU gating, stacked over output rows with selector/organizer
//! embeddings.

use serde::Serialize;

use super::budget::{budget_one_layer, ErrorBudget};
use super::spec::OneLayerSpec;
use crate::attn::{AttnHead, AttnLayer, TransformerNetwork};
use crate::error::{Error, Result};
use crate::gadgets::{
    hardmax_temperature, identity_head, linear_map_head, linear_map_temperature, position_selector,
    routing_matrix, soft_relu_temperature, SAFETY,
};
use crate::numerics::{matmul, DenseMatrix};

/// Largest admissible `λ₃ · C_s` before score gaps degenerate in double precision.
pub const LAMBDA_CS_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSummary {
    pub d: usize,
    pub n: usize,
    pub out_rows: usize,
    pub units: usize,
    pub token_dim: usize,
    pub eps: f64,
    #[serde(rename = "C_in")]
    pub c_in: f64,
    #[serde(rename = "C_s")]
    pub c_s: f64,
    pub w0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps_relu: f64,
    pub lambda: [f64; 3],
    pub suppression_c: f64,
    pub linear_map_t: f64,
    pub heads: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct CompiledBlock {
    pub network: TransformerNetwork,
    pub budget: ErrorBudget,
    pub summary: BlockSummary,
    /// Row offset of the first positional block inside the layer-3 input.
    pub pos_offset_l3: usize,
}

/// Block budget and gate temperature `λ₃`; refuses when `λ₃ · C_s > limit`.
pub(crate) fn gate_temperature(spec: &OneLayerSpec, c_s: f64, eps: f64, limit: f64) -> Result<(ErrorBudget, f64)> {
    let mut budget = budget_one_layer(eps, spec.token_dim(), spec.n(), spec.units())?;
    budget.c_s = if c_s > 0.0 { c_s } else { 1e-12 };
    let c_s = budget.c_s;
    let lambda3 = soft_relu_temperature(c_s, spec.n(), budget.eps_relu)?;
    if !(lambda3 * c_s <= limit) {
        return Err(Error::BudgetOverflow(format!(
            "gate temperature λ₃ = {lambda3:.6e} with C_s = {c_s:.6e} gives λ₃·C_s = {:.6e} > {limit:.0e} \
             (block tolerance {eps:.6e})",
            lambda3 * c_s
        )));
    }
    Ok((budget, lambda3))
}

/// Compiles `spec` for inputs with entries bounded by `c_in`, pre-activations
/// bounded by `c_s`, and target tolerance `eps`. Refuses when `λ₃ · C_s > limit`.
pub fn compile_block(spec: &OneLayerSpec, c_in: f64, c_s: f64, eps: f64, limit: f64) -> Result<CompiledBlock> {
    let (d, n, units, rows) = (spec.d(), spec.n(), spec.units(), spec.out_rows());
    let t = spec.token_dim();
    if !(c_in > 0.0) || !c_in.is_finite() {
        return Err(Error::precondition("compile_block", format!("C_X must be positive, got {c_in}")));
    }
    let (mut budget, lambda3) = gate_temperature(spec, c_s, eps, limit)?;
    let c_s = budget.c_s;
    budget.c_k = vec![c_in];

    let d0 = d + n + 1;
    let d1 = t * n * units + n + 1;
    let d2 = n * units + n + 1;
    let b_v = spec.value_bound();

    // Layer 1: zooming.
    let lambda1 = hardmax_temperature(n + 1, 1.0, budget.eps1 / (n as f64 * c_in * b_v + 1.0))?;
    let s0 = position_selector(d0, d, n);
    let w_q_by_token: Vec<DenseMatrix> = (0..n)
        .map(|j| matmul(&routing_matrix(n, j), &s0))
        .collect::<Result<_>>()?;
    let mut l1 = Vec::with_capacity(rows * (n * n * units + 1));
    for r in 0..rows {
        for i in 0..n {
            for k in 0..units {
                let u = i * units + k;
                for (j, w_q) in w_q_by_token.iter().enumerate() {
                    let w = spec.weight(r, i, k, j);
                    let mut w_v = DenseMatrix::zeros(rows * d1, d0);
                    for m in 0..d {
                        w_v.set(r * d1 + u * t + m, m, w[m]);
                    }
                    if spec.has_constant() {
                        w_v.set(r * d1 + u * t + d, d + j, w[d] / n as f64);
                    }
                    l1.push(AttnHead::new(s0.clone(), w_q.clone(), w_v)?);
                }
            }
        }
        l1.push(identity_head(d0, d, rows * d1, r * d1 + t * n * units, n));
    }

    // Layer 2: accumulation through linear-map heads with B = 2·11ᵀ and halved extraction rows.
    let lambda2 = hardmax_temperature(n + 1, 1.0, budget.eps2)?;
    let m_col = 2.0 * n as f64;
    let c_acc = b_v * c_in.max(1.0) + budget.eps1;
    let (_, t_lin) = linear_map_temperature(n, m_col, 0.5 * t as f64, c_acc, budget.eps2);
    let b_acc = DenseMatrix::filled(n, n, 2.0);
    let mut l2 = Vec::with_capacity(rows * (n * units + 1));
    for r in 0..rows {
        for u in 0..n * units {
            let a_ext = DenseMatrix::from_fn(1, t * n * units, |_, c| if c / t == u { 0.5 } else { 0.0 });
            let head = linear_map_head(&a_ext, &b_acc, t_lin)?;
            let w_k = head.w_k().scale(1.0 / lambda2).embed(n, rows * d1, 0, r * d1);
            let w_q = head.w_q().embed(n, rows * d1, 0, r * d1);
            let w_v = head.w_v().embed(rows * d2, rows * d1, r * d2 + u, r * d1);
            l2.push(AttnHead::new(w_k, w_q, w_v)?);
        }
        l2.push(identity_head(rows * d1, r * d1 + t * n * units, rows * d2, r * d2 + n * units, n));
    }

    // Layer 3: soft-ReLU gates with suppression of non-target queries.
    let supp = SAFETY * ((n * n * units) as f64 * c_s / budget.eps_relu).ln().max(0.0) / lambda3;
    let mut l3 = Vec::with_capacity(rows * n * units);
    for r in 0..rows {
        let base = r * d2;
        let pos = base + n * units;
        for i in 0..n {
            for k in 0..units {
                let u = i * units + k;
                let mut w_k = DenseMatrix::zeros(2, rows * d2);
                w_k.set(0, base + u, 1.0);
                w_k.set(1, pos + n, supp);
                let mut w_q = DenseMatrix::zeros(2, rows * d2);
                w_q.set(0, pos + i, 1.0);
                for j in (0..n).filter(|j| *j != i) {
                    w_q.set(1, pos + j, 1.0);
                }
                w_q.set(1, pos + n, 1.0);
                let mut w_v = DenseMatrix::zeros(rows, rows * d2);
                w_v.set(r, base + u, spec.sign(r, i, k));
                l3.push(AttnHead::new(w_k, w_q, w_v)?);
            }
        }
    }

    let heads = [l1.len(), l2.len(), l3.len()];
    let network = TransformerNetwork::new(
        d,
        n,
        true,
        true,
        vec![
            AttnLayer::new(l1, lambda1)?,
            AttnLayer::new(l2, lambda2)?,
            AttnLayer::new(l3, lambda3)?,
        ],
    )?;
    let summary = BlockSummary {
        d,
        n,
        out_rows: rows,
        units,
        token_dim: t,
        eps,
        c_in,
        c_s,
        w0: spec.w0(),
        eps1: budget.eps1,
        eps2: budget.eps2,
        eps_relu: budget.eps_relu,
        lambda: [lambda1, lambda2, lambda3],
        suppression_c: supp,
        linear_map_t: t_lin,
        heads,
    };
    Ok(CompiledBlock {
        network,
        budget,
        summary,
        pos_offset_l3: n * units,
    })
}

/// Theory pre-activation bound `C_s = n · d · w₀ · C_X` (with `d` the token dimension).
pub fn theory_cs(spec: &OneLayerSpec, c_x: f64) -> f64 {
    spec.n() as f64 * spec.token_dim() as f64 * spec.w0() * c_x
}

/// Compiles a matrix-output one-layer spec with the theory constants.
pub fn compile_one_layer_matrix(spec: &OneLayerSpec, c_x: f64, eps: f64) -> Result<CompiledBlock> {
    compile_block(spec, c_x, theory_cs(spec, c_x).max(spec.tight_preactivation_bound(c_x)), eps, LAMBDA_CS_LIMIT)
}

/// Vector-output case: `spec` must have a single output row.
pub fn compile_one_layer_vector(spec: &OneLayerSpec, c_x: f64, eps: f64) -> Result<CompiledBlock> {
    if spec.out_rows() != 1 {
        return Err(Error::precondition(
            "compile_one_layer_vector",
            format!("expected one output row, got {}", spec.out_rows()),
        ));
    }
    compile_one_layer_matrix(spec, c_x, eps)
}

/// Joins compiled blocks into one network with a single leading `P` and trailing `T`.
///
/// Every non-final gate layer gains an identity-preserving head that writes
/// the positional block below its data rows.
pub fn fuse_layers(blocks: &[CompiledBlock]) -> Result<TransformerNetwork> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::precondition("fuse_layers", "no blocks given"))?;
    let (d, n) = first.network.layout();
    let mut layers = Vec::with_capacity(3 * blocks.len());
    for (b, block) in blocks.iter().enumerate() {
        let (bd, bn) = block.network.layout();
        if bn != n {
            return Err(Error::precondition("fuse_layers", format!("block {b} has {bn} tokens, expected {n}")));
        }
        if b > 0 && blocks[b - 1].summary.out_rows != bd {
            return Err(Error::precondition(
                "fuse_layers",
                format!(
                    "block {} emits {} rows but block {b} expects {bd}",
                    b - 1,
                    blocks[b - 1].summary.out_rows
                ),
            ));
        }
        let src = block.network.layers();
        layers.push(src[0].clone());
        layers.push(src[1].clone());
        if b + 1 == blocks.len() {
            layers.push(src[2].clone());
            continue;
        }
        let gate = &src[2];
        let rows = gate.d_out();
        let d_in = gate.d_in();
        let mut heads: Vec<AttnHead> = gate
            .heads()
            .iter()
            .map(|h| AttnHead::new(h.w_k().clone(), h.w_q().clone(), h.w_v().embed(rows + n + 1, d_in, 0, 0)))
            .collect::<Result<_>>()?;
        heads.push(identity_head(d_in, block.pos_offset_l3, rows + n + 1, rows, n));
        let lambda = gate
            .lambda()
            .max(hardmax_temperature(n + 1, 1.0, block.summary.eps_relu)?);
        layers.push(AttnLayer::new(heads, lambda)?);
    }
    TransformerNetwork::new(d, n, true, true, layers)
}
