//! Attention primitives with explicit weights and certified tolerances.
//!
//! Every gadget works on the augmented input `[[X, 0], [I_n, 0], [0, 1]]`
//! whose last `n + 1` rows are the positional block and whose last column is
//! the zero reference token. Temperatures are the closed-form lower bounds
//! times a safety factor of 2; certificates keep both values.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::attn::{AttnHead, AttnLayer};
use crate::error::{Error, Result};
use crate::numerics::{fro_norm, matmul, max_norm, stable_sigmoid, DenseMatrix};

pub const SAFETY: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GadgetCertificate {
    pub target_eps: f64,
    pub lambda_used: f64,
    pub lambda_base: f64,
    pub suppression_c: Option<f64>,
    #[serde(rename = "C_V")]
    pub c_v: f64,
    #[serde(rename = "C_KQ")]
    pub c_kq: f64,
    pub constants: BTreeMap<String, f64>,
}

fn check_eps(context: &str, eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::precondition(context, format!("eps must lie in (0, 1), got {eps}")))
    }
}

fn layer_norms(layer: &AttnLayer) -> (f64, f64) {
    layer.heads().iter().fold((0.0f64, 0.0f64), |(v, kq), h| {
        (v.max(fro_norm(h.w_v())), kq.max(fro_norm(&h.w_kq())))
    })
}

/// `max(0, ln(n−1) − ln eps) / gap`.
pub fn hardmax_base_temperature(n: usize, gap: f64, eps: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::precondition("hardmax_temperature", format!("n must be >= 2, got {n}")));
    }
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(Error::precondition(
            "hardmax_temperature",
            format!("gap must be positive (unique maximum required), got {gap}"),
        ));
    }
    check_eps("hardmax_temperature", eps)?;
    Ok((((n - 1) as f64).ln() - eps.ln()).max(0.0) / gap)
}

pub fn hardmax_temperature(n: usize, gap: f64, eps: f64) -> Result<f64> {
    Ok(SAFETY * hardmax_base_temperature(n, gap, eps)?)
}

/// Selector `(n+1) × d_in` reading rows `offset..offset + n + 1`.
pub fn position_selector(d_in: usize, offset: usize, n: usize) -> DenseMatrix {
    DenseMatrix::identity(n + 1).embed(n + 1, d_in, 0, offset)
}

/// Head copying the positional block at input rows `in_off..` to output rows `out_off..`.
pub fn identity_head(d_in: usize, in_off: usize, d_out: usize, out_off: usize, n: usize) -> AttnHead {
    let s = position_selector(d_in, in_off, n);
    let v = DenseMatrix::identity(n + 1).embed(d_out, d_in, out_off, in_off);
    AttnHead::new(s.clone(), s, v).expect("selector shapes agree")
}

/// Identity-preserving head for a `d_in`-row augmented input; returns the head and its λ.
pub fn build_identity_head(d_in: usize, n: usize, eps: f64) -> Result<(AttnHead, f64)> {
    if d_in < n + 1 {
        return Err(Error::precondition(
            "build_identity_head",
            format!("input has {d_in} rows, fewer than the positional block size {}", n + 1),
        ));
    }
    let off = d_in - n - 1;
    Ok((identity_head(d_in, off, d_in, off, n), hardmax_temperature(n + 1, 1.0, eps)?))
}

/// Linear-map head weights for a data block of `a.cols()` rows and `b` of size `n × n`.
///
/// Column `q` of the output equals `A X B[:, q]` exactly at λ = 1; the
/// reference column is suppressed by the query temperature `t`.
pub fn linear_map_head(a: &DenseMatrix, b: &DenseMatrix, t: f64) -> Result<AttnHead> {
    let d = a.cols();
    let n = b.rows();
    if b.cols() != n {
        return Err(Error::Shape {
            op: "linear_map_head B",
            left: (n, n),
            right: b.shape(),
        });
    }
    let s: Vec<f64> = (0..n).map(|q| (0..n).map(|p| b.get(p, q)).sum()).collect();
    let m = s.iter().copied().fold(0.0, f64::max);
    let width = d + n + 1;
    let w_v = a.scale(3.0 * m).embed(a.rows(), width, 0, 0);
    let mut w_k = DenseMatrix::zeros(n, width);
    let mut w_q = DenseMatrix::zeros(n, width);
    for q in 0..n {
        for p in 0..n {
            w_k.set(q, d + p, b.get(p, q).ln());
        }
        w_k.set(q, d + n, (3.0 * m - s[q]).ln());
        w_q.set(q, d + q, 1.0);
        w_q.set(q, d + n, t);
    }
    AttnHead::new(w_k, w_q, w_v)
}

/// Query temperature for the reference column: base value and used value.
pub fn linear_map_temperature(n: usize, m: f64, row_abs_sum: f64, c_x: f64, eps: f64) -> (f64, f64) {
    if row_abs_sum == 0.0 {
        return (0.0, 0.0);
    }
    let delta = eps / (3.0 * m * n as f64 * row_abs_sum * c_x);
    let base = (-delta.ln()).max(0.0) / (n as f64 * std::f64::consts::LN_2);
    (base, SAFETY * base)
}

pub fn build_linear_map_head(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c_x: f64,
    eps: f64,
) -> Result<(AttnLayer, GadgetCertificate)> {
    check_eps("build_linear_map_head", eps)?;
    if !(c_x >= 1.0) {
        return Err(Error::precondition("build_linear_map_head", format!("C_X must be >= 1, got {c_x}")));
    }
    let n = b.rows();
    if b.cols() != n {
        return Err(Error::Shape {
            op: "build_linear_map_head B",
            left: (n, n),
            right: b.shape(),
        });
    }
    if let Some(v) = b.data().iter().find(|v| **v < 1.0) {
        return Err(Error::precondition(
            "build_linear_map_head",
            format!("entries of B must be >= 1 (found {v}); use split_general_B for general B"),
        ));
    }
    let m = (0..n).map(|q| (0..n).map(|p| b.get(p, q)).sum::<f64>()).fold(0.0, f64::max);
    let a_max = max_norm(a);
    let row_abs_sum = a_max * a.cols() as f64;
    let (t_base, t) = linear_map_temperature(n, m, row_abs_sum, c_x, eps);
    let head = linear_map_head(a, b, t)?;
    let wk_f = fro_norm(head.w_k());
    let wq_f = fro_norm(head.w_q());
    let layer = AttnLayer::new(vec![head], 1.0)?;
    let (c_v, c_kq) = layer_norms(&layer);
    let b_f = fro_norm(b);
    let log_arg = n as f64 * c_x * a_max * b_f / eps;
    let mut constants = BTreeMap::from([
        ("T".to_owned(), t),
        ("T_base".to_owned(), t_base),
        ("M".to_owned(), m),
        ("kq_bound".to_owned(), wk_f * wq_f),
    ]);
    if log_arg > 1.0 {
        constants.insert(
            "kq_constant".to_owned(),
            c_kq / (b_f * (n as f64 * log_arg.ln()).sqrt()),
        );
    }
    Ok((
        layer,
        GadgetCertificate {
            target_eps: eps,
            lambda_used: 1.0,
            lambda_base: 1.0,
            suppression_c: None,
            c_v,
            c_kq,
            constants,
        },
    ))
}

/// `B = B1 − B2` with every entry of `B1` and `B2` at least 2.
pub fn split_general_b(b: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let min = b.data().iter().copied().fold(f64::INFINITY, f64::min);
    let c = (2.0f64).max(2.0 - min);
    let shift = DenseMatrix::filled(b.rows(), b.cols(), c);
    (b.add(&shift).expect("same shape"), shift)
}

/// Two-head layer computing `A X B` for arbitrary `B`.
pub fn build_general_linear_map_layer(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c_x: f64,
    eps: f64,
) -> Result<(AttnLayer, GadgetCertificate)> {
    let (b1, b2) = split_general_b(b);
    let (l1, c1) = build_linear_map_head(a, &b1, c_x, eps / 2.0)?;
    let (l2, c2) = build_linear_map_head(&a.scale(-1.0), &b2, c_x, eps / 2.0)?;
    let heads = l1.heads().iter().chain(l2.heads()).cloned().collect();
    let layer = AttnLayer::new(heads, 1.0)?;
    let (c_v, c_kq) = layer_norms(&layer);
    let mut constants = BTreeMap::new();
    constants.insert("T1".to_owned(), c1.constants["T"]);
    constants.insert("T2".to_owned(), c2.constants["T"]);
    Ok((
        layer,
        GadgetCertificate {
            target_eps: eps,
            lambda_used: 1.0,
            lambda_base: 1.0,
            suppression_c: None,
            c_v,
            c_kq,
            constants,
        },
    ))
}

/// Routing matrix whose column `i` is `e_i` and every other column is the reference `e_n`.
pub fn routing_matrix(n: usize, i: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n + 1, n + 1, |p, q| {
        let target = if q == i { i } else { n };
        f64::from(u8::from(p == target))
    })
}

/// Layer mapping the augmented input to `[[diag(v_1)x_1 … diag(v_n)x_n, 0], [I_{n+1}]]`.
pub fn build_entrywise_mult_layer(v_list: &[Vec<f64>], c_x: f64, eps: f64) -> Result<(AttnLayer, GadgetCertificate)> {
    check_eps("build_entrywise_mult_layer", eps)?;
    let n = v_list.len();
    let d = v_list.first().map_or(0, Vec::len);
    if n == 0 || d == 0 || v_list.iter().any(|v| v.len() != d) {
        return Err(Error::precondition(
            "build_entrywise_mult_layer",
            "expected n >= 1 vectors of a common positive dimension",
        ));
    }
    if !(c_x > 0.0) {
        return Err(Error::precondition("build_entrywise_mult_layer", "C_X must be positive"));
    }
    let width = d + n + 1;
    let s = position_selector(width, d, n);
    let b_v = v_list.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut heads = Vec::with_capacity(n + 1);
    for (i, v) in v_list.iter().enumerate() {
        let w_q = matmul(&routing_matrix(n, i), &s)?;
        let w_v = DenseMatrix::from_fn(width, width, |r, c| if r == c && r < d { v[r] } else { 0.0 });
        heads.push(AttnHead::new(s.clone(), w_q, w_v)?);
    }
    heads.push(identity_head(width, d, width, d, n));
    let inner = eps / (n as f64 * c_x * b_v + 1.0);
    let base = hardmax_base_temperature(n + 1, 1.0, inner)?;
    let layer = AttnLayer::new(heads, SAFETY * base)?;
    let (c_v, c_kq) = layer_norms(&layer);
    Ok((
        layer,
        GadgetCertificate {
            target_eps: eps,
            lambda_used: SAFETY * base,
            lambda_base: base,
            suppression_c: None,
            c_v,
            c_kq,
            constants: BTreeMap::from([("B_V".to_owned(), b_v)]),
        },
    ))
}

/// `s · σ(λ s + ln n)`.
pub fn soft_relu(s: f64, lambda: f64, n: usize) -> f64 {
    s * stable_sigmoid(lambda * s + (n as f64).ln())
}

/// `ln(C_s n / ε_relu) / ε_relu`.
pub fn soft_relu_base_temperature(c_s: f64, n: usize, eps_relu: f64) -> Result<f64> {
    if !(c_s > 0.0) || !c_s.is_finite() {
        return Err(Error::precondition("soft_relu_temperature", format!("C_s must be positive, got {c_s}")));
    }
    check_eps("soft_relu_temperature", eps_relu)?;
    Ok((c_s * n as f64 / eps_relu).ln().max(0.0) / eps_relu)
}

pub fn soft_relu_temperature(c_s: f64, n: usize, eps_relu: f64) -> Result<f64> {
    Ok(SAFETY * soft_relu_base_temperature(c_s, n, eps_relu)?)
}
