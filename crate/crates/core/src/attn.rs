//! Attention-only Transformers `τ = T ∘ Attn^(K) ∘ ⋯ ∘ Attn^(1) ∘ P`.
//!
//! `P` pads one zero token and appends the positional block, turning a
//! `d × n` input into `[[X, 0], [I_n, 0], [0, 1]]`; `T` drops the last token.
//! Each layer carries its own inverse temperature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fro_norm, matmul, softmax_in_place, DenseMatrix};

#[derive(Debug, Clone)]
pub struct AttnHead {
    w_k: DenseMatrix,
    w_q: DenseMatrix,
    w_v: DenseMatrix,
    v_entries: Vec<(usize, usize, f64)>,
}

impl PartialEq for AttnHead {
    fn eq(&self, other: &Self) -> bool {
        self.w_k == other.w_k && self.w_q == other.w_q && self.w_v == other.w_v
    }
}

impl AttnHead {
    pub fn new(w_k: DenseMatrix, w_q: DenseMatrix, w_v: DenseMatrix) -> Result<Self> {
        if w_k.rows() != w_q.rows() || w_k.cols() != w_q.cols() {
            return Err(Error::Shape {
                op: "AttnHead (W_K vs W_Q)",
                left: w_k.shape(),
                right: w_q.shape(),
            });
        }
        if w_v.cols() != w_k.cols() {
            return Err(Error::Shape {
                op: "AttnHead (W_V vs W_K)",
                left: w_v.shape(),
                right: w_k.shape(),
            });
        }
        let mut v_entries = Vec::new();
        for i in 0..w_v.rows() {
            for (j, w) in w_v.row(i).iter().enumerate() {
                if *w != 0.0 {
                    v_entries.push((i, j, *w));
                }
            }
        }
        Ok(Self {
            w_k,
            w_q,
            w_v,
            v_entries,
        })
    }

    pub fn w_k(&self) -> &DenseMatrix {
        &self.w_k
    }

    pub fn w_q(&self) -> &DenseMatrix {
        &self.w_q
    }

    pub fn w_v(&self) -> &DenseMatrix {
        &self.w_v
    }

    pub fn head_dim(&self) -> usize {
        self.w_k.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_k.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w_v.rows()
    }

    /// `W_KQ = W_Kᵀ W_Q`, derived on demand.
    pub fn w_kq(&self) -> DenseMatrix {
        matmul(&self.w_k.transpose(), &self.w_q).expect("head shapes validated")
    }

    /// Adds this head's contribution `W_V Z Softmax_λ((W_K Z)ᵀ W_Q Z)` to `out`.
    fn accumulate(&self, z: &DenseMatrix, lambda: f64, out: &mut DenseMatrix) {
        let m = z.cols();
        let kz = matmul(&self.w_k, z).expect("validated");
        let qz = matmul(&self.w_q, z).expect("validated");
        let mut weights = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for q in 0..m {
            for (p, c) in col.iter_mut().enumerate() {
                let mut s = 0.0;
                for h in 0..kz.rows() {
                    s += kz.get(h, p) * qz.get(h, q);
                }
                *c = lambda * s;
            }
            softmax_in_place(&mut col);
            for p in 0..m {
                weights[p * m + q] = col[p];
            }
        }
        let mut mixed: Vec<Option<Vec<f64>>> = vec![None; z.rows()];
        for &(r, k, w) in &self.v_entries {
            let zk = mixed[k].get_or_insert_with(|| {
                let mut row = vec![0.0; m];
                for p in 0..m {
                    let zp = z.get(k, p);
                    if zp != 0.0 {
                        for (q, o) in row.iter_mut().enumerate() {
                            *o += zp * weights[p * m + q];
                        }
                    }
                }
                row
            });
            for (q, v) in zk.iter().enumerate() {
                out.set(r, q, out.get(r, q) + w * v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnLayer {
    heads: Vec<AttnHead>,
    lambda: f64,
}

impl AttnLayer {
    pub fn new(heads: Vec<AttnHead>, lambda: f64) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::precondition("AttnLayer", "at least one head is required"))?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::precondition("AttnLayer", format!("lambda must be positive, got {lambda}")));
        }
        if let Some(h) = heads
            .iter()
            .find(|h| h.d_in() != first.d_in() || h.d_out() != first.d_out())
        {
            return Err(Error::Shape {
                op: "AttnLayer heads",
                left: (first.d_out(), first.d_in()),
                right: (h.d_out(), h.d_in()),
            });
        }
        Ok(Self { heads, lambda })
    }

    pub fn heads(&self) -> &[AttnHead] {
        &self.heads
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.heads.clone(), lambda)
    }

    pub fn d_in(&self) -> usize {
        self.heads[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.heads[0].d_out()
    }
}

pub fn attn_layer_forward(layer: &AttnLayer, z: &DenseMatrix) -> Result<DenseMatrix> {
    if z.rows() != layer.d_in() {
        return Err(Error::Shape {
            op: "attn_layer_forward",
            left: (layer.d_in(), z.cols()),
            right: z.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(layer.d_out(), z.cols());
    for h in &layer.heads {
        h.accumulate(z, layer.lambda, &mut out);
    }
    Ok(out)
}

/// The fixed map `X ↦ [[X, 0], [I_n, 0], [0, 1]]`.
pub fn preprocess(x: &DenseMatrix) -> DenseMatrix {
    let (d, n) = x.shape();
    let mut z = DenseMatrix::zeros(d + n + 1, n + 1);
    for i in 0..d {
        for j in 0..n {
            z.set(i, j, x.get(i, j));
        }
    }
    for j in 0..=n {
        z.set(d + j, j, 1.0);
    }
    z
}

/// Drops the last token column.
pub fn truncate(z: &DenseMatrix) -> DenseMatrix {
    z.col_block(0, z.cols() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerNetwork {
    d: usize,
    n: usize,
    preprocess: bool,
    truncate: bool,
    layers: Vec<AttnLayer>,
}

impl TransformerNetwork {
    pub fn new(d: usize, n: usize, preprocess: bool, truncate: bool, layers: Vec<AttnLayer>) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::precondition("TransformerNetwork", "layout dimensions must be positive"));
        }
        let mut rows = if preprocess { d + n + 1 } else { d };
        let cols = if preprocess { n + 1 } else { n };
        if truncate && cols < 2 {
            return Err(Error::precondition("TransformerNetwork", "truncation needs at least two tokens"));
        }
        for (j, l) in layers.iter().enumerate() {
            if l.d_in() != rows {
                return Err(Error::precondition(
                    "TransformerNetwork",
                    format!("layer {j} expects {} rows but receives {rows}", l.d_in()),
                ));
            }
            rows = l.d_out();
        }
        Ok(Self {
            d,
            n,
            preprocess,
            truncate,
            layers,
        })
    }

    pub fn layout(&self) -> (usize, usize) {
        (self.d, self.n)
    }

    pub fn preprocess(&self) -> bool {
        self.preprocess
    }

    pub fn truncate(&self) -> bool {
        self.truncate
    }

    pub fn layers(&self) -> &[AttnLayer] {
        &self.layers
    }

    pub fn input_rows(&self) -> usize {
        if self.preprocess {
            self.d + self.n + 1
        } else {
            self.d
        }
    }

    pub fn output_rows(&self) -> usize {
        self.layers.last().map_or(self.input_rows(), AttnLayer::d_out)
    }

    pub fn with_layers(&self, layers: Vec<AttnLayer>) -> Result<Self> {
        Self::new(self.d, self.n, self.preprocess, self.truncate, layers)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let dto = TransformerDto {
            layout: LayoutDto { d: self.d, n: self.n },
            preprocess: self.preprocess,
            truncate: self.truncate,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDto {
                    lambda: l.lambda,
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadDto {
                            w_k: h.w_k.to_rows(),
                            w_q: h.w_q.to_rows(),
                            w_v: h.w_v.to_rows(),
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_value(dto).expect("network serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let dto: TransformerDto = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let build = || -> Result<Self> {
            let layers = dto
                .layers
                .iter()
                .map(|l| {
                    let heads = l
                        .heads
                        .iter()
                        .map(|h| {
                            AttnHead::new(
                                DenseMatrix::from_rows(&h.w_k)?,
                                DenseMatrix::from_rows(&h.w_q)?,
                                DenseMatrix::from_rows(&h.w_v)?,
                            )
                        })
                        .collect::<Result<Vec<_>>>()?;
                    AttnLayer::new(heads, l.lambda)
                })
                .collect::<Result<Vec<_>>>()?;
            Self::new(dto.layout.d, dto.layout.n, dto.preprocess, dto.truncate, layers)
        };
        build().map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn transformer_forward(net: &TransformerNetwork, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.shape() != net.layout() {
        return Err(Error::Shape {
            op: "transformer_forward",
            left: net.layout(),
            right: x.shape(),
        });
    }
    let mut z = if net.preprocess { preprocess(x) } else { x.clone() };
    for l in &net.layers {
        z = attn_layer_forward(l, &z)?;
    }
    Ok(if net.truncate { truncate(&z) } else { z })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceReport {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "C_V")]
    pub c_v: f64,
    #[serde(rename = "C_KQ")]
    pub c_kq: f64,
    pub lambda_max: f64,
    pub lambda_per_layer: Vec<f64>,
    pub heads_per_layer: Vec<usize>,
}

impl ResourceReport {
    /// Counts equal and norms within `rel_tol` relative error.
    pub fn matches(&self, other: &Self, rel_tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        self.h == other.h
            && self.w == other.w
            && self.k == other.k
            && self.heads_per_layer == other.heads_per_layer
            && close(self.c_v, other.c_v)
            && close(self.c_kq, other.c_kq)
            && close(self.lambda_max, other.lambda_max)
            && self.lambda_per_layer.len() == other.lambda_per_layer.len()
            && self
                .lambda_per_layer
                .iter()
                .zip(&other.lambda_per_layer)
                .all(|(a, b)| close(*a, *b))
    }
}

pub fn resource_report(net: &TransformerNetwork) -> ResourceReport {
    let mut w = net.input_rows();
    let mut h = 0;
    let mut c_v = 0.0f64;
    let mut c_kq = 0.0f64;
    for l in &net.layers {
        h = h.max(l.heads.len());
        w = w.max(l.d_out());
        for head in &l.heads {
            w = w.max(head.head_dim());
            c_v = c_v.max(fro_norm(&head.w_v));
            c_kq = c_kq.max(fro_norm(&head.w_kq()));
        }
    }
    let lambdas: Vec<f64> = net.layers.iter().map(|l| l.lambda).collect();
    ResourceReport {
        h,
        w,
        k: net.layers.len(),
        c_v,
        c_kq,
        lambda_max: lambdas.iter().copied().fold(0.0, f64::max),
        lambda_per_layer: lambdas,
        heads_per_layer: net.layers.iter().map(|l| l.heads.len()).collect(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutDto {
    d: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadDto {
    #[serde(rename = "W_K")]
    w_k: Vec<Vec<f64>>,
    #[serde(rename = "W_Q")]
    w_q: Vec<Vec<f64>>,
    #[serde(rename = "W_V")]
    w_v: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDto {
    lambda: f64,
    heads: Vec<HeadDto>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformerDto {
    layout: LayoutDto,
    preprocess: bool,
    truncate: bool,
    layers: Vec<LayerDto>,
}
