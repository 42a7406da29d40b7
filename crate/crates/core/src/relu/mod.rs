//! ReLU networks of the form `(A_K ReLU[·] + b_K) ∘ ⋯ ∘ (A_2 ReLU[·] + b_2) ∘ (A_1 x + b_1)`.
//!
//! The first layer is purely affine; ReLU is applied to the input of every
//! later layer. Networks are immutable values; the combinators here
//! (`compose`, `parallel`, `padded`) build larger networks from smaller ones
//! and are used by the constructive builders in [`builders`].

pub mod builders;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul, DenseMatrix};

pub use builders::{
    build_clip_net, build_exp_half_net, build_interpolant_1d, build_max_net, build_min_net,
    build_mult_net, build_reciprocal_net, build_sigma_net, build_sqrt_net,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ReluLayer {
    a: DenseMatrix,
    b: Vec<f64>,
}

impl ReluLayer {
    pub fn new(a: DenseMatrix, b: Vec<f64>) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(Error::Shape {
                op: "ReluLayer",
                left: a.shape(),
                right: (b.len(), 1),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ReluLayer bias"));
        }
        Ok(Self { a, b })
    }

    pub fn linear(a: DenseMatrix) -> Self {
        let b = vec![0.0; a.rows()];
        Self { a, b }
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.a.rows()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.b);
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.a.row(i);
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                if *w != 0.0 {
                    acc += w * v;
                }
            }
            *o += acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<ReluLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluStats {
    pub depth_kf: usize,
    pub width_wf: usize,
    pub sparsity_s: usize,
    pub weight_bound_b: f64,
}

impl ReluNetwork {
    pub fn new(layers: Vec<ReluLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::precondition("ReluNetwork", "at least one layer is required"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::precondition(
                    "ReluNetwork",
                    format!(
                        "layer {} expects input dim {} but layer {} produces {}",
                        i + 1,
                        pair[1].in_dim(),
                        i,
                        pair[0].out_dim()
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Single affine layer `x ↦ A x + b`.
    pub fn affine(a: DenseMatrix, b: Vec<f64>) -> Result<Self> {
        Self::new(vec![ReluLayer::new(a, b)?])
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![ReluLayer::linear(DenseMatrix::identity(dim))],
        }
    }

    /// Affine map picking the listed coordinates of a `dim`-vector.
    pub fn select(dim: usize, indices: &[usize]) -> Self {
        let a = DenseMatrix::from_fn(indices.len(), dim, |i, j| f64::from(u8::from(indices[i] == j)));
        Self {
            layers: vec![ReluLayer::linear(a)],
        }
    }

    pub fn layers(&self) -> &[ReluLayer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Pre-activation outputs of every layer for input `x`.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape {
                op: "relu_forward",
                left: (self.in_dim(), 1),
                right: (x.len(), 1),
            });
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut input: Vec<f64> = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            if k > 0 {
                input.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let mut out = Vec::with_capacity(layer.out_dim());
            layer.apply(&input, &mut out);
            input.clone_from(&out);
            trace.push(out);
        }
        Ok(trace)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape {
                op: "relu_forward",
                left: (self.in_dim(), 1),
                right: (x.len(), 1),
            });
        }
        let mut input = x.to_vec();
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            if k > 0 {
                input.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            layer.apply(&input, &mut out);
            std::mem::swap(&mut input, &mut out);
        }
        Ok(input)
    }

    pub fn stats(&self) -> ReluStats {
        let mut width = self.in_dim();
        let mut nnz = 0;
        let mut bound = 0.0f64;
        for l in &self.layers {
            width = width.max(l.out_dim());
            nnz += l.a.nnz() + l.b.iter().filter(|v| **v != 0.0).count();
            bound = bound.max(crate::numerics::max_norm(&l.a));
            bound = l.b.iter().fold(bound, |m, v| m.max(v.abs()));
        }
        ReluStats {
            depth_kf: self.layers.len(),
            width_wf: width,
            sparsity_s: nnz,
            weight_bound_b: bound,
        }
    }

    /// `outer ∘ inner`; the last affine map of `inner` is merged into the first of `outer`.
    pub fn compose(outer: &Self, inner: &Self) -> Result<Self> {
        if outer.in_dim() != inner.out_dim() {
            return Err(Error::Shape {
                op: "compose",
                left: (outer.in_dim(), 0),
                right: (inner.out_dim(), 0),
            });
        }
        let last = &inner.layers[inner.layers.len() - 1];
        let first = &outer.layers[0];
        let a = matmul(&first.a, &last.a)?;
        let mut b = first.b.clone();
        for (i, bi) in b.iter_mut().enumerate() {
            *bi += first.a.row(i).iter().zip(&last.b).map(|(w, v)| w * v).sum::<f64>();
        }
        let mut layers = inner.layers[..inner.layers.len() - 1].to_vec();
        layers.push(ReluLayer::new(a, b)?);
        layers.extend_from_slice(&outer.layers[1..]);
        Self::new(layers)
    }

    /// Appends the affine map `y ↦ A y + b` after the network output.
    pub fn then_affine(&self, a: DenseMatrix, b: Vec<f64>) -> Result<Self> {
        Self::compose(&Self::affine(a, b)?, self)
    }

    /// Same function with exactly `depth` layers, carrying signed values through
    /// extra ReLU stages as `v = ReLU(v) − ReLU(−v)`.
    pub fn padded(&self, depth: usize) -> Result<Self> {
        let k = self.depth();
        if depth < k {
            return Err(Error::precondition(
                "ReluNetwork::padded",
                format!("cannot shrink depth {k} to {depth}"),
            ));
        }
        if depth == k {
            return Ok(self.clone());
        }
        let m = self.out_dim();
        let last = &self.layers[k - 1];
        let neg = last.a.scale(-1.0);
        let a = DenseMatrix::vstack(&[&last.a, &neg])?;
        let b: Vec<f64> = last.b.iter().copied().chain(last.b.iter().map(|v| -v)).collect();
        let mut layers = self.layers[..k - 1].to_vec();
        layers.push(ReluLayer::new(a, b)?);
        let eye = DenseMatrix::identity(m);
        let neg_eye = eye.scale(-1.0);
        let top = DenseMatrix::hstack(&[&eye, &neg_eye])?;
        let bottom = DenseMatrix::hstack(&[&neg_eye, &eye])?;
        let swap = DenseMatrix::vstack(&[&top, &bottom])?;
        for _ in 0..depth - k - 1 {
            layers.push(ReluLayer::linear(swap.clone()));
        }
        layers.push(ReluLayer::linear(top));
        Self::new(layers)
    }

    /// Runs every network on the same input and concatenates their outputs.
    pub fn parallel(nets: &[Self]) -> Result<Self> {
        let first = nets
            .first()
            .ok_or_else(|| Error::precondition("ReluNetwork::parallel", "no networks given"))?;
        let in_dim = first.in_dim();
        if let Some(bad) = nets.iter().find(|n| n.in_dim() != in_dim) {
            return Err(Error::Shape {
                op: "parallel",
                left: (in_dim, 0),
                right: (bad.in_dim(), 0),
            });
        }
        let depth = nets.iter().map(Self::depth).max().unwrap_or(1);
        let padded: Vec<Self> = nets.iter().map(|n| n.padded(depth)).collect::<Result<_>>()?;
        let mut layers = Vec::with_capacity(depth);
        for k in 0..depth {
            let parts: Vec<&ReluLayer> = padded.iter().map(|n| &n.layers[k]).collect();
            let rows: usize = parts.iter().map(|l| l.out_dim()).sum();
            let (a, b) = if k == 0 {
                let blocks: Vec<&DenseMatrix> = parts.iter().map(|l| &l.a).collect();
                (DenseMatrix::vstack(&blocks)?, parts.iter().flat_map(|l| l.b.clone()).collect())
            } else {
                let cols: usize = parts.iter().map(|l| l.in_dim()).sum();
                let mut a = DenseMatrix::zeros(rows, cols);
                let (mut r0, mut c0) = (0, 0);
                for l in &parts {
                    for i in 0..l.out_dim() {
                        for j in 0..l.in_dim() {
                            a.set(r0 + i, c0 + j, l.a.get(i, j));
                        }
                    }
                    r0 += l.out_dim();
                    c0 += l.in_dim();
                }
                (a, parts.iter().flat_map(|l| l.b.clone()).collect())
            };
            layers.push(ReluLayer::new(a, b)?);
        }
        Self::new(layers)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let dto = NetworkDto {
            layers: self
                .layers
                .iter()
                .map(|l| LayerDto {
                    a: l.a.to_rows(),
                    b: l.b.clone(),
                })
                .collect(),
        };
        serde_json::to_value(dto).expect("network serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let dto: NetworkDto = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let layers = dto
            .layers
            .into_iter()
            .map(|l| ReluLayer::new(DenseMatrix::from_rows(&l.a)?, l.b))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(layers).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn relu_forward(net: &ReluNetwork, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != 1 {
        return Err(Error::Shape {
            op: "relu_forward",
            left: (net.in_dim(), 1),
            right: x.shape(),
        });
    }
    DenseMatrix::column(&net.forward(x.data())?)
}

pub fn relu_stats(net: &ReluNetwork) -> ReluStats {
    net.stats()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDto {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDto {
    layers: Vec<LayerDto>,
}
