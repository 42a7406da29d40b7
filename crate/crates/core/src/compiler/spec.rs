use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::relu::{ReluLayer, ReluNetwork};
use crate::sampling::Sampler;

/// One hidden unit `a · ReLU(Σ_l w_l v_l + bias)` over an input vector `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub sign: f64,
    pub weights: Vec<(usize, f64)>,
    pub bias: f64,
}

/// Matrix-output one-layer network
/// `f(X)_{r,i} = Σ_k a_{r,i,k} ReLU(Σ_j w_{r,i,k,j}ᵀ x'_j)` with `x'_j = (x_j, 1/n)`
/// when the constant coordinate is present.
#[derive(Debug, Clone, PartialEq)]
pub struct OneLayerSpec {
    d: usize,
    n: usize,
    out_rows: usize,
    units: usize,
    constant_coord: bool,
    a: Vec<f64>,
    w: Vec<f64>,
}

impl OneLayerSpec {
    pub fn new(
        d: usize,
        n: usize,
        out_rows: usize,
        units: usize,
        constant_coord: bool,
        a: Vec<f64>,
        w: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 || n == 0 || out_rows == 0 || units == 0 {
            return Err(Error::precondition("OneLayerSpec", "all dimensions must be positive"));
        }
        let t = d + usize::from(constant_coord);
        if a.len() != out_rows * n * units || w.len() != out_rows * n * units * n * t {
            return Err(Error::precondition("OneLayerSpec", "sign or weight array has the wrong length"));
        }
        if a.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::precondition("OneLayerSpec", "signs must be +1 or -1"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("OneLayerSpec weights"));
        }
        Ok(Self {
            d,
            n,
            out_rows,
            units,
            constant_coord,
            a,
            w,
        })
    }

    /// Builds a spec from per-output unit lists over a vector input of length `in_len`.
    ///
    /// Output index `o` maps to `(r, i) = (o mod R, o div R)` and input index `l`
    /// to `(m, j) = (l mod d, l div d)`, with `d = ⌈in_len/n⌉`, `R = ⌈out_len/n⌉`.
    pub fn from_units(units: &[Vec<Unit>], in_len: usize, n: usize, force_constant: bool) -> Result<Self> {
        let out_len = units.len();
        if in_len == 0 || out_len == 0 || n == 0 {
            return Err(Error::precondition("OneLayerSpec", "empty layer"));
        }
        let d = in_len.div_ceil(n);
        let r_rows = out_len.div_ceil(n);
        let count = units.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let constant = force_constant || units.iter().flatten().any(|u| u.bias != 0.0);
        let t = d + usize::from(constant);
        let mut a = vec![1.0; r_rows * n * count];
        let mut w = vec![0.0; r_rows * n * count * n * t];
        for (o, list) in units.iter().enumerate() {
            let (r, i) = (o % r_rows, o / r_rows);
            for (k, unit) in list.iter().enumerate() {
                let idx = (r * n + i) * count + k;
                a[idx] = if unit.sign < 0.0 { -1.0 } else { 1.0 };
                for &(l, v) in &unit.weights {
                    if l >= in_len {
                        return Err(Error::precondition("OneLayerSpec", "unit weight index out of range"));
                    }
                    let (m, j) = (l % d, l / d);
                    w[(idx * n + j) * t + m] += v;
                }
                if constant {
                    for j in 0..n {
                        w[(idx * n + j) * t + d] = unit.bias;
                    }
                }
            }
        }
        Self::new(d, n, r_rows, count, constant, a, w)
    }

    /// Random spec with weights uniform in `[-w_max, w_max]` and random signs.
    pub fn random(d: usize, n: usize, out_rows: usize, units: usize, w_max: f64, rng: &mut Sampler) -> Self {
        let a = (0..out_rows * n * units)
            .map(|_| if rng.unit() < 0.5 { -1.0 } else { 1.0 })
            .collect();
        let w = (0..out_rows * n * units * n * d).map(|_| rng.symmetric(w_max)).collect();
        Self::new(d, n, out_rows, units, false, a, w).expect("consistent random spec")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn out_rows(&self) -> usize {
        self.out_rows
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn has_constant(&self) -> bool {
        self.constant_coord
    }

    /// Per-token coordinate count `d` or `d + 1`.
    pub fn token_dim(&self) -> usize {
        self.d + usize::from(self.constant_coord)
    }

    pub fn sign(&self, r: usize, i: usize, k: usize) -> f64 {
        self.a[(r * self.n + i) * self.units + k]
    }

    /// `w_{r,i,k,j}` including the constant coordinate when present.
    pub fn weight(&self, r: usize, i: usize, k: usize, j: usize) -> &[f64] {
        let t = self.token_dim();
        let start = (((r * self.n + i) * self.units + k) * self.n + j) * t;
        &self.w[start..start + t]
    }

    pub fn w0(&self) -> f64 {
        self.w.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude a zooming head writes per unit input: `max(|w_data|, |w_const|/n)`.
    pub fn value_bound(&self) -> f64 {
        let t = self.token_dim();
        self.w.iter().enumerate().fold(0.0, |m, (idx, v)| {
            let scale = if self.constant_coord && idx % t == self.d { 1.0 / self.n as f64 } else { 1.0 };
            m.max(v.abs() * scale)
        })
    }

    /// Largest pre-activation magnitude over inputs with entries bounded by `c_x`.
    pub fn tight_preactivation_bound(&self, c_x: f64) -> f64 {
        let t = self.token_dim();
        let per_unit = self.n * t;
        self.w
            .chunks(per_unit)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| {
                        let is_const = self.constant_coord && idx % t == self.d;
                        v.abs() * if is_const { 1.0 / self.n as f64 } else { c_x }
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Direct evaluation on a `d × n` input, giving an `out_rows × n` output.
    pub fn evaluate(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.shape() != (self.d, self.n) {
            return Err(Error::Shape {
                op: "OneLayerSpec::evaluate",
                left: (self.d, self.n),
                right: x.shape(),
            });
        }
        let inv_n = 1.0 / self.n as f64;
        let mut out = DenseMatrix::zeros(self.out_rows, self.n);
        for r in 0..self.out_rows {
            for i in 0..self.n {
                let mut total = 0.0;
                for k in 0..self.units {
                    let mut s = 0.0;
                    for j in 0..self.n {
                        let w = self.weight(r, i, k, j);
                        for m in 0..self.d {
                            s += w[m] * x.get(m, j);
                        }
                        if self.constant_coord {
                            s += w[self.d] * inv_n;
                        }
                    }
                    total += self.sign(r, i, k) * s.max(0.0);
                }
                out.set(r, i, total);
            }
        }
        Ok(out)
    }

    /// The same function as a two-layer ReLU network on `vec(X)`.
    pub fn to_relu_network(&self) -> Result<ReluNetwork> {
        let hidden = self.out_rows * self.n * self.units;
        let in_len = self.d * self.n;
        let mut a1 = DenseMatrix::zeros(hidden, in_len);
        let mut b1 = vec![0.0; hidden];
        let mut a2 = DenseMatrix::zeros(self.out_rows * self.n, hidden);
        for r in 0..self.out_rows {
            for i in 0..self.n {
                for k in 0..self.units {
                    let h = (r * self.n + i) * self.units + k;
                    for j in 0..self.n {
                        let w = self.weight(r, i, k, j);
                        for m in 0..self.d {
                            a1.set(h, j * self.d + m, w[m]);
                        }
                        if self.constant_coord {
                            b1[h] += w[self.d] / self.n as f64;
                        }
                    }
                    a2.set(i * self.out_rows + r, h, self.sign(r, i, k));
                }
            }
        }
        ReluNetwork::new(vec![ReluLayer::new(a1, b1)?, ReluLayer::linear(a2)])
    }
}

/// Folds a layer `(A, b)` into a one-layer spec with one unit `ReLU(A_o x + b_o)` per output,
/// always carrying the constant coordinate.
pub fn absorb_bias(layer: &ReluLayer, n: usize) -> Result<OneLayerSpec> {
    let units: Vec<Vec<Unit>> = (0..layer.out_dim())
        .map(|o| {
            vec![Unit {
                sign: 1.0,
                weights: layer.a().row(o).iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect(),
                bias: layer.b()[o],
            }]
        })
        .collect();
    OneLayerSpec::from_units(&units, layer.in_dim(), n, true)
}

/// Column-major `vec(X)`.
pub fn matrix_to_vec(x: &DenseMatrix) -> Vec<f64> {
    let (d, n) = x.shape();
    let mut v = Vec::with_capacity(d * n);
    for j in 0..n {
        for i in 0..d {
            v.push(x.get(i, j));
        }
    }
    v
}

/// Inverse of [`matrix_to_vec`] into a `rows × n` matrix, zero-padded.
pub fn vec_to_matrix(v: &[f64], rows: usize, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, n, |i, j| v.get(j * rows + i).copied().unwrap_or(0.0))
}
