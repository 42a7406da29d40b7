//! Ready-made attention approximators for scalar and small-vector targets.
//!
//! Each primitive first builds a ReLU network within `relu_eps` of the target
//! and then compiles it within `compile_eps`, so the end-to-end error is at
//! most their sum. Smooth scalar targets use shallow piecewise-linear
//! interpolants on adaptively spaced knots; products use
//! `pq = ((p + q)² − (p − q)²)/4` with interpolated squares.

use serde::Serialize;
use serde_json::Value;

use crate::attn::{transformer_forward, ResourceReport, TransformerNetwork};
use crate::compiler::{certificate, compile_network_with, BudgetPolicy, CompileOptions, Compiled, Decomposition};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::par::{self, Execution};
use crate::relu::builders::{build_clip_net, build_interpolant_1d, build_max_net, build_min_net};
use crate::relu::ReluNetwork;
use crate::sampling::Sampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveName {
    Mult,
    Inv,
    Max,
    Min,
    Clip,
    Sqrt,
    Alpha,
    Sigma,
    Uap1d,
}

impl PrimitiveName {
    pub const ALL: [PrimitiveName; 9] = [
        Self::Mult,
        Self::Inv,
        Self::Max,
        Self::Min,
        Self::Clip,
        Self::Sqrt,
        Self::Alpha,
        Self::Sigma,
        Self::Uap1d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mult => "mult",
            Self::Inv => "inv",
            Self::Max => "max",
            Self::Min => "min",
            Self::Clip => "clip",
            Self::Sqrt => "sqrt",
            Self::Alpha => "alpha",
            Self::Sigma => "sigma",
            Self::Uap1d => "uap1d",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == name)
            .ok_or_else(|| Error::precondition("primitive", format!("unknown primitive `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveRequest {
    pub name: PrimitiveName,
    pub eps: f64,
    pub c_x: Option<f64>,
    /// Clipping half-width.
    pub c: Option<f64>,
    /// Factor count for `mult`.
    pub dim: Option<usize>,
    /// Knot count for `uap1d`.
    pub knots: Option<usize>,
    /// Overrides the `(relu_eps, compile_eps)` split.
    pub split: Option<(f64, f64)>,
}

impl PrimitiveRequest {
    pub fn new(name: PrimitiveName, eps: f64) -> Self {
        Self {
            name,
            eps,
            c_x: None,
            c: None,
            dim: None,
            knots: None,
            split: None,
        }
    }

    pub fn with_cx(mut self, c_x: f64) -> Self {
        self.c_x = Some(c_x);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimitiveCertificate {
    pub name: String,
    pub eps: f64,
    #[serde(rename = "C_X")]
    pub c_x: f64,
    /// Box on which the guarantee is checked, one `[lo, hi]` per input coordinate.
    pub domain: [f64; 2],
    pub relu_eps: f64,
    pub compile_eps: f64,
    /// `relu_eps + compile_eps`.
    pub bound: f64,
    pub knots: Option<usize>,
    pub grid_points: usize,
    pub relu_stage_error: f64,
    pub compile_stage_error: f64,
    pub combined_error: f64,
    pub pass: bool,
    pub resources: ResourceReport,
    pub compile: Value,
}

pub struct Primitive {
    pub relu: ReluNetwork,
    pub compiled: Compiled,
    pub certificate: PrimitiveCertificate,
}

impl Primitive {
    pub fn network(&self) -> &TransformerNetwork {
        &self.compiled.network
    }
}

fn shallow_options() -> CompileOptions {
    CompileOptions {
        decomposition: Decomposition::Sandwich,
        policy: BudgetPolicy::Sensitivity,
        ..CompileOptions::default()
    }
}

/// Largest deviation of `f` from its chord on `[a, b]`, sampled at 129 interior points.
fn chord_error(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    (1..130)
        .map(|k| {
            let t = k as f64 / 130.0;
            let x = a + t * (b - a);
            (f(x) - (fa + t * (fb - fa))).abs()
        })
        .fold(0.0, f64::max)
}

/// Greedy knots on `[lo, hi]` whose chords stay within `tol` of `f`.
pub fn adaptive_knots(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<Vec<f64>> {
    if !(hi > lo) || !(tol > 0.0) {
        return Err(Error::precondition("adaptive_knots", "need lo < hi and tol > 0"));
    }
    let target = 0.9 * tol;
    let mut knots = vec![lo];
    let mut x = lo;
    while x < hi {
        if chord_error(f, x, hi) <= target {
            knots.push(hi);
            break;
        }
        let (mut good, mut bad) = (0.0, hi - x);
        for _ in 0..60 {
            let mid = 0.5 * (good + bad);
            if chord_error(f, x, x + mid) <= target {
                good = mid;
            } else {
                bad = mid;
            }
        }
        if !(good > 0.0) || knots.len() > 100_000 {
            return Err(Error::precondition("adaptive_knots", "target too steep for the requested tolerance"));
        }
        x += good;
        knots.push(x);
    }
    Ok(knots)
}

/// Interpolant of `f` on `[lo, hi]` within `tol`, constant outside.
pub fn pl_approximation(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<ReluNetwork> {
    let knots = adaptive_knots(f, lo, hi, tol)?;
    let samples: Vec<(f64, f64)> = knots.iter().map(|&x| (x, f(x))).collect();
    build_interpolant_1d(&samples)
}

/// `pq` on `|p| ≤ r_p`, `|q| ≤ r_q` within `tol`.
pub fn product_pair(r_p: f64, r_q: f64, tol: f64) -> Result<ReluNetwork> {
    let r = r_p + r_q;
    // Each interpolated square overshoots by at most 4·tol, so the difference over 4 is within tol.
    let sq = pl_approximation(&|u| u * u, -r, r, 4.0 * tol)?;
    let u = ReluNetwork::compose(&sq, &ReluNetwork::affine(DenseMatrix::new(1, 2, vec![1.0, 1.0])?, vec![0.0])?)?;
    let v = ReluNetwork::compose(&sq, &ReluNetwork::affine(DenseMatrix::new(1, 2, vec![1.0, -1.0])?, vec![0.0])?)?;
    ReluNetwork::parallel(&[u, v])?.then_affine(DenseMatrix::new(1, 2, vec![0.25, -0.25])?, vec![0.0])
}

/// `x₀ x₁ ⋯ x_{dim−1}` on `[−c, c]^dim` within `tol`, multiplying left to right.
pub fn monomial_net(dim: usize, c: f64, tol: f64) -> Result<ReluNetwork> {
    if dim == 0 {
        return Err(Error::precondition("monomial", "dim must be at least 1"));
    }
    if dim == 1 {
        return Ok(ReluNetwork::identity(1));
    }
    let steps = dim - 1;
    let mut net: Option<ReluNetwork> = None;
    let mut range = c;
    for k in 1..dim {
        // The error made at step k is amplified by the remaining factors.
        let e_k = tol / (steps as f64 * c.max(1.0).powi((dim - 1 - k) as i32));
        let len = dim - k + 1;
        let pair = ReluNetwork::compose(&product_pair(range, c, e_k)?, &ReluNetwork::select(len, &[0, 1]))?;
        let stage = if len > 2 {
            let rest: Vec<usize> = (2..len).collect();
            ReluNetwork::parallel(&[pair, ReluNetwork::select(len, &rest)])?
        } else {
            pair
        };
        net = Some(match net {
            None => stage,
            Some(prev) => ReluNetwork::compose(&stage, &prev)?,
        });
        range = c.powi(k as i32 + 1) + tol;
    }
    Ok(net.expect("dim >= 2"))
}

struct Plan {
    relu: ReluNetwork,
    layout: (usize, usize),
    box_c: f64,
    domain: [f64; 2],
    target: Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>,
    points: Vec<Vec<f64>>,
    knots: Option<usize>,
    relu_eps: f64,
    compile_eps: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::precondition("primitive", format!("eps must lie in (0, 1), got {eps}")))
    }
}

fn grid_1d(lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = (0..count)
        .map(|k| vec![lo + (hi - lo) * k as f64 / (count - 1) as f64])
        .collect();
    if lo > 0.0 {
        let ratio = (hi / lo).ln();
        pts.extend((0..count).map(|k| vec![(lo * (ratio * k as f64 / (count - 1) as f64).exp()).min(hi)]));
    }
    pts
}

fn grid_2d(c: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..per_axis)
        .map(|k| -c + 2.0 * c * k as f64 / (per_axis - 1) as f64)
        .collect();
    axis.iter()
        .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
        .collect()
}

fn scalar_plan(
    f: fn(f64) -> f64,
    lo: f64,
    hi: f64,
    relu_eps: f64,
    compile_eps: f64,
) -> Result<Plan> {
    let relu = pl_approximation(&f, lo, hi, relu_eps)?;
    let knots = relu.layers()[0].out_dim();
    Ok(Plan {
        relu,
        layout: (1, 1),
        box_c: hi.abs().max(lo.abs()).max(1.0),
        domain: [lo, hi],
        target: Box::new(move |x: &[f64]| vec![f(x[0])]),
        points: grid_1d(lo, hi, 1001),
        knots: Some(knots),
        relu_eps,
        compile_eps,
    })
}

fn positive(name: &str, what: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::precondition(name, format!("{what} must be positive and finite, got {v}")))
    }
}

fn plan(req: &PrimitiveRequest) -> Result<Plan> {
    let eps = req.eps;
    check_eps(eps)?;
    let half = (0.5 * eps, 0.5 * eps);
    let split = |default: (f64, f64)| req.split.unwrap_or(default);
    match req.name {
        PrimitiveName::Inv | PrimitiveName::Sqrt => {
            let ctx = if req.name == PrimitiveName::Inv { "reciprocal" } else { "square root" };
            let c_x = positive(ctx, "C_X", req.c_x.unwrap_or(1.0 / eps))?;
            let hi = c_x.min(1.0 / eps);
            if hi <= eps {
                return Err(Error::precondition(ctx, format!("C_X must exceed eps, got C_X = {c_x}")));
            }
            let (r, c) = split((eps, eps));
            let f: fn(f64) -> f64 = if req.name == PrimitiveName::Inv { |x| 1.0 / x } else { f64::sqrt };
            let mut p = scalar_plan(f, eps, hi, r, c)?;
            p.box_c = p.box_c.max(c_x);
            Ok(p)
        }
        PrimitiveName::Alpha => {
            let c_x = positive("alpha schedule", "C_X", req.c_x.unwrap_or(5.0))?;
            let (r, c) = split(half);
            let mut p = scalar_plan(|t| (-t / 2.0).exp(), 0.0, c_x, r, c)?;
            p.box_c = c_x.max(1.0);
            Ok(p)
        }
        PrimitiveName::Sigma => {
            let c_x = req.c_x.unwrap_or(5.0);
            if !(c_x > eps) || !c_x.is_finite() {
                return Err(Error::precondition(
                    "sigma schedule",
                    format!("requires C_X > eps, got C_X = {c_x} and eps = {eps}"),
                ));
            }
            let (r, c) = split(half);
            let mut p = scalar_plan(|t| (1.0 - (-t).exp()).sqrt(), eps, c_x, r, c)?;
            p.box_c = c_x.max(1.0);
            Ok(p)
        }
        PrimitiveName::Mult => {
            let dim = req.dim.unwrap_or(2);
            if dim < 2 {
                return Err(Error::precondition("monomial", format!("dim must be at least 2, got {dim}")));
            }
            let c_x = req.c_x.unwrap_or(1.0);
            if !(c_x >= 1.0) || !c_x.is_finite() {
                return Err(Error::precondition("monomial", format!("C_X must be >= 1, got {c_x}")));
            }
            let (r, c) = split(half);
            let points = if dim == 2 {
                grid_2d(c_x, 41)
            } else {
                let mut rng = Sampler::new(7);
                (0..2000).map(|_| (0..dim).map(|_| rng.symmetric(c_x)).collect()).collect()
            };
            Ok(Plan {
                relu: monomial_net(dim, c_x, r)?,
                layout: (dim, 1),
                box_c: c_x,
                domain: [-c_x, c_x],
                target: Box::new(|x: &[f64]| vec![x.iter().product()]),
                points,
                knots: None,
                relu_eps: r,
                compile_eps: c,
            })
        }
        PrimitiveName::Max | PrimitiveName::Min => {
            let c_x = req.c_x.unwrap_or(1.0);
            if !(c_x >= 1.0) || !c_x.is_finite() {
                return Err(Error::precondition("min/max", format!("C_X must be >= 1, got {c_x}")));
            }
            let is_max = req.name == PrimitiveName::Max;
            let (r, c) = split((0.0, eps));
            Ok(Plan {
                relu: if is_max { build_max_net(1)? } else { build_min_net(1)? },
                layout: (2, 1),
                box_c: c_x,
                domain: [-c_x, c_x],
                target: if is_max {
                    Box::new(|x: &[f64]| vec![x[0].max(x[1])])
                } else {
                    Box::new(|x: &[f64]| vec![x[0].min(x[1])])
                },
                points: grid_2d(c_x, 41),
                knots: None,
                relu_eps: r,
                compile_eps: c,
            })
        }
        PrimitiveName::Clip => {
            let c = req
                .c
                .ok_or_else(|| Error::precondition("clip", "missing required parameter c (--c)"))?;
            let c = positive("clip", "c", c)?;
            let c_x = req.c_x.unwrap_or(c.max(1.0));
            if !(c_x >= 1.0) || !c_x.is_finite() {
                return Err(Error::precondition("clip", format!("C_X must be >= 1, got {c_x}")));
            }
            let (r, ce) = split((0.0, eps));
            Ok(Plan {
                relu: build_clip_net(1, c)?,
                layout: (1, 1),
                box_c: c_x,
                domain: [-c_x, c_x],
                target: Box::new(move |x: &[f64]| vec![x[0].clamp(-c, c)]),
                points: grid_1d(-c_x, c_x, 1001),
                knots: None,
                relu_eps: r,
                compile_eps: ce,
            })
        }
        PrimitiveName::Uap1d => {
            let knots = req.knots.unwrap_or(65);
            let samples = uniform_samples(|x| (std::f64::consts::PI * x).sin(), knots)?;
            uap_plan(&samples, eps, |x| (std::f64::consts::PI * x).sin())
        }
    }
}

/// `count` equally spaced samples of `f` on `[0, 1]`.
pub fn uniform_samples(f: impl Fn(f64) -> f64, count: usize) -> Result<Vec<(f64, f64)>> {
    if count < 2 {
        return Err(Error::precondition("uap1d", "at least two knots are required"));
    }
    Ok((0..count)
        .map(|k| {
            let x = k as f64 / (count - 1) as f64;
            (x, f(x))
        })
        .collect())
}

/// Interpolation error bound `max|f''|·h²/8`, with `f''` estimated by second divided differences.
pub fn interpolation_bound(samples: &[(f64, f64)]) -> f64 {
    let h = samples.windows(2).map(|w| w[1].0 - w[0].0).fold(0.0, f64::max);
    let curvature = samples
        .windows(3)
        .map(|w| {
            let d1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            let d2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
            (2.0 * (d2 - d1) / (w[2].0 - w[0].0)).abs()
        })
        .fold(0.0, f64::max);
    curvature * h * h / 8.0
}

fn uap_plan(samples: &[(f64, f64)], eps: f64, target: impl Fn(f64) -> f64 + Sync + 'static) -> Result<Plan> {
    check_eps(eps)?;
    if samples.len() < 2 {
        return Err(Error::precondition("uap1d", "at least two knots are required"));
    }
    if samples.iter().any(|(x, _)| !(0.0..=1.0).contains(x)) {
        return Err(Error::precondition("uap1d", "knots must lie in [0, 1]"));
    }
    let bound = interpolation_bound(samples);
    if bound > eps / 2.0 {
        return Err(Error::precondition(
            "uap1d",
            format!(
                "too few knots: interpolation bound {bound:.3e} exceeds eps/2 = {:.3e}",
                eps / 2.0
            ),
        ));
    }
    Ok(Plan {
        relu: build_interpolant_1d(samples)?,
        layout: (1, 1),
        box_c: 1.0,
        domain: [0.0, 1.0],
        target: Box::new(move |x: &[f64]| vec![target(x[0])]),
        points: grid_1d(0.0, 1.0, 10_000),
        knots: Some(samples.len()),
        relu_eps: eps / 2.0,
        compile_eps: eps / 2.0,
    })
}

fn realize(name: &str, eps: f64, c_x: f64, plan: Plan, exec: Execution) -> Result<Primitive> {
    let compiled = compile_network_with(&plan.relu, plan.layout, plan.box_c, plan.compile_eps, &shallow_options())?;
    let net = &compiled.network;
    let errors = par::map(plan.points.len(), exec, |k| -> Result<(f64, f64, f64)> {
        let x = &plan.points[k];
        let want = (plan.target)(x);
        let relu = plan.relu.forward(x)?;
        let input = DenseMatrix::new(plan.layout.0, plan.layout.1, x.clone())?;
        let attn = transformer_forward(net, &input)?;
        let mut e = (0.0f64, 0.0f64, 0.0f64);
        for (o, w) in want.iter().enumerate() {
            let a = attn.data()[o];
            e.0 = nan_max(e.0, (relu[o] - w).abs());
            e.1 = nan_max(e.1, (a - relu[o]).abs());
            e.2 = nan_max(e.2, (a - w).abs());
        }
        Ok(e)
    });
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for e in errors {
        let e = e?;
        worst = (nan_max(worst.0, e.0), nan_max(worst.1, e.1), nan_max(worst.2, e.2));
    }
    let bound = plan.relu_eps + plan.compile_eps;
    let certificate = PrimitiveCertificate {
        name: name.to_owned(),
        eps,
        c_x,
        domain: plan.domain,
        relu_eps: plan.relu_eps,
        compile_eps: plan.compile_eps,
        bound,
        knots: plan.knots,
        grid_points: plan.points.len(),
        relu_stage_error: worst.0,
        compile_stage_error: worst.1,
        combined_error: worst.2,
        pass: worst.2 <= bound,
        resources: compiled.report.clone(),
        compile: certificate(&compiled, worst.1, plan.points.len(), 0),
    };
    Ok(Primitive {
        relu: plan.relu,
        compiled,
        certificate,
    })
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Builds, compiles and grid-checks the requested primitive.
pub fn build_primitive(req: &PrimitiveRequest, exec: Execution) -> Result<Primitive> {
    let p = plan(req)?;
    let c_x = p.box_c;
    realize(req.name.as_str(), req.eps, c_x, p, exec)
}

/// Interpolates `samples` of `target` on `[0, 1]` and compiles at `eps/2`.
pub fn build_uap_1d(
    samples: &[(f64, f64)],
    target: impl Fn(f64) -> f64 + Sync + 'static,
    eps: f64,
    exec: Execution,
) -> Result<Primitive> {
    let p = uap_plan(samples, eps, target)?;
    realize("uap1d", eps, 1.0, p, exec)
}
