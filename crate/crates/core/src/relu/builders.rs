//! Constructive ReLU networks: exact min/max/clip, sawtooth multiplication,
//! Newton reciprocal and square root, Taylor exponential, and 1-D interpolants.

use super::{ReluLayer, ReluNetwork};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

fn check_eps(context: &str, eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::precondition(context, format!("eps must lie in (0, 1), got {eps}")))
    }
}

fn block_rows(blocks: &[&[f64]], count: usize) -> DenseMatrix {
    // Each block row is a list of scalar multipliers of I_count.
    let rows = blocks.len() * count;
    let cols = blocks[0].len() * count;
    DenseMatrix::from_fn(rows, cols, |i, j| {
        if i % count == j % count {
            blocks[i / count][j / count]
        } else {
            0.0
        }
    })
}

/// Entry-wise `max` of the stacked input `(x; y)`, each of length `count`.
pub fn build_max_net(count: usize) -> Result<ReluNetwork> {
    if count == 0 {
        return Err(Error::precondition("build_max_net", "count must be at least 1"));
    }
    let a1 = block_rows(&[&[1.0, -1.0], &[0.0, 1.0], &[0.0, -1.0]], count);
    let a2 = block_rows(&[&[1.0, 1.0, -1.0]], count);
    ReluNetwork::new(vec![ReluLayer::linear(a1), ReluLayer::linear(a2)])
}

/// Entry-wise `min` of the stacked input `(x; y)`, each of length `count`.
pub fn build_min_net(count: usize) -> Result<ReluNetwork> {
    if count == 0 {
        return Err(Error::precondition("build_min_net", "count must be at least 1"));
    }
    let a1 = block_rows(&[&[1.0, 0.0], &[-1.0, 0.0], &[1.0, -1.0]], count);
    let a2 = block_rows(&[&[1.0, -1.0, -1.0]], count);
    ReluNetwork::new(vec![ReluLayer::linear(a1), ReluLayer::linear(a2)])
}

/// Entry-wise clipping to `[-c, c]`.
pub fn build_clip_net(count: usize, c: f64) -> Result<ReluNetwork> {
    if count == 0 {
        return Err(Error::precondition("build_clip_net", "count must be at least 1"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::precondition("build_clip_net", format!("c must be positive, got {c}")));
    }
    let a1 = block_rows(&[&[1.0], &[1.0]], count);
    let b1 = (0..2 * count).map(|i| if i < count { c } else { -c }).collect();
    let a2 = block_rows(&[&[1.0, -1.0]], count);
    ReluNetwork::new(vec![ReluLayer::new(a1, b1)?, ReluLayer::new(a2, vec![-c; count])?])
}

/// Clipping of a scalar to `[lo, hi]`.
fn clip_interval(lo: f64, hi: f64) -> Result<ReluNetwork> {
    let mid = 0.5 * (lo + hi);
    let clip = build_clip_net(1, 0.5 * (hi - lo))?;
    let shift = ReluNetwork::affine(DenseMatrix::identity(1), vec![-mid])?;
    ReluNetwork::compose(&clip, &shift)?.then_affine(DenseMatrix::identity(1), vec![mid])
}

/// Piecewise-linear interpolant through sorted samples, constant outside the knot range.
pub fn build_interpolant_1d(samples: &[(f64, f64)]) -> Result<ReluNetwork> {
    if samples.len() < 2 {
        return Err(Error::precondition("build_interpolant_1d", "at least two samples required"));
    }
    if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("build_interpolant_1d"));
    }
    if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::precondition(
            "build_interpolant_1d",
            "sample abscissae must be strictly increasing",
        ));
    }
    let slopes: Vec<f64> = samples
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let units = slopes.len() + 1;
    let a1 = DenseMatrix::filled(units, 1, 1.0);
    let b1 = samples.iter().map(|(x, _)| -x).collect();
    let mut coeffs = Vec::with_capacity(units);
    let mut prev = 0.0;
    for s in &slopes {
        coeffs.push(s - prev);
        prev = *s;
    }
    // The last kink switches the slope off, giving a constant right extension.
    coeffs.push(-prev);
    let a2 = DenseMatrix::new(1, units, coeffs)?;
    ReluNetwork::new(vec![ReluLayer::new(a1, b1)?, ReluLayer::new(a2, vec![samples[0].1])?])
}

/// Sawtooth approximation of `t²` on `[-1, 1]` with error in `[0, 4^{-(m+1)}]`.
fn square_unit(m: usize) -> Result<ReluNetwork> {
    assert!(m >= 1);
    let tent = [2.0, -4.0, 2.0];
    let mut layers = vec![ReluLayer::linear(DenseMatrix::column(&[1.0, -1.0])?)];
    // State after ReLU: (acc, r0, r1, r2) with the tent inputs (u, u - 1/2, u - 1).
    layers.push(ReluLayer::new(
        DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]])?,
        vec![0.0, 0.0, -0.5, -1.0],
    )?);
    let mut scale = 1.0;
    for s in 1..=m {
        scale /= 4.0;
        let acc_row = vec![1.0, -tent[0] * scale, -tent[1] * scale, -tent[2] * scale];
        if s == m {
            layers.push(ReluLayer::new(DenseMatrix::from_rows(&[acc_row])?, vec![0.0])?);
        } else {
            let g = vec![0.0, tent[0], tent[1], tent[2]];
            layers.push(ReluLayer::new(
                DenseMatrix::from_rows(&[acc_row, g.clone(), g.clone(), g])?,
                vec![0.0, 0.0, -0.5, -1.0],
            )?);
        }
    }
    ReluNetwork::new(layers)
}

/// `xy` on `[-c, c]²` within `tol`, via `xy = c²(u² − v²)` with `u, v = (x ± y)/(2c)`.
fn mult_pair(c: f64, tol: f64) -> Result<ReluNetwork> {
    let c2 = c * c;
    let mut m = 1;
    while c2 * 0.25f64.powi(m as i32 + 1) > tol {
        m += 1;
    }
    let sq = square_unit(m)?;
    let h = 0.5 / c;
    let u = ReluNetwork::compose(&sq, &ReluNetwork::affine(DenseMatrix::new(1, 2, vec![h, h])?, vec![0.0])?)?;
    let v = ReluNetwork::compose(&sq, &ReluNetwork::affine(DenseMatrix::new(1, 2, vec![h, -h])?, vec![0.0])?)?;
    ReluNetwork::parallel(&[u, v])?.then_affine(DenseMatrix::new(1, 2, vec![c2, -c2])?, vec![0.0])
}

/// Network computing `xy` for coordinates `(i, j)` of a `dim`-vector through an
/// affine pre-map, i.e. `mult(L x + l)` where the two rows of `(L, l)` feed the factors.
fn mult_of(dim: usize, rows: [(Vec<(usize, f64)>, f64); 2], c: f64, tol: f64) -> Result<ReluNetwork> {
    let mut a = DenseMatrix::zeros(2, dim);
    let mut b = vec![0.0; 2];
    for (r, (terms, offset)) in rows.into_iter().enumerate() {
        for (j, w) in terms {
            a.set(r, j, a.get(r, j) + w);
        }
        b[r] = offset;
    }
    ReluNetwork::compose(&mult_pair(c, tol)?, &ReluNetwork::affine(a, b)?)
}

/// Approximates `∏ xᵢ` on `[-C_X, C_X]^dim` within `eps`.
pub fn build_mult_net(dim: usize, c_x: f64, eps: f64) -> Result<ReluNetwork> {
    check_eps("build_mult_net", eps)?;
    if dim == 0 {
        return Err(Error::precondition("build_mult_net", "dim must be at least 1"));
    }
    if !(c_x >= 1.0) || !c_x.is_finite() {
        return Err(Error::precondition("build_mult_net", format!("C_X must be >= 1, got {c_x}")));
    }
    if dim == 1 {
        return Ok(ReluNetwork::identity(1));
    }
    let scale = c_x.powi(dim as i32);
    let node_tol = eps / (2.0 * scale * (dim - 1) as f64);
    // Inputs are rescaled to [-1, 1]; partial products stay in [-1, 1].
    let mut net = ReluNetwork::affine(DenseMatrix::identity(dim).scale(1.0 / c_x), vec![0.0; dim])?;
    let mut width = dim;
    while width > 1 {
        let mut parts = Vec::new();
        for p in 0..width / 2 {
            parts.push(mult_of(
                width,
                [(vec![(2 * p, 1.0)], 0.0), (vec![(2 * p + 1, 1.0)], 0.0)],
                1.0,
                node_tol,
            )?);
        }
        if width % 2 == 1 {
            parts.push(ReluNetwork::select(width, &[width - 1]));
        }
        net = ReluNetwork::compose(&ReluNetwork::parallel(&parts)?, &net)?;
        width = width.div_ceil(2);
    }
    net.then_affine(DenseMatrix::new(1, 1, vec![scale])?, vec![0.0])
}

fn newton_iterations(eps: f64) -> usize {
    let l = (1.0 / eps).log2();
    (l.log2().ceil().max(0.0) + l.ceil()) as usize
}

fn dyadic_knots(eps: f64, f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let lo = eps.log2().floor() as i32;
    let hi = (1.0 / eps).log2().ceil() as i32;
    (lo..=hi).map(|k| 2f64.powi(k)).map(|x| (x, f(x))).collect()
}

/// Approximates `1/x` on `[eps, 1/eps]` within `eps`.
pub fn build_reciprocal_net(eps: f64) -> Result<ReluNetwork> {
    check_eps("build_reciprocal_net", eps)?;
    let iters = newton_iterations(eps);
    let tol = eps / (4.0 * iters as f64);
    let c = 1.2 / eps;
    let seed = build_interpolant_1d(&dyadic_knots(eps, |x| 1.0 / x))?;
    // State (x, z).
    let mut net = ReluNetwork::parallel(&[ReluNetwork::identity(1), seed])?;
    for _ in 0..iters {
        let with_p = ReluNetwork::parallel(&[
            ReluNetwork::identity(2),
            mult_of(2, [(vec![(0, 1.0)], 0.0), (vec![(1, 1.0)], 0.0)], c, tol)?,
        ])?;
        let next = ReluNetwork::parallel(&[
            ReluNetwork::select(3, &[0]),
            mult_of(3, [(vec![(1, 1.0)], 0.0), (vec![(2, -1.0)], 2.0)], c, tol)?,
        ])?;
        net = ReluNetwork::compose(&ReluNetwork::compose(&next, &with_p)?, &net)?;
    }
    ReluNetwork::compose(&ReluNetwork::select(2, &[1]), &net)
}

/// Approximates `√x` on `[eps, 1/eps]` within `eps` via Newton steps on `1/√x`.
pub fn build_sqrt_net(eps: f64) -> Result<ReluNetwork> {
    check_eps("build_sqrt_net", eps)?;
    let iters = newton_iterations(eps);
    let tol = eps / (4.0 * (3 * iters + 1) as f64);
    let cy = 1.1 / eps.sqrt();
    let cx = 1.2 / eps;
    let seed = build_interpolant_1d(&dyadic_knots(eps, |x| 1.0 / x.sqrt()))?;
    // State (x, y) with y ≈ 1/√x.
    let mut net = ReluNetwork::parallel(&[ReluNetwork::identity(1), seed])?;
    for _ in 0..iters {
        let sq = ReluNetwork::parallel(&[
            ReluNetwork::identity(2),
            mult_of(2, [(vec![(1, 1.0)], 0.0), (vec![(1, 1.0)], 0.0)], cy, tol)?,
        ])?;
        let p = ReluNetwork::parallel(&[
            ReluNetwork::select(3, &[0, 1]),
            mult_of(3, [(vec![(0, 1.0)], 0.0), (vec![(2, 1.0)], 0.0)], cx.max(cy * cy), tol)?,
        ])?;
        let next = ReluNetwork::parallel(&[
            ReluNetwork::select(3, &[0]),
            mult_of(3, [(vec![(1, 1.0)], 0.0), (vec![(2, -0.5)], 1.5)], cy.max(1.2), tol)?,
        ])?;
        let step = ReluNetwork::compose(&next, &ReluNetwork::compose(&p, &sq)?)?;
        net = ReluNetwork::compose(&step, &net)?;
    }
    let root = mult_of(2, [(vec![(0, 1.0)], 0.0), (vec![(1, 1.0)], 0.0)], cx, tol)?;
    ReluNetwork::compose(&root, &net)
}

/// Approximates `exp(-t/2)` on `[0, C_t]` within `eps` by a Taylor polynomial.
pub fn build_exp_half_net(eps: f64, c_t: f64) -> Result<ReluNetwork> {
    check_eps("build_exp_half_net", eps)?;
    if !(c_t >= 1.0) || !c_t.is_finite() {
        return Err(Error::precondition("build_exp_half_net", format!("C_t must be >= 1, got {c_t}")));
    }
    let mut degree = 1usize;
    let mut rem = c_t * c_t / 2.0;
    while rem > eps / 2.0 {
        degree += 1;
        rem *= c_t / (degree + 1) as f64;
    }
    let u_max = c_t / 2.0;
    // Error amplification of the monomial chain p_k = p_{k-1}·(u/k).
    let mut amp = 0.0f64;
    let mut worst = 0.0f64;
    let mut p_bound = u_max;
    let mut factor_bounds = vec![1.0, u_max];
    for k in 2..=degree {
        amp = amp * u_max / k as f64 + 1.0;
        worst = worst.max(amp);
        p_bound *= u_max / k as f64;
        factor_bounds.push(p_bound);
    }
    let tol = eps / (2.0 * degree as f64 * worst.max(1.0) * 1.01);
    // State (u, p_1, ..., p_k) with p_1 = u.
    let mut net = ReluNetwork::affine(DenseMatrix::new(2, 1, vec![0.5, 0.5])?, vec![0.0; 2])?;
    for k in 2..=degree {
        let c = (factor_bounds[k - 1].max(u_max / k as f64) * 1.1).max(1.0);
        let step = ReluNetwork::parallel(&[
            ReluNetwork::identity(k),
            mult_of(k, [(vec![(k - 1, 1.0)], 0.0), (vec![(0, 1.0 / k as f64)], 0.0)], c, tol)?,
        ])?;
        net = ReluNetwork::compose(&step, &net)?;
    }
    let mut coeffs = vec![0.0; degree + 1];
    for (k, c) in coeffs.iter_mut().enumerate().skip(1) {
        *c = if k % 2 == 1 { -1.0 } else { 1.0 };
    }
    net.then_affine(DenseMatrix::new(1, degree + 1, coeffs)?, vec![1.0])
}

/// Approximates `√(1 − exp(−t))` on `[eps, C_X]` within `eps`.
pub fn build_sigma_net(eps: f64, c_x: f64) -> Result<ReluNetwork> {
    check_eps("build_sigma_net", eps)?;
    if !(c_x > eps) || !c_x.is_finite() {
        return Err(Error::precondition(
            "build_sigma_net",
            format!("C_X must exceed eps, got C_X = {c_x}, eps = {eps}"),
        ));
    }
    let a_min = -(-eps).exp_m1();
    let e_a = eps * a_min.sqrt() / 4.0;
    let a_lo = a_min - e_a;
    let eps_root = (eps / 2.0).min(a_lo);
    // exp(−t) = exp(−(2t)/2) on [0, 2 C_X].
    let exp_net = build_exp_half_net(e_a, (2.0 * c_x).max(1.0))?;
    let doubled = ReluNetwork::affine(DenseMatrix::new(1, 1, vec![2.0])?, vec![0.0])?;
    let one_minus = ReluNetwork::compose(&exp_net, &doubled)?.then_affine(DenseMatrix::new(1, 1, vec![-1.0])?, vec![1.0])?;
    let clipped = ReluNetwork::compose(&clip_interval(a_lo, 1.0)?, &one_minus)?;
    ReluNetwork::compose(&build_sqrt_net(eps_root)?, &clipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(net: &ReluNetwork, x: f64) -> f64 {
        net.forward(&[x]).unwrap()[0]
    }

    fn sup_err(net: &ReluNetwork, xs: impl Iterator<Item = f64>, f: impl Fn(f64) -> f64) -> f64 {
        xs.map(|x| (eval1(net, x) - f(x)).abs()).fold(0.0, f64::max)
    }

    fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
    }

    fn lin_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
    }

    #[test]
    fn max_min_clip_examples() {
        let max = build_max_net(1).unwrap();
        assert_eq!(max.forward(&[3.0, -1.0]).unwrap(), vec![3.0]);
        assert_eq!(max.forward(&[-2.0, -7.0]).unwrap(), vec![-2.0]);
        let s = max.stats();
        assert_eq!((s.depth_kf, s.width_wf, s.weight_bound_b), (2, 3, 1.0));
        let min = build_min_net(1).unwrap();
        for x in lin_grid(-5.0, 5.0, 1000) {
            assert_eq!(min.forward(&[x, x]).unwrap(), vec![x]);
        }
        let clip = build_clip_net(1, 1.0).unwrap();
        assert_eq!(eval1(&clip, 2.0), 1.0);
        assert_eq!(eval1(&clip, -0.5), -0.5);
        assert_eq!(eval1(&clip, -1.0), -1.0);
        assert!(build_clip_net(1, 0.0).is_err());
    }

    #[test]
    fn multi_entry_max_is_entrywise() {
        let max = build_max_net(3).unwrap();
        let out = max.forward(&[1.0, -2.0, 3.0, 0.5, -1.0, 4.0]).unwrap();
        assert_eq!(out, vec![1.0, -1.0, 4.0]);
    }

    #[test]
    fn mult_examples() {
        let g = build_mult_net(2, 1.0, 1e-2).unwrap();
        let v = g.forward(&[0.5, 0.5]).unwrap()[0];
        assert!((0.24..=0.26).contains(&v));
        for x in lin_grid(-1.0, 1.0, 21) {
            assert!(g.forward(&[x, 0.0]).unwrap()[0].abs() <= 1e-2);
        }
        assert_eq!(build_mult_net(1, 2.0, 0.1).unwrap().forward(&[1.5]).unwrap(), vec![1.5]);
        assert!(build_mult_net(2, 1.0, 1.0).is_err());
    }

    #[test]
    fn mult_dim3_grid() {
        let g = build_mult_net(3, 1.0, 1e-2).unwrap();
        let grid: Vec<f64> = lin_grid(-1.0, 1.0, 41).collect();
        let mut worst = 0.0f64;
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    worst = worst.max((g.forward(&[a, b, c]).unwrap()[0] - a * b * c).abs());
                }
            }
        }
        assert!(worst <= 1e-2, "{worst}");
    }

    #[test]
    fn mult_error_shrinks_with_eps() {
        let grid: Vec<f64> = lin_grid(-2.0, 2.0, 41).collect();
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 5e-2, 2.5e-2, 1.25e-2] {
            let g = build_mult_net(2, 2.0, eps).unwrap();
            let mut worst = 0.0f64;
            for &a in &grid {
                for &b in &grid {
                    worst = worst.max((g.forward(&[a, b]).unwrap()[0] - a * b).abs());
                }
            }
            assert!(worst <= eps && worst <= prev, "{eps}: {worst} vs {prev}");
            prev = worst;
        }
    }

    #[test]
    fn reciprocal_grid() {
        let net = build_reciprocal_net(0.1).unwrap();
        assert!((0.4..=0.6).contains(&eval1(&net, 2.0)));
        assert!((0.9..=1.1).contains(&eval1(&net, 1.0)));
        let err = sup_err(&net, log_grid(0.1, 10.0, 1000), |x| 1.0 / x);
        assert!(err <= 0.1, "{err}");
        assert!(build_reciprocal_net(1.5).is_err());
    }

    #[test]
    fn sqrt_grid() {
        let net = build_sqrt_net(0.1).unwrap();
        assert!((1.9..=2.1).contains(&eval1(&net, 4.0)));
        let err = sup_err(&net, log_grid(0.1, 10.0, 1000), f64::sqrt);
        assert!(err <= 0.1, "{err}");
    }

    #[test]
    fn exp_half_grid() {
        let net = build_exp_half_net(1e-2, 5.0).unwrap();
        assert!((0.99..=1.01).contains(&eval1(&net, 0.0)));
        let err = sup_err(&net, lin_grid(0.0, 5.0, 1000), |t| (-t / 2.0).exp());
        assert!(err <= 1e-2, "{err}");
    }

    #[test]
    fn sigma_grid() {
        let net = build_sigma_net(0.1, 5.0).unwrap();
        let err = sup_err(&net, lin_grid(0.1, 5.0, 1000), |t| (-(-t).exp_m1()).sqrt());
        assert!(err <= 0.1, "{err}");
        assert!(build_sigma_net(0.1, 0.05).is_err());
    }

    #[test]
    fn interpolant_examples() {
        let net = build_interpolant_1d(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert_eq!(eval1(&net, 0.5), 0.5);
        let knots: Vec<(f64, f64)> = (0..=64)
            .map(|i| i as f64 / 64.0)
            .map(|x| (x, (std::f64::consts::PI * x).sin()))
            .collect();
        let net = build_interpolant_1d(&knots).unwrap();
        for (x, y) in &knots {
            assert!((eval1(&net, *x) - y).abs() <= 1e-14);
        }
        let bound = std::f64::consts::PI.powi(2) / (8.0 * 64.0 * 64.0);
        let err = sup_err(&net, lin_grid(0.0, 1.0, 10_000), |x| (std::f64::consts::PI * x).sin());
        assert!(err <= bound * (1.0 + 1e-9), "{err} vs {bound}");
        assert!(build_interpolant_1d(&[(1.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(build_interpolant_1d(&[(0.0, 0.0), (0.0, 1.0)]).is_err());
    }
}
