//! Levi-Civita connection and curvature in chart components.
//!
//! Conventions: `R(X,Y) = ∇_X∇_Y − ∇_Y∇_X − ∇_[X,Y]`, components
//! `R(∂_i,∂_j)∂_k = Rˡ_ijk ∂_l`, lowered `R_ijkl = g(R(∂_i,∂_j)∂_k, ∂_l)`.
//! With these, a round sphere of radius `r` has `R_1221 / det g = 1/r²`.

use nalgebra::{DMatrix, DVector};

use super::chart::ChartMetric;
use super::frame::FramePoint;
use crate::error::{GeomError, Result};

/// Christoffel symbols `Γᵏ_ij`, stored as `k * n² + i * n + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    pub n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    #[inline]
    fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.data[(k * n + i) * n + j] = v;
    }

    /// `Σ_ij Γᵏ_ij u^i v^j` for each `k`.
    pub fn contract(&self, u: &[f64], v: &[f64]) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    s += self.get(k, i, j) * u[i] * v[j];
                }
            }
            s
        })
    }

    /// Covariant derivative along `u` of a field with chart derivative `dv`:
    /// `dv + Γ(u, v)`.
    pub fn covariant(&self, u: &[f64], v: &[f64], dv: &[f64]) -> DVector<f64> {
        self.contract(u, v) + DVector::from_column_slice(dv)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

fn first_kind(dg: &[DMatrix<f64>], m: usize, i: usize, j: usize) -> f64 {
    0.5 * (dg[i][(m, j)] + dg[j][(m, i)] - dg[m][(i, j)])
}

fn christoffel_from(ginv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Christoffel {
    let n = ginv.nrows();
    let mut gam = Christoffel::zeros(n);
    for i in 0..n {
        for j in i..n {
            for k in 0..n {
                let mut s = 0.0;
                for m in 0..n {
                    s += ginv[(k, m)] * first_kind(dg, m, i, j);
                }
                gam.set(k, i, j, s);
                gam.set(k, j, i, s);
            }
        }
    }
    gam
}

/// Levi-Civita Christoffel symbols at `x`.
pub fn christoffel(chart: &ChartMetric, x: &[f64]) -> Result<Christoffel> {
    let ginv = chart.metric_inverse(x)?;
    let dg = chart.metric_derivatives(x)?;
    Ok(christoffel_from(&ginv, &dg))
}

/// Christoffel symbols from central differences of the metric with step `h`,
/// ignoring analytic derivatives.
pub fn christoffel_fd(chart: &ChartMetric, x: &[f64], h: f64) -> Result<Christoffel> {
    let ginv = chart.metric_inverse(x)?;
    let dg = chart.fd_metric_derivatives(x, h)?;
    Ok(christoffel_from(&ginv, &dg))
}

/// Riemann tensor in both index positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Riemann {
    pub n: usize,
    /// `Rˡ_ijk` stored as `((l n + i) n + j) n + k`.
    up: Vec<f64>,
    /// `R_ijkl` stored as `((i n + j) n + k) n + l`.
    low: Vec<f64>,
}

impl Riemann {
    #[inline]
    fn idx(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.n + b) * self.n + c) * self.n + d
    }

    /// `Rˡ_ijk`.
    pub fn up(&self, l: usize, i: usize, j: usize, k: usize) -> f64 {
        self.up[self.idx(l, i, j, k)]
    }

    /// `R_ijkl = g(R(∂_i,∂_j)∂_k, ∂_l)`.
    pub fn low(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.low[self.idx(i, j, k, l)]
    }

    /// `g(R(X,Y)Z, W)` for chart vectors.
    pub fn eval(&self, x: &[f64], y: &[f64], z: &[f64], w: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let xy = x[i] * y[j];
                if xy == 0.0 {
                    continue;
                }
                for k in 0..n {
                    let xyz = xy * z[k];
                    if xyz == 0.0 {
                        continue;
                    }
                    for l in 0..n {
                        s += self.low(i, j, k, l) * xyz * w[l];
                    }
                }
            }
        }
        s
    }

    /// Covector `W ↦ g(R(X,Y)Z, W)` in chart components.
    pub fn eval_form(&self, x: &[f64], y: &[f64], z: &[f64]) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |l, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        s += self.low(i, j, k, l) * x[i] * y[j] * z[k];
                    }
                }
            }
            s
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.low.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest violation of `R_ijkl = −R_jikl = −R_ijlk` and of the first
    /// Bianchi identity.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let r = self.low(i, j, k, l);
                        d = d.max((r + self.low(j, i, k, l)).abs());
                        d = d.max((r + self.low(i, j, l, k)).abs());
                        let b = self.up(l, i, j, k) + self.up(l, j, k, i) + self.up(l, k, i, j);
                        d = d.max(b.abs());
                    }
                }
            }
        }
        d
    }
}

/// Riemann tensor at `x` from metric values and first/second partials.
pub fn riemann(chart: &ChartMetric, x: &[f64]) -> Result<Riemann> {
    let g = chart.metric(x)?;
    let ginv = g.clone().cholesky().expect("checked").inverse();
    let dg = chart.metric_derivatives(x)?;
    let d2g = chart.metric_second_derivatives(x)?;
    let n = chart.dim();
    let gam = christoffel_from(&ginv, &dg);

    // dgam[l] = ∂_l Γᵏ_ij
    let mut dgam = Vec::with_capacity(n);
    for l in 0..n {
        let dginv = -(&ginv * &dg[l] * &ginv);
        let mut c = Christoffel::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        let d_first =
                            0.5 * (d2g[l][i][(m, j)] + d2g[l][j][(m, i)] - d2g[l][m][(i, j)]);
                        s += dginv[(k, m)] * first_kind(&dg, m, i, j) + ginv[(k, m)] * d_first;
                    }
                    c.set(k, i, j, s);
                }
            }
        }
        dgam.push(c);
    }

    let len = n * n * n * n;
    let mut out = Riemann {
        n,
        up: vec![0.0; len],
        low: vec![0.0; len],
    };
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = dgam[i].get(l, j, k) - dgam[j].get(l, i, k);
                    for m in 0..n {
                        s += gam.get(l, i, m) * gam.get(m, j, k) - gam.get(l, j, m) * gam.get(m, i, k);
                    }
                    let id = out.idx(l, i, j, k);
                    out.up[id] = s;
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += out.up(m, i, j, k) * g[(m, l)];
                    }
                    let id = out.idx(i, j, k, l);
                    out.low[id] = s;
                }
            }
        }
    }
    Ok(out)
}

/// Gaussian curvature of a 2D chart: `g(R(∂₁,∂₂)∂₂,∂₁) / det g`.
pub fn gauss_curvature(chart: &ChartMetric, x: &[f64]) -> Result<f64> {
    if chart.dim() != 2 {
        return Err(GeomError::Dimension {
            expected: 2,
            got: chart.dim(),
        });
    }
    let r = riemann(chart, x)?;
    let g = chart.metric(x)?;
    Ok(r.low(0, 1, 1, 0) / g.determinant())
}

/// Chart gradient of the Gaussian curvature by central differences.
pub fn gauss_curvature_gradient(chart: &ChartMetric, x: &[f64]) -> Result<DVector<f64>> {
    let h = 1e-5 * (1.0 + super::chart::norm(x));
    let mut out = DVector::zeros(2);
    let mut xp = x.to_vec();
    for k in 0..2 {
        xp[k] = x[k] + h;
        let kp = gauss_curvature(chart, &xp)?;
        xp[k] = x[k] - h;
        let km = gauss_curvature(chart, &xp)?;
        xp[k] = x[k];
        out[k] = (kp - km) / (2.0 * h);
    }
    Ok(out)
}

/// `Ω(f)(X,Y)_{αβ} = g(R(X,Y) f_β, f_α)` for chart vectors `X`, `Y` at the
/// frame's base point. The result is skew-symmetric.
pub fn curvature_form(r: &Riemann, f: &DMatrix<f64>, x: &[f64], y: &[f64]) -> DMatrix<f64> {
    let n = r.n;
    let cols: Vec<Vec<f64>> = (0..n).map(|a| f.column(a).iter().copied().collect()).collect();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            let v = r.eval(x, y, &cols[b], &cols[a]);
            out[(a, b)] = v;
            out[(b, a)] = -v;
        }
    }
    out
}

/// Curvature form of a frame evaluated on two tangent vectors at its base point.
pub fn curvature_form_in_frame(
    chart: &ChartMetric,
    fp: &FramePoint,
    x: &super::frame::TangentAtPoint,
    y: &super::frame::TangentAtPoint,
) -> Result<DMatrix<f64>> {
    if !same_point(&x.x, &fp.x) || !same_point(&y.x, &fp.x) {
        return Err(GeomError::BasePointMismatch);
    }
    let r = riemann(chart, fp.x.as_slice())?;
    Ok(curvature_form(&r, &fp.f, x.v.as_slice(), y.v.as_slice()))
}

fn same_point(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.len() == b.len() && (a - b).amax() <= 1e-12 * (1.0 + b.amax())
}

/// Index lowering `v ↦ g(v, ·)`.
pub fn flat(chart: &ChartMetric, x: &[f64], v: &[f64]) -> Result<DVector<f64>> {
    Ok(chart.metric(x)? * DVector::from_column_slice(v))
}

/// Index raising, inverse of [`flat`].
pub fn sharp(chart: &ChartMetric, x: &[f64], p: &[f64]) -> Result<DVector<f64>> {
    let g = chart.metric(x)?;
    let chol = g.cholesky().expect("checked positive definite");
    Ok(chol.solve(&DVector::from_column_slice(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::chart::{ChartSpec, Profile};
    use std::f64::consts::PI;

    #[test]
    fn flat_chart_has_no_connection() {
        let c = ChartMetric::euclidean(3);
        assert_eq!(christoffel(&c, &[1.0, 2.0, 3.0]).unwrap().max_abs(), 0.0);
        assert_eq!(riemann(&c, &[1.0, 2.0, 3.0]).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn sphere_christoffels_by_hand() {
        // g = diag(1, sin²φ): Γ^φ_θθ = −sinφ cosφ, Γ^θ_φθ = cotφ
        let c = ChartMetric::sphere(1.0);
        let gam = christoffel(&c, &[PI / 3.0, 0.0]).unwrap();
        assert!((gam.get(0, 1, 1) + 3f64.sqrt() / 4.0).abs() < 1e-14);
        assert!((gam.get(1, 0, 1) - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        assert!((gam.get(1, 1, 0) - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        assert!(gam.get(0, 0, 0).abs() < 1e-15);
    }

    #[test]
    fn poincare_disk_origin_is_symmetric() {
        let c = ChartMetric::hyperbolic_disk(1.0);
        assert!(christoffel(&c, &[0.0, 0.0]).unwrap().max_abs() < 1e-15);
    }

    /// Brioschi formula for an orthogonal metric `E du² + G dv²`.
    fn brioschi_diag(e: impl Fn(f64, f64) -> f64, gg: impl Fn(f64, f64) -> f64, u: f64, v: f64) -> f64 {
        let h = 1e-4;
        let sq = |u: f64, v: f64| (e(u, v) * gg(u, v)).sqrt();
        let a = |u: f64, v: f64| ((gg(u + h, v).sqrt() - gg(u - h, v).sqrt()) / (2.0 * h)) / e(u, v).sqrt();
        let b = |u: f64, v: f64| ((e(u, v + h).sqrt() - e(u, v - h).sqrt()) / (2.0 * h)) / gg(u, v).sqrt();
        let da = (a(u + h, v) - a(u - h, v)) / (2.0 * h);
        let db = (b(u, v + h) - b(u, v - h)) / (2.0 * h);
        -(da + db) / sq(u, v)
    }

    #[test]
    fn gauss_curvature_against_independent_formulas() {
        for r in [0.5, 1.0, 2.0] {
            let c = ChartMetric::sphere(r);
            let x = [1.0, 0.3];
            let k = gauss_curvature(&c, &x).unwrap();
            let oracle = brioschi_diag(|_, _| r * r, |u, _| r * r * u.sin().powi(2), x[0], x[1]);
            assert!((k - oracle).abs() < 1e-6, "r={r}: {k} vs {oracle}");
            assert!((k - 1.0 / (r * r)).abs() < 1e-10);
        }
        // conformal factor λ: κ = −Δ log λ / (2λ) for g = λ δ
        let d = ChartMetric::hyperbolic_disk(1.0);
        for x in [[0.0, 0.0], [0.3, -0.5], [0.7, 0.1]] {
            let lam = |a: f64, b: f64| 4.0 / (1.0 - a * a - b * b).powi(2);
            let h = 1e-4;
            let ll = |a: f64, b: f64| lam(a, b).ln();
            let lap = (ll(x[0] + h, x[1]) + ll(x[0] - h, x[1]) + ll(x[0], x[1] + h)
                + ll(x[0], x[1] - h)
                - 4.0 * ll(x[0], x[1]))
                / (h * h);
            let oracle = -lap / (2.0 * lam(x[0], x[1]));
            let k = gauss_curvature(&d, &x).unwrap();
            assert!((k - oracle).abs() < 1e-5);
            assert!((k + 1.0).abs() < 1e-10);
        }
        // paraboloid z = c r²: κ = 4c² / (1 + 4c² r²)²
        let p = ChartMetric::paraboloid(0.8);
        let x = [0.4, -0.3];
        let r2: f64 = 0.25;
        let expect = 4.0 * 0.64 / (1.0 + 4.0 * 0.64 * r2).powi(2);
        assert!((gauss_curvature(&p, &x).unwrap() - expect).abs() < 1e-12);
        // surface of revolution: κ = −r''/r
        let t = ChartMetric::revolution(Profile::Torus);
        let s: f64 = 0.7;
        assert!((gauss_curvature(&t, &[s, 1.0]).unwrap() - s.cos() / (2.0 + s.cos())).abs() < 1e-12);
        assert!(gauss_curvature(&ChartMetric::euclidean(2), &[3.0, 1.0]).unwrap() == 0.0);
    }

    #[test]
    fn gauss_curvature_requires_2d() {
        assert!(gauss_curvature(&ChartMetric::euclidean(3), &[0.0; 3]).is_err());
    }

    #[test]
    fn riemann_symmetries_hold() {
        for spec in ["sphere(1.3)", "paraboloid(0.6)", "revolution(bump)", "hyperbolic-disk(1)"] {
            let c = ChartSpec::parse(spec).unwrap().build().unwrap();
            let r = riemann(&c, &[0.9, 0.2]).unwrap();
            assert!(r.symmetry_defect() < 1e-10, "{spec}");
        }
    }

    #[test]
    fn numeric_derivatives_reproduce_curvature() {
        let c = ChartMetric::paraboloid(0.5).without_derivatives();
        let x = [0.2, 0.1];
        let k = gauss_curvature(&c, &x).unwrap();
        let r2: f64 = 0.05;
        assert!((k - 1.0 / (1.0 + r2).powi(2)).abs() < 1e-5);
    }

    #[test]
    fn fd_christoffel_error_is_second_order() {
        for spec in ["sphere(1)", "revolution(torus)", "hyperbolic-disk(1)", "revolution(bump)"] {
            let c = ChartSpec::parse(spec).unwrap().build().unwrap();
            let x = [0.9, 0.3];
            let exact = christoffel(&c, &x).unwrap();
            let e1 = christoffel_fd(&c, &x, 1e-2).unwrap().max_diff(&exact);
            let e2 = christoffel_fd(&c, &x, 5e-3).unwrap().max_diff(&exact);
            let ratio = e1 / e2;
            assert!((3.5..=4.5).contains(&ratio), "{spec}: ratio {ratio} ({e1:e}, {e2:e})");
        }
    }

    #[test]
    fn sharp_flat_roundtrip() {
        let c = ChartMetric::sphere(1.0);
        let x = [PI / 2.0, 0.4];
        assert_eq!(flat(&c, &x, &[1.0, 1.0]).unwrap().as_slice(), &[1.0, 1.0]);
        let y = [0.7, 2.0];
        let v = [0.3, -1.7];
        let back = sharp(&c, &y, flat(&c, &y, &v).unwrap().as_slice()).unwrap();
        assert!((back[0] - v[0]).abs() < 1e-12 && (back[1] - v[1]).abs() < 1e-12);
    }
}
