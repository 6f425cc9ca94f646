//! Coordinate submersions `π(x, y) = x` with an Ehresmann connection whose
//! horizontal lifts are `h∂_{x_i} = ∂_{x_i} + Σ_κ A_iᵏ(x, y) ∂_{y_κ}`.
//!
//! Cotangent vectors upstairs are written `p̃ = Σ a_i π*dx_i + Σ b_κ Υ*_κ`
//! with `Υ_κ = ∂_{y_κ}`, so `π²(p̃) = (x, a)` and `b` is the vertical part.
//! The lifted flow of `H̃ = H ∘ π²` is integrated in canonical coordinates
//! `(x, y, P_x, P_y)` with `a = P_x + Aᵀ b`, `b = P_y`; the projected flow is
//! integrated independently from the curvature force law and the transport
//! of the vertical covector.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{christoffel, BaseCurve, ChartMetric, ChartSpec};
use crate::ode::{integrate, IntegrateOptions, OdeSystem, Trajectory};

/// Horizontal-lift data of a coordinate submersion.
pub trait SubmersionTestbed: Send + Sync {
    fn base_dim(&self) -> usize;
    fn fiber_dim(&self) -> usize;
    fn label(&self) -> String;

    fn contains(&self, _x: &[f64], _y: &[f64]) -> bool {
        true
    }

    /// `A` as a `ν × n` matrix, entry `(κ, i) = A_iᵏ`.
    fn lift_coefficients(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>>;

    /// `(∂A/∂x_m for each m, ∂A/∂y_μ for each μ)`; central differences by default.
    fn lift_derivatives(&self, x: &[f64], y: &[f64]) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        fd_lift_derivatives(self, x, y)
    }
}

fn fd_lift_derivatives<T: SubmersionTestbed + ?Sized>(
    tb: &T,
    x: &[f64],
    y: &[f64],
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let scale = 1.0 + x.iter().chain(y).map(|v| v * v).sum::<f64>().sqrt();
    let h = 1e-5 * scale;
    let mut xp = x.to_vec();
    let mut dx = Vec::with_capacity(x.len());
    for m in 0..x.len() {
        xp[m] = x[m] + h;
        let ap = tb.lift_coefficients(&xp, y)?;
        xp[m] = x[m] - h;
        let am = tb.lift_coefficients(&xp, y)?;
        xp[m] = x[m];
        dx.push((ap - am) / (2.0 * h));
    }
    let mut yp = y.to_vec();
    let mut dy = Vec::with_capacity(y.len());
    for m in 0..y.len() {
        yp[m] = y[m] + h;
        let ap = tb.lift_coefficients(x, &yp)?;
        yp[m] = y[m] - h;
        let am = tb.lift_coefficients(x, &yp)?;
        yp[m] = y[m];
        dy.push((ap - am) / (2.0 * h));
    }
    Ok((dx, dy))
}

fn check_domain<T: SubmersionTestbed + ?Sized>(tb: &T, x: &[f64], y: &[f64]) -> Result<()> {
    if x.iter().chain(y).all(|v| v.is_finite()) && tb.contains(x, y) {
        Ok(())
    } else {
        let mut point = x.to_vec();
        point.extend_from_slice(y);
        Err(GeomError::OutOfDomain {
            chart: tb.label(),
            point,
        })
    }
}

/// Product `ℝⁿ × ℝ^ν` with the flat connection `A ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct TrivialTestbed {
    pub n: usize,
    pub nu: usize,
}

impl SubmersionTestbed for TrivialTestbed {
    fn base_dim(&self) -> usize {
        self.n
    }
    fn fiber_dim(&self) -> usize {
        self.nu
    }
    fn label(&self) -> String {
        format!("trivial({},{})", self.n, self.nu)
    }
    fn lift_coefficients(&self, _x: &[f64], _y: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.nu, self.n))
    }
    fn lift_derivatives(&self, _x: &[f64], _y: &[f64]) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        let z = DMatrix::zeros(self.nu, self.n);
        Ok((vec![z.clone(); self.n], vec![z; self.nu]))
    }
}

/// `ℝ² × ℝ` with `A₁ = −x₂/2`, `A₂ = x₁/2`; curvature `R¹₁₂ = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeisenbergTestbed;

impl SubmersionTestbed for HeisenbergTestbed {
    fn base_dim(&self) -> usize {
        2
    }
    fn fiber_dim(&self) -> usize {
        1
    }
    fn label(&self) -> String {
        "heisenberg".into()
    }
    fn lift_coefficients(&self, x: &[f64], _y: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(1, 2, &[-0.5 * x[1], 0.5 * x[0]]))
    }
    fn lift_derivatives(&self, _x: &[f64], _y: &[f64]) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        Ok((
            vec![
                DMatrix::from_row_slice(1, 2, &[0.0, 0.5]),
                DMatrix::from_row_slice(1, 2, &[-0.5, 0.0]),
            ],
            vec![DMatrix::zeros(1, 2)],
        ))
    }
}

/// Testbed given by a closure for `A`; derivatives by central differences.
pub struct FnTestbed<F> {
    pub n: usize,
    pub nu: usize,
    pub label: String,
    pub lift: F,
}

impl<F> SubmersionTestbed for FnTestbed<F>
where
    F: Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync,
{
    fn base_dim(&self) -> usize {
        self.n
    }
    fn fiber_dim(&self) -> usize {
        self.nu
    }
    fn label(&self) -> String {
        self.label.clone()
    }
    fn lift_coefficients(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        Ok((self.lift)(x, y))
    }
}

/// Rolling of two surfaces lifted to `F(M) × F(M̂)` and viewed as a
/// submersion onto `M`. Fiber coordinates `y = (ψ, x̂₁, x̂₂, ψ̂)`: frames are
/// `f = E R(ψ)`, `f̂ = Ê R(ψ̂)` with `E`, `Ê` the Gram–Schmidt frames of the
/// coordinate bases. The connection is the no-slip/no-twist distribution, so
/// horizontal curves are exactly the developments of base curves.
#[derive(Debug, Clone)]
pub struct FrameBundleTestbed {
    pub m: ChartMetric,
    pub mh: ChartMetric,
}

/// Gram–Schmidt frame of the coordinate basis of a 2D chart, and the
/// connection one-form `w_i = g(∇_{∂_i} e₁, e₂)`.
pub(crate) fn reference_frame_2d(chart: &ChartMetric, x: &[f64]) -> Result<(DMatrix<f64>, [f64; 2])> {
    let g = chart.metric(x)?;
    let e1 = DVector::from_vec(vec![1.0 / g[(0, 0)].sqrt(), 0.0]);
    let mut v = DVector::from_vec(vec![-g[(0, 1)] / g[(0, 0)], 1.0]);
    let nv = (v.transpose() * &g * &v)[0].sqrt();
    v /= nv;
    let e = DMatrix::from_columns(&[e1.clone(), v.clone()]);
    let gam = christoffel(chart, x)?;
    let ge2 = &g * &v;
    let mut w = [0.0; 2];
    for (i, wi) in w.iter_mut().enumerate() {
        let mut d = [0.0; 2];
        d[i] = 1.0;
        // ∂_i e₁ is parallel to ∂₁ ⟂ e₂, so only the Christoffel term survives
        let cov = gam.contract(&d, e1.as_slice());
        *wi = ge2.dot(&cov);
    }
    Ok((e, w))
}

pub(crate) fn rot2(a: f64) -> DMatrix<f64> {
    let (s, c) = a.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

impl FrameBundleTestbed {
    pub fn new(m: ChartMetric, mh: ChartMetric) -> Result<Self> {
        if m.dim() != 2 || mh.dim() != 2 {
            return Err(GeomError::Dimension {
                expected: 2,
                got: m.dim().max(mh.dim()),
            });
        }
        Ok(Self { m, mh })
    }

    /// Fiber coordinates `(ψ, x̂, ψ̂)` of a frame pair at `x`, `x̂`.
    pub fn fiber_coordinates(&self, x: &[f64], f: &DMatrix<f64>, xh: &[f64], fh: &DMatrix<f64>) -> Result<Vec<f64>> {
        let angle = |chart: &ChartMetric, p: &[f64], fr: &DMatrix<f64>| -> Result<f64> {
            let (e, _) = reference_frame_2d(chart, p)?;
            let g = chart.metric(p)?;
            // R(ψ) = Eᵀ g f
            let r = e.transpose() * g * fr;
            Ok(r[(1, 0)].atan2(r[(0, 0)]))
        };
        Ok(vec![angle(&self.m, x, f)?, xh[0], xh[1], angle(&self.mh, xh, fh)?])
    }

    /// Frames `(f, f̂)` encoded by fiber coordinates at `x`.
    pub fn frames(&self, x: &[f64], y: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (e, _) = reference_frame_2d(&self.m, x)?;
        let (eh, _) = reference_frame_2d(&self.mh, &y[1..3])?;
        Ok((e * rot2(y[0]), eh * rot2(y[3])))
    }
}

impl SubmersionTestbed for FrameBundleTestbed {
    fn base_dim(&self) -> usize {
        2
    }
    fn fiber_dim(&self) -> usize {
        4
    }
    fn label(&self) -> String {
        let name = |c: &ChartMetric| c.spec.map(|s| s.to_string()).unwrap_or_else(|| c.label.clone());
        format!("frame-bundle({},{})", name(&self.m), name(&self.mh))
    }
    fn contains(&self, x: &[f64], y: &[f64]) -> bool {
        self.m.contains(x) && self.mh.contains(&y[1..3])
    }
    fn lift_coefficients(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        check_domain(self, x, y)?;
        let xh = &y[1..3];
        let (e, w) = reference_frame_2d(&self.m, x)?;
        let (eh, wh) = reference_frame_2d(&self.mh, xh)?;
        let g = self.m.metric(x)?;
        // chart map T_xM → T_x̂M̂ of q = f̂ f⁻¹
        let q = eh * rot2(y[3] - y[0]) * e.transpose() * g;
        let mut a = DMatrix::zeros(4, 2);
        for i in 0..2 {
            let v = q.column(i);
            a[(0, i)] = -w[i];
            a[(1, i)] = v[0];
            a[(2, i)] = v[1];
            a[(3, i)] = -(wh[0] * v[0] + wh[1] * v[1]);
        }
        Ok(a)
    }
}

/// Catalog description of a testbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestbedSpec {
    Trivial { n: usize, nu: usize },
    Heisenberg,
    FrameBundle { m: ChartSpec, mh: ChartSpec },
}

impl TestbedSpec {
    pub fn build(&self) -> Result<Box<dyn SubmersionTestbed>> {
        Ok(match *self {
            TestbedSpec::Trivial { n, nu } => {
                if n == 0 {
                    return Err(GeomError::InvalidParameter("base dimension must be positive".into()));
                }
                Box::new(TrivialTestbed { n, nu })
            }
            TestbedSpec::Heisenberg => Box::new(HeisenbergTestbed),
            TestbedSpec::FrameBundle { m, mh } => Box::new(FrameBundleTestbed::new(m.build()?, mh.build()?)?),
        })
    }
}

/// Connection data at a point: `gamma_bar[i][(μ, κ)] = ∂_{y_κ} A_iᵘ` and
/// `curvature[κ][(i, j)] = Rᵏ_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionCoefficients {
    pub gamma_bar: Vec<DMatrix<f64>>,
    pub curvature: Vec<DMatrix<f64>>,
}

pub fn connection_coefficients(
    tb: &dyn SubmersionTestbed,
    x: &[f64],
    y: &[f64],
) -> Result<ConnectionCoefficients> {
    check_domain(tb, x, y)?;
    let (n, nu) = (tb.base_dim(), tb.fiber_dim());
    let a = tb.lift_coefficients(x, y)?;
    let (dx, dy) = tb.lift_derivatives(x, y)?;
    let gamma_bar = (0..n)
        .map(|i| DMatrix::from_fn(nu, nu, |mu, kappa| dy[kappa][(mu, i)]))
        .collect();
    let curvature = (0..nu)
        .map(|kappa| {
            DMatrix::from_fn(n, n, |i, j| {
                let mut r = dx[i][(kappa, j)] - dx[j][(kappa, i)];
                for mu in 0..nu {
                    r += a[(mu, i)] * dy[mu][(kappa, j)] - a[(mu, j)] * dy[mu][(kappa, i)];
                }
                r
            })
        })
        .collect();
    Ok(ConnectionCoefficients { gamma_bar, curvature })
}

/// A Hamiltonian on `T*M` in chart coordinates `(x, p)`.
pub trait BaseHamiltonian: Send + Sync {
    fn label(&self) -> String;
    fn value(&self, x: &[f64], p: &[f64]) -> Result<f64>;

    /// `(∂H/∂x, ∂H/∂p)`; central differences by default.
    fn gradient(&self, x: &[f64], p: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let h = 1e-6;
        let mut xp = x.to_vec();
        let mut gx = DVector::zeros(x.len());
        for k in 0..x.len() {
            xp[k] = x[k] + h;
            let hp = self.value(&xp, p)?;
            xp[k] = x[k] - h;
            let hm = self.value(&xp, p)?;
            xp[k] = x[k];
            gx[k] = (hp - hm) / (2.0 * h);
        }
        let mut pp = p.to_vec();
        let mut gp = DVector::zeros(p.len());
        for k in 0..p.len() {
            pp[k] = p[k] + h;
            let hp = self.value(x, &pp)?;
            pp[k] = p[k] - h;
            let hm = self.value(x, &pp)?;
            pp[k] = p[k];
            gp[k] = (hp - hm) / (2.0 * h);
        }
        Ok((gx, gp))
    }
}

/// `H(x, p) = ½ pᵀ g(x)⁻¹ p + U(x)`.
pub struct RiemannianHamiltonian {
    pub chart: ChartMetric,
    potential: Option<Box<dyn Fn(&[f64]) -> (f64, DVector<f64>) + Send + Sync>>,
}

impl RiemannianHamiltonian {
    pub fn new(chart: ChartMetric) -> Self {
        Self { chart, potential: None }
    }

    /// Adds a potential given as `x ↦ (U(x), ∇U(x))`.
    pub fn with_potential(mut self, u: impl Fn(&[f64]) -> (f64, DVector<f64>) + Send + Sync + 'static) -> Self {
        self.potential = Some(Box::new(u));
        self
    }
}

impl BaseHamiltonian for RiemannianHamiltonian {
    fn label(&self) -> String {
        let pot = if self.potential.is_some() { "+U" } else { "" };
        format!("kinetic[{}]{pot}", self.chart.label)
    }

    fn value(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        let ginv = self.chart.metric_inverse(x)?;
        let p = DVector::from_column_slice(p);
        let u = self.potential.as_ref().map_or(0.0, |f| f(x).0);
        Ok(0.5 * (p.transpose() * ginv * &p)[0] + u)
    }

    fn gradient(&self, x: &[f64], p: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let ginv = self.chart.metric_inverse(x)?;
        let dg = self.chart.metric_derivatives(x)?;
        let sharp_p = &ginv * DVector::from_column_slice(p);
        let mut gx = DVector::from_fn(x.len(), |k, _| -0.5 * (sharp_p.transpose() * &dg[k] * &sharp_p)[0]);
        if let Some(f) = &self.potential {
            gx += f(x).1;
        }
        Ok((gx, sharp_p))
    }
}

/// Cotangent vector upstairs in `(x, y, a, b)` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotangentState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl CotangentState {
    pub fn new(x: &[f64], y: &[f64], a: &[f64], b: &[f64]) -> Self {
        Self {
            x: DVector::from_column_slice(x),
            y: DVector::from_column_slice(y),
            a: DVector::from_column_slice(a),
            b: DVector::from_column_slice(b),
        }
    }

    /// `π²(p̃) = (x, a)`.
    pub fn project(&self) -> (DVector<f64>, DVector<f64>) {
        (self.x.clone(), self.a.clone())
    }
}

struct LiftedSystem<'a> {
    tb: &'a dyn SubmersionTestbed,
    h: &'a dyn BaseHamiltonian,
}

impl OdeSystem for LiftedSystem<'_> {
    fn dim(&self) -> usize {
        2 * (self.tb.base_dim() + self.tb.fiber_dim())
    }

    fn rhs(&self, _t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        let (n, nu) = (self.tb.base_dim(), self.tb.fiber_dim());
        let x = &s[..n];
        let y = &s[n..n + nu];
        let px = DVector::from_column_slice(&s[n + nu..2 * n + nu]);
        let b = DVector::from_column_slice(&s[2 * n + nu..]);
        check_domain(self.tb, x, y)?;
        let amat = self.tb.lift_coefficients(x, y)?;
        let (dax, day) = self.tb.lift_derivatives(x, y)?;
        let a = &px + amat.transpose() * &b;
        let (hx, hp) = self.h.gradient(x, a.as_slice())?;
        let yd = &amat * &hp;
        for i in 0..n {
            ds[i] = hp[i];
            ds[n + nu + i] = -hx[i] - b.dot(&(&dax[i] * &hp));
        }
        for k in 0..nu {
            ds[n + k] = yd[k];
            ds[2 * n + nu + k] = -b.dot(&(&day[k] * &hp));
        }
        Ok(())
    }
}

/// Integral curve of `H̃ = H ∘ π²` with state `[x, y, P_x, P_y]`.
#[derive(Debug, Clone)]
pub struct LiftedRun {
    pub n: usize,
    pub nu: usize,
    pub trajectory: Trajectory,
}

impl LiftedRun {
    pub fn cotangent_at(&self, tb: &dyn SubmersionTestbed, t: f64) -> Result<CotangentState> {
        let s = self.trajectory.sample(t);
        self.decode(tb, &s)
    }

    fn decode(&self, tb: &dyn SubmersionTestbed, s: &[f64]) -> Result<CotangentState> {
        let (n, nu) = (self.n, self.nu);
        let x = &s[..n];
        let y = &s[n..n + nu];
        let amat = tb.lift_coefficients(x, y)?;
        let b = DVector::from_column_slice(&s[2 * n + nu..]);
        let a = DVector::from_column_slice(&s[n + nu..2 * n + nu]) + amat.transpose() * &b;
        Ok(CotangentState {
            x: DVector::from_column_slice(x),
            y: DVector::from_column_slice(y),
            a,
            b,
        })
    }

    /// `sup_t |H̃(t) − H̃(0)|` at nodes and step midpoints.
    pub fn energy_drift(&self, tb: &dyn SubmersionTestbed, h: &dyn BaseHamiltonian) -> Result<f64> {
        let c0 = self.decode(tb, self.trajectory.initial_state())?;
        let e0 = h.value(c0.x.as_slice(), c0.a.as_slice())?;
        let mut d: f64 = 0.0;
        for t in self.trajectory.nodes_and_midpoints() {
            let c = self.cotangent_at(tb, t)?;
            d = d.max((h.value(c.x.as_slice(), c.a.as_slice())? - e0).abs());
        }
        Ok(d)
    }
}

fn check_dims(tb: &dyn SubmersionTestbed, p: &CotangentState) -> Result<()> {
    let (n, nu) = (tb.base_dim(), tb.fiber_dim());
    for (len, want) in [(p.x.len(), n), (p.a.len(), n), (p.y.len(), nu), (p.b.len(), nu)] {
        if len != want {
            return Err(GeomError::Dimension { expected: want, got: len });
        }
    }
    check_domain(tb, p.x.as_slice(), p.y.as_slice())
}

pub fn lifted_hamiltonian_flow(
    tb: &dyn SubmersionTestbed,
    h: &dyn BaseHamiltonian,
    p0: &CotangentState,
    t_end: f64,
    tol: f64,
) -> Result<LiftedRun> {
    check_dims(tb, p0)?;
    let amat = tb.lift_coefficients(p0.x.as_slice(), p0.y.as_slice())?;
    let px = &p0.a - amat.transpose() * &p0.b;
    let mut s0: Vec<f64> = p0.x.iter().chain(p0.y.iter()).copied().collect();
    s0.extend(px.iter());
    s0.extend(p0.b.iter());
    let sys = LiftedSystem { tb, h };
    let trajectory = integrate(&sys, 0.0, &s0, t_end, &IntegrateOptions::with_tol(tol));
    Ok(LiftedRun {
        n: tb.base_dim(),
        nu: tb.fiber_dim(),
        trajectory,
    })
}

struct ProjectedSystem<'a> {
    tb: &'a dyn SubmersionTestbed,
    h: &'a dyn BaseHamiltonian,
}

impl OdeSystem for ProjectedSystem<'_> {
    fn dim(&self) -> usize {
        2 * (self.tb.base_dim() + self.tb.fiber_dim())
    }

    fn rhs(&self, _t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        let (n, nu) = (self.tb.base_dim(), self.tb.fiber_dim());
        let x = &s[..n];
        let a = &s[n..2 * n];
        let y = &s[2 * n..2 * n + nu];
        let b = &s[2 * n + nu..];
        let cc = connection_coefficients(self.tb, x, y)?;
        let amat = self.tb.lift_coefficients(x, y)?;
        let (hx, hp) = self.h.gradient(x, a)?;
        for j in 0..n {
            let mut force = 0.0;
            for (kappa, r) in cc.curvature.iter().enumerate() {
                for i in 0..n {
                    force += b[kappa] * r[(i, j)] * hp[i];
                }
            }
            ds[j] = hp[j];
            ds[n + j] = -hx[j] + force;
        }
        let yd = &amat * &hp;
        for k in 0..nu {
            ds[2 * n + k] = yd[k];
            let mut bd = 0.0;
            for i in 0..n {
                for mu in 0..nu {
                    bd -= hp[i] * b[mu] * cc.gamma_bar[i][(mu, k)];
                }
            }
            ds[2 * n + nu + k] = bd;
        }
        Ok(())
    }
}

/// Solution of the projected force law with simultaneous horizontal lift
/// and covector transport; state `[x, a, y, b]`.
#[derive(Debug, Clone)]
pub struct ProjectedRun {
    pub n: usize,
    pub nu: usize,
    pub trajectory: Trajectory,
}

impl ProjectedRun {
    pub fn cotangent_at(&self, t: f64) -> CotangentState {
        let s = self.trajectory.sample(t);
        let (n, nu) = (self.n, self.nu);
        CotangentState::new(&s[..n], &s[2 * n..2 * n + nu], &s[n..2 * n], &s[2 * n + nu..])
    }
}

/// Integrates `λ̇ = H⃗ + vl(β R(γ̇, ·))` with `∇̄_γ̇ β = 0` from `λ0 = (x, a)`,
/// `β0 = b` and the horizontal lift starting at fiber point `y0`.
pub fn projected_force_flow(
    tb: &dyn SubmersionTestbed,
    h: &dyn BaseHamiltonian,
    x0: &[f64],
    a0: &[f64],
    y0: &[f64],
    b0: &[f64],
    t_end: f64,
    tol: f64,
) -> Result<ProjectedRun> {
    check_dims(tb, &CotangentState::new(x0, y0, a0, b0))?;
    let mut s0 = x0.to_vec();
    s0.extend_from_slice(a0);
    s0.extend_from_slice(y0);
    s0.extend_from_slice(b0);
    let sys = ProjectedSystem { tb, h };
    let trajectory = integrate(&sys, 0.0, &s0, t_end, &IntegrateOptions::with_tol(tol));
    Ok(ProjectedRun {
        n: tb.base_dim(),
        nu: tb.fiber_dim(),
        trajectory,
    })
}

/// Transported vertical covector along a lifted curve.
#[derive(Debug, Clone)]
pub struct FormTransport {
    pub horizontality_residual: f64,
    pub trajectory: Trajectory,
}

impl FormTransport {
    pub fn at(&self, t: f64) -> DVector<f64> {
        DVector::from_vec(self.trajectory.sample(t))
    }
}

/// Maximum of `|ẏ − A ẋ|` over `samples + 1` points of a lifted curve with
/// coordinates `[x, y]`.
pub fn horizontality_residual(tb: &dyn SubmersionTestbed, curve: &dyn BaseCurve, samples: usize) -> Result<f64> {
    let n = tb.base_dim();
    let (t0, t1) = curve.interval();
    let mut r: f64 = 0.0;
    for k in 0..=samples {
        let t = t0 + (t1 - t0) * k as f64 / samples as f64;
        let p = curve.point(t);
        let v = curve.velocity(t);
        let amat = tb.lift_coefficients(&p.as_slice()[..n], &p.as_slice()[n..])?;
        let xd = v.rows(0, n).into_owned();
        let res = v.rows(n, tb.fiber_dim()) - amat * xd;
        r = r.max(res.amax());
    }
    Ok(r)
}

/// `∇̄`-transport `ḃ_κ = −Σ ẋ_i b_μ Γ̄ᵘ_iκ` of `β0` along a horizontal
/// curve with coordinates `[x, y]`. Non-horizontal curves are rejected.
pub fn nabla_bar_form_transport(
    tb: &dyn SubmersionTestbed,
    curve: &dyn BaseCurve,
    beta0: &[f64],
    tol: f64,
    horizontal_tol: f64,
) -> Result<FormTransport> {
    let (n, nu) = (tb.base_dim(), tb.fiber_dim());
    if curve.dim() != n + nu || beta0.len() != nu {
        return Err(GeomError::Dimension {
            expected: n + nu,
            got: curve.dim(),
        });
    }
    let res = horizontality_residual(tb, curve, 200)?;
    if res > horizontal_tol {
        return Err(GeomError::NotHorizontal(res));
    }
    struct Sys<'a> {
        tb: &'a dyn SubmersionTestbed,
        curve: &'a dyn BaseCurve,
    }
    impl OdeSystem for Sys<'_> {
        fn dim(&self) -> usize {
            self.tb.fiber_dim()
        }
        fn rhs(&self, t: f64, b: &[f64], db: &mut [f64]) -> Result<()> {
            let (n, nu) = (self.tb.base_dim(), self.tb.fiber_dim());
            let p = self.curve.point(t);
            let v = self.curve.velocity(t);
            let cc = connection_coefficients(self.tb, &p.as_slice()[..n], &p.as_slice()[n..])?;
            for k in 0..nu {
                let mut s = 0.0;
                for i in 0..n {
                    for mu in 0..nu {
                        s -= v[i] * b[mu] * cc.gamma_bar[i][(mu, k)];
                    }
                }
                db[k] = s;
            }
            Ok(())
        }
    }
    let (t0, t1) = curve.interval();
    let trajectory = integrate(&Sys { tb, curve }, t0, beta0, t1, &IntegrateOptions::with_tol(tol));
    Ok(FormTransport {
        horizontality_residual: res,
        trajectory,
    })
}

/// Sup-norm discrepancies between the lifted flow pushed down by `π²` and
/// the independently integrated projected flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub testbed: String,
    #[serde(rename = "H")]
    pub hamiltonian: String,
    pub tol: f64,
    #[serde(rename = "sup_error_λ")]
    pub sup_error_lambda: f64,
    #[serde(rename = "sup_error_β")]
    pub sup_error_beta: f64,
    pub sup_error_lift: f64,
    pub energy_drift_lifted: f64,
    pub truncated: bool,
    pub wall_time: f64,
}

pub fn verify_projection(
    tb: &dyn SubmersionTestbed,
    h: &dyn BaseHamiltonian,
    p0: &CotangentState,
    t_end: f64,
    tol: f64,
) -> Result<ProjectionReport> {
    Ok(compare_projection(tb, h, p0, t_end, tol, 1000)?.0)
}

/// Lifted and projected states at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSample {
    pub t: f64,
    pub lifted: CotangentState,
    pub projected: CotangentState,
}

/// [`verify_projection`] together with `samples + 1` uniform samples of
/// both flows.
pub fn compare_projection(
    tb: &dyn SubmersionTestbed,
    h: &dyn BaseHamiltonian,
    p0: &CotangentState,
    t_end: f64,
    tol: f64,
    samples: usize,
) -> Result<(ProjectionReport, Vec<ProjectionSample>)> {
    let start = Instant::now();
    let (lifted, projected) = rayon::join(
        || lifted_hamiltonian_flow(tb, h, p0, t_end, tol),
        || {
            projected_force_flow(
                tb,
                h,
                p0.x.as_slice(),
                p0.a.as_slice(),
                p0.y.as_slice(),
                p0.b.as_slice(),
                t_end,
                tol,
            )
        },
    );
    let (lifted, projected) = (lifted?, projected?);
    let truncated = lifted.trajectory.is_truncated() || projected.trajectory.is_truncated();
    let t_common = lifted.trajectory.t_end().min(projected.trajectory.t_end());
    let (mut el, mut eb, mut ey) = (0.0_f64, 0.0_f64, 0.0_f64);
    let samples = samples.max(1);
    let mut out = Vec::with_capacity(samples + 1);
    for k in 0..=samples {
        let t = t_common * k as f64 / samples as f64;
        let up = lifted.cotangent_at(tb, t)?;
        let down = projected.cotangent_at(t);
        el = el.max((&up.x - &down.x).amax()).max((&up.a - &down.a).amax());
        eb = eb.max((&up.b - &down.b).amax());
        ey = ey.max((&up.y - &down.y).amax());
        out.push(ProjectionSample {
            t,
            lifted: up,
            projected: down,
        });
    }
    let report = ProjectionReport {
        testbed: tb.label(),
        hamiltonian: h.label(),
        tol,
        sup_error_lambda: el,
        sup_error_beta: eb,
        sup_error_lift: ey,
        energy_drift_lifted: lifted.energy_drift(tb, h)?,
        truncated,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((report, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinetic2() -> RiemannianHamiltonian {
        RiemannianHamiltonian::new(ChartMetric::euclidean(2))
    }

    #[test]
    fn trivial_product_has_no_connection() {
        let tb = TrivialTestbed { n: 2, nu: 3 };
        let cc = connection_coefficients(&tb, &[0.1, 0.2], &[1.0, 2.0, 3.0]).unwrap();
        assert!(cc.gamma_bar.iter().all(|m| m.amax() == 0.0));
        assert!(cc.curvature.iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn heisenberg_curvature_is_one() {
        let tb = HeisenbergTestbed;
        for x in [[0.0, 0.0], [1.3, -0.4]] {
            let cc = connection_coefficients(&tb, &x, &[0.7]).unwrap();
            assert_eq!(cc.curvature[0][(0, 1)], 1.0);
            assert_eq!(cc.curvature[0][(1, 0)], -1.0);
            assert_eq!(cc.gamma_bar[0].amax(), 0.0);
        }
        // numeric derivatives give the same curvature
        let fd = FnTestbed {
            n: 2,
            nu: 1,
            label: "heisenberg-fd".into(),
            lift: |x: &[f64], _y: &[f64]| DMatrix::from_row_slice(1, 2, &[-0.5 * x[1], 0.5 * x[0]]),
        };
        let cc = connection_coefficients(&fd, &[0.4, 0.9], &[0.0]).unwrap();
        assert!((cc.curvature[0][(0, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn curvature_is_antisymmetric_for_generic_lift() {
        let tb = FnTestbed {
            n: 2,
            nu: 2,
            label: "generic".into(),
            lift: |x: &[f64], y: &[f64]| {
                DMatrix::from_row_slice(2, 2, &[x[1] * y[1], (x[0] * y[0]).sin(), y[0] * y[1], x[0] * x[1] + y[1]])
            },
        };
        let cc = connection_coefficients(&tb, &[0.3, -0.2], &[0.5, 1.1]).unwrap();
        for r in &cc.curvature {
            assert!((r + r.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn trivial_lift_moves_straight() {
        let tb = TrivialTestbed { n: 2, nu: 1 };
        let p0 = CotangentState::new(&[0.0, 0.0], &[2.0], &[1.0, 0.5], &[3.0]);
        let run = lifted_hamiltonian_flow(&tb, &kinetic2(), &p0, 2.0, 1e-10).unwrap();
        let c = run.cotangent_at(&tb, 2.0).unwrap();
        assert!((c.x[0] - 2.0).abs() < 1e-12 && (c.x[1] - 1.0).abs() < 1e-12);
        assert_eq!((c.y[0], c.b[0]), (2.0, 3.0));
    }

    #[test]
    fn heisenberg_lift_traces_circle() {
        let tb = HeisenbergTestbed;
        let (a0, b0) = ([0.6, 0.8], 2.0);
        let p0 = CotangentState::new(&[0.0, 0.0], &[0.0], &a0, &[b0]);
        let run = lifted_hamiltonian_flow(&tb, &kinetic2(), &p0, 10.0, 1e-10).unwrap();
        // ẍ = b J ẋ: circle of radius |a|/|b| centred at x0 + J a / b rotated
        let radius = 1.0 / b0;
        let centre = [-a0[1] / b0, a0[0] / b0];
        for t in run.trajectory.uniform_times(50) {
            let c = run.cotangent_at(&tb, t).unwrap();
            let d = ((c.x[0] - centre[0]).powi(2) + (c.x[1] - centre[1]).powi(2)).sqrt();
            assert!((d - radius).abs() < 1e-8, "t={t}");
        }
        assert!(run.energy_drift(&tb, &kinetic2()).unwrap() < 1e-8);
    }

    #[test]
    fn zero_beta_reduces_to_base_flow() {
        let tb = HeisenbergTestbed;
        let h = RiemannianHamiltonian::new(ChartMetric::euclidean(2))
            .with_potential(|x| (0.5 * (x[0] * x[0] + 2.0 * x[1] * x[1]), DVector::from_vec(vec![x[0], 2.0 * x[1]])));
        let run = projected_force_flow(&tb, &h, &[1.0, 0.0], &[0.0, 1.0], &[0.0], &[0.0], 3.0, 1e-11).unwrap();
        for t in run.trajectory.uniform_times(30) {
            let c = run.cotangent_at(t);
            assert!((c.x[0] - t.cos()).abs() < 1e-9);
            let w = 2f64.sqrt();
            assert!((c.x[1] - (w * t).sin() / w).abs() < 1e-9);
        }
    }

    #[test]
    fn form_transport_is_linear_and_rejects_vertical_drift() {
        let tb = FnTestbed {
            n: 1,
            nu: 2,
            label: "twisted".into(),
            lift: |_x: &[f64], y: &[f64]| DMatrix::from_row_slice(2, 1, &[-y[1], y[0]]),
        };
        // horizontal lift of x = t: y rotates
        let curve = crate::geom::FnCurve::new(
            3,
            0.0,
            2.0,
            |t| DVector::from_vec(vec![t, t.cos(), t.sin()]),
            |t| DVector::from_vec(vec![1.0, -t.sin(), t.cos()]),
        );
        let b0 = [0.3, -1.2];
        let r1 = nabla_bar_form_transport(&tb, &curve, &b0, 1e-11, 1e-8).unwrap();
        let r2 = nabla_bar_form_transport(&tb, &curve, &[3.0 * b0[0], 3.0 * b0[1]], 1e-11, 1e-8).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let (u, v) = (r1.at(t), r2.at(t));
            assert!((&v - &u * 3.0).amax() < 1e-10);
        }
        // Γ̄ = [[0,-1],[1,0]] rotates b with the fiber
        let b = r1.at(2.0);
        let (s, c) = 2f64.sin_cos();
        assert!((b[0] - (c * b0[0] - s * b0[1])).abs() < 1e-9);
        let bad = crate::geom::FnCurve::line(&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], 1.0);
        assert!(matches!(
            nabla_bar_form_transport(&tb, &bad, &b0, 1e-9, 1e-8),
            Err(GeomError::NotHorizontal(_))
        ));
    }

    #[test]
    fn heisenberg_projection_agrees() {
        let tb = HeisenbergTestbed;
        let p0 = CotangentState::new(&[0.2, -0.1], &[0.5], &[1.0, 0.3], &[1.5]);
        let rep = verify_projection(&tb, &kinetic2(), &p0, 5.0, 1e-9).unwrap();
        assert!(rep.sup_error_lambda < 1e-6, "{rep:?}");
        assert!(rep.sup_error_beta < 1e-6);
        assert!(rep.sup_error_lift < 1e-6);
    }
}
