//! Normal geodesics of the rolling distribution.
//!
//! A state carries the configuration `(x, x̂, f, f̂)` together with frame
//! coordinates `u` of `γ̇ = f u`, `v` of `V = f v` and the skew matrix
//! `Λ = ♯L`, paired by `⟨A, B⟩ = ½ tr(AᵀB)`. With
//! `Ω(X,Y)_{αβ} = g(R(X,Y) f_β, f_α)` the equations read
//!
//! ```text
//! u̇_j = ⟨Λ, Ω(fu, f_j)⟩ − ⟨Λ, Ω̂(f̂u, f̂_j)⟩
//! v̇_j = ⟨Λ, Ω̂(f̂u, f̂_j)⟩
//! Λ̇   = u vᵀ − v uᵀ
//! ```
//!
//! with both frames parallel along their curves. In two dimensions this is
//! `θ̇ = L(κ − κ̂)`, `L̇ = a b₂`, see [`planar`].

pub mod euclidean;
pub mod planar;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{christoffel, orthonormality_defect, riemann, ChartMetric, Riemann};
use crate::ode::{integrate_with, IntegrateOptions, OdeSystem, Trajectory, Truncation};
use crate::rolling::{row_major, RollingConfiguration, PROJECTION_TRIGGER};

pub use crate::geom::so_projection;

/// Tolerance on `Λ + Λᵀ` accepted by [`RollingGeodesicState::new`].
pub const SKEW_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RollingGeodesicState {
    pub cfg: RollingConfiguration,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda: DMatrix<f64>,
}

/// `d/dt` of every component of a [`RollingGeodesicState`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub x: DVector<f64>,
    pub xh: DVector<f64>,
    pub f: DMatrix<f64>,
    pub fh: DMatrix<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda: DMatrix<f64>,
}

/// Skew matrix with `L` in position `(0, 1)`.
pub fn planar_lambda(l: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, l, -l, 0.0])
}

impl RollingGeodesicState {
    pub fn new(cfg: RollingConfiguration, u: &[f64], v: &[f64], lambda: DMatrix<f64>) -> Result<Self> {
        let n = cfg.dim();
        for len in [u.len(), v.len(), lambda.nrows(), lambda.ncols()] {
            if len != n {
                return Err(GeomError::Dimension { expected: n, got: len });
            }
        }
        let skew = (&lambda + lambda.transpose()).amax();
        if skew > SKEW_TOL {
            return Err(GeomError::InvalidParameter(format!("Λ is not skew (defect {skew:e})")));
        }
        Ok(Self {
            cfg,
            u: DVector::from_column_slice(u),
            v: DVector::from_column_slice(v),
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim()
    }

    /// `‖u‖ = |γ̇|_g`.
    pub fn speed(&self) -> f64 {
        self.u.norm()
    }

    pub(crate) fn pack(&self) -> Vec<f64> {
        let c = &self.cfg;
        let mut s = Vec::with_capacity(layout_len(self.dim()));
        s.extend(c.x.iter());
        s.extend(c.xh.iter());
        s.extend(c.f.iter());
        s.extend(c.fh.iter());
        s.extend(self.u.iter());
        s.extend(self.v.iter());
        s.extend(self.lambda.iter());
        s
    }

    pub(crate) fn unpack(m: &ChartMetric, mh: &ChartMetric, s: &[f64]) -> Self {
        let p = Parts::new(m.dim(), s);
        Self {
            cfg: RollingConfiguration::from_parts(m, mh, p.x(), p.xh(), p.f(), p.fh()),
            u: p.u(),
            v: p.v(),
            lambda: p.lambda(),
        }
    }
}

pub(crate) fn layout_len(n: usize) -> usize {
    4 * n + 3 * n * n
}

/// Views into a packed state `[x, x̂, f, f̂, u, v, Λ]`.
pub(crate) struct Parts<'a> {
    n: usize,
    s: &'a [f64],
}

impl<'a> Parts<'a> {
    pub(crate) fn new(n: usize, s: &'a [f64]) -> Self {
        Self { n, s }
    }
    fn vec(&self, at: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.s[at..at + self.n])
    }
    fn mat(&self, at: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n, self.n, &self.s[at..at + self.n * self.n])
    }
    pub(crate) fn x(&self) -> DVector<f64> {
        self.vec(0)
    }
    pub(crate) fn xh(&self) -> DVector<f64> {
        self.vec(self.n)
    }
    pub(crate) fn f(&self) -> DMatrix<f64> {
        self.mat(2 * self.n)
    }
    pub(crate) fn fh(&self) -> DMatrix<f64> {
        self.mat(2 * self.n + self.n * self.n)
    }
    pub(crate) fn u(&self) -> DVector<f64> {
        self.vec(2 * self.n + 2 * self.n * self.n)
    }
    pub(crate) fn v(&self) -> DVector<f64> {
        self.vec(3 * self.n + 2 * self.n * self.n)
    }
    pub(crate) fn lambda(&self) -> DMatrix<f64> {
        self.mat(4 * self.n + 2 * self.n * self.n)
    }
}

/// `w_j = ⟨Λ, Ω(X, f_j)⟩` with `Ω(X,Y)_{αβ} = g(R(X,Y) f_β, f_α)`.
pub fn curvature_pairing(r: &Riemann, f: &DMatrix<f64>, x: &[f64], lambda: &DMatrix<f64>) -> DVector<f64> {
    let n = r.n;
    // ½ Σ_{αβ} Λ_{αβ} f_β ⊗ f_α in chart components
    let m = f * lambda.transpose() * f.transpose() * 0.5;
    let mut c = DVector::zeros(n);
    for (j, cj) in c.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for k in 0..n {
                for l in 0..n {
                    s += r.low(i, j, k, l) * x[i] * m[(k, l)];
                }
            }
        }
        *cj = s;
    }
    f.transpose() * c
}

fn parallel_derivative(m: &ChartMetric, x: &[f64], xd: &[f64], f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gam = christoffel(m, x)?;
    let n = m.dim();
    let mut fd = DMatrix::zeros(n, n);
    for j in 0..n {
        fd.set_column(j, &-gam.contract(xd, f.column(j).as_slice()));
    }
    Ok(fd)
}

pub fn geodesic_rhs(s: &RollingGeodesicState) -> Result<StateDerivative> {
    let c = &s.cfg;
    let (x, xh) = (c.x.as_slice(), c.xh.as_slice());
    c.m.check_point(x)?;
    c.mh.check_point(xh)?;
    let xd = &c.f * &s.u;
    let xhd = &c.fh * &s.u;
    let r = riemann(&c.m, x)?;
    let rh = riemann(&c.mh, xh)?;
    let w = curvature_pairing(&r, &c.f, xd.as_slice(), &s.lambda);
    let wh = curvature_pairing(&rh, &c.fh, xhd.as_slice(), &s.lambda);
    Ok(StateDerivative {
        f: parallel_derivative(&c.m, x, xd.as_slice(), &c.f)?,
        fh: parallel_derivative(&c.mh, xh, xhd.as_slice(), &c.fh)?,
        x: xd,
        xh: xhd,
        u: &w - &wh,
        v: wh,
        lambda: &s.u * s.v.transpose() - &s.v * s.u.transpose(),
    })
}

struct GeodesicSystem<'a> {
    m: &'a ChartMetric,
    mh: &'a ChartMetric,
}

impl OdeSystem for GeodesicSystem<'_> {
    fn dim(&self) -> usize {
        layout_len(self.m.dim())
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let s = RollingGeodesicState::unpack(self.m, self.mh, y);
        let d = geodesic_rhs(&s)?;
        let mut k = 0;
        for v in d
            .x
            .iter()
            .chain(d.xh.iter())
            .chain(d.f.iter())
            .chain(d.fh.iter())
            .chain(d.u.iter())
            .chain(d.v.iter())
            .chain(d.lambda.iter())
        {
            dy[k] = *v;
            k += 1;
        }
        Ok(())
    }
}

/// Frame re-orthonormalisation hook shared by the rolling integrators;
/// `frames_at` gives the offsets of `(x, x̂, f, f̂)` in the packed state.
pub(crate) fn project_packed_frames(
    m: &ChartMetric,
    mh: &ChartMetric,
    s: &mut [f64],
    offsets: [usize; 4],
) -> bool {
    let n = m.dim();
    let nn = n * n;
    let mut changed = false;
    for (chart, xo, fo) in [(m, offsets[0], offsets[2]), (mh, offsets[1], offsets[3])] {
        let Ok(g) = chart.metric(&s[xo..xo + n]) else {
            continue;
        };
        let f = DMatrix::from_column_slice(n, n, &s[fo..fo + nn]);
        if orthonormality_defect(&f, &g) > PROJECTION_TRIGGER {
            if let Ok(p) = so_projection(&f, &g) {
                s[fo..fo + nn].copy_from_slice(p.as_slice());
                changed = true;
            }
        }
    }
    changed
}

/// An integrated normal geodesic.
#[derive(Debug, Clone)]
pub struct GeodesicRun {
    pub m: ChartMetric,
    pub mh: ChartMetric,
    pub trajectory: Trajectory,
    pub projections: usize,
    pub tol: f64,
}

pub fn integrate_geodesic(s0: &RollingGeodesicState, t_end: f64, tol: f64) -> Result<GeodesicRun> {
    integrate_geodesic_from(s0, 0.0, t_end, tol)
}

/// Integrates from time `t0` to `t1` (either direction).
pub fn integrate_geodesic_from(s0: &RollingGeodesicState, t0: f64, t1: f64, tol: f64) -> Result<GeodesicRun> {
    let c = &s0.cfg;
    c.m.check_point(c.x.as_slice())?;
    c.mh.check_point(c.xh.as_slice())?;
    let n = c.dim();
    let sys = GeodesicSystem { m: &c.m, mh: &c.mh };
    let mut projections = 0;
    let offsets = [0, n, 2 * n, 2 * n + n * n];
    let trajectory = integrate_with(&sys, t0, &s0.pack(), t1, &IntegrateOptions::with_tol(tol), |_, y| {
        let changed = project_packed_frames(&c.m, &c.mh, y, offsets);
        projections += changed as usize;
        changed
    });
    Ok(GeodesicRun {
        m: c.m.clone(),
        mh: c.mh.clone(),
        trajectory,
        projections,
        tol,
    })
}

/// Residuals of the geodesic equations in covariant chart form, evaluated
/// from the dense output at step midpoints: `∇_γ̇γ̇`, `∇_γ̇V`, `Λ̇`, and the
/// rolling constraints (slip, twist of both frames).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeodesicResidual {
    /// `γ̇ = f u`.
    pub velocity: f64,
    pub acceleration: f64,
    pub transport: f64,
    pub charge: f64,
    pub slip: f64,
    pub twist: f64,
}

impl GeodesicResidual {
    pub fn max(&self) -> f64 {
        self.velocity
            .max(self.acceleration)
            .max(self.transport)
            .max(self.charge)
            .max(self.slip)
            .max(self.twist)
    }

    fn merge(&mut self, o: &Self) {
        self.velocity = self.velocity.max(o.velocity);
        self.acceleration = self.acceleration.max(o.acceleration);
        self.transport = self.transport.max(o.transport);
        self.charge = self.charge.max(o.charge);
        self.slip = self.slip.max(o.slip);
        self.twist = self.twist.max(o.twist);
    }
}

/// Residuals of the companion identities for `Ṽ = V + γ̇`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VtildeResidual {
    /// `Λ̇ = u ṽᵀ − ṽ uᵀ`.
    pub charge: f64,
    /// `∇_γ̇Ṽ = f ⟨Λ, Ω(γ̇, f_·)⟩`.
    pub transport: f64,
    /// `Ω(γ̇, γ̇) = 0`.
    pub antisymmetry: f64,
}

impl VtildeResidual {
    pub fn max(&self) -> f64 {
        self.charge.max(self.transport).max(self.antisymmetry)
    }
}

fn g_norm(g: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * g * v)[0].max(0.0).sqrt()
}

/// Everything needed at one midpoint: state, its time derivatives from the
/// interpolant, and geometric data.
struct Jet {
    s: RollingGeodesicState,
    xd: DVector<f64>,
    ud: DVector<f64>,
    xhd: DVector<f64>,
    fd: DMatrix<f64>,
    fhd: DMatrix<f64>,
    vd_chart: DVector<f64>,
    lambda_d: DMatrix<f64>,
}

impl GeodesicRun {
    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn is_truncated(&self) -> bool {
        self.trajectory.is_truncated()
    }

    pub fn truncation(&self) -> Option<&Truncation> {
        self.trajectory.truncation.as_ref()
    }

    pub fn t_end(&self) -> f64 {
        self.trajectory.t_end()
    }

    pub fn state_at(&self, t: f64) -> RollingGeodesicState {
        RollingGeodesicState::unpack(&self.m, &self.mh, &self.trajectory.sample(t))
    }

    pub fn initial_state(&self) -> RollingGeodesicState {
        RollingGeodesicState::unpack(&self.m, &self.mh, self.trajectory.initial_state())
    }

    pub fn final_state(&self) -> RollingGeodesicState {
        RollingGeodesicState::unpack(&self.m, &self.mh, self.trajectory.final_state())
    }

    fn node_states(&self) -> impl Iterator<Item = RollingGeodesicState> + '_ {
        self.trajectory
            .states
            .iter()
            .map(|y| RollingGeodesicState::unpack(&self.m, &self.mh, y))
    }

    /// `sup |‖u(t)‖ − ‖u(0)‖|` over nodes and step midpoints.
    pub fn speed_drift(&self) -> f64 {
        let a0 = self.initial_state().speed();
        self.trajectory
            .nodes_and_midpoints()
            .into_iter()
            .map(|t| (self.state_at(t).speed() - a0).abs())
            .fold(0.0, f64::max)
    }

    /// `sup ‖Λ + Λᵀ‖` over nodes.
    pub fn skew_defect(&self) -> f64 {
        self.node_states()
            .map(|s| (&s.lambda + s.lambda.transpose()).amax())
            .fold(0.0, f64::max)
    }

    /// `sup` of both frames' orthonormality defects over nodes.
    pub fn frame_defect(&self) -> f64 {
        self.node_states()
            .map(|s| s.cfg.frame_defect().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }

    fn jet(&self, k: usize) -> Jet {
        let n = self.dim();
        let (_, y, d1, _) = self.trajectory.midpoint_hermite(k);
        let s = RollingGeodesicState::unpack(&self.m, &self.mh, &y);
        let p1 = Parts::new(n, &d1);
        // V = f v, so V̇ = ḟ v + f v̇
        let vd_chart = p1.f() * &s.v + &s.cfg.f * p1.v();
        Jet {
            xd: p1.x(),
            ud: p1.u(),
            xhd: p1.xh(),
            fd: p1.f(),
            fhd: p1.fh(),
            vd_chart,
            lambda_d: p1.lambda(),
            s,
        }
    }

    fn residual_at(&self, k: usize) -> Result<(GeodesicResidual, VtildeResidual)> {
        let j = self.jet(k);
        let c = &j.s.cfg;
        let (x, xh) = (c.x.as_slice(), c.xh.as_slice());
        let g = self.m.metric(x)?;
        let gh = self.mh.metric(xh)?;
        let gam = christoffel(&self.m, x)?;
        let gamh = christoffel(&self.mh, xh)?;
        let r = riemann(&self.m, x)?;
        let rh = riemann(&self.mh, xh)?;
        let u = &j.s.u;
        let gdot = &c.f * u;
        let xd = gdot.as_slice();
        let big_v = &c.f * &j.s.v;
        let qxd = &c.fh * u;
        let w = curvature_pairing(&r, &c.f, xd, &j.s.lambda);
        let wh = curvature_pairing(&rh, &c.fh, qxd.as_slice(), &j.s.lambda);
        // ∇_γ̇(f u) from first derivatives of the interpolant
        let acc = &j.fd * u + &c.f * &j.ud + gam.contract(xd, xd);
        let force = &c.f * (&w - &wh);
        let nabla_v = &j.vd_chart + gam.contract(xd, big_v.as_slice());
        let transport_target = &c.f * &wh;
        let charge_target = u * j.s.v.transpose() - &j.s.v * u.transpose();
        let mut twist: f64 = 0.0;
        for col in 0..self.dim() {
            let a = j.fd.column(col) + gam.contract(j.xd.as_slice(), c.f.column(col).as_slice());
            let b = j.fhd.column(col) + gamh.contract(j.xhd.as_slice(), c.fh.column(col).as_slice());
            twist = twist.max(g_norm(&g, &a)).max(g_norm(&gh, &b));
        }
        let thm = GeodesicResidual {
            velocity: g_norm(&g, &(&j.xd - &gdot)),
            acceleration: g_norm(&g, &(&acc - &force)),
            transport: g_norm(&g, &(&nabla_v - &transport_target)),
            charge: (&j.lambda_d - &charge_target).amax(),
            slip: g_norm(&gh, &(&j.xhd - &qxd)),
            twist,
        };
        let vt = &j.s.v + u;
        let vt_charge = (&j.lambda_d - (u * vt.transpose() - &vt * u.transpose())).amax();
        let vt_transport = g_norm(&g, &(&nabla_v + &acc - &c.f * &w));
        let anti = crate::geom::curvature_form(&r, &c.f, xd, xd).amax();
        Ok((
            thm,
            VtildeResidual {
                charge: vt_charge,
                transport: vt_transport,
                antisymmetry: anti,
            },
        ))
    }

    /// Geodesic and `Ṽ` residuals in one pass over the midpoints.
    pub fn residual_pair(&self) -> Result<(GeodesicResidual, VtildeResidual)> {
        let mut thm = GeodesicResidual::default();
        let mut vt = VtildeResidual::default();
        for k in 0..self.trajectory.times.len().saturating_sub(1) {
            let (a, b) = self.residual_at(k)?;
            thm.merge(&a);
            vt.charge = vt.charge.max(b.charge);
            vt.transport = vt.transport.max(b.transport);
            vt.antisymmetry = vt.antisymmetry.max(b.antisymmetry);
        }
        Ok((thm, vt))
    }

    /// Geodesic-equation residuals at dense-output midpoints.
    pub fn geodesic_residual(&self) -> Result<GeodesicResidual> {
        Ok(self.residual_pair()?.0)
    }

    /// Per-step residual maxima, one entry per accepted node.
    pub fn node_residuals(&self) -> Result<Vec<GeodesicResidual>> {
        let steps = self.trajectory.times.len().saturating_sub(1);
        let mut per_step = Vec::with_capacity(steps);
        for k in 0..steps {
            per_step.push(self.residual_at(k)?.0);
        }
        // node k reports the worse of its adjacent steps
        Ok((0..=steps)
            .map(|k| {
                let mut r = GeodesicResidual::default();
                if k > 0 {
                    r.merge(&per_step[k - 1]);
                }
                if k < steps {
                    r.merge(&per_step[k]);
                }
                r
            })
            .collect())
    }

    pub fn summary(&self) -> Result<GeodesicSummary> {
        let thm = self.geodesic_residual()?;
        Ok(GeodesicSummary {
            t_end: self.t_end(),
            truncated: self.is_truncated(),
            accepted_steps: self.trajectory.stats.accepted,
            rejected_steps: self.trajectory.stats.rejected,
            projections: self.projections,
            speed: self.initial_state().speed(),
            speed_drift: self.speed_drift(),
            skew_defect: self.skew_defect(),
            frame_defect: self.frame_defect(),
            geodesic_residual: thm,
        })
    }

    /// CSV with columns `t, x…, x̂…, [θ], Λ lower triangle, u…, v…, speed,
    /// thm44, pendulum, slip, twist`. Per-node residuals come from the
    /// adjacent steps; `pendulum` is empty for the general flow.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.dim();
        let mut head = vec!["t".to_string()];
        head.extend((0..n).map(|i| format!("x{i}")));
        head.extend((0..n).map(|i| format!("xh{i}")));
        if n == 2 {
            head.push("theta".into());
        }
        for i in 0..n {
            for j in 0..i {
                head.push(format!("lambda{i}{j}"));
            }
        }
        head.extend((0..n).map(|i| format!("u{i}")));
        head.extend((0..n).map(|i| format!("v{i}")));
        for c in ["speed", "thm44", "pendulum", "slip", "twist"] {
            head.push(c.into());
        }
        writeln!(w, "{}", head.join(","))?;
        let res = self
            .node_residuals()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        let mut theta_prev: Option<f64> = None;
        for ((t, y), r) in self.trajectory.times.iter().zip(&self.trajectory.states).zip(res) {
            let s = RollingGeodesicState::unpack(&self.m, &self.mh, y);
            let mut cells: Vec<String> = vec![fmt(*t)];
            cells.extend(s.cfg.x.iter().map(|v| fmt(*v)));
            cells.extend(s.cfg.xh.iter().map(|v| fmt(*v)));
            if n == 2 {
                let th = unwrap_angle(s.u[1].atan2(s.u[0]), theta_prev);
                theta_prev = Some(th);
                cells.push(fmt(th));
            }
            for i in 0..n {
                for j in 0..i {
                    cells.push(fmt(s.lambda[(i, j)]));
                }
            }
            cells.extend(s.u.iter().map(|v| fmt(*v)));
            cells.extend(s.v.iter().map(|v| fmt(*v)));
            cells.push(fmt(s.speed()));
            cells.push(fmt(r.velocity.max(r.acceleration).max(r.transport).max(r.charge)));
            cells.push(String::new());
            cells.push(fmt(r.slip));
            cells.push(fmt(r.twist));
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Configuration records at every node, for downstream tools.
    pub fn frames_row_major(&self) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        self.trajectory
            .times
            .iter()
            .zip(self.node_states())
            .map(|(t, s)| (*t, row_major(&s.cfg.f), row_major(&s.cfg.fh)))
            .collect()
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Continuous branch of an angle given the previous value.
pub(crate) fn unwrap_angle(raw: f64, prev: Option<f64>) -> f64 {
    match prev {
        None => raw,
        Some(p) => raw + (2.0 * std::f64::consts::PI) * ((p - raw) / (2.0 * std::f64::consts::PI)).round(),
    }
}

/// Residuals of the `Ṽ = V + γ̇` companion system along a run.
pub fn vtilde_symmetry_check(run: &GeodesicRun) -> Result<VtildeResidual> {
    Ok(run.residual_pair()?.1)
}

/// Invariant maxima of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSummary {
    pub t_end: f64,
    pub truncated: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub projections: usize,
    pub speed: f64,
    pub speed_drift: f64,
    pub skew_defect: f64,
    pub frame_defect: f64,
    pub geodesic_residual: GeodesicResidual,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(m: ChartMetric, mh: ChartMetric, x: &[f64], xh: &[f64], u: &[f64], v: &[f64], l: f64) -> RollingGeodesicState {
        let cfg = RollingConfiguration::standard(m, mh, x, xh, 0.0).unwrap();
        RollingGeodesicState::new(cfg, u, v, planar_lambda(l)).unwrap()
    }

    #[test]
    fn rejects_non_skew_lambda() {
        let e = ChartMetric::euclidean(2);
        let cfg = RollingConfiguration::standard(e.clone(), e, &[0.0; 2], &[0.0; 2], 0.0).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, 0.0]);
        assert!(RollingGeodesicState::new(cfg, &[1.0, 0.0], &[0.0, 0.0], bad).is_err());
    }

    #[test]
    fn plane_on_plane_rolls_straight() {
        let e = ChartMetric::euclidean(2);
        let s0 = state(e.clone(), e, &[0.0, 0.0], &[1.0, 1.0], &[1.0, 0.0], &[0.3, -0.2], 0.5);
        let d = geodesic_rhs(&s0).unwrap();
        assert_eq!(d.u.amax(), 0.0);
        assert_eq!(d.v.amax(), 0.0);
        let run = integrate_geodesic(&s0, 3.0, 1e-10).unwrap();
        let end = run.final_state();
        assert!((end.cfg.x[0] - 3.0).abs() < 1e-12 && end.cfg.x[1].abs() < 1e-12);
        assert!((end.cfg.q().unwrap() - s0.cfg.q().unwrap()).amax() < 1e-12);
        // Λ̇ = u vᵀ − v uᵀ is constant: L(t) = L₀ + t (u₁v₂ − u₂v₁)
        assert!((end.lambda[(0, 1)] - (0.5 - 0.6)).abs() < 1e-12);
    }

    #[test]
    fn sphere_on_plane_locks_planar_signs() {
        // θ̇ = L(κ − κ̂) and L̇ = a b₂ with κ = 1, κ̂ = 0
        let (a, th, l, b1, b2) = (1.3, 0.4, 0.7, -0.2, 0.9);
        let (s, c) = f64::sin_cos(th);
        let u = [a * c, a * s];
        let v = [b1 * c - b2 * s, b1 * s + b2 * c];
        let s0 = state(
            ChartMetric::sphere(1.0),
            ChartMetric::euclidean(2),
            &[1.0, 0.2],
            &[0.0, 0.0],
            &u,
            &v,
            l,
        );
        let d = geodesic_rhs(&s0).unwrap();
        let theta_dot = (u[0] * d.u[1] - u[1] * d.u[0]) / (a * a);
        assert!((theta_dot - l).abs() < 1e-12);
        assert!((d.lambda[(0, 1)] - a * b2).abs() < 1e-12);
        // ḃ₁ = θ̇ b₂, ḃ₂ = a L κ̂ − θ̇ b₁ with κ̂ = 0
        let e = [c, s];
        let eperp = [-s, c];
        let b1d = d.v[0] * e[0] + d.v[1] * e[1] + theta_dot * (v[0] * eperp[0] + v[1] * eperp[1]);
        let b2d = d.v[0] * eperp[0] + d.v[1] * eperp[1] - theta_dot * (v[0] * e[0] + v[1] * e[1]);
        assert!((b1d - theta_dot * b2).abs() < 1e-12);
        assert!((b2d + theta_dot * b1).abs() < 1e-12);
    }

    #[test]
    fn speed_derivative_vanishes() {
        let s0 = state(
            ChartMetric::paraboloid(0.8),
            ChartMetric::sphere(2.0),
            &[0.3, -0.1],
            &[1.2, 0.4],
            &[0.6, -0.8],
            &[1.0, 0.5],
            -0.4,
        );
        let d = geodesic_rhs(&s0).unwrap();
        assert!(s0.u.dot(&d.u).abs() < 1e-13);
    }

    #[test]
    fn great_circle_roll_without_charge() {
        let s0 = state(
            ChartMetric::sphere(1.0),
            ChartMetric::euclidean(2),
            &[std::f64::consts::FRAC_PI_2, 0.0],
            &[0.0, 0.0],
            &[0.0, 1.0],
            &[0.0, 0.0],
            0.0,
        );
        let run = integrate_geodesic(&s0, 3.0, 1e-10).unwrap();
        let end = run.final_state();
        assert!(end.cfg.xh[0].abs() < 1e-10 && (end.cfg.xh[1] - 3.0).abs() < 1e-10);
        assert!(end.lambda.amax() < 1e-14);
    }

    #[test]
    fn generic_run_keeps_invariants() {
        let s0 = state(
            ChartMetric::sphere(1.0),
            ChartMetric::paraboloid(0.5),
            &[1.0, 0.3],
            &[0.2, -0.3],
            &[0.8, 0.6],
            &[-0.3, 0.4],
            0.6,
        );
        let tol = 1e-10;
        let run = integrate_geodesic(&s0, 4.0, tol).unwrap();
        assert!(!run.is_truncated());
        assert!(run.speed_drift() < 10.0 * tol);
        assert!(run.skew_defect() < 1e-12);
        let thm = run.geodesic_residual().unwrap();
        assert!(thm.max() < 100.0 * tol, "{thm:?}");
        let vt = vtilde_symmetry_check(&run).unwrap();
        assert!(vt.max() < 100.0 * tol, "{vt:?}");
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x0,x1,xh0,xh1,theta,lambda10,u0,u1,v0,v1,speed,thm44,pendulum,slip,twist"));
    }

    #[test]
    fn three_dimensional_flow_is_consistent() {
        let m = ChartMetric::euclidean(3);
        let cfg = RollingConfiguration::standard(m.clone(), m, &[0.0; 3], &[0.0; 3], 0.0).unwrap();
        let lam = DMatrix::from_row_slice(3, 3, &[0.0, 0.2, -0.1, -0.2, 0.0, 0.3, 0.1, -0.3, 0.0]);
        let s0 = RollingGeodesicState::new(cfg, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], lam).unwrap();
        let run = integrate_geodesic(&s0, 2.0, 1e-10).unwrap();
        assert!(run.skew_defect() < 1e-12);
        assert!(run.geodesic_residual().unwrap().max() < 1e-8);
    }
}
