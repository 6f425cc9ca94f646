//! Rolling geodesics of surfaces in polar form `γ̇ = a(cos θ f₁ + sin θ f₂)`,
//! `V = b₁(cos θ f₁ + sin θ f₂) + b₂(−sin θ f₁ + cos θ f₂)`:
//!
//! ```text
//! θ̇ = L(κ − κ̂),  L̇ = a b₂,  ḃ₁ = θ̇ b₂,  ḃ₂ = a L κ̂ − θ̇ b₁
//! ```
//!
//! With `ρ = 1/(κ − κ̂)`, `c = a κ̂ ρ` and `W = ρ²(κ κ̂̇ − κ̇ κ̂)` the `b`
//! equations integrate to
//!
//! ```text
//! b₁ = c + (A/a) cos(θ − φ₀) − a ∫ cos(θ(t) − θ(s)) W(s) ds
//! b₂ = −(A/a) sin(θ − φ₀) + a F,   F = ∫ sin(θ(t) − θ(s)) W(s) ds
//! ```
//!
//! and `θ` solves the forced pendulum
//! `θ̈ + (ρ̇/ρ) θ̇ = (A/ρ) sin(θ − φ₀ − π) + (a²/ρ) F`.
//! The memory integral is carried as the two channels `S = ∫ sin θ W` and
//! `C = ∫ cos θ W`, so `F = sin θ C − cos θ S`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{planar_lambda, RollingGeodesicState};
use crate::error::{GeomError, Result};
use crate::geom::{christoffel, gauss_curvature, gauss_curvature_gradient, ChartMetric};
use crate::ode::{integrate_with, IntegrateOptions, OdeSystem, Trajectory};
use crate::rolling::RollingConfiguration;

/// `|κ − κ̂|` below which `ρ` and the memory integral are not evaluated.
pub const RHO_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Pendulum2DState {
    pub cfg: RollingConfiguration,
    pub theta: f64,
    pub l: f64,
    pub b1: f64,
    pub b2: f64,
    pub a: f64,
}

impl Pendulum2DState {
    pub fn new(cfg: RollingConfiguration, theta: f64, l: f64, b1: f64, b2: f64, a: f64) -> Result<Self> {
        if cfg.dim() != 2 {
            return Err(GeomError::Dimension {
                expected: 2,
                got: cfg.dim(),
            });
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(GeomError::InvalidParameter(format!("speed must be non-negative, got {a}")));
        }
        Ok(Self {
            cfg,
            theta,
            l,
            b1,
            b2,
            a,
        })
    }

    pub fn to_geodesic_state(&self) -> RollingGeodesicState {
        let (s, c) = self.theta.sin_cos();
        RollingGeodesicState {
            cfg: self.cfg.clone(),
            u: DVector::from_vec(vec![self.a * c, self.a * s]),
            v: DVector::from_vec(vec![self.b1 * c - self.b2 * s, self.b1 * s + self.b2 * c]),
            lambda: planar_lambda(self.l),
        }
    }

    /// Polar form of a 2D geodesic state; `θ` is taken in `(−π, π]`.
    pub fn from_geodesic_state(s: &RollingGeodesicState) -> Result<Self> {
        let theta = s.u[1].atan2(s.u[0]);
        let (sn, cs) = theta.sin_cos();
        Self::new(
            s.cfg.clone(),
            theta,
            s.lambda[(0, 1)],
            s.v[0] * cs + s.v[1] * sn,
            -s.v[0] * sn + s.v[1] * cs,
            s.u.norm(),
        )
    }
}

/// Integration constants `(A, φ₀)` of the `b` equations, in the convention
/// `b₂ = −(A/a) sin(θ − φ₀) + a F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumConstants {
    pub amplitude: f64,
    pub phi0: f64,
}

impl PendulumConstants {
    /// Fits `(A, φ₀)` to the initial data of a run.
    pub fn fit(s: &Pendulum2DState) -> Result<Self> {
        let k = gauss_curvature(&s.cfg.m, s.cfg.x.as_slice())?;
        let kh = gauss_curvature(&s.cfg.mh, s.cfg.xh.as_slice())?;
        let delta = k - kh;
        if delta.abs() < RHO_FLOOR {
            return Err(GeomError::RhoSingular(delta));
        }
        let c = s.a * kh / delta;
        let (re, im) = (s.b1 - c, s.b2);
        Ok(Self {
            amplitude: s.a * re.hypot(im),
            phi0: s.theta + im.atan2(re),
        })
    }

    /// Phase appearing in the pendulum form `(A/ρ) sin(θ − φ)`.
    pub fn pendulum_phase(&self) -> f64 {
        self.phi0 + std::f64::consts::PI
    }
}

// [x(2), x̂(2), f(4), f̂(4), θ, L, b₁, b₂, S, C]
const TH: usize = 12;
const LEN: usize = 18;

struct ReducedSystem<'a> {
    m: &'a ChartMetric,
    mh: &'a ChartMetric,
    a: f64,
}

/// Curvatures and their time derivatives along the velocities.
fn curvature_data(m: &ChartMetric, mh: &ChartMetric, y: &[f64], xd: &[f64], xhd: &[f64]) -> Result<[f64; 4]> {
    let (x, xh) = (&y[0..2], &y[2..4]);
    let k = gauss_curvature(m, x)?;
    let kh = gauss_curvature(mh, xh)?;
    let gk = gauss_curvature_gradient(m, x)?;
    let gkh = gauss_curvature_gradient(mh, xh)?;
    Ok([k, kh, gk[0] * xd[0] + gk[1] * xd[1], gkh[0] * xhd[0] + gkh[1] * xhd[1]])
}

impl ReducedSystem<'_> {
    fn velocities(&self, y: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let f = DMatrix::from_column_slice(2, 2, &y[4..8]);
        let fh = DMatrix::from_column_slice(2, 2, &y[8..12]);
        let (s, c) = y[TH].sin_cos();
        let u = DVector::from_vec(vec![self.a * c, self.a * s]);
        (&f * &u, &fh * &u)
    }
}

impl OdeSystem for ReducedSystem<'_> {
    fn dim(&self) -> usize {
        LEN
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let (x, xh) = (&y[0..2], &y[2..4]);
        self.m.check_point(x)?;
        self.mh.check_point(xh)?;
        let (xd, xhd) = self.velocities(y);
        let gam = christoffel(self.m, x)?;
        let gamh = christoffel(self.mh, xh)?;
        dy[0..2].copy_from_slice(xd.as_slice());
        dy[2..4].copy_from_slice(xhd.as_slice());
        for j in 0..2 {
            let fj = &y[4 + 2 * j..6 + 2 * j];
            let fhj = &y[8 + 2 * j..10 + 2 * j];
            let a = gam.contract(xd.as_slice(), fj);
            let b = gamh.contract(xhd.as_slice(), fhj);
            for i in 0..2 {
                dy[4 + 2 * j + i] = -a[i];
                dy[8 + 2 * j + i] = -b[i];
            }
        }
        let [k, kh, kd, khd] = curvature_data(self.m, self.mh, y, xd.as_slice(), xhd.as_slice())?;
        let delta = k - kh;
        let (th, l, b1, b2) = (y[TH], y[TH + 1], y[TH + 2], y[TH + 3]);
        let thd = l * delta;
        dy[TH] = thd;
        dy[TH + 1] = self.a * b2;
        dy[TH + 2] = thd * b2;
        dy[TH + 3] = self.a * l * kh - thd * b1;
        let w = if delta.abs() >= RHO_FLOOR {
            (k * khd - kd * kh) / (delta * delta)
        } else {
            0.0
        };
        dy[TH + 4] = th.sin() * w;
        dy[TH + 5] = th.cos() * w;
        Ok(())
    }
}

/// Output of [`reduce_2d`].
#[derive(Debug, Clone)]
pub struct ReducedRun {
    pub m: ChartMetric,
    pub mh: ChartMetric,
    pub a: f64,
    pub tol: f64,
    pub trajectory: Trajectory,
    /// Time windows (between nodes) where `|κ − κ̂| < RHO_FLOOR`; the
    /// pendulum form is unavailable from the first of them on.
    pub singular_windows: Vec<(f64, f64)>,
}

/// Integrates the reduced system together with the base curves and frames.
/// The reduced system itself never divides by `κ − κ̂`, so runs through
/// `κ = κ̂` continue; such windows are recorded instead.
pub fn reduce_2d(s0: &Pendulum2DState, t_end: f64, tol: f64) -> Result<ReducedRun> {
    let c = &s0.cfg;
    c.m.check_point(c.x.as_slice())?;
    c.mh.check_point(c.xh.as_slice())?;
    let mut y0 = Vec::with_capacity(LEN);
    y0.extend(c.x.iter());
    y0.extend(c.xh.iter());
    y0.extend(c.f.iter());
    y0.extend(c.fh.iter());
    y0.extend([s0.theta, s0.l, s0.b1, s0.b2, 0.0, 0.0]);
    let sys = ReducedSystem {
        m: &c.m,
        mh: &c.mh,
        a: s0.a,
    };
    let trajectory = integrate_with(&sys, 0.0, &y0, t_end, &IntegrateOptions::with_tol(tol), |_, y| {
        super::project_packed_frames(&c.m, &c.mh, y, [0, 2, 4, 8])
    });
    let mut singular_windows: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = None;
    let mut prev_delta: Option<f64> = None;
    for (i, (t, y)) in trajectory.times.iter().zip(&trajectory.states).enumerate() {
        let delta = gauss_curvature(&c.m, &y[0..2])? - gauss_curvature(&c.mh, &y[2..4])?;
        // a sign change between nodes means the band was stepped over
        let crossed = prev_delta.is_some_and(|p| p.signum() != delta.signum());
        prev_delta = Some(delta);
        if crossed && open.is_none() {
            singular_windows.push((trajectory.times[i - 1], *t));
            continue;
        }
        let bad = delta.abs() < RHO_FLOOR;
        match (bad, open) {
            (true, None) => open = Some(if i > 0 { trajectory.times[i - 1] } else { *t }),
            (false, Some(t0)) => {
                singular_windows.push((t0, *t));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(t0) = open {
        singular_windows.push((t0, trajectory.t_end()));
    }
    Ok(ReducedRun {
        m: c.m.clone(),
        mh: c.mh.clone(),
        a: s0.a,
        tol,
        trajectory,
        singular_windows,
    })
}

/// Sampled reduced variables at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedSample {
    pub t: f64,
    pub theta: f64,
    pub l: f64,
    pub b1: f64,
    pub b2: f64,
    /// Memory term `F(t)`.
    pub f: f64,
    pub kappa: f64,
    pub kappa_hat: f64,
}

impl ReducedRun {
    fn sys(&self) -> ReducedSystem<'_> {
        ReducedSystem {
            m: &self.m,
            mh: &self.mh,
            a: self.a,
        }
    }

    pub fn is_truncated(&self) -> bool {
        self.trajectory.is_truncated()
    }

    /// End of the window on which the pendulum form is available.
    pub fn pendulum_horizon(&self) -> f64 {
        self.singular_windows
            .first()
            .map_or(self.trajectory.t_end(), |w| w.0)
    }

    fn sample_from(&self, t: f64, y: &[f64]) -> Result<ReducedSample> {
        let th = y[TH];
        Ok(ReducedSample {
            t,
            theta: th,
            l: y[TH + 1],
            b1: y[TH + 2],
            b2: y[TH + 3],
            f: th.sin() * y[TH + 5] - th.cos() * y[TH + 4],
            kappa: gauss_curvature(&self.m, &y[0..2])?,
            kappa_hat: gauss_curvature(&self.mh, &y[2..4])?,
        })
    }

    pub fn sample(&self, t: f64) -> Result<ReducedSample> {
        self.sample_from(t, &self.trajectory.sample(t))
    }

    pub fn nodes(&self) -> Result<Vec<ReducedSample>> {
        self.trajectory
            .times
            .iter()
            .zip(&self.trajectory.states)
            .map(|(t, y)| self.sample_from(*t, y))
            .collect()
    }

    pub fn base_point(&self, t: f64) -> DVector<f64> {
        DVector::from_column_slice(&self.trajectory.sample(t)[0..2])
    }

    pub fn base_point_hat(&self, t: f64) -> DVector<f64> {
        DVector::from_column_slice(&self.trajectory.sample(t)[2..4])
    }

    pub fn state_at(&self, t: f64) -> Pendulum2DState {
        let y = self.trajectory.sample(t);
        let cfg = RollingConfiguration::from_parts(
            &self.m,
            &self.mh,
            DVector::from_column_slice(&y[0..2]),
            DVector::from_column_slice(&y[2..4]),
            DMatrix::from_column_slice(2, 2, &y[4..8]),
            DMatrix::from_column_slice(2, 2, &y[8..12]),
        );
        Pendulum2DState {
            cfg,
            theta: y[TH],
            l: y[TH + 1],
            b1: y[TH + 2],
            b2: y[TH + 3],
            a: self.a,
        }
    }

    /// `sup |L − ρ θ̇|` with `θ̇` from the interpolant, over steps where
    /// `ρ` is defined.
    pub fn consistency_residual(&self) -> Result<f64> {
        let mut r: f64 = 0.0;
        for k in 0..self.trajectory.times.len().saturating_sub(1) {
            let (_, y, d1, _) = self.trajectory.midpoint_hermite(k);
            let delta = gauss_curvature(&self.m, &y[0..2])? - gauss_curvature(&self.mh, &y[2..4])?;
            if delta.abs() < RHO_FLOOR {
                continue;
            }
            r = r.max((y[TH + 1] - d1[TH] / delta).abs());
        }
        Ok(r)
    }

    /// `sup` over step midpoints of the mismatch between the derivative of
    /// the mapped-up state and the general geodesic equations.
    pub fn mapped_rhs_residual(&self) -> Result<f64> {
        let mut r: f64 = 0.0;
        for k in 0..self.trajectory.times.len().saturating_sub(1) {
            let (t, y, d1, _) = self.trajectory.midpoint_hermite(k);
            let st = self.state_at(t).to_geodesic_state();
            let d = super::geodesic_rhs(&st)?;
            let (th, thd) = (y[TH], d1[TH]);
            let (s, c) = th.sin_cos();
            let (b1, b2, b1d, b2d) = (y[TH + 2], y[TH + 3], d1[TH + 2], d1[TH + 3]);
            let ud = [-self.a * s * thd, self.a * c * thd];
            let vd = [
                b1d * c - b1 * s * thd - b2d * s - b2 * c * thd,
                b1d * s + b1 * c * thd + b2d * c - b2 * s * thd,
            ];
            r = r
                .max((ud[0] - d.u[0]).abs())
                .max((ud[1] - d.u[1]).abs())
                .max((vd[0] - d.v[0]).abs())
                .max((vd[1] - d.v[1]).abs())
                .max((d1[TH + 1] - d.lambda[(0, 1)]).abs());
            for i in 0..2 {
                r = r.max((d1[i] - d.x[i]).abs()).max((d1[2 + i] - d.xh[i]).abs());
            }
        }
        Ok(r)
    }

    /// `b₁, b₂` at every node from the closed form, with the memory
    /// integral evaluated by Gauss–Legendre quadrature on the dense output
    /// (independently of the carried channels).
    pub fn closed_form_b(&self, k: &PendulumConstants) -> Result<Vec<(f64, f64, f64)>> {
        let sys = self.sys();
        let w_of = |y: &[f64]| -> f64 {
            let (xd, xhd) = sys.velocities(y);
            match curvature_data(&self.m, &self.mh, y, xd.as_slice(), xhd.as_slice()) {
                Ok([kk, kh, kd, khd]) => {
                    let delta = kk - kh;
                    if delta.abs() >= RHO_FLOOR {
                        (kk * khd - kd * kh) / (delta * delta)
                    } else {
                        0.0
                    }
                }
                Err(_) => f64::NAN,
            }
        };
        let s_int = self.trajectory.cumulative_quadrature(|_, y| y[TH].sin() * w_of(y));
        let c_int = self.trajectory.cumulative_quadrature(|_, y| y[TH].cos() * w_of(y));
        self.trajectory
            .times
            .iter()
            .zip(&self.trajectory.states)
            .enumerate()
            .map(|(i, (t, y))| {
                let kk = gauss_curvature(&self.m, &y[0..2])?;
                let kh = gauss_curvature(&self.mh, &y[2..4])?;
                let (b1, b2) = closed_form_point(y[TH], kk, kh, self.a, k, s_int[i], c_int[i]);
                Ok((*t, b1, b2))
            })
            .collect()
    }

    /// `sup` over nodes up to the pendulum horizon of the distance between
    /// the integrated and closed-form `b`.
    pub fn closed_form_error(&self, k: &PendulumConstants) -> Result<f64> {
        let horizon = self.pendulum_horizon();
        let cf = self.closed_form_b(k)?;
        let mut e: f64 = 0.0;
        for ((t, b1, b2), y) in cf.iter().zip(&self.trajectory.states) {
            if *t > horizon {
                break;
            }
            e = e.max((b1 - y[TH + 2]).abs()).max((b2 - y[TH + 3]).abs());
        }
        Ok(e)
    }
}

fn closed_form_point(theta: f64, k: f64, kh: f64, a: f64, p: &PendulumConstants, s: f64, c: f64) -> (f64, f64) {
    let cc = a * kh / (k - kh);
    let (sn, cs) = theta.sin_cos();
    let ph = theta - p.phi0;
    let amp = if a > 0.0 { p.amplitude / a } else { 0.0 };
    let b1 = cc + amp * ph.cos() - a * (cs * c + sn * s);
    let b2 = -amp * ph.sin() + a * (sn * c - cs * s);
    (b1, b2)
}

/// Closed-form `b₁, b₂` from sampled histories of `θ`, `κ`, `κ̂`. The
/// memory integral `a ∫ e^{iθ} W ds = ∫ e^{iθ} dc` is evaluated as a
/// trapezoidal Stieltjes sum, so accuracy follows the sampling density.
pub fn closed_form_b(
    times: &[f64],
    theta: &[f64],
    kappa: &[f64],
    kappa_hat: &[f64],
    a: f64,
    k: &PendulumConstants,
) -> Result<Vec<(f64, f64)>> {
    let n = times.len();
    if theta.len() != n || kappa.len() != n || kappa_hat.len() != n {
        return Err(GeomError::InvalidParameter("history lengths differ".into()));
    }
    let mut out = Vec::with_capacity(n);
    let (mut s, mut c) = (0.0, 0.0);
    let cvals: Vec<f64> = kappa
        .iter()
        .zip(kappa_hat)
        .map(|(kk, kh)| {
            let d = kk - kh;
            if d.abs() < RHO_FLOOR {
                Err(GeomError::RhoSingular(d))
            } else {
                Ok(a * kh / d)
            }
        })
        .collect::<Result<_>>()?;
    for i in 0..n {
        if i > 0 && a > 0.0 {
            let dc = (cvals[i] - cvals[i - 1]) / a;
            s += 0.5 * (theta[i].sin() + theta[i - 1].sin()) * dc;
            c += 0.5 * (theta[i].cos() + theta[i - 1].cos()) * dc;
        }
        out.push(closed_form_point(theta[i], kappa[i], kappa_hat[i], a, k, s, c));
    }
    Ok(out)
}

/// `sup` over step midpoints (up to the pendulum horizon) of
/// `|θ̈ + (ρ̇/ρ)θ̇ − (A/ρ) sin(θ − φ₀ − π) − (a²/ρ) F|`, with `θ̇`, `θ̈`
/// from the interpolant and `F` from the memory channels.
pub fn pendulum_residual(run: &ReducedRun, k: &PendulumConstants) -> Result<f64> {
    let horizon = run.pendulum_horizon();
    if horizon <= run.trajectory.t_start() {
        let d = run.sample(run.trajectory.t_start())?;
        return Err(GeomError::RhoSingular(d.kappa - d.kappa_hat));
    }
    let sys = run.sys();
    let mut r: f64 = 0.0;
    for i in 0..run.trajectory.times.len().saturating_sub(1) {
        if run.trajectory.times[i + 1] > horizon {
            break;
        }
        let (_, y, d1, d2) = run.trajectory.midpoint_hermite(i);
        let (xd, xhd) = sys.velocities(&y);
        let [kk, kh, kd, khd] = curvature_data(&run.m, &run.mh, &y, xd.as_slice(), xhd.as_slice())?;
        let delta = kk - kh;
        let rho = 1.0 / delta;
        let rho_d = -(kd - khd) / (delta * delta);
        let th = y[TH];
        let f = th.sin() * y[TH + 5] - th.cos() * y[TH + 4];
        let lhs = d2[TH] + rho_d / rho * d1[TH];
        let rhs = k.amplitude / rho * (th - k.pendulum_phase()).sin() + run.a * run.a / rho * f;
        r = r.max((lhs - rhs).abs());
    }
    Ok(r)
}

/// `sup |F|` over nodes up to the pendulum horizon.
pub fn memory_term_sup(run: &ReducedRun) -> Result<f64> {
    let horizon = run.pendulum_horizon();
    Ok(run
        .nodes()?
        .iter()
        .filter(|s| s.t <= horizon)
        .map(|s| s.f.abs())
        .fold(0.0, f64::max))
}

/// `ρ(t)`, `F(t)` and the fitted constants of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumProfile {
    pub times: Vec<f64>,
    pub rho: Vec<f64>,
    pub memory: Vec<f64>,
    pub constants: PendulumConstants,
}

pub fn pendulum_profile(run: &ReducedRun, k: &PendulumConstants) -> Result<PendulumProfile> {
    let horizon = run.pendulum_horizon();
    let nodes: Vec<_> = run.nodes()?.into_iter().filter(|s| s.t <= horizon).collect();
    Ok(PendulumProfile {
        times: nodes.iter().map(|s| s.t).collect(),
        rho: nodes.iter().map(|s| 1.0 / (s.kappa - s.kappa_hat)).collect(),
        memory: nodes.iter().map(|s| s.f).collect(),
        constants: *k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{integrate, FnSystem};

    fn start(m: ChartMetric, mh: ChartMetric, x: &[f64], xh: &[f64], th: f64, l: f64, b1: f64, b2: f64) -> Pendulum2DState {
        let cfg = RollingConfiguration::standard(m, mh, x, xh, 0.0).unwrap();
        Pendulum2DState::new(cfg, th, l, b1, b2, 1.0).unwrap()
    }

    #[test]
    fn polar_roundtrip() {
        let s = start(ChartMetric::sphere(1.0), ChartMetric::euclidean(2), &[1.0, 0.0], &[0.0, 0.0], 2.0, 0.3, -0.4, 0.8);
        let back = Pendulum2DState::from_geodesic_state(&s.to_geodesic_state()).unwrap();
        assert!((back.theta - 2.0).abs() < 1e-14);
        assert!((back.b1 + 0.4).abs() < 1e-14 && (back.b2 - 0.8).abs() < 1e-14);
        assert!((back.l - 0.3).abs() < 1e-14 && (back.a - 1.0).abs() < 1e-14);
    }

    #[test]
    fn straight_development_when_unforced() {
        let s = start(ChartMetric::sphere(1.0), ChartMetric::euclidean(2), &[1.2, 0.0], &[0.0, 0.0], 0.3, 0.0, 0.5, 0.0);
        let run = reduce_2d(&s, 2.0, 1e-10).unwrap();
        for n in run.nodes().unwrap() {
            assert!((n.theta - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_on_plane_is_mathematical_pendulum() {
        let s = start(ChartMetric::sphere(1.0), ChartMetric::euclidean(2), &[1.0, 0.5], &[0.0, 0.0], 0.2, 0.4, 0.3, -0.6);
        let k = PendulumConstants::fit(&s).unwrap();
        let run = reduce_2d(&s, 6.0, 1e-11).unwrap();
        assert!(pendulum_residual(&run, &k).unwrap() < 1e-6);
        assert!(memory_term_sup(&run).unwrap() < 1e-12);
        // θ̈ = −A sin(θ − φ₀) integrated on its own
        let amp = k.amplitude;
        let phi = k.phi0;
        let osc = FnSystem {
            dim: 2,
            f: move |_t: f64, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -amp * (y[0] - phi).sin();
                Ok(())
            },
        };
        let tr = integrate(&osc, 0.0, &[0.2, 0.4], 6.0, &IntegrateOptions::with_tol(1e-12));
        for t in tr.uniform_times(60) {
            assert!((tr.sample(t)[0] - run.sample(t).unwrap().theta).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn constant_ratio_curvatures_have_no_memory() {
        // sphere(1) on sphere(2): κ̂ = κ/4
        let s = start(ChartMetric::sphere(1.0), ChartMetric::sphere(2.0), &[1.0, 0.0], &[1.3, 0.2], 0.4, 0.5, 0.1, 0.7);
        let run = reduce_2d(&s, 4.0, 1e-10).unwrap();
        assert!(memory_term_sup(&run).unwrap() < 1e-8);
    }

    #[test]
    fn paraboloid_on_hyperbolic_closed_form_and_pendulum() {
        let s = start(ChartMetric::paraboloid(0.5), ChartMetric::hyperbolic_disk(2.0), &[0.3, 0.1], &[0.0, 0.0], 0.5, 0.8, 0.2, 0.4);
        let k = PendulumConstants::fit(&s).unwrap();
        let run = reduce_2d(&s, 5.0, 1e-11).unwrap();
        assert!(!run.is_truncated());
        assert!(run.singular_windows.is_empty());
        assert!(memory_term_sup(&run).unwrap() > 1e-3);
        assert!(run.closed_form_error(&k).unwrap() < 1e-7);
        assert!(pendulum_residual(&run, &k).unwrap() < 1e-6);
        assert!(run.consistency_residual().unwrap() < 1e-7);
        assert!(run.mapped_rhs_residual().unwrap() < 1e-7);
        // history-based closed form on a fine uniform resampling
        let ts: Vec<f64> = (0..=20000).map(|i| 5.0 * i as f64 / 20000.0).collect();
        let smp: Vec<_> = ts.iter().map(|t| run.sample(*t).unwrap()).collect();
        let th: Vec<f64> = smp.iter().map(|s| s.theta).collect();
        let kk: Vec<f64> = smp.iter().map(|s| s.kappa).collect();
        let kh: Vec<f64> = smp.iter().map(|s| s.kappa_hat).collect();
        let cf = closed_form_b(&ts, &th, &kk, &kh, 1.0, &k).unwrap();
        for (s, (b1, b2)) in smp.iter().zip(cf) {
            assert!((s.b1 - b1).abs() < 1e-5 && (s.b2 - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn equal_curvature_crossing_is_flagged() {
        // bump(κ changes sign) on the plane passes through κ = 0
        let m = ChartMetric::revolution(crate::geom::Profile::Bump);
        let s = start(m, ChartMetric::euclidean(2), &[-2.0, 0.0], &[0.0, 0.0], 0.0, 0.0, 0.0, 0.0);
        let run = reduce_2d(&s, 4.0, 1e-9).unwrap();
        assert!(!run.singular_windows.is_empty());
        assert!(run.pendulum_horizon() < 4.0);
        assert!(!run.is_truncated());
    }
}
