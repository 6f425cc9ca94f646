//! Rolling of `M` on flat `ℝⁿ`. Then `V` is parallel, `Λ = Λ₀ + w vᵀ − v wᵀ`
//! with `W = f w`, `∇_γ̇W = γ̇`, and the geodesic equations become
//!
//! ```text
//! (a)  ∇_γ̇γ̇ = f ⟨Λ₀, Ω(γ̇, f_·)⟩ + R(V, W) γ̇,     ∇_γ̇V = 0,  ∇_γ̇W = γ̇
//! (b)  ÿ_j  = ⟨Λ₀, Ω(fẏ, f_j)⟩ + g(R(fv, f(y − y₀)) fẏ, f_j)
//! ```
//!
//! where `y` is the development of `γ` in the plane.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{curvature_pairing, integrate_geodesic, GeodesicRun, RollingGeodesicState};
use crate::error::{GeomError, Result};
use crate::geom::{christoffel, riemann, ChartMetric};
use crate::ode::{integrate_with, IntegrateOptions, OdeSystem, Trajectory};
use crate::rolling::RollingConfiguration;

/// Initial data for rolling `M` on `ℝⁿ`.
#[derive(Debug, Clone)]
pub struct RnRollingState {
    pub m: ChartMetric,
    pub x: DVector<f64>,
    pub f: DMatrix<f64>,
    /// Development point in `ℝⁿ`.
    pub y: DVector<f64>,
    /// Frame coordinates of `γ̇`, equal to `ẏ`.
    pub u: DVector<f64>,
    /// Frame coordinates of the parallel field `V`.
    pub v: DVector<f64>,
    pub lambda0: DMatrix<f64>,
}

impl RnRollingState {
    pub fn from_geodesic_state(s: &RollingGeodesicState) -> Result<Self> {
        let c = &s.cfg;
        let n = c.dim();
        if c.mh.spec != Some(crate::geom::ChartSpec::Euclidean { n }) {
            return Err(GeomError::ChartMismatch(format!(
                "rolling on ℝⁿ needs a flat second chart, got {}",
                c.mh.label
            )));
        }
        if (&c.fh - DMatrix::identity(n, n)).amax() > 1e-12 {
            return Err(GeomError::InvalidParameter("expected the standard frame on ℝⁿ".into()));
        }
        Ok(Self {
            m: c.m.clone(),
            x: c.x.clone(),
            f: c.f.clone(),
            y: c.xh.clone(),
            u: s.u.clone(),
            v: s.v.clone(),
            lambda0: s.lambda.clone(),
        })
    }

    pub fn to_geodesic_state(&self) -> Result<RollingGeodesicState> {
        let n = self.m.dim();
        let cfg = RollingConfiguration::new(
            self.m.clone(),
            ChartMetric::euclidean(n),
            self.x.as_slice(),
            self.f.clone(),
            self.y.as_slice(),
            DMatrix::identity(n, n),
        )?;
        RollingGeodesicState::new(cfg, self.u.as_slice(), self.v.as_slice(), self.lambda0.clone())
    }
}

fn frame_derivative(m: &ChartMetric, x: &[f64], xd: &[f64], f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gam = christoffel(m, x)?;
    let n = m.dim();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        out.set_column(j, &-gam.contract(xd, f.column(j).as_slice()));
    }
    Ok(out)
}

/// Form (a): state `[x, ẋ, V, W, f]` in chart components.
struct FormA<'a> {
    m: &'a ChartMetric,
    lambda0: &'a DMatrix<f64>,
}

impl OdeSystem for FormA<'_> {
    fn dim(&self) -> usize {
        let n = self.m.dim();
        4 * n + n * n
    }

    fn rhs(&self, _t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        let n = self.m.dim();
        let x = &s[0..n];
        self.m.check_point(x)?;
        let xd = &s[n..2 * n];
        let vv = &s[2 * n..3 * n];
        let ww = &s[3 * n..4 * n];
        let f = DMatrix::from_column_slice(n, n, &s[4 * n..]);
        let gam = christoffel(self.m, x)?;
        let r = riemann(self.m, x)?;
        let ginv = self.m.metric_inverse(x)?;
        let magnetic = &f * curvature_pairing(&r, &f, xd, self.lambda0);
        let tidal = ginv * r.eval_form(vv, ww, xd);
        let acc = magnetic + tidal - gam.contract(xd, xd);
        let vdot = -gam.contract(xd, vv);
        let wdot = DVector::from_column_slice(xd) - gam.contract(xd, ww);
        ds[0..n].copy_from_slice(xd);
        ds[n..2 * n].copy_from_slice(acc.as_slice());
        ds[2 * n..3 * n].copy_from_slice(vdot.as_slice());
        ds[3 * n..4 * n].copy_from_slice(wdot.as_slice());
        ds[4 * n..].copy_from_slice(frame_derivative(self.m, x, xd, &f)?.as_slice());
        Ok(())
    }
}

/// Form (b): state `[y, ẏ, x, f]`.
struct FormB<'a> {
    m: &'a ChartMetric,
    lambda0: &'a DMatrix<f64>,
    v: &'a DVector<f64>,
    y0: &'a DVector<f64>,
}

impl OdeSystem for FormB<'_> {
    fn dim(&self) -> usize {
        let n = self.m.dim();
        3 * n + n * n
    }

    fn rhs(&self, _t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        let n = self.m.dim();
        let y = DVector::from_column_slice(&s[0..n]);
        let yd = DVector::from_column_slice(&s[n..2 * n]);
        let x = &s[2 * n..3 * n];
        self.m.check_point(x)?;
        let f = DMatrix::from_column_slice(n, n, &s[3 * n..]);
        let r = riemann(self.m, x)?;
        let xd = &f * &yd;
        let magnetic = curvature_pairing(&r, &f, xd.as_slice(), self.lambda0);
        let fv = &f * self.v;
        let fw = &f * (&y - self.y0);
        let tidal_form = r.eval_form(fv.as_slice(), fw.as_slice(), xd.as_slice());
        let tidal = f.transpose() * tidal_form;
        ds[0..n].copy_from_slice(yd.as_slice());
        ds[n..2 * n].copy_from_slice((magnetic + tidal).as_slice());
        ds[2 * n..3 * n].copy_from_slice(xd.as_slice());
        ds[3 * n..].copy_from_slice(frame_derivative(self.m, x, xd.as_slice(), &f)?.as_slice());
        Ok(())
    }
}

/// Both formulations and the general flow specialised to flat `M̂`.
#[derive(Debug, Clone)]
pub struct RnRun {
    pub n: usize,
    pub form_a: Trajectory,
    pub form_b: Trajectory,
    pub general: GeodesicRun,
}

/// Pairwise sup distances between the three integrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnAgreement {
    /// Base curve and frame velocity, (a) vs (b).
    pub a_vs_b: f64,
    /// (a) vs the general flow.
    pub a_vs_general: f64,
    /// (b) vs the general flow, including the development.
    pub b_vs_general: f64,
}

impl RnAgreement {
    pub fn max(&self) -> f64 {
        self.a_vs_b.max(self.a_vs_general).max(self.b_vs_general)
    }
}

pub fn rn_rolling_flow(s0: &RnRollingState, t_end: f64, tol: f64) -> Result<RnRun> {
    let n = s0.m.dim();
    let general_start = s0.to_geodesic_state()?;
    let opts = IntegrateOptions::with_tol(tol);
    let xd0 = &s0.f * &s0.u;
    let v0 = &s0.f * &s0.v;
    let mut a0: Vec<f64> = Vec::new();
    a0.extend(s0.x.iter());
    a0.extend(xd0.iter());
    a0.extend(v0.iter());
    a0.extend(std::iter::repeat(0.0).take(n));
    a0.extend(s0.f.iter());
    let sys_a = FormA {
        m: &s0.m,
        lambda0: &s0.lambda0,
    };
    let m = &s0.m;
    let project = |fo: usize, xo: usize| {
        move |_t: f64, s: &mut [f64]| -> bool {
            let Ok(g) = m.metric(&s[xo..xo + n]) else {
                return false;
            };
            let f = DMatrix::from_column_slice(n, n, &s[fo..fo + n * n]);
            if crate::geom::orthonormality_defect(&f, &g) > crate::rolling::PROJECTION_TRIGGER {
                if let Ok(p) = crate::geom::so_projection(&f, &g) {
                    s[fo..fo + n * n].copy_from_slice(p.as_slice());
                    return true;
                }
            }
            false
        }
    };
    let sys_b = FormB {
        m: &s0.m,
        lambda0: &s0.lambda0,
        v: &s0.v,
        y0: &s0.y,
    };
    let mut b0: Vec<f64> = Vec::new();
    b0.extend(s0.y.iter());
    b0.extend(s0.u.iter());
    b0.extend(s0.x.iter());
    b0.extend(s0.f.iter());
    let ((form_a, form_b), general) = rayon::join(
        || {
            rayon::join(
                || integrate_with(&sys_a, 0.0, &a0, t_end, &opts, project(4 * n, 0)),
                || integrate_with(&sys_b, 0.0, &b0, t_end, &opts, project(3 * n, 2 * n)),
            )
        },
        || integrate_geodesic(&general_start, t_end, tol),
    );
    Ok(RnRun {
        n,
        form_a,
        form_b,
        general: general?,
    })
}

impl RnRun {
    pub fn is_truncated(&self) -> bool {
        self.form_a.is_truncated() || self.form_b.is_truncated() || self.general.is_truncated()
    }

    fn common_end(&self) -> f64 {
        self.form_a
            .t_end()
            .min(self.form_b.t_end())
            .min(self.general.t_end())
    }

    pub fn agreement(&self, chart: &ChartMetric, samples: usize) -> Result<RnAgreement> {
        let n = self.n;
        let t1 = self.common_end();
        let mut out = RnAgreement {
            a_vs_b: 0.0,
            a_vs_general: 0.0,
            b_vs_general: 0.0,
        };
        for k in 0..=samples {
            let t = t1 * k as f64 / samples as f64;
            let sa = self.form_a.sample(t);
            let sb = self.form_b.sample(t);
            let gs = self.general.state_at(t);
            let xa = DVector::from_column_slice(&sa[0..n]);
            let fa = DMatrix::from_column_slice(n, n, &sa[4 * n..]);
            let g = chart.metric(xa.as_slice())?;
            let ua = fa.transpose() * g * DVector::from_column_slice(&sa[n..2 * n]);
            let xb = DVector::from_column_slice(&sb[2 * n..3 * n]);
            let ub = DVector::from_column_slice(&sb[n..2 * n]);
            let yb = DVector::from_column_slice(&sb[0..n]);
            let d = |p: &DVector<f64>, q: &DVector<f64>| (p - q).amax();
            out.a_vs_b = out.a_vs_b.max(d(&xa, &xb)).max(d(&ua, &ub));
            out.a_vs_general = out.a_vs_general.max(d(&xa, &gs.cfg.x)).max(d(&ua, &gs.u));
            out.b_vs_general = out
                .b_vs_general
                .max(d(&xb, &gs.cfg.x))
                .max(d(&ub, &gs.u))
                .max(d(&yb, &gs.cfg.xh));
        }
        Ok(out)
    }

    /// Development point `y(t)` from form (b).
    pub fn development(&self, t: f64) -> DVector<f64> {
        DVector::from_column_slice(&self.form_b.sample(t)[0..self.n])
    }
}

/// Comparison of the charge `L(t)` with `L₀ + ∫ g(V, Jγ̇) dt`, i.e.
/// `L₀ − ∫_γ ⋆♭V` for the Hodge star with `⋆dx¹ = dx²` in oriented
/// orthonormal coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeReport {
    pub max_error: f64,
    pub times: Vec<f64>,
    pub charge: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

pub fn charge_monitor(run: &GeodesicRun) -> Result<ChargeReport> {
    if run.dim() != 2 {
        return Err(GeomError::Dimension {
            expected: 2,
            got: run.dim(),
        });
    }
    if run.mh.spec != Some(crate::geom::ChartSpec::Euclidean { n: 2 }) {
        return Err(GeomError::ChartMismatch("charge monitor needs rolling on the plane".into()));
    }
    let m = &run.m;
    // area form applied to (γ̇, V) in chart components
    let integrand = |_t: f64, y: &[f64]| -> f64 {
        let s = super::Parts::new(2, y);
        let x = s.x();
        let f = s.f();
        let xd = &f * s.u();
        let vv = &f * s.v();
        let det = m.metric_raw(x.as_slice()).determinant().max(0.0).sqrt();
        det * (xd[0] * vv[1] - xd[1] * vv[0])
    };
    let q = run.trajectory.cumulative_quadrature(integrand);
    let l0 = run.initial_state().lambda[(0, 1)];
    let mut rep = ChargeReport {
        max_error: 0.0,
        times: run.trajectory.times.clone(),
        charge: Vec::with_capacity(q.len()),
        reconstruction: Vec::with_capacity(q.len()),
    };
    for (y, qi) in run.trajectory.states.iter().zip(&q) {
        let l = super::Parts::new(2, y).lambda()[(0, 1)];
        let rec = l0 + qi;
        rep.max_error = rep.max_error.max((l - rec).abs());
        rep.charge.push(l);
        rep.reconstruction.push(rec);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::planar_lambda;

    fn rn_state(m: ChartMetric, x: &[f64], u: &[f64], v: &[f64], l: f64) -> RnRollingState {
        let cfg = RollingConfiguration::standard(m, ChartMetric::euclidean(2), x, &[0.0, 0.0], 0.0).unwrap();
        let s = RollingGeodesicState::new(cfg, u, v, planar_lambda(l)).unwrap();
        RnRollingState::from_geodesic_state(&s).unwrap()
    }

    #[test]
    fn flat_rolling_is_straight() {
        let s = rn_state(ChartMetric::euclidean(2), &[0.0, 0.0], &[0.6, 0.8], &[1.0, 0.0], 2.0);
        let run = rn_rolling_flow(&s, 2.0, 1e-10).unwrap();
        let y = run.development(2.0);
        assert!((y[0] - 1.2).abs() < 1e-12 && (y[1] - 1.6).abs() < 1e-12);
        assert!(run.agreement(&s.m, 50).unwrap().max() < 1e-12);
    }

    #[test]
    fn sphere_with_charge_develops_circles() {
        // V = 0: θ̇ = L₀ (κ = 1, κ̂ = 0), so the development is a circle of radius a/|L₀|
        let (a, l0) = (1.0, 0.8);
        let s = rn_state(ChartMetric::sphere(1.0), &[1.2, 0.0], &[a, 0.0], &[0.0, 0.0], l0);
        let run = rn_rolling_flow(&s, 5.0, 1e-11).unwrap();
        let r = a / l0;
        // centre at y₀ + r J ẏ₀ / a
        let c = [0.0, r];
        for k in 0..=50 {
            let t = 5.0 * k as f64 / 50.0;
            let y = run.development(t);
            assert!((((y[0] - c[0]).powi(2) + (y[1] - c[1]).powi(2)).sqrt() - r).abs() < 1e-8);
        }
        assert!(run.agreement(&s.m, 100).unwrap().max() < 1e-8);
    }

    #[test]
    fn paraboloid_forms_agree() {
        let s = rn_state(ChartMetric::paraboloid(0.5), &[0.2, -0.1], &[0.6, 0.8], &[0.5, -0.3], 0.7);
        let run = rn_rolling_flow(&s, 5.0, 1e-11).unwrap();
        assert!(!run.is_truncated());
        let ag = run.agreement(&s.m, 200).unwrap();
        assert!(ag.max() < 1e-7, "{ag:?}");
    }

    #[test]
    fn charge_reconstruction() {
        let s = rn_state(ChartMetric::sphere(1.0), &[1.1, 0.3], &[0.6, 0.8], &[0.4, -0.2], 0.3);
        let run = integrate_geodesic(&s.to_geodesic_state().unwrap(), 5.0, 1e-10).unwrap();
        assert!(charge_monitor(&run).unwrap().max_error < 1e-8);
        // V = 0 keeps L constant
        let s0 = rn_state(ChartMetric::sphere(1.0), &[1.1, 0.3], &[0.6, 0.8], &[0.0, 0.0], 0.3);
        let run0 = integrate_geodesic(&s0.to_geodesic_state().unwrap(), 3.0, 1e-10).unwrap();
        let rep = charge_monitor(&run0).unwrap();
        assert!(rep.charge.iter().all(|l| (l - 0.3).abs() < 1e-12));
    }

    #[test]
    fn straight_run_charge_is_linear() {
        // flat M, V ⟂ γ̇: L grows like |V| t
        let s = rn_state(ChartMetric::euclidean(2), &[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.5], 0.0);
        let run = integrate_geodesic(&s.to_geodesic_state().unwrap(), 2.0, 1e-10).unwrap();
        let rep = charge_monitor(&run).unwrap();
        for (t, l) in rep.times.iter().zip(&rep.charge) {
            assert!((l - 0.5 * t).abs() < 1e-12);
        }
    }
}
