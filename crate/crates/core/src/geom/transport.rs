use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::chart::ChartMetric;
use super::tensors::christoffel;
use crate::error::{GeomError, Result};
use crate::ode::{integrate, IntegrateOptions, OdeSystem, Trajectory};

/// A parametrised curve in chart coordinates.
pub trait BaseCurve: Send + Sync {
    fn dim(&self) -> usize;
    fn interval(&self) -> (f64, f64);
    fn point(&self, t: f64) -> DVector<f64>;
    fn velocity(&self, t: f64) -> DVector<f64>;
}

type CurveFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Curve given by closed-form position and velocity.
#[derive(Clone)]
pub struct FnCurve {
    dim: usize,
    t0: f64,
    t1: f64,
    pos: CurveFn,
    vel: CurveFn,
}

impl FnCurve {
    pub fn new(
        dim: usize,
        t0: f64,
        t1: f64,
        pos: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        vel: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            t0,
            t1,
            pos: Arc::new(pos),
            vel: Arc::new(vel),
        }
    }

    /// `x0 + t v` on `[0, t1]`.
    pub fn line(x0: &[f64], v: &[f64], t1: f64) -> Self {
        let x0 = DVector::from_column_slice(x0);
        let v = DVector::from_column_slice(v);
        let v2 = v.clone();
        Self::new(x0.len(), 0.0, t1, move |t| &x0 + &v * t, move |_| v2.clone())
    }

    /// Reparametrisation `t ↦ self(φ(s))` with `φ` monotone increasing,
    /// `φ(s0) = t0`, `φ(s1) = t1`.
    pub fn reparametrized(
        &self,
        s0: f64,
        s1: f64,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let (p, v) = (self.pos.clone(), self.vel.clone());
        let phi = Arc::new(phi);
        let phi2 = phi.clone();
        Self::new(
            self.dim,
            s0,
            s1,
            move |s| p(phi(s)),
            move |s| v(phi2(s)) * dphi(s),
        )
    }

    /// Restriction to `[a, b]`.
    pub fn restricted(&self, a: f64, b: f64) -> Self {
        Self {
            t0: a,
            t1: b,
            ..self.clone()
        }
    }
}

impl BaseCurve for FnCurve {
    fn dim(&self) -> usize {
        self.dim
    }
    fn interval(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }
    fn point(&self, t: f64) -> DVector<f64> {
        (self.pos)(t)
    }
    fn velocity(&self, t: f64) -> DVector<f64> {
        (self.vel)(t)
    }
}

/// Curve known only at sample times; cubic Hermite interpolation between
/// samples. Missing velocities are estimated by finite differences.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    times: Vec<f64>,
    points: Vec<DVector<f64>>,
    velocities: Vec<DVector<f64>>,
}

impl SampledCurve {
    pub fn new(
        times: Vec<f64>,
        points: Vec<DVector<f64>>,
        velocities: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        if times.len() < 2 || points.len() != times.len() {
            return Err(GeomError::InvalidParameter(
                "sampled curve needs at least two samples with matching times".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeomError::InvalidParameter(
                "sample times must be strictly increasing".into(),
            ));
        }
        let velocities = match velocities {
            Some(v) if v.len() == times.len() => v,
            Some(_) => {
                return Err(GeomError::InvalidParameter(
                    "velocity samples do not match times".into(),
                ))
            }
            None => {
                let m = times.len();
                (0..m)
                    .map(|k| {
                        let (a, b) = if k == 0 {
                            (0, 1)
                        } else if k == m - 1 {
                            (m - 2, m - 1)
                        } else {
                            (k - 1, k + 1)
                        };
                        (&points[b] - &points[a]) / (times[b] - times[a])
                    })
                    .collect()
            }
        };
        Ok(Self {
            times,
            points,
            velocities,
        })
    }

    fn locate(&self, t: f64) -> (usize, f64, f64) {
        let t = t.clamp(self.times[0], *self.times.last().unwrap());
        let k = self
            .times
            .partition_point(|&s| s <= t)
            .saturating_sub(1)
            .min(self.times.len() - 2);
        let h = self.times[k + 1] - self.times[k];
        (k, (t - self.times[k]) / h, h)
    }
}

impl BaseCurve for SampledCurve {
    fn dim(&self) -> usize {
        self.points[0].len()
    }
    fn interval(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }
    fn point(&self, t: f64) -> DVector<f64> {
        let (k, s, h) = self.locate(t);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &self.points[k] * h00
            + &self.velocities[k] * (h10 * h)
            + &self.points[k + 1] * h01
            + &self.velocities[k + 1] * (h11 * h)
    }
    fn velocity(&self, t: f64) -> DVector<f64> {
        let (k, s, h) = self.locate(t);
        let s2 = s * s;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        (&self.points[k] * d00 + &self.points[k + 1] * d01) / h
            + &self.velocities[k] * d10
            + &self.velocities[k + 1] * d11
    }
}

/// Chart vectors (matrix columns) transported along a curve.
#[derive(Debug, Clone)]
pub struct TransportRun {
    pub ncols: usize,
    pub dim: usize,
    pub trajectory: Trajectory,
}

impl TransportRun {
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.ncols, &self.trajectory.sample(t))
    }

    pub fn final_value(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.ncols, self.trajectory.final_state())
    }

    pub fn truncated(&self) -> bool {
        self.trajectory.is_truncated()
    }
}

struct TransportSystem<'a> {
    chart: &'a ChartMetric,
    curve: &'a dyn BaseCurve,
    ncols: usize,
}

impl OdeSystem for TransportSystem<'_> {
    fn dim(&self) -> usize {
        self.chart.dim() * self.ncols
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.chart.dim();
        let x = self.curve.point(t);
        let xd = self.curve.velocity(t);
        let gam = christoffel(self.chart, x.as_slice())?;
        for c in 0..self.ncols {
            let v = &y[c * n..(c + 1) * n];
            let d = gam.contract(xd.as_slice(), v);
            for k in 0..n {
                dy[c * n + k] = -d[k];
            }
        }
        Ok(())
    }
}

/// Solves `v̇ᵏ = −Γᵏ_ij γ̇ⁱ vʲ` for every column of `v0` along `curve`.
/// A curve leaving the chart yields a truncated run.
pub fn parallel_transport_columns(
    chart: &ChartMetric,
    curve: &dyn BaseCurve,
    v0: &DMatrix<f64>,
    opts: &IntegrateOptions,
) -> Result<TransportRun> {
    let n = chart.dim();
    if curve.dim() != n || v0.nrows() != n {
        return Err(GeomError::Dimension {
            expected: n,
            got: v0.nrows(),
        });
    }
    let (t0, t1) = curve.interval();
    chart.check_point(curve.point(t0).as_slice())?;
    let sys = TransportSystem {
        chart,
        curve,
        ncols: v0.ncols(),
    };
    let trajectory = integrate(&sys, t0, v0.as_slice(), t1, opts);
    Ok(TransportRun {
        ncols: v0.ncols(),
        dim: n,
        trajectory,
    })
}

pub fn parallel_transport(
    chart: &ChartMetric,
    curve: &dyn BaseCurve,
    v0: &[f64],
    opts: &IntegrateOptions,
) -> Result<TransportRun> {
    parallel_transport_columns(chart, curve, &DMatrix::from_column_slice(v0.len(), 1, v0), opts)
}

/// Geodesic run with state `[x, ẋ]`.
#[derive(Debug, Clone)]
pub struct GeodesicRun {
    pub dim: usize,
    pub trajectory: Trajectory,
}

impl GeodesicRun {
    pub fn position(&self, t: f64) -> DVector<f64> {
        DVector::from_column_slice(&self.trajectory.sample(t)[..self.dim])
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        DVector::from_column_slice(&self.trajectory.sample(t)[self.dim..])
    }

    /// `sup_t |½|γ̇|² − ½|γ̇(0)|²|` over nodes and step midpoints.
    pub fn energy_drift(&self, chart: &ChartMetric) -> Result<f64> {
        let n = self.dim;
        let energy = |s: &[f64]| -> Result<f64> {
            let g = chart.metric(&s[..n])?;
            let v = DVector::from_column_slice(&s[n..]);
            Ok(0.5 * (v.transpose() * g * &v)[0])
        };
        let e0 = energy(self.trajectory.initial_state())?;
        let mut d: f64 = 0.0;
        for t in self.trajectory.nodes_and_midpoints() {
            d = d.max((energy(&self.trajectory.sample(t))? - e0).abs());
        }
        Ok(d)
    }

    /// Sampled copy of the base curve for use as a transport/development path.
    pub fn as_curve(&self) -> Result<SampledCurve> {
        let tr = &self.trajectory;
        let n = self.dim;
        SampledCurve::new(
            tr.times.clone(),
            tr.states.iter().map(|s| DVector::from_column_slice(&s[..n])).collect(),
            Some(tr.states.iter().map(|s| DVector::from_column_slice(&s[n..])).collect()),
        )
    }
}

struct GeodesicSystem<'a> {
    chart: &'a ChartMetric,
}

impl OdeSystem for GeodesicSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.chart.dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.chart.dim();
        let (x, v) = y.split_at(n);
        let gam = christoffel(self.chart, x)?;
        let acc = gam.contract(v, v);
        dy[..n].copy_from_slice(v);
        for k in 0..n {
            dy[n + k] = -acc[k];
        }
        Ok(())
    }
}

/// Geodesic from `x0` with initial velocity `v0` over `[0, t_end]`.
pub fn geodesic_flow(
    chart: &ChartMetric,
    x0: &[f64],
    v0: &[f64],
    t_end: f64,
    tol: f64,
) -> Result<GeodesicRun> {
    chart.check_point(x0)?;
    let n = chart.dim();
    if v0.len() != n {
        return Err(GeomError::Dimension {
            expected: n,
            got: v0.len(),
        });
    }
    let mut y0 = x0.to_vec();
    y0.extend_from_slice(v0);
    let sys = GeodesicSystem { chart };
    let trajectory = integrate(&sys, 0.0, &y0, t_end, &IntegrateOptions::with_tol(tol));
    Ok(GeodesicRun { dim: n, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn flat_transport_is_constant() {
        let c = ChartMetric::euclidean(2);
        let line = FnCurve::line(&[0.0, 0.0], &[1.0, 2.0], 3.0);
        let run = parallel_transport(&c, &line, &[0.3, -0.7], &IntegrateOptions::default()).unwrap();
        let v = run.final_value();
        assert_eq!((v[0], v[1]), (0.3, -0.7));
    }

    fn latitude_circle(phi0: f64) -> FnCurve {
        FnCurve::new(
            2,
            0.0,
            2.0 * PI,
            move |t| DVector::from_vec(vec![phi0, t]),
            |_| DVector::from_vec(vec![0.0, 1.0]),
        )
    }

    #[test]
    fn latitude_holonomy_is_half_turn() {
        let c = ChartMetric::sphere(1.0);
        let phi0 = PI / 3.0;
        // unit vector along ∂_θ
        let v0 = [0.0, 1.0 / phi0.sin()];
        let run = parallel_transport(&c, &latitude_circle(phi0), &v0, &IntegrateOptions::with_tol(1e-11)).unwrap();
        let v = run.final_value();
        // rotation by 2π(1 − cos φ0) = π
        assert!((v[0] - 0.0).abs() < 1e-8 && (v[1] + v0[1]).abs() < 1e-8, "{v}");
        // norm preserved along the way
        let g = |t: f64| c.metric(latitude_circle(phi0).point(t).as_slice()).unwrap();
        for t in run.trajectory.nodes_and_midpoints() {
            let w = run.at(t);
            let n2 = (w.transpose() * g(t) * &w)[0];
            assert!((n2 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn transport_truncates_at_domain_exit() {
        let c = ChartMetric::hyperbolic_disk(1.0);
        let line = FnCurve::line(&[0.0, 0.0], &[1.0, 0.0], 2.0);
        let run = parallel_transport(&c, &line, &[1.0, 0.0], &IntegrateOptions::default()).unwrap();
        assert!(run.truncated());
        assert!(run.trajectory.t_end() < 1.0);
    }

    #[test]
    fn great_circle_through_pole() {
        let c = ChartMetric::sphere(1.0);
        // start on the equator heading north (decreasing colatitude)
        let run = geodesic_flow(&c, &[PI / 2.0, 0.0], &[-1.0, 0.0], 1.4, 1e-10).unwrap();
        for t in run.trajectory.uniform_times(20) {
            let x = run.position(t);
            assert!((x[0] - (PI / 2.0 - t)).abs() < 1e-8);
            assert!(x[1].abs() < 1e-12);
        }
        assert!(run.energy_drift(&c).unwrap() < 1e-9);
    }

    #[test]
    fn oblique_great_circle_has_period_two_pi() {
        let c = ChartMetric::sphere(1.0);
        let tilt: f64 = 0.6;
        let v0 = [-tilt.sin(), tilt.cos()];
        let run = geodesic_flow(&c, &[PI / 2.0, 0.0], &v0, 2.0 * PI, 1e-11).unwrap();
        let x = run.position(2.0 * PI);
        assert!((x[0] - PI / 2.0).abs() < 1e-8);
        assert!((x[1] - 2.0 * PI).abs() < 1e-8);
        assert!(run.energy_drift(&c).unwrap() < 1e-9);
        // embedded point stays on the plane spanned by the initial data
        let n = [0.0, tilt.cos(), tilt.sin()]; // normal of the great-circle plane (sign irrelevant)
        let nn = [0.0, -n[2], n[1]];
        for t in run.trajectory.uniform_times(40) {
            let p = run.position(t);
            let e = [p[0].sin() * p[1].cos(), p[0].sin() * p[1].sin(), p[0].cos()];
            let d = e[0] * nn[0] + e[1] * nn[1] + e[2] * nn[2];
            assert!(d.abs() < 1e-8, "t={t} d={d}");
        }
    }

    #[test]
    fn sampled_curve_interpolates_circle() {
        let ts: Vec<f64> = (0..=200).map(|k| k as f64 * 0.01).collect();
        let pts = ts.iter().map(|&t| DVector::from_vec(vec![t.cos(), t.sin()])).collect();
        let vel = ts.iter().map(|&t| DVector::from_vec(vec![-t.sin(), t.cos()])).collect();
        let c = SampledCurve::new(ts, pts, Some(vel)).unwrap();
        let t = 1.234;
        assert!((c.point(t)[0] - t.cos()).abs() < 1e-9);
        assert!((c.velocity(t)[1] - t.cos()).abs() < 1e-6);
    }
}
