//! Rolling configurations `q = f̂ ∘ f⁻¹ ∈ SO(T_xM, T_x̂M̂)`, the
//! no-slip/no-twist distribution and kinematic development along base curves.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{
    christoffel, orthonormal_frame_at, orthonormality_defect, riemann, BaseCurve, ChartMetric, ChartSpec,
    FramePoint,
};
use crate::ode::{integrate_with, IntegrateOptions, OdeSystem, Trajectory, Truncation};

pub use crate::geom::so_projection;
pub use crate::submersion::FrameBundleTestbed;

/// Defect above which frames are re-orthonormalised during development.
pub const PROJECTION_TRIGGER: f64 = 1e-10;

/// A point of the rolling configuration space, stored as a frame pair.
#[derive(Debug, Clone)]
pub struct RollingConfiguration {
    pub m: ChartMetric,
    pub mh: ChartMetric,
    pub x: DVector<f64>,
    pub xh: DVector<f64>,
    pub f: DMatrix<f64>,
    pub fh: DMatrix<f64>,
}

/// Serialized form of a [`RollingConfiguration`]; frames are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationRecord {
    #[serde(rename = "chartM")]
    pub chart_m: String,
    #[serde(rename = "chartM̂")]
    pub chart_mh: String,
    pub x: Vec<f64>,
    #[serde(rename = "x̂")]
    pub xh: Vec<f64>,
    pub f: Vec<f64>,
    #[serde(rename = "f̂")]
    pub fh: Vec<f64>,
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub(crate) fn from_row_major(n: usize, v: &[f64]) -> Result<DMatrix<f64>> {
    if v.len() != n * n {
        return Err(GeomError::Dimension {
            expected: n * n,
            got: v.len(),
        });
    }
    Ok(DMatrix::from_row_slice(n, n, v))
}

impl RollingConfiguration {
    pub fn new(
        m: ChartMetric,
        mh: ChartMetric,
        x: &[f64],
        f: DMatrix<f64>,
        xh: &[f64],
        fh: DMatrix<f64>,
    ) -> Result<Self> {
        if m.dim() != mh.dim() {
            return Err(GeomError::Dimension {
                expected: m.dim(),
                got: mh.dim(),
            });
        }
        let fp = FramePoint::new(&m, x, f)?;
        let fhp = FramePoint::new(&mh, xh, fh)?;
        Ok(Self {
            m,
            mh,
            x: fp.x,
            xh: fhp.x,
            f: fp.f,
            fh: fhp.f,
        })
    }

    /// Configuration whose frames are Gram–Schmidt of the coordinate bases,
    /// with `f̂` additionally rotated by `angle` in its first two columns.
    pub fn standard(m: ChartMetric, mh: ChartMetric, x: &[f64], xh: &[f64], angle: f64) -> Result<Self> {
        let n = m.dim();
        let f = orthonormal_frame_at(&m, x, &DMatrix::identity(n, n))?.f;
        let mut fh = orthonormal_frame_at(&mh, xh, &DMatrix::identity(n, n))?.f;
        if n >= 2 && angle != 0.0 {
            let (s, c) = angle.sin_cos();
            let (u, v) = (fh.column(0).into_owned(), fh.column(1).into_owned());
            fh.set_column(0, &(&u * c + &v * s));
            fh.set_column(1, &(&v * c - &u * s));
        }
        Self::new(m, mh, x, f, xh, fh)
    }

    pub(crate) fn from_parts(
        m: &ChartMetric,
        mh: &ChartMetric,
        x: DVector<f64>,
        xh: DVector<f64>,
        f: DMatrix<f64>,
        fh: DMatrix<f64>,
    ) -> Self {
        Self {
            m: m.clone(),
            mh: mh.clone(),
            x,
            xh,
            f,
            fh,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    /// Chart matrix of `q = f̂ f⁻¹ = f̂ fᵀ g`.
    pub fn q(&self) -> Result<DMatrix<f64>> {
        let g = self.m.metric(self.x.as_slice())?;
        Ok(&self.fh * self.f.transpose() * g)
    }

    /// `max |ĝ(q∂_i, q∂_j) − g(∂_i, ∂_j)|`.
    pub fn isometry_defect(&self) -> Result<f64> {
        let q = self.q()?;
        let g = self.m.metric(self.x.as_slice())?;
        let gh = self.mh.metric(self.xh.as_slice())?;
        Ok((q.transpose() * gh * &q - g).amax())
    }

    /// Largest orthonormality defect of the two frames.
    pub fn frame_defect(&self) -> Result<f64> {
        let g = self.m.metric(self.x.as_slice())?;
        let gh = self.mh.metric(self.xh.as_slice())?;
        Ok(orthonormality_defect(&self.f, &g).max(orthonormality_defect(&self.fh, &gh)))
    }

    pub fn to_record(&self) -> Result<ConfigurationRecord> {
        let name = |c: &ChartMetric| {
            c.spec
                .map(|s| s.to_string())
                .ok_or_else(|| GeomError::InvalidParameter(format!("chart {} has no catalog name", c.label)))
        };
        Ok(ConfigurationRecord {
            chart_m: name(&self.m)?,
            chart_mh: name(&self.mh)?,
            x: self.x.as_slice().to_vec(),
            xh: self.xh.as_slice().to_vec(),
            f: row_major(&self.f),
            fh: row_major(&self.fh),
        })
    }

    pub fn from_record(r: &ConfigurationRecord) -> Result<Self> {
        let m = ChartSpec::parse(&r.chart_m)?.build()?;
        let mh = ChartSpec::parse(&r.chart_mh)?.build()?;
        let n = m.dim();
        let f = from_row_major(n, &r.f)?;
        let fh = from_row_major(n, &r.fh)?;
        Self::new(m, mh, &r.x, f, &r.xh, fh)
    }
}

/// A local frame field `x ↦ e(x)` (columns are the frame vectors).
pub type LocalFrame<'a> = &'a dyn Fn(&[f64]) -> Result<DMatrix<f64>>;

/// The frame field obtained by Gram–Schmidt of the coordinate basis.
pub fn coordinate_frame(chart: &ChartMetric) -> impl Fn(&[f64]) -> Result<DMatrix<f64>> + '_ {
    move |x| {
        let n = chart.dim();
        Ok(orthonormal_frame_at(chart, x, &DMatrix::identity(n, n))?.f)
    }
}

/// `ω(X)_{αβ} = g(e_α, ∇_X e_β)` for a frame field.
pub fn connection_matrix(chart: &ChartMetric, frame: LocalFrame, x: &[f64], dir: &[f64]) -> Result<DMatrix<f64>> {
    let n = chart.dim();
    let e = frame(x)?;
    let h = 1e-6 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
    let xp: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let xm: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    let de = (frame(&xp)? - frame(&xm)?) / (2.0 * h);
    let gam = christoffel(chart, x)?;
    let mut cov = de;
    for b in 0..n {
        let col = gam.contract(dir, e.column(b).as_slice());
        for k in 0..n {
            cov[(k, b)] += col[k];
        }
    }
    let g = chart.metric(x)?;
    Ok(e.transpose() * g * cov)
}

/// One direction `ē_j` of the rolling distribution: velocities on both
/// bases and the `so(n)` fiber part `C` acting by `Q̇ = Q C`, where `Q` is
/// the matrix of `q` in the local frames `e`, `ê`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionDirection {
    pub dx: DVector<f64>,
    pub dxh: DVector<f64>,
    pub fiber: DMatrix<f64>,
}

/// Matrix of `q` in the frames `e` at `x` and `ê` at `x̂`.
pub fn frame_matrix(cfg: &RollingConfiguration, e: &DMatrix<f64>, eh: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gh = cfg.mh.metric(cfg.xh.as_slice())?;
    Ok(eh.transpose() * gh * cfg.q()? * e)
}

pub fn distribution_basis(
    cfg: &RollingConfiguration,
    frame: LocalFrame,
    frame_hat: LocalFrame,
) -> Result<Vec<DistributionDirection>> {
    let n = cfg.dim();
    let (x, xh) = (cfg.x.as_slice(), cfg.xh.as_slice());
    let e = frame(x)?;
    let eh = frame_hat(xh)?;
    let g = cfg.m.metric(x)?;
    let gh = cfg.mh.metric(xh)?;
    let tol = 1e-8;
    let d = orthonormality_defect(&e, &g).max(orthonormality_defect(&eh, &gh));
    if d > tol {
        return Err(GeomError::NotOrthonormal(d));
    }
    let qm = frame_matrix(cfg, &e, &eh)?;
    let q = cfg.q()?;
    (0..n)
        .map(|j| {
            let ej = e.column(j).into_owned();
            let qej = &q * &ej;
            let w = connection_matrix(&cfg.m, frame, x, ej.as_slice())?;
            let wh = connection_matrix(&cfg.mh, frame_hat, xh, qej.as_slice())?;
            Ok(DistributionDirection {
                dx: ej,
                dxh: qej,
                fiber: w - qm.transpose() * wh * &qm,
            })
        })
        .collect()
}

/// Gram matrix of distribution directions under the lifted metric
/// `h(v₁, v₂) = g(π_*v₁, π_*v₂)`.
pub fn lifted_gram(cfg: &RollingConfiguration, dirs: &[DistributionDirection]) -> Result<DMatrix<f64>> {
    let g = cfg.m.metric(cfg.x.as_slice())?;
    Ok(DMatrix::from_fn(dirs.len(), dirs.len(), |i, j| {
        (dirs[i].dx.transpose() * &g * &dirs[j].dx)[0]
    }))
}

/// Path node: configuration and its time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct PathNode {
    pub t: f64,
    pub x: DVector<f64>,
    pub xh: DVector<f64>,
    pub f: DMatrix<f64>,
    pub fh: DMatrix<f64>,
    pub xdot: DVector<f64>,
    pub xhdot: DVector<f64>,
    pub fdot: DMatrix<f64>,
    pub fhdot: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct RollingPath {
    pub m: ChartMetric,
    pub mh: ChartMetric,
    pub nodes: Vec<PathNode>,
    pub truncation: Option<Truncation>,
    pub projections: usize,
    trajectory: Option<Trajectory>,
}

fn pack(n: usize, x: &[f64], xh: &[f64], f: &DMatrix<f64>, fh: &DMatrix<f64>) -> Vec<f64> {
    let mut s = Vec::with_capacity(2 * n + 2 * n * n);
    s.extend_from_slice(x);
    s.extend_from_slice(xh);
    s.extend_from_slice(f.as_slice());
    s.extend_from_slice(fh.as_slice());
    s
}

fn unpack(n: usize, s: &[f64]) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let nn = n * n;
    (
        DVector::from_column_slice(&s[..n]),
        DVector::from_column_slice(&s[n..2 * n]),
        DMatrix::from_column_slice(n, n, &s[2 * n..2 * n + nn]),
        DMatrix::from_column_slice(n, n, &s[2 * n + nn..2 * n + 2 * nn]),
    )
}

impl RollingPath {
    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn is_truncated(&self) -> bool {
        self.truncation.is_some()
    }

    pub fn times(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.t).collect()
    }

    pub fn node_configuration(&self, i: usize) -> RollingConfiguration {
        let nd = &self.nodes[i];
        RollingConfiguration::from_parts(&self.m, &self.mh, nd.x.clone(), nd.xh.clone(), nd.f.clone(), nd.fh.clone())
    }

    pub fn final_configuration(&self) -> RollingConfiguration {
        self.node_configuration(self.nodes.len() - 1)
    }

    /// Configuration at time `t`, from the integrator's dense output when
    /// available and by linear interpolation of nodes otherwise.
    pub fn configuration_at(&self, t: f64) -> RollingConfiguration {
        let n = self.dim();
        let s = match &self.trajectory {
            Some(tr) => tr.sample(t),
            None => {
                let ts = self.times();
                let k = ts.partition_point(|&s| s <= t).clamp(1, ts.len().max(2) - 1);
                let (a, b) = (&self.nodes[k - 1], &self.nodes[k.min(self.nodes.len() - 1)]);
                let w = if b.t > a.t { ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0) } else { 0.0 };
                let pa = pack(n, a.x.as_slice(), a.xh.as_slice(), &a.f, &a.fh);
                let pb = pack(n, b.x.as_slice(), b.xh.as_slice(), &b.f, &b.fh);
                pa.iter().zip(&pb).map(|(u, v)| u + w * (v - u)).collect()
            }
        };
        let (x, xh, f, fh) = unpack(n, &s);
        RollingConfiguration::from_parts(&self.m, &self.mh, x, xh, f, fh)
    }

    /// Builds a path from sampled configurations, estimating derivatives
    /// by three-point finite differences on the (possibly uneven) grid.
    pub fn from_samples(times: &[f64], cfgs: &[RollingConfiguration]) -> Result<Self> {
        if times.len() != cfgs.len() || times.len() < 3 {
            return Err(GeomError::InvalidParameter("need at least three matching samples".into()));
        }
        let n = cfgs[0].dim();
        let packed: Vec<Vec<f64>> = cfgs
            .iter()
            .map(|c| pack(n, c.x.as_slice(), c.xh.as_slice(), &c.f, &c.fh))
            .collect();
        let len = times.len();
        let deriv = |i: usize| -> Vec<f64> {
            // quadratic through three neighbouring samples
            let (i0, i1, i2) = if i == 0 {
                (0, 1, 2)
            } else if i == len - 1 {
                (len - 3, len - 2, len - 1)
            } else {
                (i - 1, i, i + 1)
            };
            let (t0, t1, t2, t) = (times[i0], times[i1], times[i2], times[i]);
            let l0 = ((t - t1) + (t - t2)) / ((t0 - t1) * (t0 - t2));
            let l1 = ((t - t0) + (t - t2)) / ((t1 - t0) * (t1 - t2));
            let l2 = ((t - t0) + (t - t1)) / ((t2 - t0) * (t2 - t1));
            (0..packed[0].len())
                .map(|k| l0 * packed[i0][k] + l1 * packed[i1][k] + l2 * packed[i2][k])
                .collect()
        };
        let nodes = (0..len)
            .map(|i| {
                let (xdot, xhdot, fdot, fhdot) = unpack(n, &deriv(i));
                let c = &cfgs[i];
                PathNode {
                    t: times[i],
                    x: c.x.clone(),
                    xh: c.xh.clone(),
                    f: c.f.clone(),
                    fh: c.fh.clone(),
                    xdot,
                    xhdot,
                    fdot,
                    fhdot,
                }
            })
            .collect();
        Ok(Self {
            m: cfgs[0].m.clone(),
            mh: cfgs[0].mh.clone(),
            nodes,
            truncation: None,
            projections: 0,
            trajectory: None,
        })
    }

    /// Per-node `(slip, twist)` residuals.
    pub fn node_residuals(&self) -> Result<Vec<(f64, f64)>> {
        self.nodes.iter().map(|nd| node_residual(&self.m, &self.mh, nd)).collect()
    }

    /// CSV with columns `t, x…, x̂…, f…, f̂…, slip_residual, twist_residual`
    /// (frames row-major).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.dim();
        let mut head = vec!["t".to_string()];
        head.extend((0..n).map(|i| format!("x{i}")));
        head.extend((0..n).map(|i| format!("xh{i}")));
        head.extend((0..n * n).map(|i| format!("f{}{}", i / n, i % n)));
        head.extend((0..n * n).map(|i| format!("fh{}{}", i / n, i % n)));
        head.push("slip_residual".into());
        head.push("twist_residual".into());
        writeln!(w, "{}", head.join(","))?;
        let res = self
            .node_residuals()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        for (nd, (slip, twist)) in self.nodes.iter().zip(res) {
            let mut row = vec![nd.t];
            row.extend(nd.x.iter());
            row.extend(nd.xh.iter());
            row.extend(row_major(&nd.f));
            row.extend(row_major(&nd.fh));
            row.push(slip);
            row.push(twist);
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

struct DevelopSystem<'a> {
    m: &'a ChartMetric,
    mh: &'a ChartMetric,
    curve: &'a dyn BaseCurve,
}

impl DevelopSystem<'_> {
    fn derivative(&self, t: f64, s: &[f64]) -> Result<Vec<f64>> {
        let n = self.m.dim();
        let (x, xh, f, fh) = unpack(n, s);
        self.m.check_point(x.as_slice())?;
        self.mh.check_point(xh.as_slice())?;
        let xd = self.curve.velocity(t);
        let g = self.m.metric(x.as_slice())?;
        let xhd = &fh * (f.transpose() * g * &xd);
        let gam = christoffel(self.m, x.as_slice())?;
        let gamh = christoffel(self.mh, xh.as_slice())?;
        let mut fd = DMatrix::zeros(n, n);
        let mut fhd = DMatrix::zeros(n, n);
        for j in 0..n {
            fd.set_column(j, &-gam.contract(xd.as_slice(), f.column(j).as_slice()));
            fhd.set_column(j, &-gamh.contract(xhd.as_slice(), fh.column(j).as_slice()));
        }
        Ok(pack(n, xd.as_slice(), xhd.as_slice(), &fd, &fhd))
    }
}

impl OdeSystem for DevelopSystem<'_> {
    fn dim(&self) -> usize {
        let n = self.m.dim();
        2 * n + 2 * n * n
    }
    fn rhs(&self, t: f64, s: &[f64], ds: &mut [f64]) -> Result<()> {
        ds.copy_from_slice(&self.derivative(t, s)?);
        Ok(())
    }
}

/// Re-orthonormalises both frames in a packed state when their defect
/// exceeds [`PROJECTION_TRIGGER`]. Returns whether anything changed.
fn project_frames(m: &ChartMetric, mh: &ChartMetric, s: &mut [f64]) -> bool {
    let n = m.dim();
    let (x, xh, f, fh) = unpack(n, s);
    let (Ok(g), Ok(gh)) = (m.metric(x.as_slice()), mh.metric(xh.as_slice())) else {
        return false;
    };
    let mut changed = false;
    let nn = n * n;
    if orthonormality_defect(&f, &g) > PROJECTION_TRIGGER {
        if let Ok(p) = so_projection(&f, &g) {
            s[2 * n..2 * n + nn].copy_from_slice(p.as_slice());
            changed = true;
        }
    }
    if orthonormality_defect(&fh, &gh) > PROJECTION_TRIGGER {
        if let Ok(p) = so_projection(&fh, &gh) {
            s[2 * n + nn..].copy_from_slice(p.as_slice());
            changed = true;
        }
    }
    changed
}

/// Rolls `M̂` along the image of `γ` without slipping or twisting, starting
/// from `cfg0` at `γ(t₀)`. Leaving either chart truncates the path.
pub fn develop(cfg0: &RollingConfiguration, curve: &dyn BaseCurve, tol: f64) -> Result<RollingPath> {
    let n = cfg0.dim();
    if curve.dim() != n {
        return Err(GeomError::Dimension {
            expected: n,
            got: curve.dim(),
        });
    }
    let (t0, t1) = curve.interval();
    let start = curve.point(t0);
    if (&start - &cfg0.x).amax() > 1e-9 * (1.0 + start.amax()) {
        return Err(GeomError::BasePointMismatch);
    }
    let sys = DevelopSystem {
        m: &cfg0.m,
        mh: &cfg0.mh,
        curve,
    };
    let s0 = pack(n, cfg0.x.as_slice(), cfg0.xh.as_slice(), &cfg0.f, &cfg0.fh);
    let mut projections = 0;
    let traj = integrate_with(&sys, t0, &s0, t1, &IntegrateOptions::with_tol(tol), |_, s| {
        let changed = project_frames(&cfg0.m, &cfg0.mh, s);
        projections += changed as usize;
        changed
    });
    let nodes = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| {
            let (x, xh, f, fh) = unpack(n, s);
            let (xdot, xhdot, fdot, fhdot) = unpack(n, &sys.derivative(t, s)?);
            Ok(PathNode {
                t,
                x,
                xh,
                f,
                fh,
                xdot,
                xhdot,
                fdot,
                fhdot,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RollingPath {
        m: cfg0.m.clone(),
        mh: cfg0.mh.clone(),
        nodes,
        truncation: traj.truncation.clone(),
        projections,
        trajectory: Some(traj),
    })
}

fn node_residual(m: &ChartMetric, mh: &ChartMetric, nd: &PathNode) -> Result<(f64, f64)> {
    let n = m.dim();
    let g = m.metric(nd.x.as_slice())?;
    let gh = mh.metric(nd.xh.as_slice())?;
    let q = &nd.fh * nd.f.transpose() * &g;
    let slip_v = &q * &nd.xdot - &nd.xhdot;
    let slip = (slip_v.transpose() * &gh * &slip_v)[0].max(0.0).sqrt();
    let gam = christoffel(m, nd.x.as_slice())?;
    let gamh = christoffel(mh, nd.xh.as_slice())?;
    // ∇f and ∇̂f̂ along the path; f̂c = q(fc) for every parallel test vector fc
    let mut tw2 = 0.0_f64;
    let mut tw2h = 0.0_f64;
    for j in 0..n {
        let c = nd.fdot.column(j) + gam.contract(nd.xdot.as_slice(), nd.f.column(j).as_slice());
        let ch = nd.fhdot.column(j) + gamh.contract(nd.xhdot.as_slice(), nd.fh.column(j).as_slice());
        tw2 += (c.transpose() * &g * &c)[0];
        tw2h += (ch.transpose() * &gh * &ch)[0];
    }
    Ok((slip, tw2.max(0.0).sqrt().max(tw2h.max(0.0).sqrt())))
}

/// Sup-norm no-slip and no-twist defects of a rolling path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingResiduals {
    pub slip: f64,
    pub twist: f64,
}

/// `slip = sup ‖q γ̇ − γ̂̇‖`; `twist` bounds `‖∇̂_{γ̂̇}(qX)‖` over unit
/// `∇`-parallel `X` by the Frobenius norms of `∇f` and `∇̂f̂`. Both are taken
/// over the nodes and, for integrated paths, over step midpoints where the
/// state and its derivative come from the node interpolant.
pub fn noslip_notwist_residual(path: &RollingPath) -> Result<RollingResiduals> {
    let mut r = RollingResiduals { slip: 0.0, twist: 0.0 };
    for (s, t) in path.node_residuals()? {
        r.slip = r.slip.max(s);
        r.twist = r.twist.max(t);
    }
    if let Some(tr) = &path.trajectory {
        let n = path.dim();
        for k in 0..tr.times.len().saturating_sub(1) {
            let (t, y, d1, _) = tr.midpoint_hermite(k);
            let (x, xh, f, fh) = unpack(n, &y);
            let (xdot, xhdot, fdot, fhdot) = unpack(n, &d1);
            let nd = PathNode {
                t,
                x,
                xh,
                f,
                fh,
                xdot,
                xhdot,
                fdot,
                fhdot,
            };
            let (s, tw) = node_residual(&path.m, &path.mh, &nd)?;
            r.slip = r.slip.max(s);
            r.twist = r.twist.max(tw);
        }
    }
    Ok(r)
}

/// The map `⋀²D → ⋀²D*`, `v₁∧v₂ ↦ R(v₁,v₂,·,·) − R̂(qv₁,qv₂,q·,q·)`, in the
/// basis `f_a∧f_b (a<b)`; entries use the sectional sign so the 2D entry is
/// `κ − κ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureGap {
    pub map: DMatrix<f64>,
    pub min_singular_value: f64,
}

pub fn curvature_gap(cfg: &RollingConfiguration) -> Result<CurvatureGap> {
    let n = cfg.dim();
    let r = riemann(&cfg.m, cfg.x.as_slice())?;
    let rh = riemann(&cfg.mh, cfg.xh.as_slice())?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let col = |m: &DMatrix<f64>, i: usize| m.column(i).into_owned();
    let map = DMatrix::from_fn(pairs.len(), pairs.len(), |i, j| {
        let ((a, b), (c, d)) = (pairs[i], pairs[j]);
        let v = r.eval(
            col(&cfg.f, a).as_slice(),
            col(&cfg.f, b).as_slice(),
            col(&cfg.f, d).as_slice(),
            col(&cfg.f, c).as_slice(),
        );
        let vh = rh.eval(
            col(&cfg.fh, a).as_slice(),
            col(&cfg.fh, b).as_slice(),
            col(&cfg.fh, d).as_slice(),
            col(&cfg.fh, c).as_slice(),
        );
        v - vh
    });
    let min_singular_value = if map.is_empty() {
        0.0
    } else {
        map.clone().svd(false, false).singular_values.min()
    };
    Ok(CurvatureGap { map, min_singular_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{gauss_curvature, FnCurve};
    use std::f64::consts::PI;

    fn sphere_on_plane(x: &[f64]) -> RollingConfiguration {
        RollingConfiguration::standard(ChartMetric::sphere(1.0), ChartMetric::euclidean(2), x, &[0.0, 0.0], 0.0)
            .unwrap()
    }

    #[test]
    fn record_roundtrip() {
        let cfg = RollingConfiguration::standard(
            ChartMetric::sphere(2.0),
            ChartMetric::paraboloid(0.5),
            &[1.0, 0.3],
            &[0.2, -0.1],
            0.7,
        )
        .unwrap();
        let json = serde_json::to_string(&cfg.to_record().unwrap()).unwrap();
        assert!(json.contains("\"chartM̂\""));
        let back = RollingConfiguration::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.f, cfg.f);
        assert_eq!(back.fh, cfg.fh);
        assert!(cfg.isometry_defect().unwrap() < 1e-14);
    }

    #[test]
    fn rejects_bad_frames() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(RollingConfiguration::new(
            ChartMetric::euclidean(2),
            ChartMetric::euclidean(2),
            &[0.0, 0.0],
            bad,
            &[0.0, 0.0],
            DMatrix::identity(2, 2)
        )
        .is_err());
    }

    #[test]
    fn plane_on_plane_basis_has_no_fiber_part() {
        let e = ChartMetric::euclidean(2);
        let cfg = RollingConfiguration::standard(e.clone(), e.clone(), &[1.0, 2.0], &[-1.0, 0.5], 0.4).unwrap();
        let fr = coordinate_frame(&e);
        let dirs = distribution_basis(&cfg, &fr, &fr).unwrap();
        let q = cfg.q().unwrap();
        for (j, d) in dirs.iter().enumerate() {
            assert!(d.fiber.amax() < 1e-9);
            assert!((&d.dxh - q.column(j)).amax() < 1e-14);
        }
        let gram = lifted_gram(&cfg, &dirs).unwrap();
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn sphere_on_plane_fiber_part_is_connection_difference() {
        let x = [1.0, 0.3];
        let cfg = sphere_on_plane(&x);
        let s = ChartMetric::sphere(1.0);
        let e = ChartMetric::euclidean(2);
        let (fr, frh) = (coordinate_frame(&s), coordinate_frame(&e));
        let dirs = distribution_basis(&cfg, &fr, &frh).unwrap();
        // frame e = (∂φ, ∂θ / sin φ): ∇_{e₂} e₁ = cot φ e₂, ∇_{e₁} e = 0
        let cot = x[0].cos() / x[0].sin();
        assert!(dirs[0].fiber.amax() < 1e-9);
        assert!((dirs[1].fiber[(1, 0)] - cot).abs() < 1e-8);
        assert!((dirs[1].fiber[(0, 1)] + cot).abs() < 1e-8);
        let gram = lifted_gram(&cfg, &dirs).unwrap();
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn plane_on_plane_segment_translates() {
        let e = ChartMetric::euclidean(2);
        let cfg = RollingConfiguration::standard(e.clone(), e.clone(), &[0.0, 0.0], &[1.0, 1.0], PI / 2.0).unwrap();
        let path = develop(&cfg, &FnCurve::line(&[0.0, 0.0], &[2.0, 0.0], 1.5), 1e-10).unwrap();
        let end = path.final_configuration();
        // q is a quarter turn: displacement (3,0) maps to (0,3)
        assert!((end.xh[0] - 1.0).abs() < 1e-12 && (end.xh[1] - 4.0).abs() < 1e-12);
        assert!((end.q().unwrap() - cfg.q().unwrap()).amax() < 1e-13);
    }

    #[test]
    fn great_circle_develops_to_straight_segment() {
        let cfg = sphere_on_plane(&[PI / 2.0, 0.0]);
        let curve = FnCurve::new(
            2,
            0.0,
            2.0 * PI,
            |t| DVector::from_vec(vec![PI / 2.0, t]),
            |_| DVector::from_vec(vec![0.0, 1.0]),
        );
        let path = develop(&cfg, &curve, 1e-11).unwrap();
        assert!(!path.is_truncated());
        let end = path.final_configuration();
        assert!((end.xh[0]).abs() < 1e-9);
        assert!((end.xh[1] - 2.0 * PI).abs() < 1e-9);
        // equator is a geodesic, so the sphere frame returns to itself
        assert!((&end.f - &cfg.f).amax() < 1e-9);
        let res = noslip_notwist_residual(&path).unwrap();
        assert!(res.slip < 1e-12 && res.twist < 1e-12, "{res:?}");
        for i in 0..path.nodes.len() {
            let c = path.node_configuration(i);
            let nd = &path.nodes[i];
            let g = c.m.metric(c.x.as_slice()).unwrap();
            let sp = (nd.xdot.transpose() * g * &nd.xdot)[0].sqrt();
            assert!((sp - nd.xhdot.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn latitude_loop_rotates_sphere_frame() {
        // parallel transport around the latitude φ₀ rotates by 2π cos φ₀
        let phi0 = PI / 3.0;
        let cfg = sphere_on_plane(&[phi0, 0.0]);
        let curve = FnCurve::new(
            2,
            0.0,
            2.0 * PI,
            move |t| DVector::from_vec(vec![phi0, t]),
            |_| DVector::from_vec(vec![0.0, 1.0]),
        );
        let path = develop(&cfg, &curve, 1e-11).unwrap();
        let end = path.final_configuration();
        let g = ChartMetric::sphere(1.0).metric(&[phi0, 0.0]).unwrap();
        let rot = cfg.f.transpose() * &g * &end.f;
        let ang = rot[(1, 0)].atan2(rot[(0, 0)]);
        let expect = -(2.0 * PI * phi0.cos()).rem_euclid(2.0 * PI);
        let diff = (ang - expect).rem_euclid(2.0 * PI);
        assert!(diff.min(2.0 * PI - diff) < 1e-8, "{ang} vs {expect}");
        // the plane frame never rotates
        assert!((&end.fh - &cfg.fh).amax() < 1e-12);
    }

    #[test]
    fn frozen_frames_register_twist() {
        let cfg = RollingConfiguration::standard(
            ChartMetric::euclidean(2),
            ChartMetric::sphere(1.0),
            &[0.0, 0.0],
            &[1.0, 0.0],
            0.0,
        )
        .unwrap();
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.002).collect();
        let cfgs: Vec<_> = times
            .iter()
            .map(|&t| {
                let x = [t, 0.0];
                let xh = [1.0 + t, 0.0];
                let fh = orthonormal_frame_at(&cfg.mh, &xh, &DMatrix::identity(2, 2)).unwrap().f;
                RollingConfiguration::new(cfg.m.clone(), cfg.mh.clone(), &x, cfg.f.clone(), &xh, fh).unwrap()
            })
            .collect();
        let path = RollingPath::from_samples(&times, &cfgs).unwrap();
        // a meridian keeps the coordinate frame parallel, a parallel of latitude does not
        let res = noslip_notwist_residual(&path).unwrap();
        assert!(res.slip < 1e-9 && res.twist < 1e-4, "{res:?}");
        let cfgs2: Vec<_> = times
            .iter()
            .map(|&t| {
                let x = [0.0, t];
                let xh = [1.0, t / 1f64.sin()];
                let fh = orthonormal_frame_at(&cfg.mh, &xh, &DMatrix::identity(2, 2)).unwrap().f;
                RollingConfiguration::new(cfg.m.clone(), cfg.mh.clone(), &x, cfg.f.clone(), &xh, fh).unwrap()
            })
            .collect();
        let path2 = RollingPath::from_samples(&times, &cfgs2).unwrap();
        let res2 = noslip_notwist_residual(&path2).unwrap();
        assert!(res2.twist > 0.1, "{res2:?}");
    }

    #[test]
    fn curvature_gap_examples() {
        let e = ChartMetric::euclidean(2);
        let pp = RollingConfiguration::standard(e.clone(), e.clone(), &[0.0, 0.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(curvature_gap(&pp).unwrap().min_singular_value, 0.0);
        let sp = sphere_on_plane(&[1.2, 0.4]);
        let gap = curvature_gap(&sp).unwrap();
        assert!((gap.map[(0, 0)] - 1.0).abs() < 1e-12);
        let s3 = ChartMetric::sphere(3.0);
        let ss = RollingConfiguration::standard(s3.clone(), s3, &[0.5, 0.1], &[2.0, -1.0], 1.0).unwrap();
        assert!(curvature_gap(&ss).unwrap().map.amax() < 1e-12);
        let par = RollingConfiguration::standard(
            ChartMetric::paraboloid(0.5),
            ChartMetric::sphere(2.0),
            &[0.3, 0.1],
            &[1.0, 0.0],
            0.0,
        )
        .unwrap();
        let k = gauss_curvature(&par.m, &[0.3, 0.1]).unwrap();
        assert!((curvature_gap(&par).unwrap().map[(0, 0)] - (k - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn euclidean_three_space_gap_is_zero() {
        let e = ChartMetric::euclidean(3);
        let cfg = RollingConfiguration::standard(e.clone(), e, &[0.0; 3], &[1.0; 3], 0.0).unwrap();
        let gap = curvature_gap(&cfg).unwrap();
        assert_eq!(gap.map.shape(), (3, 3));
        assert_eq!(gap.min_singular_value, 0.0);
    }
}
