use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

pub type MetricFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
/// `dg(x)[k] = ∂_k g(x)`.
pub type MetricDerivFn = Arc<dyn Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;
/// `d2g(x)[k][l] = ∂_k ∂_l g(x)`.
pub type MetricSecondFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<DMatrix<f64>>> + Send + Sync>;
pub type DomainFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Profiles for surfaces of revolution parametrised by meridian arclength `s`
/// and angle, metric `ds² + r(s)² dθ²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `r(s) = sqrt(1 + s²)`, curvature `-1/(1+s²)²`.
    Catenoid,
    /// `r(s) = 1 + e^{-s²}/4`.
    Bump,
    /// Tube of radius 1 around a circle of radius 2: `r(s) = 2 + cos s`.
    Torus,
}

impl Profile {
    /// `(r, r', r'')` at `s`.
    pub fn eval(self, s: f64) -> (f64, f64, f64) {
        match self {
            Profile::Catenoid => {
                let r = (1.0 + s * s).sqrt();
                (r, s / r, 1.0 / (r * r * r))
            }
            Profile::Bump => {
                let e = (-s * s).exp();
                let b = 0.25;
                (1.0 + b * e, -2.0 * b * s * e, b * (4.0 * s * s - 2.0) * e)
            }
            Profile::Torus => (2.0 + s.cos(), -s.sin(), -s.cos()),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Profile::Catenoid => "catenoid",
            Profile::Bump => "bump",
            Profile::Torus => "torus",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "catenoid" => Ok(Profile::Catenoid),
            "bump" => Ok(Profile::Bump),
            "torus" => Ok(Profile::Torus),
            other => Err(GeomError::UnknownCatalog(format!("revolution({other})"))),
        }
    }
}

/// Catalog description of a built-in chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChartSpec {
    /// Flat `ℝⁿ` in Cartesian coordinates.
    Euclidean { n: usize },
    /// Round 2-sphere of radius `r` in colatitude/longitude `(φ, θ)`,
    /// domain `0 < φ < π`.
    Sphere { r: f64 },
    /// Poincaré disk `4a²/(1-|x|²)² δ`, curvature `-1/a²`.
    HyperbolicDisk { a: f64 },
    /// Graph `z = c (x² + y²)` in `(x, y)` coordinates.
    Paraboloid { c: f64 },
    Revolution { profile: Profile },
}

impl ChartSpec {
    pub fn dim(&self) -> usize {
        match self {
            ChartSpec::Euclidean { n } => *n,
            _ => 2,
        }
    }

    /// Parses the `name(params)` catalog syntax, e.g. `sphere(2)`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(s[i + 1..s.len() - 1].trim())),
            Some(_) => return Err(GeomError::UnknownCatalog(s.to_string())),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            match arg {
                None | Some("") => Ok(default),
                Some(a) => a
                    .parse::<f64>()
                    .map_err(|_| GeomError::InvalidParameter(format!("`{a}` in `{s}`"))),
            }
        };
        let spec = match name {
            "euclidean" | "plane" => {
                let n = num(2.0)?;
                if n < 1.0 || n.fract() != 0.0 {
                    return Err(GeomError::InvalidParameter(format!("dimension in `{s}`")));
                }
                ChartSpec::Euclidean { n: n as usize }
            }
            "sphere" => ChartSpec::Sphere { r: num(1.0)? },
            "hyperbolic-disk" => ChartSpec::HyperbolicDisk { a: num(1.0)? },
            "paraboloid" => ChartSpec::Paraboloid { c: num(1.0)? },
            "revolution" => ChartSpec::Revolution {
                profile: Profile::from_id(arg.unwrap_or(""))?,
            },
            _ => return Err(GeomError::UnknownCatalog(s.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(GeomError::InvalidParameter(format!(
                "{what} must be positive and finite, got {v}"
            )))
        };
        match *self {
            ChartSpec::Euclidean { n } if n == 0 => Err(GeomError::InvalidParameter(
                "euclidean dimension must be positive".into(),
            )),
            ChartSpec::Sphere { r } if !(r > 0.0 && r.is_finite()) => bad("sphere radius", r),
            ChartSpec::HyperbolicDisk { a } if !(a > 0.0 && a.is_finite()) => bad("disk scale", a),
            ChartSpec::Paraboloid { c } if !c.is_finite() => bad("paraboloid coefficient", c),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<ChartMetric> {
        self.validate()?;
        Ok(match *self {
            ChartSpec::Euclidean { n } => ChartMetric::euclidean(n),
            ChartSpec::Sphere { r } => ChartMetric::sphere(r),
            ChartSpec::HyperbolicDisk { a } => ChartMetric::hyperbolic_disk(a),
            ChartSpec::Paraboloid { c } => ChartMetric::paraboloid(c),
            ChartSpec::Revolution { profile } => ChartMetric::revolution(profile),
        })
    }
}

impl fmt::Display for ChartSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChartSpec::Euclidean { n } => write!(f, "euclidean({n})"),
            ChartSpec::Sphere { r } => write!(f, "sphere({r})"),
            ChartSpec::HyperbolicDisk { a } => write!(f, "hyperbolic-disk({a})"),
            ChartSpec::Paraboloid { c } => write!(f, "paraboloid({c})"),
            ChartSpec::Revolution { profile } => write!(f, "revolution({})", profile.id()),
        }
    }
}

/// Finite-difference settings used when analytic metric derivatives are absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    /// Relative step: `h = rel_step * (1 + |x|)`.
    pub rel_step: f64,
    /// Relative step for second derivatives taken from metric values only.
    pub rel_step_second: f64,
    pub richardson: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            rel_step: 1e-5,
            rel_step_second: 1e-4,
            richardson: false,
        }
    }
}

/// A Riemannian manifold described by a single coordinate chart.
#[derive(Clone)]
pub struct ChartMetric {
    dim: usize,
    pub label: String,
    pub spec: Option<ChartSpec>,
    domain: DomainFn,
    g: MetricFn,
    dg: Option<MetricDerivFn>,
    d2g: Option<MetricSecondFn>,
    pub fd: FdConfig,
}

impl fmt::Debug for ChartMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartMetric")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("analytic_dg", &self.dg.is_some())
            .field("analytic_d2g", &self.d2g.is_some())
            .finish()
    }
}

impl ChartMetric {
    /// A user-defined chart; derivatives fall back to central differences.
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        domain: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
        g: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            label: label.into(),
            spec: None,
            domain: Arc::new(domain),
            g: Arc::new(g),
            dg: None,
            d2g: None,
            fd: FdConfig::default(),
        }
    }

    pub fn with_derivatives(
        mut self,
        dg: impl Fn(&[f64]) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
        d2g: Option<MetricSecondFn>,
    ) -> Self {
        self.dg = Some(Arc::new(dg));
        self.d2g = d2g;
        self
    }

    /// Drops analytic derivatives so every derivative is taken numerically.
    pub fn without_derivatives(mut self) -> Self {
        self.dg = None;
        self.d2g = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.dg.is_some()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|v| v.is_finite()) && (self.domain)(x)
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(GeomError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(GeomError::OutOfDomain {
                chart: self.label.clone(),
                point: x.to_vec(),
            });
        }
        Ok(())
    }

    /// Metric coefficients without domain or definiteness checks.
    pub fn metric_raw(&self, x: &[f64]) -> DMatrix<f64> {
        (self.g)(x)
    }

    /// Metric coefficients at `x`, checked for domain membership and positivity.
    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let g = (self.g)(x);
        if g.clone().cholesky().is_none() {
            let min_eig = g.clone().symmetric_eigenvalues().min();
            return Err(GeomError::SingularMetric {
                chart: self.label.clone(),
                point: x.to_vec(),
                min_eig,
            });
        }
        Ok(g)
    }

    pub fn metric_inverse(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.metric(x)?;
        Ok(g.cholesky().expect("checked positive definite").inverse())
    }

    fn step(&self, x: &[f64], rel: f64) -> f64 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        rel * (1.0 + norm)
    }

    /// First partials `∂_k g`, analytic when available.
    pub fn metric_derivatives(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_point(x)?;
        if let Some(dg) = &self.dg {
            return Ok(dg(x));
        }
        let h = self.step(x, self.fd.rel_step);
        self.fd_metric_derivatives(x, h)
    }

    /// Central-difference partials of the metric with explicit step `h`
    /// (Richardson-extrapolated when configured).
    pub fn fd_metric_derivatives(&self, x: &[f64], h: f64) -> Result<Vec<DMatrix<f64>>> {
        let central = |h: f64| -> Result<Vec<DMatrix<f64>>> {
            let mut out = Vec::with_capacity(self.dim);
            let mut xp = x.to_vec();
            for k in 0..self.dim {
                xp[k] = x[k] + h;
                self.check_point(&xp)?;
                let gp = (self.g)(&xp);
                xp[k] = x[k] - h;
                self.check_point(&xp)?;
                let gm = (self.g)(&xp);
                xp[k] = x[k];
                out.push((gp - gm) / (2.0 * h));
            }
            Ok(out)
        };
        let d1 = central(h)?;
        if !self.fd.richardson {
            return Ok(d1);
        }
        let d2 = central(0.5 * h)?;
        Ok(d1
            .into_iter()
            .zip(d2)
            .map(|(a, b)| (b * 4.0 - a) / 3.0)
            .collect())
    }

    /// Second partials `∂_k ∂_l g`.
    pub fn metric_second_derivatives(&self, x: &[f64]) -> Result<Vec<Vec<DMatrix<f64>>>> {
        self.check_point(x)?;
        if let Some(d2g) = &self.d2g {
            return Ok(d2g(x));
        }
        let n = self.dim;
        let mut out = vec![vec![DMatrix::zeros(n, n); n]; n];
        let mut xp = x.to_vec();
        if self.dg.is_some() {
            let h = self.step(x, self.fd.rel_step);
            for l in 0..n {
                xp[l] = x[l] + h;
                let dp = self.metric_derivatives(&xp)?;
                xp[l] = x[l] - h;
                let dm = self.metric_derivatives(&xp)?;
                xp[l] = x[l];
                for k in 0..n {
                    out[k][l] = (&dp[k] - &dm[k]) / (2.0 * h);
                }
            }
            // symmetrise in (k, l)
            for k in 0..n {
                for l in k + 1..n {
                    let s = (&out[k][l] + &out[l][k]) * 0.5;
                    out[k][l] = s.clone();
                    out[l][k] = s;
                }
            }
            return Ok(out);
        }
        let h = self.step(x, self.fd.rel_step_second);
        let g0 = (self.g)(x);
        for k in 0..n {
            for l in k..n {
                let d = if k == l {
                    xp[k] = x[k] + h;
                    self.check_point(&xp)?;
                    let gp = (self.g)(&xp);
                    xp[k] = x[k] - h;
                    self.check_point(&xp)?;
                    let gm = (self.g)(&xp);
                    xp[k] = x[k];
                    (gp + gm - &g0 * 2.0) / (h * h)
                } else {
                    let mut eval = |sk: f64, sl: f64| -> Result<DMatrix<f64>> {
                        xp[k] = x[k] + sk * h;
                        xp[l] = x[l] + sl * h;
                        self.check_point(&xp)?;
                        let g = (self.g)(&xp);
                        xp[k] = x[k];
                        xp[l] = x[l];
                        Ok(g)
                    };
                    let pp = eval(1.0, 1.0)?;
                    let pm = eval(1.0, -1.0)?;
                    let mp = eval(-1.0, 1.0)?;
                    let mm = eval(-1.0, -1.0)?;
                    (pp - pm - mp + mm) / (4.0 * h * h)
                };
                out[k][l] = d.clone();
                out[l][k] = d;
            }
        }
        Ok(out)
    }

    pub fn euclidean(n: usize) -> Self {
        let mut c = Self::new(
            n,
            format!("euclidean({n})"),
            |_| true,
            move |_| DMatrix::identity(n, n),
        )
        .with_derivatives(
            move |_| vec![DMatrix::zeros(n, n); n],
            Some(Arc::new(move |_| vec![vec![DMatrix::zeros(n, n); n]; n])),
        );
        c.spec = Some(ChartSpec::Euclidean { n });
        c
    }

    pub fn sphere(r: f64) -> Self {
        let r2 = r * r;
        let mut c = Self::new(
            2,
            format!("sphere({r})"),
            |x| x[0] > 0.0 && x[0] < std::f64::consts::PI,
            move |x| {
                let s = x[0].sin();
                DMatrix::from_row_slice(2, 2, &[r2, 0.0, 0.0, r2 * s * s])
            },
        )
        .with_derivatives(
            move |x| {
                let d = r2 * (2.0 * x[0]).sin();
                vec![
                    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, d]),
                    DMatrix::zeros(2, 2),
                ]
            },
            Some(Arc::new(move |x| {
                let dd = 2.0 * r2 * (2.0 * x[0]).cos();
                let z = DMatrix::zeros(2, 2);
                vec![
                    vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, dd]), z.clone()],
                    vec![z.clone(), z],
                ]
            })),
        );
        c.spec = Some(ChartSpec::Sphere { r });
        c
    }

    pub fn hyperbolic_disk(a: f64) -> Self {
        let a2 = a * a;
        let mut c = Self::new(
            2,
            format!("hyperbolic-disk({a})"),
            |x| x[0] * x[0] + x[1] * x[1] < 1.0,
            move |x| {
                let w = 1.0 - x[0] * x[0] - x[1] * x[1];
                DMatrix::identity(2, 2) * (4.0 * a2 / (w * w))
            },
        )
        .with_derivatives(
            move |x| {
                let w = 1.0 - x[0] * x[0] - x[1] * x[1];
                (0..2)
                    .map(|k| DMatrix::identity(2, 2) * (16.0 * a2 * x[k] / (w * w * w)))
                    .collect()
            },
            Some(Arc::new(move |x| {
                let w = 1.0 - x[0] * x[0] - x[1] * x[1];
                (0..2)
                    .map(|k| {
                        (0..2)
                            .map(|l| {
                                let delta = if k == l { 1.0 } else { 0.0 };
                                let v = 16.0 * a2 * delta / w.powi(3)
                                    + 96.0 * a2 * x[k] * x[l] / w.powi(4);
                                DMatrix::identity(2, 2) * v
                            })
                            .collect()
                    })
                    .collect()
            })),
        );
        c.spec = Some(ChartSpec::HyperbolicDisk { a });
        c
    }

    pub fn paraboloid(cc: f64) -> Self {
        let k = 4.0 * cc * cc;
        let mut c = Self::new(
            2,
            format!("paraboloid({cc})"),
            |_| true,
            move |x| {
                DMatrix::from_fn(2, 2, |i, j| {
                    (if i == j { 1.0 } else { 0.0 }) + k * x[i] * x[j]
                })
            },
        )
        .with_derivatives(
            move |x| {
                (0..2)
                    .map(|m| {
                        DMatrix::from_fn(2, 2, |i, j| {
                            let dim = if i == m { 1.0 } else { 0.0 };
                            let djm = if j == m { 1.0 } else { 0.0 };
                            k * (dim * x[j] + x[i] * djm)
                        })
                    })
                    .collect()
            },
            Some(Arc::new(move |_| {
                (0..2)
                    .map(|m| {
                        (0..2)
                            .map(|l| {
                                DMatrix::from_fn(2, 2, |i, j| {
                                    let d = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 };
                                    k * (d(i, m) * d(j, l) + d(i, l) * d(j, m))
                                })
                            })
                            .collect()
                    })
                    .collect()
            })),
        );
        c.spec = Some(ChartSpec::Paraboloid { c: cc });
        c
    }

    pub fn revolution(profile: Profile) -> Self {
        let mut c = Self::new(
            2,
            format!("revolution({})", profile.id()),
            move |x| profile.eval(x[0]).0 > 0.0,
            move |x| {
                let (r, _, _) = profile.eval(x[0]);
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, r * r])
            },
        )
        .with_derivatives(
            move |x| {
                let (r, rp, _) = profile.eval(x[0]);
                vec![
                    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0 * r * rp]),
                    DMatrix::zeros(2, 2),
                ]
            },
            Some(Arc::new(move |x| {
                let (r, rp, rpp) = profile.eval(x[0]);
                let z = DMatrix::zeros(2, 2);
                vec![
                    vec![
                        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0 * (rp * rp + r * rpp)]),
                        z.clone(),
                    ],
                    vec![z.clone(), z],
                ]
            })),
        );
        c.spec = Some(ChartSpec::Revolution { profile });
        c
    }
}

/// Euclidean norm helper on slices.
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_catalog_names() {
        assert_eq!(ChartSpec::parse("sphere(2)").unwrap(), ChartSpec::Sphere { r: 2.0 });
        assert_eq!(ChartSpec::parse("euclidean(3)").unwrap(), ChartSpec::Euclidean { n: 3 });
        assert_eq!(
            ChartSpec::parse("revolution(catenoid)").unwrap(),
            ChartSpec::Revolution {
                profile: Profile::Catenoid
            }
        );
        assert!(ChartSpec::parse("klein-bottle").is_err());
        assert!(ChartSpec::parse("sphere(-1)").is_err());
        let s = ChartSpec::Paraboloid { c: 0.5 };
        assert_eq!(ChartSpec::parse(&s.to_string()).unwrap(), s);
    }

    #[test]
    fn spec_json_roundtrip() {
        let s = ChartSpec::Revolution {
            profile: Profile::Torus,
        };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"kind":"revolution","profile":"torus"}"#);
        assert_eq!(serde_json::from_str::<ChartSpec>(&j).unwrap(), s);
    }

    #[test]
    fn outside_domain_is_rejected() {
        let s = ChartMetric::sphere(1.0);
        assert!(matches!(
            s.metric(&[0.0, 1.0]),
            Err(GeomError::OutOfDomain { .. })
        ));
        let d = ChartMetric::hyperbolic_disk(1.0);
        assert!(d.metric(&[0.8, 0.7]).is_err());
    }

    #[test]
    fn singular_metric_is_diagnosed() {
        let c = ChartMetric::new(2, "degenerate", |_| true, |_| {
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])
        });
        assert!(matches!(c.metric(&[0.0, 0.0]), Err(GeomError::SingularMetric { .. })));
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let x = [0.3, -0.4];
        for spec in [
            ChartSpec::Sphere { r: 1.5 },
            ChartSpec::HyperbolicDisk { a: 1.0 },
            ChartSpec::Paraboloid { c: 0.7 },
            ChartSpec::Revolution { profile: Profile::Bump },
            ChartSpec::Revolution { profile: Profile::Catenoid },
            ChartSpec::Revolution { profile: Profile::Torus },
        ] {
            let c = spec.build().unwrap();
            let x = if matches!(spec, ChartSpec::Sphere { .. }) { [1.1, 0.2] } else { x };
            let an = c.metric_derivatives(&x).unwrap();
            let fd = c.fd_metric_derivatives(&x, 1e-5).unwrap();
            for (a, f) in an.iter().zip(&fd) {
                assert!((a - f).amax() < 1e-8, "{spec}");
            }
            let an2 = c.metric_second_derivatives(&x).unwrap();
            let fd2 = c.clone().without_derivatives().metric_second_derivatives(&x).unwrap();
            for k in 0..2 {
                for l in 0..2 {
                    assert!((&an2[k][l] - &fd2[k][l]).amax() < 1e-6 * (1.0 + an2[k][l].amax()), "{spec} d2g[{k}][{l}]");
                }
            }
        }
    }
}
