//! Two-point problem for normal rolling geodesics: find initial data
//! `(u₀ direction, v₀, Λ₀)` whose geodesic joins two configurations.
//!
//! Speed `a` and horizon `T` are fixed by default, so every shot has length
//! `aT`. The unknowns are `n − 1` direction angles, `v₀` and the upper
//! triangle of `Λ₀`; with `free_speed` the speed is appended. The endpoint
//! residual is solved by Levenberg–Marquardt with a central-difference
//! Jacobian, started from a golden-ratio sequence of direction angles.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geodesics::{integrate_geodesic, GeodesicRun, GeodesicSummary, RollingGeodesicState};
use crate::geom::orthonormal_frame_at;
use crate::rolling::{curvature_gap, from_row_major, row_major, ConfigurationRecord, RollingConfiguration};

const GOLDEN: f64 = 0.618_033_988_749_894_9;
/// A start is abandoned when the objective fails to drop below
/// `STALL_RATIO` times its value `STALL_WINDOW` accepted steps earlier.
const STALL_WINDOW: usize = 10;
const STALL_RATIO: f64 = 0.9;

/// Weights of the configuration distance. `q = None` means `1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceWeights {
    pub m: f64,
    pub mh: f64,
    pub q: Option<f64>,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        Self { m: 1.0, mh: 1.0, q: None }
    }
}

impl DistanceWeights {
    pub fn q_weight(&self, n: usize) -> f64 {
        self.q.unwrap_or(1.0 / n as f64)
    }
}

fn check_same_charts(c1: &RollingConfiguration, c2: &RollingConfiguration) -> Result<()> {
    if c1.m.label != c2.m.label || c1.mh.label != c2.mh.label {
        return Err(GeomError::ChartMismatch(format!(
            "({}, {}) vs ({}, {})",
            c1.m.label, c1.mh.label, c2.m.label, c2.mh.label
        )));
    }
    if c1.dim() != c2.dim() {
        return Err(GeomError::Dimension {
            expected: c1.dim(),
            got: c2.dim(),
        });
    }
    Ok(())
}

/// `q` written in the Gram–Schmidt frames of the coordinate bases at `x`
/// and `x̂`; an element of `SO(n)`.
pub fn reference_q(c: &RollingConfiguration) -> Result<DMatrix<f64>> {
    let n = c.dim();
    let id = DMatrix::identity(n, n);
    let e = orthonormal_frame_at(&c.m, c.x.as_slice(), &id)?.f;
    let eh = orthonormal_frame_at(&c.mh, c.xh.as_slice(), &id)?.f;
    let gh = c.mh.metric(c.xh.as_slice())?;
    Ok(eh.transpose() * gh * c.q()? * e)
}

/// `w_M |Δx| + w_M̂ |Δx̂| + w_q ‖ΔQ‖_F` with chart distances on the base
/// points and `Q` from [`reference_q`].
pub fn configuration_distance(c1: &RollingConfiguration, c2: &RollingConfiguration) -> Result<f64> {
    configuration_distance_weighted(c1, c2, &DistanceWeights::default())
}

pub fn configuration_distance_weighted(
    c1: &RollingConfiguration,
    c2: &RollingConfiguration,
    w: &DistanceWeights,
) -> Result<f64> {
    check_same_charts(c1, c2)?;
    let dq = reference_q(c1)? - reference_q(c2)?;
    Ok(w.m * (&c1.x - &c2.x).norm() + w.mh * (&c1.xh - &c2.xh).norm() + w.q_weight(c1.dim()) * dq.norm())
}

/// Unit vector from `n − 1` hyperspherical angles.
pub fn unit_direction(angles: &[f64]) -> DVector<f64> {
    let n = angles.len() + 1;
    let mut s = DVector::zeros(n);
    let mut prod = 1.0;
    for (k, a) in angles.iter().enumerate() {
        s[k] = prod * a.cos();
        prod *= a.sin();
    }
    s[n - 1] = prod;
    s
}

/// Inverse of [`unit_direction`] for a nonzero vector.
pub fn direction_angles(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    if n < 2 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n - 1);
    for k in 0..n - 2 {
        let tail = u[k + 1..].iter().map(|x| x * x).sum::<f64>().sqrt();
        out.push(tail.atan2(u[k]));
    }
    out.push(u[n - 1].atan2(u[n - 2]));
    out
}

fn skew_from_upper(n: usize, p: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            l[(i, j)] = p[k];
            l[(j, i)] = -p[k];
            k += 1;
        }
    }
    l
}

fn upper_of(l: &DMatrix<f64>) -> Vec<f64> {
    let n = l.nrows();
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect()
}

/// Integrates the geodesic with `u₀ = a · unit_direction(angles)`; a chart
/// exit before `T` is an error.
pub fn shoot(
    cfg0: &RollingConfiguration,
    angles: &[f64],
    v0: &[f64],
    lambda0: &DMatrix<f64>,
    t_end: f64,
    speed: f64,
    tol: f64,
) -> Result<GeodesicRun> {
    let n = cfg0.dim();
    if angles.len() + 1 != n {
        return Err(GeomError::Dimension {
            expected: n - 1,
            got: angles.len(),
        });
    }
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(GeomError::InvalidParameter(format!("speed must be positive, got {speed}")));
    }
    let u = unit_direction(angles) * speed;
    let s0 = RollingGeodesicState::new(cfg0.clone(), u.as_slice(), v0, lambda0.clone())?;
    let run = integrate_geodesic(&s0, t_end, tol)?;
    if let Some(tr) = run.truncation() {
        return Err(GeomError::ChartExit {
            t: tr.t,
            reason: tr.reason.clone(),
        });
    }
    Ok(run)
}

/// Final configuration of [`shoot`].
pub fn endpoint_map(
    cfg0: &RollingConfiguration,
    angles: &[f64],
    v0: &[f64],
    lambda0: &DMatrix<f64>,
    t_end: f64,
    speed: f64,
    tol: f64,
) -> Result<RollingConfiguration> {
    Ok(shoot(cfg0, angles, v0, lambda0, t_end, speed, tol)?.final_state().cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverControls {
    pub max_iterations: usize,
    /// Initial Levenberg damping, relative to the largest diagonal entry of `JᵀJ`.
    pub damping: f64,
    /// Target configuration distance.
    pub tolerance: f64,
    pub multistart: usize,
    pub fd_step: f64,
    pub integration_tol: f64,
    /// Minimum singular value of the curvature gap below which a warning is issued.
    pub gap_floor: f64,
    pub free_speed: bool,
    pub weights: DistanceWeights,
}

impl Default for SolverControls {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            damping: 1e-3,
            tolerance: 1e-8,
            multistart: 4,
            fd_step: 1e-6,
            integration_tol: 1e-11,
            gap_floor: 1e-6,
            free_speed: false,
            weights: DistanceWeights::default(),
        }
    }
}

/// Starting point of the search; `lambda0` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub angles: Vec<f64>,
    pub v0: Vec<f64>,
    pub lambda0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ShootingProblem {
    pub cfg0: RollingConfiguration,
    pub cfg1: RollingConfiguration,
    pub t_end: f64,
    pub speed: f64,
    pub controls: SolverControls,
    pub seed: u64,
    pub guess: Option<InitialGuess>,
}

/// Serialized form of a [`ShootingProblem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub cfg0: ConfigurationRecord,
    pub cfg1: ConfigurationRecord,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub speed: f64,
    #[serde(default)]
    pub controls: SolverControls,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub guess: Option<InitialGuess>,
}

impl ShootingProblem {
    pub fn new(cfg0: RollingConfiguration, cfg1: RollingConfiguration, t_end: f64, speed: f64) -> Result<Self> {
        let p = Self {
            cfg0,
            cfg1,
            t_end,
            speed,
            controls: SolverControls::default(),
            seed: 0,
            guess: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_same_charts(&self.cfg0, &self.cfg1)?;
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return Err(GeomError::InvalidParameter(format!("speed must be positive, got {}", self.speed)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(GeomError::InvalidParameter(format!("horizon must be positive, got {}", self.t_end)));
        }
        let c = &self.controls;
        if c.multistart == 0 || !(c.tolerance > 0.0) || !(c.fd_step > 0.0) || !(c.integration_tol > 0.0) {
            return Err(GeomError::InvalidParameter("solver controls must be positive".into()));
        }
        if let Some(g) = &self.guess {
            let n = self.cfg0.dim();
            if g.angles.len() + 1 != n || g.v0.len() != n || g.lambda0.len() != n * n {
                return Err(GeomError::InvalidParameter("initial guess has wrong dimensions".into()));
            }
            let l = from_row_major(n, &g.lambda0)?;
            if (&l + l.transpose()).amax() > 1e-12 {
                return Err(GeomError::InvalidParameter("initial Λ₀ is not skew".into()));
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> Result<ProblemRecord> {
        Ok(ProblemRecord {
            cfg0: self.cfg0.to_record()?,
            cfg1: self.cfg1.to_record()?,
            t_end: self.t_end,
            speed: self.speed,
            controls: self.controls,
            seed: self.seed,
            guess: self.guess.clone(),
        })
    }

    pub fn from_record(r: &ProblemRecord) -> Result<Self> {
        let p = Self {
            cfg0: RollingConfiguration::from_record(&r.cfg0)?,
            cfg1: RollingConfiguration::from_record(&r.cfg1)?,
            t_end: r.t_end,
            speed: r.speed,
            controls: r.controls,
            seed: r.seed,
            guess: r.guess.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_record()?).map_err(|e| GeomError::InvalidParameter(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: ProblemRecord = serde_json::from_str(s).map_err(|e| GeomError::InvalidParameter(e.to_string()))?;
        Self::from_record(&r)
    }

    fn default_guess(&self) -> Result<InitialGuess> {
        let n = self.cfg0.dim();
        let c = &self.cfg0;
        let g = c.m.metric(c.x.as_slice())?;
        let d = &self.cfg1.x - &c.x;
        let mut u = c.f.transpose() * g * d;
        if u.norm() < 1e-14 {
            u = DVector::zeros(n);
            u[0] = 1.0;
        }
        Ok(InitialGuess {
            angles: direction_angles(u.as_slice()),
            v0: vec![0.0; n],
            lambda0: vec![0.0; n * n],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShootingStatus {
    Converged,
    Stalled,
    ChartExit,
}

impl ShootingStatus {
    fn rank(self) -> u8 {
        match self {
            ShootingStatus::Converged => 0,
            ShootingStatus::Stalled => 1,
            ShootingStatus::ChartExit => 2,
        }
    }
}

/// Initial data of a shot; `lambda0` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingData {
    pub angles: Vec<f64>,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub speed: f64,
}

impl ShootingData {
    pub fn lambda_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.v0.len(), self.v0.len(), &self.lambda0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShootingResult {
    pub status: ShootingStatus,
    pub data: ShootingData,
    /// Configuration distance of the endpoint to the target; `None` when
    /// every start left the chart.
    pub residual: Option<f64>,
    pub iterations: usize,
    /// Least-squares objective at each accepted iterate of the chosen start.
    pub objective_history: Vec<f64>,
    pub length: f64,
    pub energy: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub seed: u64,
    pub start: usize,
    /// Number of starts actually run.
    pub starts: usize,
    pub converged_starts: usize,
    pub curvature_gap: f64,
    pub warnings: Vec<String>,
    pub invariants: Option<GeodesicSummary>,
    pub trajectory_csv: Option<String>,
    #[serde(skip)]
    pub run: Option<GeodesicRun>,
}

impl ShootingResult {
    pub fn converged(&self) -> bool {
        self.status == ShootingStatus::Converged
    }

    /// Writes the trajectory CSV and records its path.
    pub fn write_trajectory(&mut self, path: &Path) -> std::io::Result<()> {
        if let Some(run) = &self.run {
            let f = std::fs::File::create(path)?;
            run.write_csv(std::io::BufWriter::new(f))?;
            self.trajectory_csv = Some(path.display().to_string());
        }
        Ok(())
    }
}

struct Unknowns {
    n: usize,
    free_speed: bool,
}

impl Unknowns {
    fn len(&self) -> usize {
        let n = self.n;
        n - 1 + n + n * (n - 1) / 2 + self.free_speed as usize
    }

    fn encode(&self, g: &InitialGuess, speed: f64) -> Vec<f64> {
        let mut p = g.angles.clone();
        p.extend(&g.v0);
        p.extend(upper_of(&DMatrix::from_row_slice(self.n, self.n, &g.lambda0)));
        if self.free_speed {
            p.push(speed);
        }
        p
    }

    fn decode(&self, p: &[f64], speed: f64) -> (Vec<f64>, Vec<f64>, DMatrix<f64>, f64) {
        let n = self.n;
        let angles = p[..n - 1].to_vec();
        let v = p[n - 1..2 * n - 1].to_vec();
        let k = n * (n - 1) / 2;
        let l = skew_from_upper(n, &p[2 * n - 1..2 * n - 1 + k]);
        let a = if self.free_speed { p[2 * n - 1 + k] } else { speed };
        (angles, v, l, a)
    }

    fn data(&self, p: &[f64], speed: f64) -> ShootingData {
        let (angles, v0, l, a) = self.decode(p, speed);
        ShootingData {
            u0: (unit_direction(&angles) * a).as_slice().to_vec(),
            angles,
            v0,
            lambda0: row_major(&l),
            speed: a,
        }
    }
}

struct Shooter<'a> {
    prob: &'a ShootingProblem,
    unknowns: Unknowns,
    target_q: DMatrix<f64>,
}

struct Evaluation {
    r: DVector<f64>,
    distance: f64,
}

struct StartOutcome {
    start: usize,
    status: ShootingStatus,
    p: Vec<f64>,
    distance: f64,
    iterations: usize,
    history: Vec<f64>,
}

impl<'a> Shooter<'a> {
    fn endpoint(&self, p: &[f64]) -> Result<RollingConfiguration> {
        let (angles, v, l, a) = self.unknowns.decode(p, self.prob.speed);
        let c = &self.prob.controls;
        endpoint_map(&self.prob.cfg0, &angles, &v, &l, self.prob.t_end, a, c.integration_tol)
    }

    fn evaluate(&self, p: &[f64]) -> Result<Evaluation> {
        let end = self.endpoint(p)?;
        let t = &self.prob.cfg1;
        let w = &self.prob.controls.weights;
        let n = end.dim();
        let dx = &end.x - &t.x;
        let dxh = &end.xh - &t.xh;
        let dq = reference_q(&end)? - &self.target_q;
        let wq = w.q_weight(n);
        let mut r = DVector::zeros(2 * n + n * n);
        r.rows_mut(0, n).copy_from(&(&dx * w.m));
        r.rows_mut(n, n).copy_from(&(&dxh * w.mh));
        for (k, v) in dq.iter().enumerate() {
            r[2 * n + k] = wq * v;
        }
        let distance = w.m * dx.norm() + w.mh * dxh.norm() + wq * dq.norm();
        Ok(Evaluation { r, distance })
    }

    fn jacobian(&self, p: &[f64], rows: usize) -> Result<DMatrix<f64>> {
        let h0 = self.prob.controls.fd_step;
        let cols: Vec<DVector<f64>> = (0..p.len())
            .into_par_iter()
            .map(|j| {
                let h = h0 * (1.0 + p[j].abs());
                let mut pp = p.to_vec();
                pp[j] += h;
                let rp = self.evaluate(&pp)?.r;
                pp[j] = p[j] - h;
                let rm = self.evaluate(&pp)?.r;
                Ok((rp - rm) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        let mut jac = DMatrix::zeros(rows, p.len());
        for (j, c) in cols.iter().enumerate() {
            jac.set_column(j, c);
        }
        Ok(jac)
    }

    fn run_start(&self, start: usize, p0: Vec<f64>) -> StartOutcome {
        let c = &self.prob.controls;
        let mut p = p0;
        let mut cur = match self.evaluate(&p) {
            Ok(e) => e,
            Err(_) => {
                return StartOutcome {
                    start,
                    status: ShootingStatus::ChartExit,
                    p,
                    distance: f64::INFINITY,
                    iterations: 0,
                    history: Vec::new(),
                }
            }
        };
        let mut history = vec![cur.r.norm()];
        let mut mu = c.damping;
        let mut iterations = 0;
        while cur.distance > c.tolerance && iterations < c.max_iterations {
            iterations += 1;
            let Ok(jac) = self.jacobian(&p, cur.r.len()) else {
                break;
            };
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * &cur.r;
            // Levenberg damping: steps stay orthogonal to exact null directions
            // such as v₀ ∥ u₀ on a straight roll
            let scale = jtj.diagonal().amax().max(1e-300);
            let obj = cur.r.norm();
            let mut accepted = None;
            while mu < 1e12 {
                let mut a = jtj.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += mu * scale;
                }
                let Some(step) = a.lu().solve(&(-&grad)) else {
                    mu *= 4.0;
                    continue;
                };
                let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
                match self.evaluate(&trial) {
                    Ok(e) if e.r.norm() < obj => {
                        accepted = Some((trial, e));
                        break;
                    }
                    _ => mu *= 4.0,
                }
            }
            let Some((trial, e)) = accepted else {
                break;
            };
            assert!(e.r.norm() <= obj, "accepted step increased the objective");
            mu = (mu / 3.0).max(1e-15);
            p = trial;
            cur = e;
            history.push(cur.r.norm());
            let k = history.len();
            if k > STALL_WINDOW && history[k - 1] > STALL_RATIO * history[k - 1 - STALL_WINDOW] {
                break;
            }
        }
        let status = if cur.distance <= c.tolerance {
            ShootingStatus::Converged
        } else {
            ShootingStatus::Stalled
        };
        StartOutcome {
            start,
            status,
            p,
            distance: cur.distance,
            iterations,
            history,
        }
    }
}

fn compare_outcomes(a: &StartOutcome, b: &StartOutcome, speed_index: Option<usize>, speed: f64) -> Ordering {
    let len = |o: &StartOutcome| speed_index.map_or(speed, |k| o.p[k].abs());
    a.status
        .rank()
        .cmp(&b.status.rank())
        .then_with(|| {
            if a.status == ShootingStatus::Converged {
                len(a).total_cmp(&len(b))
            } else {
                Ordering::Equal
            }
        })
        .then_with(|| a.distance.total_cmp(&b.distance))
        .then_with(|| {
            a.p.iter()
                .zip(&b.p)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Solves the two-point problem. Starts run concurrently; the result is the
/// shortest converged shot, or the best residual when none converged.
pub fn solve(prob: &ShootingProblem) -> Result<ShootingResult> {
    prob.validate()?;
    let n = prob.cfg0.dim();
    let c = prob.controls;
    let gap = curvature_gap(&prob.cfg0)?.min_singular_value;
    let mut warnings = Vec::new();
    if gap < c.gap_floor {
        warnings.push(format!(
            "curvature gap at cfg0 has min singular value {gap:.3e} < {:.1e}; the rolling distribution may not be bracket generating",
            c.gap_floor
        ));
    }
    let unknowns = Unknowns {
        n,
        free_speed: c.free_speed,
    };
    if unknowns.len() < 2 * n + n * (n - 1) / 2 && !c.free_speed {
        // the fixed-length family has codimension one in the configuration space
        warnings.push("fixed speed and horizon: only endpoints reachable at length aT can be matched".into());
    }
    let shooter = Shooter {
        prob,
        target_q: reference_q(&prob.cfg1)?,
        unknowns,
    };
    let guess = match &prob.guess {
        Some(g) => g.clone(),
        None => prob.default_guess()?,
    };
    let base = shooter.unknowns.encode(&guess, prob.speed);
    let starts: Vec<Vec<f64>> = (0..c.multistart)
        .map(|k| {
            let mut p = base.clone();
            if k > 0 && n > 1 {
                let off = ((prob.seed.wrapping_add(k as u64)) as f64 * GOLDEN).fract();
                p[0] += 2.0 * std::f64::consts::PI * off;
            }
            p
        })
        .collect();
    // with fixed speed every converged shot has length aT, so further
    // starts are only needed when the first one fails
    let first = shooter.run_start(0, starts[0].clone());
    let mut outcomes = vec![first];
    if outcomes[0].status != ShootingStatus::Converged || c.free_speed {
        let rest: Vec<StartOutcome> = starts
            .into_par_iter()
            .enumerate()
            .skip(1)
            .map(|(k, p)| shooter.run_start(k, p))
            .collect();
        outcomes.extend(rest);
    }
    let speed_index = c.free_speed.then(|| shooter.unknowns.len() - 1);
    let best = outcomes
        .iter()
        .min_by(|a, b| compare_outcomes(a, b, speed_index, prob.speed))
        .expect("at least one start");
    let converged_starts = outcomes.iter().filter(|o| o.status == ShootingStatus::Converged).count();
    let data = shooter.unknowns.data(&best.p, prob.speed);
    let (run, invariants) = if best.status == ShootingStatus::ChartExit {
        (None, None)
    } else {
        let run = shoot(
            &prob.cfg0,
            &data.angles,
            &data.v0,
            &data.lambda_matrix(),
            prob.t_end,
            data.speed,
            c.integration_tol,
        )?;
        let summary = run.summary()?;
        (Some(run), Some(summary))
    };
    let a = data.speed;
    Ok(ShootingResult {
        status: best.status,
        residual: best.distance.is_finite().then_some(best.distance),
        iterations: best.iterations,
        objective_history: best.history.clone(),
        length: a * prob.t_end,
        energy: 0.5 * a * a * prob.t_end,
        t_end: prob.t_end,
        seed: prob.seed,
        start: best.start,
        starts: outcomes.len(),
        converged_starts,
        curvature_gap: gap,
        warnings,
        invariants,
        trajectory_csv: None,
        run,
        data,
    })
}
