//! Adaptive Dormand–Prince 5(4) integrator with dense output.
//!
//! The integrator works on flat `f64` state vectors. A right-hand side may
//! refuse a state (for instance when it leaves a chart domain); the run then
//! stops at the last accepted step and the trajectory carries a truncation
//! record instead of extrapolating.

use crate::error::GeomError;
use serde::{Deserialize, Serialize};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), GeomError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
}

impl Tolerance {
    pub fn uniform(tol: f64) -> Self {
        Self { atol: tol, rtol: tol }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::uniform(1e-9)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub tol: Tolerance,
    pub h0: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            tol: Tolerance::default(),
            h0: None,
            h_max: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

impl IntegrateOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol: Tolerance::uniform(tol),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub t: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub projections: usize,
}

#[derive(Debug, Clone)]
struct DenseSegment {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl DenseSegment {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let s = if self.h == 0.0 { 0.0 } else { (t - self.t0) / self.h };
        let s1 = 1.0 - s;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i]
                + s * (self.r[1][i]
                    + s1 * (self.r[2][i] + s * (self.r[3][i] + s1 * self.r[4][i])));
        }
    }
}

/// Accepted integration nodes plus piecewise dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Right-hand side at each node, after any post-step projection.
    pub derivatives: Vec<Vec<f64>>,
    segments: Vec<DenseSegment>,
    pub truncation: Option<Truncation>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn is_truncated(&self) -> bool {
        self.truncation.is_some()
    }

    fn forward(&self) -> bool {
        self.t_end() >= self.t_start()
    }

    /// Dense-output evaluation; `t` is clamped to the integrated interval.
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if self.segments.is_empty() {
            out.copy_from_slice(&self.states[0]);
            return out;
        }
        let (lo, hi) = if self.forward() {
            (self.t_start(), self.t_end())
        } else {
            (self.t_end(), self.t_start())
        };
        let t = t.clamp(lo, hi);
        // segment k spans times[k]..times[k+1]
        let idx = if self.forward() {
            self.times.partition_point(|&s| s <= t)
        } else {
            self.times.partition_point(|&s| s >= t)
        };
        let k = idx.saturating_sub(1).min(self.segments.len() - 1);
        self.segments[k].eval(t, &mut out);
        out
    }

    /// `n + 1` equally spaced sample times covering the run.
    pub fn uniform_times(&self, n: usize) -> Vec<f64> {
        let (a, b) = (self.t_start(), self.t_end());
        (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
    }

    /// Sample times made of every accepted node plus each step midpoint.
    pub fn nodes_and_midpoints(&self) -> Vec<f64> {
        let mut ts = Vec::with_capacity(2 * self.times.len());
        for w in self.times.windows(2) {
            ts.push(w[0]);
            ts.push(0.5 * (w[0] + w[1]));
        }
        ts.push(self.t_end());
        ts
    }

    pub fn step_midpoints(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Value and first two time derivatives of the dense output at the
    /// midpoint of step `k`. The interpolant is quartic on each step, so the
    /// five-point stencils used here are exact up to rounding.
    pub fn midpoint_jet(&self, k: usize) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (a, b) = (self.times[k], self.times[k + 1]);
        let t = 0.5 * (a + b);
        let h = (b - a) / 8.0;
        let s: Vec<Vec<f64>> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|&c| self.sample(t + c * h)).collect();
        let d1 = (0..self.dim)
            .map(|i| (s[0][i] - 8.0 * s[1][i] + 8.0 * s[3][i] - s[4][i]) / (12.0 * h))
            .collect();
        let d2 = (0..self.dim)
            .map(|i| (-s[0][i] + 16.0 * s[1][i] - 30.0 * s[2][i] + 16.0 * s[3][i] - s[4][i]) / (12.0 * h * h))
            .collect();
        (t, s[2].clone(), d1, d2)
    }

    /// Value and first two time derivatives at the midpoint of step `k` from
    /// the Hermite interpolant of node values and node derivatives on up to
    /// four consecutive nodes around the step (degree 7). Its derivative
    /// error is far below that of the quartic dense output.
    pub fn midpoint_hermite(&self, k: usize) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let last = self.times.len() - 1;
        let lo = k.saturating_sub(1).min(last.saturating_sub(3));
        let hi = (lo + 3).min(last);
        let t = 0.5 * (self.times[k] + self.times[k + 1]);
        let nodes: Vec<usize> = (lo..=hi).collect();
        let z: Vec<f64> = nodes.iter().flat_map(|&i| [self.times[i], self.times[i]]).collect();
        let m = z.len();
        let mut y = vec![0.0; self.dim];
        let mut d1 = vec![0.0; self.dim];
        let mut d2 = vec![0.0; self.dim];
        let mut q = vec![vec![0.0; m]; m];
        for c in 0..self.dim {
            for (a, &i) in nodes.iter().enumerate() {
                q[2 * a][0] = self.states[i][c];
                q[2 * a + 1][0] = self.states[i][c];
                q[2 * a + 1][1] = self.derivatives[i][c];
                if a > 0 {
                    q[2 * a][1] = (q[2 * a][0] - q[2 * a - 1][0]) / (z[2 * a] - z[2 * a - 1]);
                }
            }
            for j in 2..m {
                for i in j..m {
                    q[i][j] = (q[i][j - 1] - q[i - 1][j - 1]) / (z[i] - z[i - j]);
                }
            }
            let (mut p, mut dp, mut ddp) = (q[m - 1][m - 1], 0.0, 0.0);
            for j in (0..m - 1).rev() {
                let x = t - z[j];
                ddp = ddp * x + 2.0 * dp;
                dp = dp * x + p;
                p = p * x + q[j][j];
            }
            y[c] = p;
            d1[c] = dp;
            d2[c] = ddp;
        }
        (t, y, d1, d2)
    }

    /// Cumulative integral of `f(t, y(t))` over each accepted step by
    /// three-point Gauss–Legendre on the dense output. Entry `k` holds the
    /// integral from the first node up to node `k`.
    pub fn cumulative_quadrature<F: Fn(f64, &[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let mut acc = vec![0.0; self.times.len()];
        for (k, w) in self.times.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut s = 0.0;
            for (xi, wi) in NODES.iter().zip(WEIGHTS) {
                let t = mid + half * xi;
                s += wi * f(t, &self.sample(t));
            }
            acc[k + 1] = acc[k] + half * s;
        }
        acc
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &IntegrateOptions,
) -> Trajectory {
    integrate_with(sys, t0, y0, t_end, opts, |_, _| false)
}

/// Integrates from `t0` to `t_end` (either direction). After every accepted
/// step `post_step` may modify the state in place and must return `true`
/// when it did.
pub fn integrate_with<S, P>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &IntegrateOptions,
    mut post_step: P,
) -> Trajectory
where
    S: OdeSystem + ?Sized,
    P: FnMut(f64, &mut [f64]) -> bool,
{
    let n = sys.dim();
    assert_eq!(y0.len(), n, "initial state has wrong dimension");
    let mut traj = Trajectory {
        dim: n,
        times: vec![t0],
        states: vec![y0.to_vec()],
        derivatives: Vec::new(),
        segments: Vec::new(),
        truncation: None,
        stats: StepStats::default(),
    };
    let span = t_end - t0;
    if span == 0.0 {
        return traj;
    }
    let dir = span.signum();
    let tol = opts.tol;

    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    if let Err(e) = sys.rhs(t0, &y, &mut k1) {
        traj.truncation = Some(Truncation {
            t: t0,
            reason: e.to_string(),
        });
        return traj;
    }
    traj.stats.rhs_evals += 1;
    traj.derivatives.push(k1.clone());

    let mut h = match opts.h0 {
        Some(h) => h.abs(),
        None => initial_step(&y, &k1, tol, span.abs()),
    }
    .min(opts.h_max)
    .min(span.abs());

    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut y1 = vec![0.0; n];
    let mut t = t0;
    let mut last_err = 1e-4_f64;

    while dir * (t_end - t) > 0.0 {
        if traj.stats.accepted + traj.stats.rejected >= opts.max_steps {
            traj.truncation = Some(Truncation {
                t,
                reason: "maximum number of steps exceeded".into(),
            });
            break;
        }
        let mut last = false;
        if h >= (t_end - t).abs() * (1.0 - 1e-12) {
            h = (t_end - t).abs();
            last = true;
        }
        let hs = dir * h;

        let stages = (|| -> Result<(), GeomError> {
            for i in 0..n {
                ys[i] = y[i] + hs * A21 * k1[i];
            }
            sys.rhs(t + C2 * hs, &ys, &mut k2)?;
            for i in 0..n {
                ys[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            sys.rhs(t + C3 * hs, &ys, &mut k3)?;
            for i in 0..n {
                ys[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            sys.rhs(t + C4 * hs, &ys, &mut k4)?;
            for i in 0..n {
                ys[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            sys.rhs(t + C5 * hs, &ys, &mut k5)?;
            for i in 0..n {
                ys[i] = y[i]
                    + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            sys.rhs(t + hs, &ys, &mut k6)?;
            for i in 0..n {
                y1[i] = y[i]
                    + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            sys.rhs(t + hs, &y1, &mut k7)?;
            Ok(())
        })();
        traj.stats.rhs_evals += 6;

        if let Err(e) = stages {
            // a stage left the domain: shrink and retry, give up at a tiny step
            traj.stats.rejected += 1;
            if h < 1e-12 * (1.0 + t.abs()) {
                traj.truncation = Some(Truncation {
                    t,
                    reason: e.to_string(),
                });
                break;
            }
            h *= 0.25;
            continue;
        }

        let mut err = 0.0;
        for i in 0..n {
            let e = hs
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol.atol + tol.rtol * y[i].abs().max(y1[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / n as f64).sqrt();

        if !err.is_finite() {
            traj.stats.rejected += 1;
            h *= 0.1;
            continue;
        }

        if err <= 1.0 {
            // dense output coefficients for [t, t + hs]
            let mut r = [
                y.clone(),
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
            ];
            for i in 0..n {
                let ydiff = y1[i] - y[i];
                let bspl = hs * k1[i] - ydiff;
                r[1][i] = ydiff;
                r[2][i] = bspl;
                r[3][i] = ydiff - hs * k7[i] - bspl;
                r[4][i] = hs
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                        + D7 * k7[i]);
            }
            traj.segments.push(DenseSegment { t0: t, h: hs, r });
            t = if last { t_end } else { t + hs };
            y.copy_from_slice(&y1);
            k1.copy_from_slice(&k7);
            traj.stats.accepted += 1;

            if post_step(t, &mut y) {
                traj.stats.projections += 1;
                if let Err(e) = sys.rhs(t, &y, &mut k1) {
                    traj.times.push(t);
                    traj.states.push(y.clone());
                    traj.derivatives.push(k1.clone());
                    traj.truncation = Some(Truncation {
                        t,
                        reason: e.to_string(),
                    });
                    break;
                }
                traj.stats.rhs_evals += 1;
            }
            traj.times.push(t);
            traj.states.push(y.clone());
            traj.derivatives.push(k1.clone());

            // PI step-size control
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * last_err.powf(0.4 / 5.0);
            last_err = err.max(1e-4);
            h = (h * fac.clamp(0.2, 10.0)).min(opts.h_max);
        } else {
            traj.stats.rejected += 1;
            let fac = 0.9 * err.powf(-0.2);
            h *= fac.clamp(0.2, 1.0);
        }
    }
    traj
}

fn initial_step(y: &[f64], f: &[f64], tol: Tolerance, span: f64) -> f64 {
    let n = y.len() as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(f) {
        let sc = tol.atol + tol.rtol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (fi / sc).powi(2);
    }
    let d0 = (d0 / n).sqrt();
    let d1 = (d1 / n).sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    // fifth-order scaling toward the requested tolerance
    let h = h.max(1e-6).min(0.1 * tol.rtol.max(tol.atol).powf(0.2));
    h.min(span)
}

/// Convenience wrapper for systems given by a closure.
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<(), GeomError>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), GeomError> {
        (self.f)(t, y, dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic() -> FnSystem<impl Fn(f64, &[f64], &mut [f64]) -> Result<(), GeomError>> {
        FnSystem {
            dim: 2,
            f: |_t: f64, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
        }
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let sys = harmonic();
        let tr = integrate(&sys, 0.0, &[1.0, 0.0], 10.0, &IntegrateOptions::with_tol(1e-10));
        let y = tr.final_state();
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[1] + 10f64.sin()).abs() < 1e-8);
        assert!(tr.truncation.is_none());
    }

    #[test]
    fn dense_output_matches_exact_solution() {
        let sys = harmonic();
        let tr = integrate(&sys, 0.0, &[1.0, 0.0], 6.0, &IntegrateOptions::with_tol(1e-10));
        for t in tr.step_midpoints() {
            let y = tr.sample(t);
            assert!((y[0] - t.cos()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn backward_integration_returns() {
        let sys = harmonic();
        let opts = IntegrateOptions::with_tol(1e-11);
        let fwd = integrate(&sys, 0.0, &[1.0, 0.5], 5.0, &opts);
        let back = integrate(&sys, 5.0, fwd.final_state(), 0.0, &opts);
        let y = back.final_state();
        assert!((y[0] - 1.0).abs() < 1e-9 && (y[1] - 0.5).abs() < 1e-9);
        let mid = back.sample(2.5);
        assert!((mid[0] - fwd.sample(2.5)[0]).abs() < 1e-8);
    }

    #[test]
    fn domain_exit_truncates() {
        let sys = FnSystem {
            dim: 1,
            f: |_t: f64, y: &[f64], dy: &mut [f64]| {
                if y[0] > 1.0 {
                    return Err(GeomError::OutOfDomain {
                        chart: "test".into(),
                        point: y.to_vec(),
                    });
                }
                dy[0] = 1.0;
                Ok(())
            },
        };
        let tr = integrate(&sys, 0.0, &[0.0], 5.0, &IntegrateOptions::default());
        assert!(tr.is_truncated());
        assert!(tr.t_end() <= 1.0 + 1e-9 && tr.t_end() > 0.99);
    }

    #[test]
    fn quadrature_integrates_polynomial() {
        let sys = harmonic();
        let tr = integrate(&sys, 0.0, &[1.0, 0.0], 3.0, &IntegrateOptions::default());
        let q = tr.cumulative_quadrature(|_, y| y[0]);
        assert!((q.last().unwrap() - 3f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn midpoint_jet_tracks_derivatives() {
        let sys = harmonic();
        let tr = integrate(&sys, 0.0, &[1.0, 0.0], 4.0, &IntegrateOptions::with_tol(1e-11));
        for k in 0..tr.times.len() - 1 {
            let (t, y, d1, d2) = tr.midpoint_jet(k);
            assert!((y[0] - t.cos()).abs() < 1e-9);
            assert!((d1[0] + t.sin()).abs() < 1e-7, "t={t}");
            assert!((d2[0] + t.cos()).abs() < 1e-5, "t={t}");
        }
    }

    #[test]
    fn hermite_midpoint_defect_is_at_tolerance_level() {
        let sys = harmonic();
        for tol in [1e-8, 1e-10, 1e-12] {
            let tr = integrate(&sys, 0.0, &[1.0, 0.0], 6.0, &IntegrateOptions::with_tol(tol));
            let (mut defect, mut jet_defect) = (0.0f64, 0.0f64);
            for k in 0..tr.times.len() - 1 {
                let (t, y, d1, d2) = tr.midpoint_hermite(k);
                assert!((y[0] - t.cos()).abs() < 100.0 * tol);
                assert!((d2[0] + t.cos()).abs() < 1e3 * tol.sqrt(), "t={t}");
                defect = defect.max((d1[0] - y[1]).abs()).max((d1[1] + y[0]).abs());
                let (_, yj, dj, _) = tr.midpoint_jet(k);
                jet_defect = jet_defect.max((dj[0] - yj[1]).abs());
            }
            assert!(defect < 10.0 * tol, "tol {tol:e}: {defect:e}");
            assert!(defect < jet_defect);
        }
    }
}
