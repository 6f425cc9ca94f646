use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::chart::ChartMetric;
use crate::error::{GeomError, Result};

/// Tolerance on `fᵀ g f − I` accepted by [`FramePoint::new`].
pub const FRAME_TOL: f64 = 1e-8;

/// A tangent vector in chart components attached to a base point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentAtPoint {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

impl TangentAtPoint {
    pub fn new(chart: &ChartMetric, x: &[f64], v: &[f64]) -> Result<Self> {
        chart.check_point(x)?;
        if v.len() != chart.dim() {
            return Err(GeomError::Dimension {
                expected: chart.dim(),
                got: v.len(),
            });
        }
        Ok(Self {
            x: DVector::from_column_slice(x),
            v: DVector::from_column_slice(v),
        })
    }
}

/// Positively oriented orthonormal frame; column `j` holds the chart
/// components of `f_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePoint {
    pub x: DVector<f64>,
    pub f: DMatrix<f64>,
}

impl FramePoint {
    pub fn new(chart: &ChartMetric, x: &[f64], f: DMatrix<f64>) -> Result<Self> {
        let g = chart.metric(x)?;
        let n = chart.dim();
        if f.nrows() != n || f.ncols() != n {
            return Err(GeomError::Dimension {
                expected: n,
                got: f.nrows(),
            });
        }
        let d = orthonormality_defect(&f, &g);
        if d > FRAME_TOL {
            return Err(GeomError::NotOrthonormal(d));
        }
        if f.determinant() <= 0.0 {
            return Err(GeomError::DegenerateFrame("frame is negatively oriented".into()));
        }
        Ok(Self {
            x: DVector::from_column_slice(x),
            f,
        })
    }

    pub fn column(&self, j: usize) -> TangentAtPoint {
        TangentAtPoint {
            x: self.x.clone(),
            v: self.f.column(j).into_owned(),
        }
    }
}

/// `max |fᵀ g f − I|`.
pub fn orthonormality_defect(f: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let n = f.ncols();
    (f.transpose() * g * f - DMatrix::identity(n, n)).amax()
}

/// Gram–Schmidt of the seed columns against `g(x)`, flipping the last
/// vector when needed so the result is positively oriented.
pub fn orthonormal_frame_at(chart: &ChartMetric, x: &[f64], seed: &DMatrix<f64>) -> Result<FramePoint> {
    let g = chart.metric(x)?;
    let n = chart.dim();
    if seed.nrows() != n || seed.ncols() != n {
        return Err(GeomError::Dimension {
            expected: n,
            got: seed.ncols(),
        });
    }
    let scale = seed.amax().max(1e-300);
    let mut f = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut v = seed.column(j).into_owned();
        for _ in 0..2 {
            for k in 0..j {
                let fk = f.column(k).into_owned();
                let c = (fk.transpose() * &g * &v)[0];
                v -= fk * c;
            }
        }
        let nv = (v.transpose() * &g * &v)[0].sqrt();
        if !(nv > 1e-10 * scale) {
            return Err(GeomError::DegenerateFrame(format!(
                "seed column {j} is linearly dependent on the previous ones"
            )));
        }
        f.set_column(j, &(v / nv));
    }
    if f.determinant() < 0.0 {
        let last = -f.column(n - 1).into_owned();
        f.set_column(n - 1, &last);
    }
    FramePoint::new(chart, x, f)
}

/// Polar re-orthonormalisation of a drifted frame against `g`: with
/// `g = C Cᵀ`, `h = Cᵀ f` is replaced by `h (hᵀh)^{-1/2}`.
pub fn so_projection(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.ncols();
    let defect = orthonormality_defect(f, g);
    if !(defect <= 0.25) {
        return Err(GeomError::DegenerateFrame(format!(
            "frame too far from orthonormal for projection (defect {defect:e})"
        )));
    }
    let c = g
        .clone()
        .cholesky()
        .ok_or_else(|| GeomError::DegenerateFrame("metric not positive definite".into()))?
        .l();
    let h = c.transpose() * f;
    let eig = (h.transpose() * &h).symmetric_eigen();
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let p = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let u = h * p;
    let out = c
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| GeomError::DegenerateFrame("singular Cholesky factor".into()))?;
    debug_assert_eq!(out.ncols(), n);
    Ok(out)
}
