//! Single-chart Riemannian geometry: metrics, connection, curvature, frames,
//! parallel transport and geodesics.

mod chart;
mod frame;
mod tensors;
mod transport;

pub use chart::{ChartMetric, ChartSpec, FdConfig, MetricDerivFn, MetricFn, MetricSecondFn, Profile};
pub use frame::{
    orthonormal_frame_at, orthonormality_defect, so_projection, FramePoint, TangentAtPoint, FRAME_TOL,
};
pub use tensors::{
    christoffel, christoffel_fd, curvature_form, curvature_form_in_frame, flat, gauss_curvature,
    gauss_curvature_gradient, riemann, sharp, Christoffel, Riemann,
};
pub use transport::{
    geodesic_flow, parallel_transport, parallel_transport_columns, BaseCurve, FnCurve, GeodesicRun,
    SampledCurve, TransportRun,
};
