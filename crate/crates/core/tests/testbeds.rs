use nalgebra::DMatrix;
use rollgeo::geom::{curvature_form, gauss_curvature, orthonormal_frame_at, riemann, ChartMetric};
use rollgeo::submersion::{
    connection_coefficients, verify_projection, CotangentState, FrameBundleTestbed, RiemannianHamiltonian,
    SubmersionTestbed,
};

fn sqrt_det(chart: &ChartMetric, x: &[f64]) -> f64 {
    chart.metric(x).unwrap().determinant().sqrt()
}

/// so(2) generator of the fiber rotation `f ↦ f R(ψ)`.
fn sigma(a: &DMatrix<f64>) -> f64 {
    a[(1, 0)]
}

#[test]
fn frame_bundle_curvature_matches_levi_civita_curvature() {
    let pairs = [
        (ChartMetric::sphere(1.0), ChartMetric::euclidean(2), [1.1, 0.4], [0.3, -0.2]),
        (ChartMetric::sphere(1.0), ChartMetric::sphere(2.0), [0.9, 0.2], [1.3, 0.5]),
        (ChartMetric::paraboloid(0.5), ChartMetric::hyperbolic_disk(2.0), [0.4, -0.3], [0.1, 0.2]),
    ];
    for (m, mh, x, xh) in pairs {
        let tb = FrameBundleTestbed::new(m.clone(), mh.clone()).unwrap();
        let y = [0.35, xh[0], xh[1], -0.6];
        let cc = connection_coefficients(&tb, &x, &y).unwrap();
        // ψ channel: −σ(Ω(∂₁, ∂₂)) on M
        let f = orthonormal_frame_at(&m, &x, &DMatrix::identity(2, 2)).unwrap().f;
        let om = curvature_form(&riemann(&m, &x).unwrap(), &f, &[1.0, 0.0], &[0.0, 1.0]);
        let want = -sigma(&om);
        let k = gauss_curvature(&m, &x).unwrap();
        assert!((want - k * sqrt_det(&m, &x)).abs() < 1e-8);
        let got = cc.curvature[0][(0, 1)];
        assert!((got - want).abs() < 1e-5 * (1.0 + want.abs()), "{} {got} {want}", tb.label());
        // x̂ channels: the distribution is torsion free
        for kappa in [1, 2] {
            assert!(cc.curvature[kappa][(0, 1)].abs() < 1e-5, "{:?}", cc.curvature[kappa]);
        }
        // ψ̂ channel: M̂ curvature pulled back by the isometry q
        let kh = gauss_curvature(&mh, &xh).unwrap();
        let got_h = cc.curvature[3][(0, 1)];
        let want_h = kh * sqrt_det(&m, &x);
        assert!((got_h - want_h).abs() < 1e-5 * (1.0 + want_h.abs()), "{} {got_h} {want_h}", tb.label());
        for kappa in 0..4 {
            let r = &cc.curvature[kappa];
            assert!((r + r.transpose()).amax() < 1e-12);
        }
    }
}

#[test]
fn frame_bundle_projection_agrees_on_sphere_over_plane() {
    let m = ChartMetric::sphere(1.0);
    let tb = FrameBundleTestbed::new(m.clone(), ChartMetric::euclidean(2)).unwrap();
    let h = RiemannianHamiltonian::new(m);
    let p0 = CotangentState::new(&[1.2, 0.3], &[0.2, 0.0, 0.0, 0.1], &[0.6, 0.4], &[0.3, -0.2, 0.5, 0.25]);
    let rep = verify_projection(&tb, &h, &p0, 5.0, 1e-9).unwrap();
    assert!(!rep.truncated);
    assert!(rep.sup_error_lambda <= 1e-6, "{rep:?}");
    assert!(rep.sup_error_beta <= 1e-6, "{rep:?}");
    assert!(rep.sup_error_lift <= 1e-6, "{rep:?}");
    assert!(rep.energy_drift_lifted <= 1e-8, "{rep:?}");
}
