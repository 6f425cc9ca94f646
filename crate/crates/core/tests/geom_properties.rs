use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rollgeo::geom::{
    curvature_form_in_frame, geodesic_flow, orthonormal_frame_at, parallel_transport_columns, BaseCurve, ChartMetric,
    FnCurve, Profile, TangentAtPoint,
};
use rollgeo::ode::IntegrateOptions;
use rollgeo::submersion::{
    lifted_hamiltonian_flow, nabla_bar_form_transport, verify_projection, CotangentState, FnTestbed,
    FrameBundleTestbed, HeisenbergTestbed, RiemannianHamiltonian,
};

fn catalog(k: usize) -> ChartMetric {
    match k {
        0 => ChartMetric::sphere(1.0),
        1 => ChartMetric::paraboloid(0.5),
        2 => ChartMetric::hyperbolic_disk(2.0),
        3 => ChartMetric::revolution(Profile::Torus),
        _ => ChartMetric::revolution(Profile::Catenoid),
    }
}

// inside every catalog domain, including the unit disk and 0 < x₀ < π
fn interior_point() -> impl Strategy<Value = [f64; 2]> {
    (0.3f64..0.5, -0.3f64..0.3).prop_map(|(a, b)| [a, b])
}

fn small_vector() -> impl Strategy<Value = [f64; 2]> {
    (-0.2f64..0.2, -0.2f64..0.2).prop_map(|(a, b)| [a, b])
}

fn vector() -> impl Strategy<Value = [f64; 2]> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| [a, b])
}

fn speed(chart: &ChartMetric, x: &[f64], v: &[f64]) -> f64 {
    let g = chart.metric(x).unwrap();
    let v = DVector::from_column_slice(v);
    (v.transpose() * g * &v)[0].sqrt()
}

fn length(chart: &ChartMetric, curve: &dyn BaseCurve, samples: usize) -> f64 {
    // composite Simpson
    let (t0, t1) = curve.interval();
    let h = (t1 - t0) / samples as f64;
    let mut s = 0.0;
    for k in 0..=samples {
        let t = t0 + h * k as f64;
        let w = if k == 0 || k == samples {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * speed(chart, curve.point(t).as_slice(), curve.velocity(t).as_slice());
    }
    s * h / 3.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transport_preserves_gram(k in 0usize..5, x0 in interior_point(), v in small_vector()) {
        let chart = catalog(k);
        let curve = FnCurve::line(&x0, &v, 1.0);
        let f0 = orthonormal_frame_at(&chart, &x0, &DMatrix::identity(2, 2)).unwrap().f;
        let tol = 1e-10;
        let run = parallel_transport_columns(&chart, &curve, &f0, &IntegrateOptions::with_tol(tol)).unwrap();
        prop_assert!(!run.truncated());
        for j in 0..=8 {
            let t = j as f64 / 8.0;
            let f = run.at(t);
            let g = chart.metric(curve.point(t).as_slice()).unwrap();
            let drift = (f.transpose() * g * &f - DMatrix::identity(2, 2)).amax();
            prop_assert!(drift <= 10.0 * tol, "{} drift {drift:e}", chart.label);
        }
    }

    #[test]
    fn curvature_form_is_skew(k in 0usize..5, x in interior_point(), a in vector(), b in vector()) {
        let chart = catalog(k);
        let fp = orthonormal_frame_at(&chart, &x, &DMatrix::identity(2, 2)).unwrap();
        let u = TangentAtPoint::new(&chart, &x, &a).unwrap();
        let w = TangentAtPoint::new(&chart, &x, &b).unwrap();
        let om = curvature_form_in_frame(&chart, &fp, &u, &w).unwrap();
        prop_assert!((&om + om.transpose()).norm() <= 1e-10);
    }

    #[test]
    fn sphere_geodesics_beat_perturbed_paths(
        phi in 0.8f64..2.3,
        theta in -1.0f64..1.0,
        v in vector(),
        w in vector(),
        eps in 1e-3f64..0.1,
    ) {
        let chart = ChartMetric::sphere(1.0);
        let x0 = [phi, theta];
        prop_assume!(speed(&chart, &x0, &v) > 0.1);
        let geo = geodesic_flow(&chart, &x0, &v, 1.0, 1e-11).unwrap();
        let (g1, g2) = (geo.clone(), geo.clone());
        let straight = FnCurve::new(2, 0.0, 1.0, move |t| g1.position(t), move |t| g2.velocity(t));
        let (p1, p2) = (geo.clone(), geo);
        let wv = DVector::from_column_slice(&w);
        let wv2 = wv.clone();
        let bent = FnCurve::new(
            2,
            0.0,
            1.0,
            move |t| p1.position(t) + &wv * (eps * (std::f64::consts::PI * t).sin()),
            move |t| p2.velocity(t) + &wv2 * (eps * std::f64::consts::PI * (std::f64::consts::PI * t).cos()),
        );
        prop_assume!((0..=20).all(|k| chart.contains(bent.point(k as f64 / 20.0).as_slice())));
        let (l0, l1) = (length(&chart, &straight, 2000), length(&chart, &bent, 2000));
        prop_assert!(l0 <= l1 + 1e-10, "{l0} {l1}");
    }

    #[test]
    fn form_transport_scales_linearly(
        c in vector(),
        d in vector(),
        y0 in 0.5f64..2.0,
        b0 in -2.0f64..2.0,
        scale in -3.0f64..3.0,
    ) {
        let (c0, c1) = (c[0], c[1]);
        let tb = FnTestbed {
            n: 2,
            nu: 1,
            label: "exponential".into(),
            lift: move |_x: &[f64], y: &[f64]| DMatrix::from_row_slice(1, 2, &[c0 * y[0], c1 * y[0]]),
        };
        // horizontal lift of x = t d: ẏ = y (c·d)
        let r = c0 * d[0] + c1 * d[1];
        let (d0, d1) = (d[0], d[1]);
        let curve = FnCurve::new(
            3,
            0.0,
            1.0,
            move |t| DVector::from_vec(vec![t * d0, t * d1, y0 * (r * t).exp()]),
            move |t| DVector::from_vec(vec![d0, d1, r * y0 * (r * t).exp()]),
        );
        let r1 = nabla_bar_form_transport(&tb, &curve, &[b0], 1e-11, 1e-7).unwrap();
        let r2 = nabla_bar_form_transport(&tb, &curve, &[scale * b0], 1e-11, 1e-7).unwrap();
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let (u, v) = (r1.at(t)[0], r2.at(t)[0]);
            prop_assert!((v - scale * u).abs() <= 1e-10);
            // Γ̄ = c, so ḃ = −(c·d) b
            prop_assert!((u - b0 * (-r * t).exp()).abs() <= 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn heisenberg_projection_within_hundred_tol(
        x in vector(),
        y in -1.0f64..1.0,
        a in vector(),
        b in -1.5f64..1.5,
    ) {
        let tol = 1e-9;
        let h = RiemannianHamiltonian::new(ChartMetric::euclidean(2));
        let p0 = CotangentState::new(&x, &[y], &a, &[b]);
        let rep = verify_projection(&HeisenbergTestbed, &h, &p0, 2.0, tol).unwrap();
        prop_assert!(rep.sup_error_lambda <= 100.0 * tol, "{rep:?}");
        prop_assert!(rep.sup_error_beta <= 100.0 * tol, "{rep:?}");
        prop_assert!(rep.sup_error_lift <= 100.0 * tol, "{rep:?}");
        prop_assert!(rep.energy_drift_lifted <= 10.0 * tol, "{rep:?}");
    }

    #[test]
    fn annihilator_start_follows_base_flow(
        phi in 1.0f64..2.1,
        theta in -1.0f64..1.0,
        a in vector(),
        psi in -3.0f64..3.0,
    ) {
        let tol = 1e-9;
        let m = ChartMetric::sphere(1.0);
        let tb = FrameBundleTestbed::new(m.clone(), ChartMetric::euclidean(2)).unwrap();
        let h = RiemannianHamiltonian::new(m.clone());
        let x0 = [phi, theta];
        let p0 = CotangentState::new(&x0, &[psi, 0.0, 0.0, 0.0], &a, &[0.0; 4]);
        let run = lifted_hamiltonian_flow(&tb, &h, &p0, 1.0, tol).unwrap();
        let v0 = m.metric_inverse(&x0).unwrap() * DVector::from_column_slice(&a);
        let geo = geodesic_flow(&m, &x0, v0.as_slice(), 1.0, 1e-11).unwrap();
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let c = run.cotangent_at(&tb, t).unwrap();
            prop_assert!((&c.x - geo.position(t)).amax() <= 100.0 * tol);
        }
    }
}
