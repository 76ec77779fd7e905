use nalgebra::DMatrix;
use proptest::prelude::*;
use qcurve_core::{
    cb_jacobian, differential, distortion_scan, operator_norm, pointwise_distortion, AxisBox, ConstantForm, Distortion,
    GridDomain, Jet, MapSpec,
};

fn unit_box() -> AxisBox {
    AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// `⋆f*ω ≤ comass(ω) |Df|ⁿ`, so wherever the pullback is positive `K ≥ 1`.
    #[test]
    fn distortion_is_at_least_one(entries in prop::collection::vec(-2.0f64..2.0, 6)) {
        let df = DMatrix::from_row_slice(3, 2, &entries);
        let form = ConstantForm::standard(2, 3).unwrap();
        let jet = Jet::from_matrix(vec![0.0, 0.0], df);
        match pointwise_distortion(&form, 1.0, &jet).unwrap() {
            Distortion::Finite(k) => prop_assert!(k >= 1.0 - 1e-12),
            Distortion::Degenerate => {}
        }
    }

    /// Hadamard: the area factor never exceeds the product of the singular values' max.
    #[test]
    fn cb_jacobian_is_bounded_by_operator_norm_power(entries in prop::collection::vec(-2.0f64..2.0, 8)) {
        let df = DMatrix::from_row_slice(4, 2, &entries);
        prop_assert!(cb_jacobian(&df).unwrap() <= operator_norm(&df).powi(2) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn counterexample_differential_matches_finite_differences(x1 in -0.9f64..0.9, x2 in -0.9f64..0.9) {
        let map = MapSpec::counterexample(unit_box()).unwrap();
        let exact = map.analytic_jacobian(&[x1, x2]).unwrap();
        let fd = map.fd_jacobian(&[x1, x2], 1e-5);
        prop_assert!((exact - fd).amax() < 1e-8);
    }

    /// For `(e^{x₁} cos x₂, e^{x₁} sin x₂, φ(x₂) e^{x₁})` the pullback of `dy₁∧dy₂` is
    /// `e^{2x₁}`, so `K = σ_max(Df)² / e^{2x₁}`, bounded by `2 + (φ + φ′)²`.
    #[test]
    fn counterexample_distortion_closed_form(x1 in -0.9f64..0.9, x2 in -0.9f64..0.9) {
        let map = MapSpec::counterexample(unit_box()).unwrap();
        let phi = map.phi().unwrap();
        let (p, dp) = (phi.value(x2), phi.derivative(x2));
        let e = x1.exp();
        let (c, s) = (x2.cos(), x2.sin());
        let df = DMatrix::from_row_slice(3, 2, &[e * c, -e * s, e * s, e * c, p * e, dp * e]);
        let op = df.singular_values().max();
        let k_oracle = op * op / (e * e);
        let jet = differential(&map, &[x1, x2], None).unwrap();
        let k = pointwise_distortion(&ConstantForm::standard(2, 3).unwrap(), 1.0, &jet).unwrap().value().unwrap();
        prop_assert!((k - k_oracle).abs() < 1e-9 * k_oracle);
        prop_assert!(k <= 2.0 + (p + dp) * (p + dp));
    }
}

#[test]
fn linear_map_distortion_is_the_singular_value_ratio() {
    // diag(3, 1): ⋆f*ω = 3, |Df|² = 9, K = 3
    let b = unit_box();
    let map = MapSpec::linear(vec![vec![3.0, 0.0], vec![0.0, 1.0]], b.clone()).unwrap();
    let report =
        distortion_scan(&map, &ConstantForm::standard(2, 2).unwrap(), &GridDomain::uniform(b, 8).unwrap()).unwrap();
    assert!((report.ess_sup_k - 3.0).abs() < 1e-12);
    assert_eq!(report.hadamard_violations, 0);
    assert!((report.empirical_c - 1.0).abs() < 1e-12);
}

#[test]
fn orientation_reversing_map_is_degenerate_everywhere() {
    let b = unit_box();
    let map = MapSpec::linear(vec![vec![0.0, 1.0], vec![1.0, 0.0]], b.clone()).unwrap();
    let res = distortion_scan(&map, &ConstantForm::standard(2, 2).unwrap(), &GridDomain::uniform(b, 4).unwrap());
    assert!(res.is_err());
}
