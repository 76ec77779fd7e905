use nalgebra::DMatrix;
use proptest::prelude::*;
use qcurve_core::{comass, ComassBudget, ConstantForm};

fn form_strategy() -> impl Strategy<Value = ConstantForm> {
    // 2-forms on R^4: six coefficients in a fixed index order
    prop::collection::vec(-3.0f64..3.0, 6).prop_filter_map("zero form", |c| {
        let idx = [[1, 2], [1, 3], [1, 4], [2, 3], [2, 4], [3, 4]];
        let coeffs: Vec<(Vec<usize>, f64)> = idx.iter().zip(&c).map(|(i, &v)| (i.to_vec(), v)).collect();
        if c.iter().all(|v| v.abs() < 1e-3) {
            return None;
        }
        ConstantForm::new(2, 4, coeffs).ok()
    })
}

/// Closed form for 2-forms on R⁴: with `ω = ω⁺ + ω⁻` split into self-dual and
/// anti-self-dual parts, the comass is `(|ω⁺| + |ω⁻|) / √2` in the coefficient norm.
fn comass_2form_r4(c: &[f64; 6]) -> f64 {
    let [c12, c13, c14, c23, c24, c34] = *c;
    let plus = ((c12 + c34).powi(2) + (c13 - c24).powi(2) + (c14 + c23).powi(2)).sqrt();
    let minus = ((c12 - c34).powi(2) + (c13 + c24).powi(2) + (c14 - c23).powi(2)).sqrt();
    (plus + minus) / 2.0
}

#[test]
fn comass_of_kahler_and_mixed_forms_matches_closed_form() {
    for c in [
        [1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0, 0.0, 0.0, -1.0],
        [2.0, 0.5, 0.0, 0.0, 0.0, 1.0],
        [1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
    ] {
        let idx = [[1, 2], [1, 3], [1, 4], [2, 3], [2, 4], [3, 4]];
        let form = ConstantForm::new(2, 4, idx.iter().zip(&c).map(|(i, &v)| (i.to_vec(), v))).unwrap();
        let est = comass(&form, &ComassBudget::default());
        let exact = comass_2form_r4(&c);
        assert!((est.value - exact).abs() < 1e-6 * exact.max(1.0), "{c:?}: {} vs {exact}", est.value);
    }
}

#[test]
fn simple_forms_in_higher_dimensions() {
    let est = comass(&ConstantForm::simple(3, 5, vec![1, 3, 5], -2.5).unwrap(), &ComassBudget::default());
    assert_eq!(est.value, 2.5);
    assert!(est.exact);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn comass_lies_between_largest_coefficient_and_euclidean_norm(form in form_strategy()) {
        let est = comass(&form, &ComassBudget::default());
        let largest = form.coefficients().map(|(_, c)| c.abs()).fold(0.0, f64::max);
        prop_assert!(est.value >= largest - 1e-12);
        prop_assert!(est.value <= est.upper_bound + 1e-12);
        prop_assert!((est.upper_bound - form.coefficient_norm()).abs() < 1e-12);
    }

    #[test]
    fn comass_agrees_with_closed_form_in_r4(form in form_strategy()) {
        let idx = [[1, 2], [1, 3], [1, 4], [2, 3], [2, 4], [3, 4]];
        let mut c = [0.0; 6];
        for (k, i) in idx.iter().enumerate() {
            c[k] = form.coefficients().find(|(m, _)| m.indices() == i).map_or(0.0, |(_, v)| v);
        }
        let exact = comass_2form_r4(&c);
        let est = comass(&form, &ComassBudget::default());
        prop_assert!(est.converged);
        prop_assert!((est.value - exact).abs() <= 1e-6 * exact, "{} vs {}", est.value, exact);
    }

    #[test]
    fn comass_is_absolutely_homogeneous(form in form_strategy(), s in -4.0f64..4.0) {
        prop_assume!(s.abs() > 1e-2);
        let a = comass(&form, &ComassBudget::default()).value;
        let b = comass(&form.scaled(s).unwrap(), &ComassBudget::default()).value;
        prop_assert!((b - s.abs() * a).abs() <= 1e-6 * b.max(1.0));
    }

    #[test]
    fn evaluation_is_alternating_and_bounded_by_comass(form in form_strategy(), u in prop::collection::vec(-1.0f64..1.0, 8)) {
        let m = DMatrix::from_column_slice(4, 2, &u);
        let mut swapped = m.clone();
        swapped.swap_columns(0, 1);
        let a = form.evaluate(&m).unwrap();
        prop_assert!((a + form.evaluate(&swapped).unwrap()).abs() < 1e-12);
        // |ω(u, v)| ≤ comass · area of the parallelogram
        let gram = m.transpose() * &m;
        let area = gram.determinant().max(0.0).sqrt();
        prop_assert!(a.abs() <= comass_2form_r4_of(&form) * area + 1e-9);
    }
}

fn comass_2form_r4_of(form: &ConstantForm) -> f64 {
    let idx = [[1, 2], [1, 3], [1, 4], [2, 3], [2, 4], [3, 4]];
    let mut c = [0.0; 6];
    for (k, i) in idx.iter().enumerate() {
        c[k] = form.coefficients().find(|(m, _)| m.indices() == i).map_or(0.0, |(_, v)| v);
    }
    comass_2form_r4(&c)
}
