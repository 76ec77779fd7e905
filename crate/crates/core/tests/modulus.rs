use std::f64::consts::PI;

use proptest::prelude::*;
use qcurve_core::{discrete_modulus, AxisBox, GridDomain, Mask, PathFamily, Selector};

fn rect_family(lo: [f64; 2], hi: [f64; 2], cells: [usize; 2], mask: Option<Mask>) -> PathFamily {
    let grid = GridDomain::new(AxisBox::new(lo.to_vec(), hi.to_vec()).unwrap(), cells.to_vec(), mask).unwrap();
    PathFamily::on_grid(grid, Selector::parse("left-edge").unwrap(), Selector::parse("right-edge").unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Height over width, the conformal modulus of a rectangle between its vertical sides.
    #[test]
    fn rectangle_modulus_is_height_over_width(w in 0.5f64..3.0, h in 0.5f64..3.0) {
        let fam = rect_family([0.0, 0.0], [w, h], [24, 24], None);
        let res = discrete_modulus(&fam, 2.0, 1e-3).unwrap();
        prop_assert!(res.lower_bound <= res.modulus * (1.0 + 1e-9));
        prop_assert!((res.modulus - h / w).abs() <= 0.03 * h / w, "{} vs {}", res.modulus, h / w);
    }

    /// With p = n the modulus is invariant under dilation and translation.
    #[test]
    fn conformal_modulus_is_dilation_invariant(s in 0.2f64..5.0, t in -3.0f64..3.0) {
        let base = discrete_modulus(&rect_family([0.0, 0.0], [2.0, 1.0], [16, 16], None), 2.0, 1e-4).unwrap().modulus;
        let scaled = discrete_modulus(&rect_family([t, t], [t + 2.0 * s, t + s], [16, 16], None), 2.0, 1e-4).unwrap().modulus;
        prop_assert!((scaled - base).abs() <= 1e-3 * base);
    }

    /// For p ≠ n, `mod_p(sΓ) = s^{n−p} mod_p(Γ)`.
    #[test]
    fn p_modulus_scaling_law(s in 0.5f64..2.0, p in 1.5f64..4.0) {
        let base = discrete_modulus(&rect_family([0.0, 0.0], [1.0, 1.0], [12, 12], None), p, 1e-4).unwrap().modulus;
        let scaled = discrete_modulus(&rect_family([0.0, 0.0], [s, s], [12, 12], None), p, 1e-4).unwrap().modulus;
        let expected = s.powf(2.0 - p) * base;
        prop_assert!((scaled - expected).abs() <= 2e-3 * expected, "{} vs {}", scaled, expected);
    }

    /// Enlarging the region keeps every path and adds new ones.
    #[test]
    fn modulus_is_monotone_in_the_region(cut in 0.1f64..0.45) {
        let full = rect_family([0.0, 0.0], [1.0, 1.0], [16, 16], None);
        let band = rect_family(
            [0.0, 0.0],
            [1.0, 1.0],
            [16, 16],
            Some(Mask::Box { lo: vec![0.0, cut], hi: vec![1.0, 1.0 - cut] }),
        );
        let a = discrete_modulus(&band, 2.0, 1e-4).unwrap().modulus;
        let b = discrete_modulus(&full, 2.0, 1e-4).unwrap().modulus;
        prop_assert!(a <= b * (1.0 + 1e-3), "{} > {}", a, b);
    }
}

#[test]
fn annulus_modulus_approaches_log_formula() {
    let r = 3.0_f64;
    let grid = GridDomain::new(
        AxisBox::new(vec![-r, -r], vec![r, r]).unwrap(),
        vec![48, 48],
        Some(Mask::Annulus { center: vec![0.0, 0.0], inner: 1.0, outer: r }),
    )
    .unwrap();
    let fam = PathFamily::on_grid(
        grid,
        Selector::parse("circle r=1").unwrap(),
        Selector::parse(&format!("circle r={r}")).unwrap(),
    )
    .unwrap();
    let res = discrete_modulus(&fam, 2.0, 1e-3).unwrap();
    let exact = 2.0 * PI / r.ln();
    assert!((res.modulus - exact).abs() < 0.10 * exact, "{} vs {exact}", res.modulus);
}

#[test]
fn three_dimensional_slab_modulus() {
    // mod_3 between the faces x = 0 and x = 1 of [0,1]×[0,1]²: area / length² = 1
    let grid = GridDomain::uniform(AxisBox::unit(3), 8).unwrap();
    let fam = PathFamily::on_grid(grid, Selector::parse("left-edge").unwrap(), Selector::parse("right-edge").unwrap())
        .unwrap();
    let res = discrete_modulus(&fam, 3.0, 1e-3).unwrap();
    assert!((res.modulus - 1.0).abs() < 0.05, "{}", res.modulus);
}
