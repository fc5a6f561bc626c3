mod common;

use filver::numcore::{gaussian_kl, reparam_with_noise};

#[test]
fn kl_matches_quadrature() {
    let rep = common::kl_checks(20, 3);
    assert!(rep.max_abs_err <= 1e-6, "{rep:?}");
}

#[test]
fn kl_vanishes_only_at_standard_normal() {
    let rep = common::kl_checks(20, 4);
    assert!(rep.zero_at_standard && rep.positive_elsewhere, "{rep:?}");
}

#[test]
fn quadrature_oracle_is_sane() {
    // closed form for one dimension, written out independently
    let (m, s) = (0.8_f64, 0.6_f64);
    let closed = 0.5 * (m * m + s * s - 1.0) - s.ln();
    assert!((common::kl_quadrature_1d(m, s) - closed).abs() < 1e-9);
}

#[test]
fn kl_sums_over_dimensions() {
    let a = gaussian_kl(&[0.3], &[-0.2]);
    let b = gaussian_kl(&[-1.1], &[0.4]);
    assert!((gaussian_kl(&[0.3, -1.1], &[-0.2, 0.4]) - (a + b)).abs() < 1e-15);
}

#[test]
fn reparam_is_affine_in_noise() {
    let z = reparam_with_noise(&[1.0, -2.0], &[0.0, 2.0_f64.ln()], &[0.5, -1.0]);
    assert_eq!(z, vec![1.5, -4.0]);
}

#[test]
fn reparam_moments_within_three_standard_errors() {
    let (zm, zv) = common::reparam_z_scores(100_000, 9);
    assert!(zm < 3.0 && zv < 3.0, "z-scores mean {zm:.2} variance {zv:.2}");
}
