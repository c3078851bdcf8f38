use multiflag::arm_model::{gamma, gamma_inverse, ArmDims};
use multiflag::dynamics::{velocity_report_at, ArmState, ControlValue};
use multiflag::flag_verifier::{classify_point, BracketEngine, DEFAULT_BRACKET_STEP};
use multiflag::hyperspherical::{jacobian, jacobian_determinant, phi, phi_inverse, Angles};
use multiflag::sampling::{random_orthogonal, RegularSampling};
use multiflag::sweep::{sample_config, sample_rng, SampleKind};
use multiflag::vector_fields::{ArmPoint, FieldId};
use proptest::prelude::*;
use std::f64::consts::PI;

fn dims_strategy() -> impl Strategy<Value = ArmDims> {
    (1usize..=4, 0usize..=4).prop_map(|(k, n)| ArmDims::new(k, n).unwrap())
}

fn interior_angles(k: usize) -> impl Strategy<Value = Vec<f64>> {
    (
        prop::collection::vec(0.01..PI - 0.01, k - 1),
        -PI + 0.01..PI - 0.01,
    )
        .prop_map(|(mut head, last)| {
            head.push(last);
            head
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chart_round_trip((k, theta) in (1usize..=6).prop_flat_map(|k| (Just(k), interior_angles(k)))) {
        let angles = Angles::new(theta.clone()).unwrap();
        let z = phi(&angles);
        prop_assert!((z.as_vector().norm() - 1.0).abs() < 1e-14);
        let back = phi_inverse(&z).unwrap();
        for (j, (a, b)) in back.as_slice().iter().zip(&theta).enumerate() {
            let gap = if j + 1 == k { (a - b).rem_euclid(2.0 * PI) } else { a - b };
            let gap = gap.min((2.0 * PI - gap).abs()).abs();
            prop_assert!(gap < 1e-9, "{a} vs {b}, k = {k}");
        }
    }

    #[test]
    fn determinant_closed_form((_k, theta) in (1usize..=6).prop_flat_map(|k| (Just(k), interior_angles(k))), rho in 0.1f64..5.0) {
        let angles = Angles::new(theta).unwrap();
        let numeric = jacobian(rho, &angles).determinant();
        let closed = jacobian_determinant(rho, &angles);
        prop_assert!((numeric - closed).abs() <= 1e-10 * numeric.abs().max(1e-300));
    }

    #[test]
    fn tangent_part_and_cosine_are_complementary(dims in dims_strategy(), seed in any::<u64>()) {
        let q = sample_config(dims, SampleKind::Uniform, seed, 0);
        let p = ArmPoint::from_config(&q);
        for i in 1..=dims.n {
            let z = p.z_embedded(i);
            let total = z.norm_squared() + p.a(i).powi(2);
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn x_zero_recursion(dims in dims_strategy(), seed in any::<u64>()) {
        let q = sample_config(dims, SampleKind::Uniform, seed, 0);
        let p = ArmPoint::from_config(&q);
        for m in 1..=dims.n {
            let rec = p.z_embedded(m) + p.x_zero_embedded(m - 1) * p.a(m);
            prop_assert!((rec - p.x_zero_embedded(m)).amax() < 1e-12);
        }
        for r in 0..=dims.n {
            for j in r..=dims.n {
                for m in j..=dims.n {
                    prop_assert!((p.f(r, m) - p.f(r, j) * p.f(j, m)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gamma_round_trip(dims in dims_strategy(), seed in any::<u64>()) {
        let q = sample_config(dims, SampleKind::Uniform, seed, 0);
        let back = gamma(&gamma_inverse(&q)).unwrap();
        prop_assert!((back.x0() - q.x0()).amax() < 1e-12);
        for s in 0..dims.segments() {
            prop_assert!((back.segment(s) - q.segment(s)).amax() < 1e-12);
        }
    }

    #[test]
    fn rotations_preserve_classification(dims in dims_strategy(), seed in any::<u64>(), singular in any::<bool>()) {
        let kind = if singular && dims.n >= 1 {
            SampleKind::Singular { index: 1 + (seed as usize) % dims.n }
        } else {
            SampleKind::Regular(RegularSampling::default())
        };
        let q = sample_config(dims, kind, seed, 0);
        let r = random_orthogonal(&mut sample_rng(seed, 1), dims.space());
        let rotated = q.transformed(&r).unwrap();
        for (a, b) in q.a_values().iter().zip(rotated.a_values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(classify_point(&q, 1e-9), classify_point(&rotated, 1e-9));
    }

    #[test]
    fn velocity_cascade_holds(dims in dims_strategy(), seed in any::<u64>(), vn in -2.0f64..2.0) {
        let q = sample_config(dims, SampleKind::Uniform, seed, 0);
        let u = ControlValue::new(vn, vec![0.3; dims.k]);
        let r = velocity_report_at(&q, 0.0, &u).unwrap();
        prop_assert!(r.cascade_residual < 1e-12);
        prop_assert!((r.v[dims.n] - vn).abs() < 1e-12);
        let xdot = q.joint_velocities(&u).unwrap();
        for i in 0..=dims.n {
            let along = q.segment(i) * xdot[i].dot(q.segment(i));
            prop_assert!((&xdot[i] - along).amax() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn brackets_are_antisymmetric(seed in any::<u64>()) {
        let dims = ArmDims::new(2, 2).unwrap();
        let q = sample_config(dims, SampleKind::Regular(RegularSampling::default()), seed, 0);
        let fresh = || BracketEngine::centered(&q, DEFAULT_BRACKET_STEP).unwrap();
        let pairs = [
            (FieldId::XZero(2), FieldId::XTangent { m: 2, i: 1 }),
            (FieldId::XZero(1), FieldId::XZero(2)),
            (FieldId::XTangent { m: 1, i: 2 }, FieldId::XZero(2)),
        ];
        for (x, y) in pairs {
            let xy = fresh().field_bracket(x, y).unwrap();
            let yx = fresh().field_bracket(y, x).unwrap();
            prop_assert!((xy + yx).amax() < 1e-8);
        }
    }
}
