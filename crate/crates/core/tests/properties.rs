//! Randomized invariants over the distance primitives, the assignment
//! solver, and the serialization layer.

use morphdiff::assignment::min_cost_assignment;
use morphdiff::energy::chamfer;
use morphdiff::io::{load_shape, save_shape};
use morphdiff::metrics::emd;
use morphdiff::shape::{Shape, Vec3};
use proptest::prelude::*;

fn cloud_strategy(max_len: usize) -> impl Strategy<Value = Shape> {
    prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64), 1..max_len)
        .prop_map(|pts| {
            Shape::point_cloud(pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chamfer_is_symmetric_and_zero_on_self(p in cloud_strategy(24), q in cloud_strategy(24)) {
        prop_assert_eq!(chamfer(&p, &q).unwrap(), chamfer(&q, &p).unwrap());
        prop_assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_is_translation_invariant(p in cloud_strategy(20), q in cloud_strategy(20),
                                        tx in -10.0..10.0f64, ty in -10.0..10.0f64) {
        let t = Vec3::new(tx, ty, 0.5);
        let shift = |s: &Shape| s.with_vertices(s.vertices.iter().map(|v| v + t).collect());
        let base = chamfer(&p, &q).unwrap();
        let moved = chamfer(&shift(&p), &shift(&q)).unwrap();
        let scale = base.abs().max(1.0);
        prop_assert!((base - moved).abs() <= 1e-9 * scale,
            "chamfer moved from {base} to {moved} under translation");
    }

    #[test]
    fn emd_is_symmetric_and_bounds_the_mean_pairing(p in cloud_strategy(12)) {
        // compare against an equally sized second cloud
        let q = Shape::point_cloud(p.vertices.iter().map(|v| v + Vec3::new(1.0, -2.0, 3.0)).collect());
        let d_pq = emd(&p, &q).unwrap();
        let d_qp = emd(&q, &p).unwrap();
        prop_assert!((d_pq - d_qp).abs() < 1e-9);
        // the optimum can never beat zero or exceed the identity pairing
        let identity: f64 = p.vertices.iter().zip(&q.vertices)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>() / p.len() as f64;
        prop_assert!(d_pq >= 0.0 && d_pq <= identity + 1e-9);
    }

    #[test]
    fn assignment_solver_returns_a_permutation_no_worse_than_identity(
        flat in prop::collection::vec(0.0..100.0f64, 1..=36)
    ) {
        let n = (flat.len() as f64).sqrt() as usize;
        prop_assume!(n >= 1);
        let cost = &flat[..n * n];
        let (assign, total) = min_cost_assignment(cost, n);
        let mut seen = vec![false; n];
        for &c in &assign {
            prop_assert!(!seen[c], "column {c} assigned twice");
            seen[c] = true;
        }
        let identity: f64 = (0..n).map(|i| cost[i * n + i]).sum();
        prop_assert!(total <= identity + 1e-9);
    }

    #[test]
    fn shape_text_round_trip_stays_within_tolerance(p in cloud_strategy(16)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.xyz");
        save_shape(&p, &path).unwrap();
        let back = load_shape(&path).unwrap();
        prop_assert_eq!(back.len(), p.len());
        for (a, b) in p.vertices.iter().zip(&back.vertices) {
            prop_assert!((a - b).norm() < 1e-6);
        }
    }
}
