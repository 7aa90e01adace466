use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

use rope_core::geometry::{fps_select, project, unproject, CameraIntrinsics, Landmark2D, PointCloud, Pose};
use rope_core::metrics::{add_distance, adds_distance, auc, coherence};
use rope_core::oba::{apply_oba, patch_grid, BBox, ImageBuffer, ObaConfig};

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (vec3(3.0), vec3(200.0)).prop_map(|(w, t)| Pose::from_axis_angle(&w, t))
}

fn cloud(symmetric: bool) -> impl Strategy<Value = PointCloud> {
    proptest::collection::vec(vec3(80.0), 1..60).prop_map(move |pts| PointCloud::new(pts, symmetric))
}

proptest! {
    #[test]
    fn inverse_composes_to_identity(a in pose(), p in vec3(100.0)) {
        let back = a.then(&a.inverse()).transform_point(&p);
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn projection_inverts_unprojection(p in vec3(100.0), depth in 300.0f64..2000.0) {
        let intr = CameraIntrinsics::new(572.4, 573.6, 325.3, 242.0).unwrap();
        let pc = Vector3::new(p.x, p.y, depth);
        let px = project(&[pc], &Pose::identity(), &intr).unwrap()[0];
        prop_assert!((unproject(&px, depth, &intr) - pc).norm() < 1e-9);
    }

    #[test]
    fn adds_never_exceeds_add(c in cloud(true), a in pose(), b in pose()) {
        let add = add_distance(&a, &b, &c).unwrap().value;
        let adds = adds_distance(&a, &b, &c).unwrap().value;
        prop_assert!(adds <= add + 1e-9);
    }

    #[test]
    fn add_is_symmetric_and_zero_on_self(c in cloud(false), a in pose(), b in pose()) {
        prop_assert_eq!(add_distance(&a, &a, &c).unwrap().value, 0.0);
        let ab = add_distance(&a, &b, &c).unwrap().value;
        let ba = add_distance(&b, &a, &c).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
    }

    #[test]
    fn add_invariant_under_shared_motion(c in cloud(false), a in pose(), b in pose(), g in pose()) {
        let base = add_distance(&a, &b, &c).unwrap().value;
        let moved = add_distance(&a.then(&g), &b.then(&g), &c).unwrap().value;
        prop_assert!((base - moved).abs() <= 1e-8 * base.max(1.0));
    }

    #[test]
    fn auc_bounded_and_monotone(d in proptest::collection::vec(0.0f64..200.0, 1..40), i in any::<prop::sample::Index>(), shrink in 0.0f64..1.0) {
        let a = auc(&d, 100.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let mut better = d.clone();
        let k = i.index(d.len());
        better[k] *= shrink;
        prop_assert!(auc(&better, 100.0).unwrap() >= a - 1e-15);
    }

    #[test]
    fn coherence_residuals_sum_to_zero(errs in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..30)) {
        let gt: Vec<Landmark2D> = (0..errs.len()).map(|i| Landmark2D::new(i, 10.0 * i as f64, 5.0 * i as f64)).collect();
        let pred: Vec<Landmark2D> = gt
            .iter()
            .zip(&errs)
            .map(|(g, (dx, dy))| Landmark2D::new(g.index, g.coords.x + dx, g.coords.y + dy))
            .collect();
        let c = coherence(&pred, &gt).unwrap();
        let sum: Vector2<f64> = pred.iter().zip(&gt).map(|(p, g)| p.coords - g.coords - c.mean_error_vector).sum();
        prop_assert!(sum.norm() < 1e-9);
        prop_assert!(c.incoherence.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn fps_picks_distinct_points(c in cloud(false), k in 1usize..10) {
        prop_assume!(k <= c.len());
        let picks = fps_select(&c, k).unwrap();
        prop_assert_eq!(picks.len(), k);
        for (i, a) in picks.iter().enumerate() {
            prop_assert_eq!(a.index, i);
            prop_assert!(c.points.contains(&a.coords));
            for b in &picks[..i] {
                prop_assert!(a.coords != b.coords || c.points.iter().filter(|p| **p == a.coords).count() > 1);
            }
        }
    }

    #[test]
    fn oba_blacks_out_and_keeps_size(
        w in 8usize..48, h in 8usize..48, seed in any::<u64>(),
        fx in 0.0f64..0.5, fy in 0.0f64..0.5, fw in 0.3f64..0.5, fh in 0.3f64..0.5,
    ) {
        let img = ImageBuffer::filled(w, h, [200, 100, 50]).unwrap();
        let x0 = (fx * w as f64) as usize;
        let y0 = (fy * h as f64) as usize;
        let bbox = BBox::new(x0, y0, x0 + ((fw * w as f64) as usize).max(4), y0 + ((fh * h as f64) as usize).max(4));
        let out = apply_oba(&img, &bbox, &ObaConfig::default().with_seed(seed)).unwrap();
        prop_assert_eq!((out.width(), out.height()), (w, h));
        for y in 0..h {
            for x in 0..w {
                if !bbox.contains(x, y) {
                    prop_assert_eq!(out.pixel(x, y), [0, 0, 0]);
                }
            }
        }
    }

    #[test]
    fn patch_grid_tiles_bbox(x0 in 0usize..20, y0 in 0usize..20, w in 4usize..40, h in 4usize..40, r in 1usize..5, c in 1usize..5) {
        prop_assume!(r <= h && c <= w);
        let bbox = BBox::new(x0, y0, x0 + w, y0 + h);
        let patches = patch_grid(&bbox, r, c);
        prop_assert_eq!(patches.len(), r * c);
        let area: usize = patches.iter().map(|p| p.width() * p.height()).sum();
        prop_assert_eq!(area, bbox.width() * bbox.height());
    }
}
