//! Three-point absolute pose (Grunert's formulation).
//!
//! The depth ratios `u = d1 / d0` and `v = d2 / d0` of the three points along
//! their bearing rays satisfy a quartic in `u`; each real root gives one
//! candidate. Roots and depths are polished with Newton steps before the
//! rigid transform is recovered by SVD alignment.

use nalgebra::{Matrix3, Matrix4, Vector3};

/// Real roots of `c[0] + c[1] x + c[2] x^2 + c[3] x^3 + c[4] x^4`.
pub fn solve_quartic(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    let c = c.map(|v| v / scale);
    let degree = (0..5).rev().find(|&i| c[i].abs() > 1e-14).unwrap_or(0);
    if degree == 0 {
        return Vec::new();
    }
    let lead = c[degree];
    // Companion matrix of the monic polynomial.
    let mut comp = Matrix4::zeros();
    for i in 0..degree {
        comp[(0, i)] = -c[degree - 1 - i] / lead;
    }
    for i in 1..degree {
        comp[(i, i - 1)] = 1.0;
    }
    let comp = comp.view((0, 0), (degree, degree)).clone_owned();
    let eig = comp.complex_eigenvalues();

    let eval = |x: f64| {
        let mut p = 0.0;
        let mut dp = 0.0;
        for i in (0..=degree).rev() {
            dp = dp * x + p;
            p = p * x + c[i];
        }
        (p, dp)
    };
    let magnitude = |x: f64| (0..=degree).map(|i| (c[i] * x.powi(i as i32)).abs()).sum::<f64>();

    let mut roots: Vec<f64> = Vec::new();
    for z in eig.iter() {
        if z.im.abs() > 1e-3 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..20 {
            let (p, dp) = eval(x);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            let next = x - step;
            if !next.is_finite() || eval(next).0.abs() > p.abs() {
                break;
            }
            x = next;
            if step.abs() <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        if eval(x).0.abs() <= 1e-8 * magnitude(x).max(1e-300) {
            roots.push(x);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * (1.0 + b.abs()));
    roots
}

/// Rigid transform `camera = R * world + t` best aligning the point sets.
pub fn align_points(world: &[Vector3<f64>], camera: &[Vector3<f64>]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = world.len() as f64;
    let cw = world.iter().sum::<Vector3<f64>>() / n;
    let cc = camera.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (pw, pc) in world.iter().zip(camera) {
        h += (pc - cc) * (pw - cw).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    Some((r, cc - r * cw))
}

/// Newton polishing of the three depths against the inter-point distances.
fn polish_depths(depths: &mut Vector3<f64>, cosines: [f64; 3], dist2: [f64; 3]) {
    // Pairs (0,1), (0,2), (1,2) with their bearing cosines and squared distances.
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let residual = |d: &Vector3<f64>| {
        Vector3::from_fn(|k, _| {
            let (i, j) = pairs[k];
            d[i] * d[i] + d[j] * d[j] - 2.0 * d[i] * d[j] * cosines[k] - dist2[k]
        })
    };
    let mut r = residual(depths);
    for _ in 0..8 {
        let mut jac = Matrix3::zeros();
        for (k, &(i, j)) in pairs.iter().enumerate() {
            jac[(k, i)] = 2.0 * depths[i] - 2.0 * depths[j] * cosines[k];
            jac[(k, j)] = 2.0 * depths[j] - 2.0 * depths[i] * cosines[k];
        }
        let Some(step) = jac.lu().solve(&r) else {
            break;
        };
        let next = *depths - step;
        let r_next = residual(&next);
        if !(r_next.norm() < r.norm()) {
            break;
        }
        *depths = next;
        r = r_next;
    }
}

/// Up to four camera-from-world transforms explaining three bearings.
///
/// `bearings` must be unit vectors. Only solutions with positive depths are
/// returned.
pub fn p3p(world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if a2 == 0.0 || b2 == 0.0 || c2 == 0.0 {
        return Vec::new();
    }
    let cos_alpha = bearings[1].dot(&bearings[2]);
    let cos_beta = bearings[0].dot(&bearings[2]);
    let cos_gamma = bearings[0].dot(&bearings[1]);

    // v = N(u) / D(u) from eliminating the (0,2) and (1,2) constraints.
    let d = (b2 - a2) / c2;
    let e = b2 / c2;
    let num = [1.0 - d, 2.0 * d * cos_gamma, -(1.0 + d)];
    let den = [2.0 * cos_beta, -2.0 * cos_alpha];
    let one_minus_e = [1.0 - e, 2.0 * e * cos_gamma, -e];

    // N^2 - 2 cos_beta N D + (1 - E) D^2 = 0
    let mut quartic = [0.0; 5];
    for i in 0..3 {
        for j in 0..3 {
            quartic[i + j] += num[i] * num[j];
        }
        for j in 0..2 {
            quartic[i + j] -= 2.0 * cos_beta * num[i] * den[j];
        }
    }
    for i in 0..3 {
        for j in 0..2 {
            for k in 0..2 {
                quartic[i + j + k] += one_minus_e[i] * den[j] * den[k];
            }
        }
    }

    let mut out = Vec::new();
    for u in solve_quartic(quartic) {
        let dv = den[0] + den[1] * u;
        if dv.abs() < 1e-12 {
            continue;
        }
        let v = (num[0] + num[1] * u + num[2] * u * u) / dv;
        let k = 1.0 + u * u - 2.0 * u * cos_gamma;
        if k <= 0.0 {
            continue;
        }
        let x = (c2 / k).sqrt();
        let mut depths = Vector3::new(x, u * x, v * x);
        if depths.iter().any(|&z| z <= 0.0) {
            continue;
        }
        polish_depths(&mut depths, [cos_gamma, cos_beta, cos_alpha], [c2, b2, a2]);
        if depths.iter().any(|&z| !(z > 0.0)) {
            continue;
        }
        let camera = [
            bearings[0] * depths[0],
            bearings[1] * depths[1],
            bearings[2] * depths[2],
        ];
        if let Some(sol) = align_points(world, &camera) {
            out.push(sol);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quartic_with_four_roots() {
        // (x - 1)(x + 2)(x - 3)(x + 0.5)
        let roots = solve_quartic([3.0, 3.5, -6.0, -1.5, 1.0]);
        let expected = [-2.0, -0.5, 1.0, 3.0];
        assert_eq!(roots.len(), 4);
        for (r, e) in roots.iter().zip(expected) {
            assert_relative_eq!(*r, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn quartic_without_real_roots() {
        // (x^2 + 1)(x^2 + 4)
        assert!(solve_quartic([4.0, 0.0, 5.0, 0.0, 1.0]).is_empty());
    }

    #[test]
    fn quartic_degenerates_to_lower_degree() {
        // 2x - 4 with vanishing leading terms
        let roots = solve_quartic([-4.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(roots[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn alignment_recovers_transform() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
        let t = Vector3::new(5.0, -3.0, 700.0);
        let world = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(40.0, 0.0, 10.0),
            Vector3::new(0.0, 30.0, -20.0),
        ];
        let cam: Vec<_> = world.iter().map(|p| r * p + t).collect();
        let (r2, t2) = align_points(&world, &cam).unwrap();
        assert_relative_eq!(r2, r, epsilon = 1e-12);
        assert_relative_eq!(t2, t, epsilon = 1e-9);
    }
}
