use nalgebra::{Matrix2x4, SMatrix, SVector, Vector3};

use super::{poly, CenteredCorrespondence};
use crate::error::{Error, Result};
use crate::geometry::RadialPose;

type Vec8 = SVector<f64, 8>;

/// Coefficients of a conic in (α, β):
/// `[α², αβ, β², α, β, 1]`.
type Conic = [f64; 6];

/// Minimal 1D radial absolute pose from five correspondences.
///
/// Each correspondence gives one linear radial alignment equation
/// `v × (A X + b) = 0` in the eight entries of `[A | b]`. The 3-dimensional
/// null space is sliced affinely and the two row constraints
/// (`‖r1‖ = ‖r2‖`, `r1 ⟂ r2`) are intersected via a quartic resultant.
/// Returns up to four canonical radial poses; an empty list when every
/// intersection is complex.
pub fn solve_p5p_radial(corrs: &[CenteredCorrespondence]) -> Result<Vec<RadialPose>> {
    if corrs.len() != 5 {
        return Err(Error::Precondition(format!(
            "minimal radial pose needs exactly 5 correspondences, got {}",
            corrs.len()
        )));
    }
    for i in 0..5 {
        for j in i + 1..5 {
            if (corrs[i].point - corrs[j].point).norm() <= 1e-12 {
                return Err(Error::DegenerateConfiguration("repeated 3D point in minimal sample"));
            }
        }
    }

    // Normalize the points for conditioning: X' = (X - m) / s.
    let mean = corrs.iter().map(|c| c.point).sum::<Vector3<f64>>() / 5.0;
    let s = corrs.iter().map(|c| (c.point - mean).norm()).sum::<f64>() / 5.0;
    if !(s > 1e-12) {
        return Err(Error::DegenerateConfiguration("coincident 3D points"));
    }

    let mut m = SMatrix::<f64, 8, 8>::zeros();
    for (k, c) in corrs.iter().enumerate() {
        let x = (c.point - mean) / s;
        let n = c.v.norm();
        if !(n > 0.0) {
            return Err(Error::DegenerateConfiguration("observation at the principal point"));
        }
        let (vx, vy) = (c.v.x / n, c.v.y / n);
        // vx * (r2·X + b2) - vy * (r1·X + b1) = 0
        let row = [-vy * x.x, -vy * x.y, -vy * x.z, -vy, vx * x.x, vx * x.y, vx * x.z, vx];
        for (j, val) in row.iter().enumerate() {
            m[(k, j)] = *val;
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|a, b| svd.singular_values[*b].partial_cmp(&svd.singular_values[*a]).unwrap());
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    if sv[4] <= 1e-10 * sv[0] {
        return Err(Error::DegenerateConfiguration("radial alignment system has rank below 5"));
    }
    let basis: [Vec8; 3] = [
        v_t.row(order[5]).transpose(),
        v_t.row(order[6]).transpose(),
        v_t.row(order[7]).transpose(),
    ];

    let mut candidates = solve_slice(&basis[0], &basis[1], &basis[2]);
    let far = candidates.is_empty() || candidates.iter().any(|(a, b, _)| a.abs().max(b.abs()) > 1e4);
    if far {
        // The pinned coefficient of the true solution may be close to zero.
        candidates.extend(solve_slice(&basis[1], &basis[2], &basis[0]));
    }

    let mut out: Vec<RadialPose> = Vec::new();
    for (_, _, p) in candidates {
        let a_norm = Matrix2x4::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);
        // Undo the point normalization: A = A'/s, b = b' - A' m / s.
        let a_prime = a_norm.fixed_view::<2, 3>(0, 0).into_owned();
        let mut full = Matrix2x4::zeros();
        full.fixed_view_mut::<2, 3>(0, 0).copy_from(&(a_prime / s));
        let b = a_norm.column(3) - a_prime * mean / s;
        full.set_column(3, &b);
        let Some(pose) = RadialPose::from_matrix(&full) else {
            continue;
        };
        let pose = pose.oriented_towards(corrs.iter().map(|c| (&c.point, &c.v)));
        let consistent = corrs.iter().all(|c| {
            let u = pose.project(&c.point);
            let cross = u.x * c.v.y - u.y * c.v.x;
            cross.abs() <= 1e-6 * u.norm() * c.v.norm()
        });
        if !consistent {
            continue;
        }
        let dup = out
            .iter()
            .any(|q| (q.matrix() - pose.matrix()).norm() <= 1e-9 * (1.0 + pose.matrix().norm()));
        if !dup {
            out.push(pose);
        }
    }
    Ok(out)
}

fn conics(p: &Vec8, q: &Vec8, r: &Vec8) -> (Conic, Conic) {
    let r1 = |v: &Vec8| Vector3::new(v[0], v[1], v[2]);
    let r2 = |v: &Vec8| Vector3::new(v[4], v[5], v[6]);
    let (a1, a2, a3) = (r1(p), r1(q), r1(r));
    let (c1, c2, c3) = (r2(p), r2(q), r2(r));
    let eq_norm = [
        a1.dot(&a1) - c1.dot(&c1),
        2.0 * (a1.dot(&a2) - c1.dot(&c2)),
        a2.dot(&a2) - c2.dot(&c2),
        2.0 * (a1.dot(&a3) - c1.dot(&c3)),
        2.0 * (a2.dot(&a3) - c2.dot(&c3)),
        a3.dot(&a3) - c3.dot(&c3),
    ];
    let ortho = [
        a1.dot(&c1),
        a1.dot(&c2) + a2.dot(&c1),
        a2.dot(&c2),
        a1.dot(&c3) + a3.dot(&c1),
        a2.dot(&c3) + a3.dot(&c2),
        a3.dot(&c3),
    ];
    (eq_norm, ortho)
}

fn conic_eval(c: &Conic, a: f64, b: f64) -> f64 {
    c[0] * a * a + c[1] * a * b + c[2] * b * b + c[3] * a + c[4] * b + c[5]
}

fn conic_grad(c: &Conic, a: f64, b: f64) -> (f64, f64) {
    (2.0 * c[0] * a + c[1] * b + c[3], c[1] * a + 2.0 * c[2] * b + c[4])
}

/// Intersections of the two row-constraint conics on the slice
/// `α p + β q + r`. Returns `(α, β, vector)`.
fn solve_slice(p: &Vec8, q: &Vec8, r: &Vec8) -> Vec<(f64, f64, Vec8)> {
    let (k1, k2) = conics(p, q, r);
    // Each conic as a quadratic in β: A β² + B(α) β + C(α).
    let quad = |c: &Conic| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (vec![c[2]], vec![c[4], c[1]], vec![c[5], c[3], c[0]])
    };
    let (a1, b1, c1) = quad(&k1);
    let (a2, b2, c2) = quad(&k2);
    let ac = poly::sub(&poly::mul(&a1, &c2), &poly::mul(&a2, &c1));
    let ab = poly::sub(&poly::mul(&a1, &b2), &poly::mul(&a2, &b1));
    let bc = poly::sub(&poly::mul(&b1, &c2), &poly::mul(&b2, &c1));
    let res = poly::sub(&poly::mul(&ac, &ac), &poly::mul(&ab, &bc));

    let mut out = Vec::new();
    for alpha in poly::real_roots(&res) {
        let den = -poly::eval(&ab, alpha);
        let mut betas = Vec::new();
        let scale = poly::eval(&ac, alpha).abs().max(1.0);
        if den.abs() > 1e-10 * scale {
            betas.push(poly::eval(&ac, alpha) / den);
        } else {
            // Fall back to the roots of the first conic in β.
            let (qa, qb, qc) = (k1[2], k1[1] * alpha + k1[4], k1[0] * alpha * alpha + k1[3] * alpha + k1[5]);
            let disc = qb * qb - 4.0 * qa * qc;
            if qa.abs() > 1e-14 && disc >= 0.0 {
                let sq = disc.sqrt();
                betas.push((-qb + sq) / (2.0 * qa));
                betas.push((-qb - sq) / (2.0 * qa));
            }
        }
        for beta in betas {
            let (mut a, mut b) = (alpha, beta);
            for _ in 0..4 {
                let f1 = conic_eval(&k1, a, b);
                let f2 = conic_eval(&k2, a, b);
                let (g1a, g1b) = conic_grad(&k1, a, b);
                let (g2a, g2b) = conic_grad(&k2, a, b);
                let det = g1a * g2b - g1b * g2a;
                if det.abs() < 1e-300 {
                    break;
                }
                let da = (f1 * g2b - f2 * g1b) / det;
                let db = (g1a * f2 - g2a * f1) / det;
                if !da.is_finite() || !db.is_finite() {
                    break;
                }
                a -= da;
                b -= db;
            }
            if !a.is_finite() || !b.is_finite() {
                continue;
            }
            let v = p * a + q * b + r;
            let err = conic_eval(&k1, a, b).abs() + conic_eval(&k2, a, b).abs();
            if err <= 1e-6 * v.norm_squared() {
                out.push((a, b, v));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{radial_from_full, RigidPose, Rotation};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};

    fn instance(seed: u64) -> (RigidPose, Vec<CenteredCorrespondence>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pose = RigidPose::new(
            Rotation::exp(&Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            )),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..6.0)),
        );
        let f = rng.random_range(200.0..800.0);
        let inv = pose.inverse();
        let corrs = (0..5)
            .map(|_| {
                let xc = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..6.0));
                CenteredCorrespondence {
                    v: Vector2::new(f * xc.x / xc.z, f * xc.y / xc.z),
                    point: inv.transform(&xc),
                }
            })
            .collect();
        (pose, corrs)
    }

    #[test]
    fn recovers_ground_truth() {
        for seed in 0..200 {
            let (pose, corrs) = instance(seed);
            let sols = solve_p5p_radial(&corrs).unwrap();
            let gt = radial_from_full(&pose);
            let best = sols
                .iter()
                .map(|s| s.rotation.angle_to(&gt.rotation) + (s.b() - gt.b()).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "seed {seed}: {best}");
        }
    }

    #[test]
    fn every_solution_satisfies_the_constraints() {
        for seed in 0..50 {
            let (_, corrs) = instance(seed);
            for s in solve_p5p_radial(&corrs).unwrap() {
                for c in &corrs {
                    let r = crate::geometry::residual_from_direction(&s.project(&c.point), &c.v).unwrap();
                    assert!(r.norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let corrs: Vec<_> = (0..5)
            .map(|k| CenteredCorrespondence {
                v: Vector2::new(10.0 + k as f64, -3.0 + 2.0 * k as f64),
                point: Vector3::new(1.0, 2.0, 3.0) + Vector3::new(0.3, -0.1, 0.5) * k as f64,
            })
            .collect();
        assert!(matches!(solve_p5p_radial(&corrs), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn wrong_sample_size() {
        let (_, corrs) = instance(1);
        assert!(matches!(solve_p5p_radial(&corrs[..4]), Err(Error::Precondition(_))));
    }
}
