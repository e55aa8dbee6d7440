//! Residual blocks with analytic Jacobians. All rotation increments are left
//! multiplicative (`R ← exp(δ) R`), translation increments additive; pose
//! tangent vectors are ordered `[δrotation, δtranslation]`.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};

use crate::error::Result;
use crate::geometry::{
    residual_with_jacobians, skew, so3_left_jacobian_inv, CameraIntrinsics, RadialPose, RigidPose,
    INTRINSIC_DIM,
};

/// Radial residual of one observation and its Jacobians with respect to the
/// camera radial extrinsic (5), the rig pose (6) and the principal point (2).
#[derive(Debug, Clone)]
pub struct RadialBlock {
    pub residual: Vector2<f64>,
    pub d_rig: SMatrix<f64, 2, 5>,
    pub d_pose: SMatrix<f64, 2, 6>,
    pub d_principal_point: Matrix2<f64>,
}

pub fn radial_block(
    rig: &RadialPose,
    pose: &RigidPose,
    principal_point: &Vector2<f64>,
    point: &Vector3<f64>,
    pixel: &Vector2<f64>,
) -> Result<RadialBlock> {
    let rq_x = pose.rotation.rotate(point);
    let x_rig = rq_x + pose.translation;
    let p = rig.rotation.rotate(&x_rig);
    let u = Vector2::new(p.x, p.y) + rig.translation;
    let v = pixel - principal_point;
    let (r, d_du, d_dv) = residual_with_jacobians(&u, &v)?;

    let top2 = |m: &Matrix3<f64>| -> SMatrix<f64, 2, 3> { m.fixed_rows::<2>(0).into_owned() };
    let du_drot = top2(&-skew(&p));
    let a = top2(&rig.rotation.matrix());
    let mut d_rig = SMatrix::<f64, 2, 5>::zeros();
    d_rig.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_du * du_drot));
    d_rig.fixed_view_mut::<2, 2>(0, 3).copy_from(&d_du);
    let du_dxr = d_du * a;
    let mut d_pose = SMatrix::<f64, 2, 6>::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(du_dxr * -skew(&rq_x)));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&du_dxr);
    Ok(RadialBlock {
        residual: r,
        d_rig,
        d_pose,
        d_principal_point: -d_dv,
    })
}

/// Reprojection residual `π_θ(P Q X) − x` with Jacobians with respect to the
/// camera extrinsic (6), rig pose (6), intrinsics (7) and map point (3).
#[derive(Debug, Clone)]
pub struct ReprojectionBlock {
    pub residual: Vector2<f64>,
    pub d_rig: SMatrix<f64, 2, 6>,
    pub d_pose: SMatrix<f64, 2, 6>,
    pub d_intrinsics: SMatrix<f64, 2, INTRINSIC_DIM>,
    pub d_point: SMatrix<f64, 2, 3>,
}

pub fn reprojection_block(
    rig: &RigidPose,
    pose: &RigidPose,
    intrinsics: &CameraIntrinsics,
    point: &Vector3<f64>,
    pixel: &Vector2<f64>,
) -> Result<ReprojectionBlock> {
    let rq_x = pose.rotation.rotate(point);
    let x_rig = rq_x + pose.translation;
    let rp_x = rig.rotation.rotate(&x_rig);
    let x_cam = rp_x + rig.translation;
    let (proj, j_cam, j_intr) = intrinsics.project_with_jacobians(&x_cam)?;
    let rp = rig.rotation.matrix();
    let mut d_rig = SMatrix::<f64, 2, 6>::zeros();
    d_rig.fixed_view_mut::<2, 3>(0, 0).copy_from(&(j_cam * -skew(&rp_x)));
    d_rig.fixed_view_mut::<2, 3>(0, 3).copy_from(&j_cam);
    let j_rig_frame = j_cam * rp;
    let mut d_pose = SMatrix::<f64, 2, 6>::zeros();
    d_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(j_rig_frame * -skew(&rq_x)));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&j_rig_frame);
    let d_point = j_rig_frame * pose.rotation.matrix();
    Ok(ReprojectionBlock {
        residual: proj - pixel,
        d_rig,
        d_pose,
        d_intrinsics: j_intr,
        d_point,
    })
}

/// Parameters of the per-camera upgrade refinement: `[focal, d0, d1, d2, d3, t_z]`.
pub const UPGRADE_DIM: usize = 6;

/// Reprojection residual `π_θ(Z + t_z e_z) − x` with the principal point held
/// fixed, and its Jacobian with respect to `[focal, d0..d3, t_z]`.
pub fn upgrade_block(
    intrinsics: &CameraIntrinsics,
    t_z: f64,
    z: &Vector3<f64>,
    pixel: &Vector2<f64>,
) -> Result<(Vector2<f64>, SMatrix<f64, 2, UPGRADE_DIM>)> {
    let x_cam = z + Vector3::new(0.0, 0.0, t_z);
    let (proj, j_cam, j_intr) = intrinsics.project_with_jacobians(&x_cam)?;
    let mut j = SMatrix::<f64, 2, UPGRADE_DIM>::zeros();
    j.set_column(0, &j_intr.column(0));
    for k in 0..4 {
        j.set_column(1 + k, &j_intr.column(3 + k));
    }
    j.set_column(5, &j_cam.column(2));
    Ok((proj - pixel, j))
}

/// Pose-averaging discrepancy between a measured radial pose `T̂` and the
/// composition `P̂ Q`: rotation log (3) stacked over the weighted 2-row
/// translation difference (2). Jacobians with respect to `P̂` (5) and `Q` (6).
pub fn pose_graph_block(
    rig: &RadialPose,
    pose: &RigidPose,
    measured: &RadialPose,
    translation_weight: f64,
) -> (SVector<f64, 5>, SMatrix<f64, 5, 5>, SMatrix<f64, 5, 6>) {
    let e = rig
        .rotation
        .compose(&pose.rotation)
        .compose(&measured.rotation.inverse());
    let phi = e.log();
    let jinv = so3_left_jacobian_inv(&phi);
    let sw = translation_weight.sqrt();
    let rp = rig.rotation.matrix();
    let rp_t = rig.rotation.rotate(&pose.translation);
    let tau = Vector2::new(rp_t.x, rp_t.y) + rig.translation - measured.translation;

    let mut r = SVector::<f64, 5>::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&phi);
    r.fixed_rows_mut::<2>(3).copy_from(&(tau * sw));

    let mut d_rig = SMatrix::<f64, 5, 5>::zeros();
    d_rig.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    let ds = -skew(&rp_t);
    d_rig.fixed_view_mut::<2, 3>(3, 0).copy_from(&(ds.fixed_rows::<2>(0) * sw));
    d_rig.fixed_view_mut::<2, 2>(3, 3).copy_from(&(Matrix2::identity() * sw));

    let mut d_pose = SMatrix::<f64, 5, 6>::zeros();
    d_pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jinv * rp));
    d_pose.fixed_view_mut::<2, 3>(3, 3).copy_from(&(rp.fixed_rows::<2>(0) * sw));
    (r, d_rig, d_pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Rotation};
    use rand::{Rng, SeedableRng};

    fn check(analytic: f64, numeric: f64) -> bool {
        (analytic - numeric).abs() <= 1e-5 * numeric.abs().max(analytic.abs()) + 1e-8
    }

    fn rand_pose(rng: &mut impl Rng, t: f64) -> RigidPose {
        RigidPose::new(
            Rotation::exp(&Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))),
            Vector3::new(rng.random_range(-t..t), rng.random_range(-t..t), rng.random_range(-t..t)),
        )
    }

    #[test]
    fn pose_graph_jacobian() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let rig = crate::geometry::radial_from_full(&rand_pose(&mut rng, 0.3));
            let pose = rand_pose(&mut rng, 2.0);
            let noise = rand_pose(&mut rng, 0.05);
            let meas = crate::geometry::radial_from_full(&RigidPose::new(
                Rotation::exp(&(noise.rotation.log() * 0.1)),
                noise.translation,
            ))
            .compose_rigid(&rig.with_forward_translation(0.0).compose(&pose));
            let (_, jr, jp) = pose_graph_block(&rig, &pose, &meas, 2.0);
            let h = 1e-6;
            for k in 0..5 {
                let mut d = [0.0; 5];
                d[k] = h;
                let plus = pose_graph_block(&rig.retract(&d), &pose, &meas, 2.0).0;
                d[k] = -h;
                let minus = pose_graph_block(&rig.retract(&d), &pose, &meas, 2.0).0;
                let num = (plus - minus) / (2.0 * h);
                for row in 0..5 {
                    assert!(check(jr[(row, k)], num[row]));
                }
            }
            for k in 0..6 {
                let mut d = [0.0; 6];
                d[k] = h;
                let plus = pose_graph_block(&rig, &pose.retract(&d), &meas, 2.0).0;
                d[k] = -h;
                let minus = pose_graph_block(&rig, &pose.retract(&d), &meas, 2.0).0;
                let num = (plus - minus) / (2.0 * h);
                for row in 0..5 {
                    assert!(check(jp[(row, k)], num[row]));
                }
            }
        }
    }

    #[test]
    fn upgrade_jacobian() {
        let cam = CameraIntrinsics::new(CameraModel::Equidistant, 300.0, Vector2::new(320.0, 240.0), [0.01, -0.002, 0.0003, 0.0]);
        let z = Vector3::new(0.4, -0.7, 1.2);
        let px = Vector2::new(400.0, 100.0);
        let (_, j) = upgrade_block(&cam, 0.2, &z, &px).unwrap();
        let base = [cam.focal, cam.distortion[0], cam.distortion[1], cam.distortion[2], cam.distortion[3], 0.2];
        let eval = |p: &[f64; 6]| {
            let c = CameraIntrinsics::new(cam.model, p[0], cam.principal_point, [p[1], p[2], p[3], p[4]]);
            upgrade_block(&c, p[5], &z, &px).unwrap().0
        };
        for k in 0..6 {
            let h = 1e-6 * base[k].abs().max(1e-2);
            let (mut a, mut b) = (base, base);
            a[k] += h;
            b[k] -= h;
            let num = (eval(&a) - eval(&b)) / (2.0 * h);
            for row in 0..2 {
                assert!(check(j[(row, k)], num[row]));
            }
        }
    }

    fn numeric<const N: usize>(f: impl Fn(&[f64; N]) -> Vector2<f64>, h: f64) -> SMatrix<f64, 2, N> {
        let mut j = SMatrix::<f64, 2, N>::zeros();
        for k in 0..N {
            let mut d = [0.0; N];
            d[k] = h;
            let plus = f(&d);
            d[k] = -h;
            j.set_column(k, &((plus - f(&d)) / (2.0 * h)));
        }
        j
    }

    fn assert_close<const N: usize>(a: &SMatrix<f64, 2, N>, n: &SMatrix<f64, 2, N>) {
        for (x, y) in a.iter().zip(n.iter()) {
            assert!(check(*x, *y), "{a} vs {n}");
        }
    }

    #[test]
    fn radial_jacobians() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pp = Vector2::new(320.0, 240.0);
        let mut checked = 0;
        while checked < 100 {
            let rig_full = rand_pose(&mut rng, 0.3);
            let rig = crate::geometry::radial_from_full(&rig_full);
            let pose = rand_pose(&mut rng, 2.0);
            let x = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let px = pp + Vector2::new(rng.random_range(-300.0..300.0), rng.random_range(-200.0..200.0));
            let Ok(b) = radial_block(&rig, &pose, &pp, &x, &px) else { continue };
            let h = 1e-6;
            let jr = numeric(|d: &[f64; 5]| radial_block(&rig.retract(d), &pose, &pp, &x, &px).unwrap().residual, h);
            let jp = numeric(|d: &[f64; 6]| radial_block(&rig, &pose.retract(d), &pp, &x, &px).unwrap().residual, h);
            let jc = numeric(
                |d: &[f64; 2]| radial_block(&rig, &pose, &(pp + Vector2::new(d[0], d[1])), &x, &px).unwrap().residual,
                1e-4,
            );
            assert_close(&b.d_rig, &jr);
            assert_close(&b.d_pose, &jp);
            assert_close(&b.d_principal_point, &jc);
            checked += 1;
        }
    }

    #[test]
    fn reprojection_jacobians() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let cams = [
            CameraIntrinsics::new(CameraModel::RadTan, 455.0, Vector2::new(320.0, 240.0), [-0.2, 0.04, 0.001, -0.0005]),
            CameraIntrinsics::new(CameraModel::Equidistant, 295.0, Vector2::new(320.0, 240.0), [0.02, -0.004, 0.0008, -0.0001]),
        ];
        let mut checked = 0;
        while checked < 100 {
            let cam = cams[checked % 2];
            let rig = rand_pose(&mut rng, 0.3);
            let pose = rand_pose(&mut rng, 2.0);
            // Place the point in front of the camera within a moderate field of view.
            let xc = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4), 1.0) * rng.random_range(2.0..8.0);
            let x = pose.inverse().transform(&rig.inverse().transform(&xc));
            let px = cam.project(&xc).unwrap() + Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let b = reprojection_block(&rig, &pose, &cam, &x, &px).unwrap();
            let h = 1e-6;
            let jr = numeric(|d: &[f64; 6]| reprojection_block(&rig.retract(d), &pose, &cam, &x, &px).unwrap().residual, h);
            let jp = numeric(|d: &[f64; 6]| reprojection_block(&rig, &pose.retract(d), &cam, &x, &px).unwrap().residual, h);
            let jx = numeric(
                |d: &[f64; 3]| reprojection_block(&rig, &pose, &cam, &(x + Vector3::new(d[0], d[1], d[2])), &px).unwrap().residual,
                h,
            );
            let p0 = cam.to_params();
            let ji = numeric(
                |d: &[f64; INTRINSIC_DIM]| {
                    let mut p = p0;
                    for k in 0..INTRINSIC_DIM {
                        p[k] += d[k];
                    }
                    reprojection_block(&rig, &pose, &cam.with_params(&p), &x, &px).unwrap().residual
                },
                1e-4,
            );
            assert_close(&b.d_rig, &jr);
            assert_close(&b.d_pose, &jp);
            assert_close(&b.d_point, &jx);
            assert_close(&b.d_intrinsics, &ji);
            checked += 1;
        }
    }
}
