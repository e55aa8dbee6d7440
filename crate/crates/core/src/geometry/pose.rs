use nalgebra::{
    Matrix2x3, Matrix2x4, Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector2, Vector3,
    Vector4,
};
use serde::{Deserialize, Serialize};

/// A 3D rotation stored as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// From quaternion components (w, x, y, z); renormalized.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self(UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            w, x, y, z,
        )))
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(q)
    }

    /// Exponential map of an axis-angle vector.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        Self(UnitQuaternion::from_scaled_axis(*omega))
    }

    /// Closest rotation to an arbitrary 3x3 matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let r = u * d * v_t;
        Self(UnitQuaternion::from_rotation_matrix(
            &Rotation3::from_matrix_unchecked(r),
        ))
    }

    /// Rotation whose first two rows are `r1`, `r2` (assumed orthonormal); the
    /// third row is their cross product.
    pub fn from_two_rows(r1: &Vector3<f64>, r2: &Vector3<f64>) -> Self {
        let r3 = r1.cross(r2);
        let m = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
        Self::from_matrix(&m)
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn log(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    /// Geodesic distance in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut q = self.0 * other.0;
        q.renormalize();
        Self(q)
    }

    pub fn inverse(&self) -> Rotation {
        Self(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    /// Left-multiplicative update `exp(delta) * self`.
    pub fn retract(&self, delta: &Vector3<f64>) -> Rotation {
        Rotation::exp(delta).compose(self)
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(x) + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let r_inv = self.rotation.inverse();
        RigidPose {
            rotation: r_inv,
            translation: -r_inv.rotate(&self.translation),
        }
    }

    /// Position of the frame origin expressed in the source frame.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.inverse().rotate(&self.translation)
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        RigidPose {
            rotation: Rotation::from_matrix(&r),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Left-multiplicative update: rotation by `exp(delta[0..3])`, translation
    /// shifted by `delta[3..6]`.
    pub fn retract(&self, delta: &[f64]) -> RigidPose {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let dt = Vector3::new(delta[3], delta[4], delta[5]);
        RigidPose {
            rotation: self.rotation.retract(&w),
            translation: self.translation + dt,
        }
    }
}

/// The top two rows `[A | b]` of a camera pose matrix: a pose known up to
/// forward translation. Stored as the full rotation (its third row is the
/// cross product of the first two) and the 2-vector translation part.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RadialPose {
    pub rotation: Rotation,
    pub translation: Vector2<f64>,
}

impl RadialPose {
    pub fn new(rotation: Rotation, translation: Vector2<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// The 2x3 rotation block.
    pub fn a(&self) -> Matrix2x3<f64> {
        self.rotation.matrix().fixed_rows::<2>(0).into_owned()
    }

    pub fn b(&self) -> Vector2<f64> {
        self.translation
    }

    pub fn matrix(&self) -> Matrix2x4<f64> {
        let mut m = Matrix2x4::zeros();
        m.fixed_view_mut::<2, 3>(0, 0).copy_from(&self.a());
        m.set_column(3, &self.translation);
        m
    }

    /// Canonical radial pose from an arbitrary-scale 2x4 matrix: rows of the
    /// rotation block rescaled to unit norm and projected onto the nearest
    /// orthonormal pair. `None` if the rotation block is rank deficient.
    pub fn from_matrix(m: &Matrix2x4<f64>) -> Option<RadialPose> {
        let a: Matrix2x3<f64> = m.fixed_view::<2, 3>(0, 0).into_owned();
        let norm2 = a.row(0).norm_squared() + a.row(1).norm_squared();
        if !(norm2 > 1e-24) || !norm2.is_finite() {
            return None;
        }
        let s = (2.0 / norm2).sqrt();
        let svd = (a * s).svd(true, true);
        if svd.singular_values.min() < 1e-9 * svd.singular_values.max() {
            return None;
        }
        let ortho = svd.u.unwrap() * svd.v_t.unwrap();
        let r1: Vector3<f64> = ortho.row(0).transpose();
        let r2: Vector3<f64> = ortho.row(1).transpose();
        let b: Vector2<f64> = m.column(3) * s;
        Some(RadialPose {
            rotation: Rotation::from_two_rows(&r1, &r2),
            translation: b,
        })
    }

    /// `u = A X + b`, the direction of the projected radial line.
    pub fn project(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let p = self.rotation.rotate(x);
        Vector2::new(p.x, p.y) + self.translation
    }

    /// Depth of a point along the principal axis, up to the unknown forward
    /// translation.
    pub fn depth_without_tz(&self, x: &Vector3<f64>) -> f64 {
        self.rotation.rotate(x).z
    }

    /// The same radial line with opposite orientation: `[-A | -b]`.
    pub fn flipped(&self) -> RadialPose {
        let flip = Rotation::exp(&Vector3::new(0.0, 0.0, std::f64::consts::PI));
        RadialPose {
            rotation: flip.compose(&self.rotation),
            translation: -self.translation,
        }
    }

    /// `[A | b] ∘ Q` as a radial pose.
    pub fn compose_rigid(&self, q: &RigidPose) -> RadialPose {
        let t = self.rotation.rotate(&q.translation);
        RadialPose {
            rotation: self.rotation.compose(&q.rotation),
            translation: Vector2::new(t.x, t.y) + self.translation,
        }
    }

    /// Full rigid pose obtained by fixing the forward translation.
    pub fn with_forward_translation(&self, t_z: f64) -> RigidPose {
        RigidPose {
            rotation: self.rotation,
            translation: Vector3::new(self.translation.x, self.translation.y, t_z),
        }
    }

    /// Principal axis (third row of the rotation) in the source frame.
    pub fn principal_axis(&self) -> Vector3<f64> {
        self.rotation.inverse().rotate(&Vector3::z())
    }

    /// Orientation chosen so the majority of observations lie on the side of
    /// the radial line the points project to (`uᵀv > 0`).
    pub fn oriented_towards<'a>(
        self,
        pairs: impl IntoIterator<Item = (&'a Vector3<f64>, &'a Vector2<f64>)>,
    ) -> RadialPose {
        let mut votes = 0i64;
        for (x, v) in pairs {
            let d = self.project(x).dot(v);
            if d > 0.0 {
                votes += 1;
            } else if d < 0.0 {
                votes -= 1;
            }
        }
        if votes < 0 {
            self.flipped()
        } else {
            self
        }
    }

    /// Left-multiplicative update of rotation by `delta[0..3]`, translation
    /// shifted by `delta[3..5]`.
    pub fn retract(&self, delta: &[f64]) -> RadialPose {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        RadialPose {
            rotation: self.rotation.retract(&w),
            translation: self.translation + Vector2::new(delta[3], delta[4]),
        }
    }
}

/// Radial pose of a full pose: its top two rows.
pub fn radial_from_full(pose: &RigidPose) -> RadialPose {
    RadialPose {
        rotation: pose.rotation,
        translation: Vector2::new(pose.translation.x, pose.translation.y),
    }
}

/// Homogeneous coordinates of a 3D point.
pub fn homogeneous(x: &Vector3<f64>) -> Vector4<f64> {
    Vector4::new(x.x, x.y, x.z, 1.0)
}

/// Cross-product matrix `[v]ₓ`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the left Jacobian of SO(3) at `phi`.
pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-8 {
        return Matrix3::identity() - 0.5 * k + k * k / 12.0;
    }
    let coef = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() - 0.5 * k + coef * k * k
}
