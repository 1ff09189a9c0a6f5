use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

/// A proper rotation of 3D space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    quat: UnitQuaternion<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            quat: UnitQuaternion::identity(),
        }
    }

    /// From a quaternion `w + xi + yj + zk`; the input is normalized.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            quat: UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        }
    }

    /// Intrinsic z-y-z Euler angles: `Rz(alpha) · Ry(beta) · Rz(gamma)`.
    pub fn from_euler_zyz(alpha: f64, beta: f64, gamma: f64) -> Self {
        let z = Vector3::z_axis();
        let y = Vector3::y_axis();
        Self {
            quat: UnitQuaternion::from_axis_angle(&z, alpha)
                * UnitQuaternion::from_axis_angle(&y, beta)
                * UnitQuaternion::from_axis_angle(&z, gamma),
        }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
        Self {
            quat: UnitQuaternion::from_axis_angle(&axis, angle),
        }
    }

    /// Haar-uniform random rotation (normalized Gaussian quaternion).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-6 {
                return Self::from_quaternion(q[0], q[1], q[2], q[3]);
            }
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation {
            quat: self.quat * other.quat,
        }
    }

    pub fn inverse(&self) -> Rotation {
        Rotation {
            quat: self.quat.inverse(),
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let m: Matrix3<f64> = self.quat.to_rotation_matrix().into_inner();
        std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.quat * Vector3::from(v);
        [r.x, r.y, r.z]
    }

    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.quat.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// Element of O(3): a rotation optionally followed by inversion `x ↦ −x`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct O3 {
    pub rotation: Rotation,
    pub inversion: bool,
}

impl O3 {
    pub fn rotation(rotation: Rotation) -> Self {
        Self {
            rotation,
            inversion: false,
        }
    }

    pub fn inversion() -> Self {
        Self {
            rotation: Rotation::identity(),
            inversion: true,
        }
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.apply(v);
        if self.inversion {
            [-r[0], -r[1], -r[2]]
        } else {
            r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_is_orthogonal_with_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = Rotation::random(&mut rng).matrix();
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-12);
                }
            }
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let a = Rotation::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let b = Rotation::from_axis_angle([1.0, 0.0, 0.0], std::f64::consts::FRAC_PI_2);
        let v = [0.0, 1.0, 0.0];
        let lhs = a.compose(&b).apply(v);
        let rhs = a.apply(b.apply(v));
        for k in 0..3 {
            assert!((lhs[k] - rhs[k]).abs() < 1e-14);
        }
        // b maps y to z, a leaves z fixed.
        assert!((lhs[2] - 1.0).abs() < 1e-14);
    }
}
