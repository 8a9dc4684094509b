//! ZYX Euler-angle kinematics. Angles are `[roll, pitch, yaw]`; the rotation
//! `R(q) = Rz(yaw)·Ry(pitch)·Rx(roll)` maps body vectors into the world frame.

use std::f64::consts::PI;

use numkit::Matrix;

pub type Vec3 = [f64; 3];

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

pub fn wrap3(a: Vec3) -> Vec3 {
    a.map(wrap_angle)
}

pub fn rotation(q: Vec3) -> Matrix {
    let (sr, cr) = q[0].sin_cos();
    let (sp, cp) = q[1].sin_cos();
    let (sy, cy) = q[2].sin_cos();
    Matrix::from_rows(&[
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])
}

/// Partial derivatives `∂R/∂roll, ∂R/∂pitch, ∂R/∂yaw`.
pub fn rotation_partials(q: Vec3) -> [Matrix; 3] {
    let (sr, cr) = q[0].sin_cos();
    let (sp, cp) = q[1].sin_cos();
    let (sy, cy) = q[2].sin_cos();
    let d_roll = Matrix::from_rows(&[
        [0.0, cy * sp * cr + sy * sr, -cy * sp * sr + sy * cr],
        [0.0, sy * sp * cr - cy * sr, -sy * sp * sr - cy * cr],
        [0.0, cp * cr, -cp * sr],
    ]);
    let d_pitch = Matrix::from_rows(&[
        [-cy * sp, cy * cp * sr, cy * cp * cr],
        [-sy * sp, sy * cp * sr, sy * cp * cr],
        [-cp, -sp * sr, -sp * cr],
    ]);
    let d_yaw = Matrix::from_rows(&[
        [-sy * cp, -sy * sp * sr - cy * cr, -sy * sp * cr + cy * sr],
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [0.0, 0.0, 0.0],
    ]);
    [d_roll, d_pitch, d_yaw]
}

/// `G(q)`: Euler-angle rates to body angular velocity, `ω = G(q)·q̇`.
pub fn euler_rate_map(q: Vec3) -> Matrix {
    let (sr, cr) = q[0].sin_cos();
    let (sp, cp) = q[1].sin_cos();
    Matrix::from_rows(&[[1.0, 0.0, -sp], [0.0, cr, sr * cp], [0.0, -sr, cr * cp]])
}

/// `G(q)⁻¹`, singular at pitch = ±π/2.
pub fn euler_rate_map_inv(q: Vec3) -> Matrix {
    let (sr, cr) = q[0].sin_cos();
    let tp = q[1].tan();
    let sec = 1.0 / q[1].cos();
    Matrix::from_rows(&[
        [1.0, sr * tp, cr * tp],
        [0.0, cr, -sr],
        [0.0, sr * sec, cr * sec],
    ])
}

/// Jacobian of `G(q)⁻¹·w` with respect to `q` (3×3).
pub fn euler_rate_map_inv_jacobian(q: Vec3, w: Vec3) -> Matrix {
    let (sr, cr) = q[0].sin_cos();
    let (sp, cp) = q[1].sin_cos();
    let tp = sp / cp;
    let sec = 1.0 / cp;
    let sec2 = sec * sec;
    // The roll-rate component enters linearly with a constant coefficient.
    let (wy, wz) = (w[1], w[2]);
    Matrix::from_rows(&[
        [(cr * wy - sr * wz) * tp, (sr * wy + cr * wz) * sec2, 0.0],
        [-sr * wy - cr * wz, 0.0, 0.0],
        [
            (cr * wy - sr * wz) * sec,
            (sr * wy + cr * wz) * sec * tp,
            0.0,
        ],
    ])
}

/// Jacobian of `R(q)·f` with respect to `q` (3×3).
pub fn rotate_jacobian(q: Vec3, f: Vec3) -> Matrix {
    let partials = rotation_partials(q);
    let mut out = Matrix::zeros(3, 3);
    for (j, d) in partials.iter().enumerate() {
        let col = apply(d, f);
        for i in 0..3 {
            out.set(i, j, col[i]);
        }
    }
    out
}

/// Euler angles of a rotation matrix (inverse of [`rotation`] away from
/// gimbal lock).
pub fn euler_from_matrix(m: &Matrix) -> Vec3 {
    let roll = m.get(2, 1).atan2(m.get(2, 2));
    let pitch = -m.get(2, 0).clamp(-1.0, 1.0).asin();
    let yaw = m.get(1, 0).atan2(m.get(0, 0));
    [roll, pitch, yaw]
}

/// Derivative of [`euler_from_matrix`] along a direction `dm`.
pub fn euler_directional_derivative(m: &Matrix, dm: &Matrix) -> Vec3 {
    let (m21, m22) = (m.get(2, 1), m.get(2, 2));
    let (m00, m10) = (m.get(0, 0), m.get(1, 0));
    let m20 = m.get(2, 0);
    let d_roll = (m22 * dm.get(2, 1) - m21 * dm.get(2, 2)) / (m21 * m21 + m22 * m22);
    let d_pitch = -dm.get(2, 0) / (1.0 - m20 * m20).max(1e-300).sqrt();
    let d_yaw = (m00 * dm.get(1, 0) - m10 * dm.get(0, 0)) / (m00 * m00 + m10 * m10);
    [d_roll, d_pitch, d_yaw]
}

pub fn apply(m: &Matrix, v: Vec3) -> Vec3 {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = m.get(i, 0) * v[0] + m.get(i, 1) * v[1] + m.get(i, 2) * v[2];
    }
    out
}

pub fn apply_t(m: &Matrix, v: Vec3) -> Vec3 {
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        *o = m.get(0, j) * v[0] + m.get(1, j) * v[1] + m.get(2, j) * v[2];
    }
    out
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm3(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: Vec3 = [0.3, -0.4, 2.1];

    fn fd_matrix(f: impl Fn(Vec3) -> Matrix, q: Vec3, k: usize) -> Matrix {
        let h = 1e-6;
        let mut up = q;
        up[k] += h;
        let mut down = q;
        down[k] -= h;
        (&f(up) - &f(down)).scale(0.5 / h)
    }

    #[test]
    fn rotation_is_orthonormal_and_round_trips() {
        let r = rotation(Q);
        let rtr = r.t_matmul(&r).unwrap();
        assert!((&rtr - &Matrix::identity(3)).max_abs() < 1e-14);
        let back = euler_from_matrix(&r);
        for (a, b) in back.iter().zip(Q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let partials = rotation_partials(Q);
        for (k, d) in partials.iter().enumerate() {
            let fd = fd_matrix(rotation, Q, k);
            assert!((d - &fd).max_abs() < 1e-8, "axis {k}");
        }
    }

    #[test]
    fn rate_map_inverse_and_jacobian() {
        let g = euler_rate_map(Q);
        let gi = euler_rate_map_inv(Q);
        assert!((&(&g * &gi) - &Matrix::identity(3)).max_abs() < 1e-12);
        let w = [0.2, -0.7, 1.3];
        let jac = euler_rate_map_inv_jacobian(Q, w);
        for k in 0..3 {
            let fd = fd_matrix(|q| Matrix::column(&apply(&euler_rate_map_inv(q), w)), Q, k);
            for i in 0..3 {
                assert!((jac.get(i, k) - fd.get(i, 0)).abs() < 1e-7, "({i},{k})");
            }
        }
    }

    #[test]
    fn euler_derivative_matches_finite_differences() {
        let base = rotation([0.1, 0.2, -0.3]);
        let dir = rotation_partials([0.1, 0.2, -0.3])[1].clone();
        let d = euler_directional_derivative(&base, &dir);
        let h = 1e-6;
        let up = euler_from_matrix(&(&base + &dir.scale(h)));
        let down = euler_from_matrix(&(&base - &dir.scale(h)));
        for i in 0..3 {
            assert!((d[i] - (up[i] - down[i]) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn wrapping() {
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
