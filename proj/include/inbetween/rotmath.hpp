#pragma once

// Rotation and planar-geometry primitives.
//
// Conventions: quaternions are w-first and right-handed, matrices act on
// column vectors, the world is y-up and a character facing "forward" looks
// down +z. Planar (ground) vectors are stored as (x, z).

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "error.hpp"

namespace inbetween {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

struct Quat {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    static Quat identity() { return {}; }

    static Quat from_axis_angle(const Vec3& axis, double angle) {
        const Vec3 n = axis.normalized();
        const double s = std::sin(0.5 * angle);
        return {std::cos(0.5 * angle), n.x() * s, n.y() * s, n.z() * s};
    }

    static Quat from_matrix(const Mat3& m) {
        // Shepperd's method; picks the largest diagonal term for stability.
        Quat q;
        const double tr = m.trace();
        if (tr > 0.0) {
            const double s = std::sqrt(tr + 1.0) * 2.0;
            q.w = 0.25 * s;
            q.x = (m(2, 1) - m(1, 2)) / s;
            q.y = (m(0, 2) - m(2, 0)) / s;
            q.z = (m(1, 0) - m(0, 1)) / s;
        } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
            const double s = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2.0;
            q.w = (m(2, 1) - m(1, 2)) / s;
            q.x = 0.25 * s;
            q.y = (m(0, 1) + m(1, 0)) / s;
            q.z = (m(0, 2) + m(2, 0)) / s;
        } else if (m(1, 1) > m(2, 2)) {
            const double s = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2.0;
            q.w = (m(0, 2) - m(2, 0)) / s;
            q.x = (m(0, 1) + m(1, 0)) / s;
            q.y = 0.25 * s;
            q.z = (m(1, 2) + m(2, 1)) / s;
        } else {
            const double s = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2.0;
            q.w = (m(1, 0) - m(0, 1)) / s;
            q.x = (m(0, 2) + m(2, 0)) / s;
            q.y = (m(1, 2) + m(2, 1)) / s;
            q.z = 0.25 * s;
        }
        return q.normalized();
    }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    Quat normalized() const {
        const double n = norm();
        return {w / n, x / n, y / n, z / n};
    }

    Quat conjugate() const { return {w, -x, -y, -z}; }
    Quat operator-() const { return {-w, -x, -y, -z}; }

    double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }

    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }

    Vec3 rotate(const Vec3& v) const { return to_matrix() * v; }

    Mat3 to_matrix() const {
        Mat3 m;
        const double xx = x * x, yy = y * y, zz = z * z;
        const double xy = x * y, xz = x * z, yz = y * z;
        const double wx = w * x, wy = w * y, wz = w * z;
        m << 1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
             2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
             2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy);
        return m;
    }
};

/// First two columns of a rotation matrix.
struct SixD {
    Vec3 a = Vec3::UnitX();
    Vec3 b = Vec3::UnitY();
};

/// Great-circle interpolation along the shorter arc. t outside [0, 1]
/// extrapolates along the same great circle.
inline Quat slerp(const Quat& q0, Quat q1, double t) {
    double d = q0.dot(q1);
    if (d < 0.0) {
        q1 = -q1;
        d = -d;
    }
    if (d > 1.0 - 1e-12) {
        // Nearly parallel: fall back to normalized lerp.
        Quat r{q0.w + t * (q1.w - q0.w), q0.x + t * (q1.x - q0.x), q0.y + t * (q1.y - q0.y),
               q0.z + t * (q1.z - q0.z)};
        return r.normalized();
    }
    const double theta = std::acos(std::min(1.0, d));
    const double s = std::sin(theta);
    const double k0 = std::sin((1.0 - t) * theta) / s;
    const double k1 = std::sin(t * theta) / s;
    Quat r{k0 * q0.w + k1 * q1.w, k0 * q0.x + k1 * q1.x, k0 * q0.y + k1 * q1.y, k0 * q0.z + k1 * q1.z};
    return r.normalized();
}

inline SixD matrix_to_sixd(const Mat3& m) { return {m.col(0), m.col(1)}; }

inline SixD quat_to_sixd(const Quat& q) { return matrix_to_sixd(q.to_matrix()); }

/// Gram-Schmidt reconstruction: normalize a, orthogonalize b against a,
/// third column is their cross product.
inline Mat3 sixd_to_matrix(const SixD& s) {
    const double na = s.a.norm();
    if (!(na >= 1e-8)) throw Error(ErrorKind::DegenerateSixD, "first column has near-zero norm");
    const Vec3 c0 = s.a / na;
    const Vec3 b_perp = s.b - c0.dot(s.b) * c0;
    const double nb = b_perp.norm();
    if (!(nb >= 1e-8)) throw Error(ErrorKind::DegenerateSixD, "columns are parallel or second is zero");
    const Vec3 c1 = b_perp / nb;
    Mat3 m;
    m.col(0) = c0;
    m.col(1) = c1;
    m.col(2) = c0.cross(c1);
    return m;
}

inline double cross2d(const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); }

/// Unsigned angle in [0, pi].
inline double angle2d(const Vec2& u, const Vec2& v) {
    if (u.squaredNorm() == 0.0 || v.squaredNorm() == 0.0)
        throw Error(ErrorKind::ZeroVector, "angle2d of a zero vector");
    return std::atan2(std::abs(cross2d(u, v)), u.dot(v));
}

/// Signed counterclockwise angle taking u onto v, in (-pi, pi].
inline double signed_angle2d(const Vec2& u, const Vec2& v) {
    if (u.squaredNorm() == 0.0 || v.squaredNorm() == 0.0)
        throw Error(ErrorKind::ZeroVector, "signed_angle2d of a zero vector");
    return std::atan2(cross2d(u, v), u.dot(v));
}

/// Counterclockwise rotation by theta radians.
inline Vec2 rotate2d(const Vec2& v, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

// --- ground-plane helpers --------------------------------------------------

inline Vec2 ground(const Vec3& p) { return {p.x(), p.z()}; }

inline Quat yaw_quat(double yaw) { return Quat::from_axis_angle(Vec3::UnitY(), yaw); }

/// Yaw such that the facing (x, z) equals (sin yaw, cos yaw).
inline double yaw_of(const Vec2& facing) { return std::atan2(facing.x(), facing.y()); }

inline Vec2 facing_of_yaw(double yaw) { return {std::sin(yaw), std::cos(yaw)}; }

/// A yaw about +y, seen in (x, z) coordinates, turns clockwise.
inline Vec2 apply_yaw(const Vec2& v, double yaw) { return rotate2d(v, -yaw); }

/// Forward (+z) axis of a rotation projected on the ground and normalized.
/// Falls back to the projected up-axis when the forward axis is vertical.
inline Vec2 ground_facing(const Mat3& r) {
    Vec2 f{r(0, 2), r(2, 2)};
    if (f.norm() < 1e-9) f = Vec2{-r(0, 1), -r(2, 1)};
    return f.normalized();
}

inline Vec2 ground_facing(const Quat& q) { return ground_facing(q.to_matrix()); }

inline double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a < 0) a += 2.0 * kPi;
    return a - kPi;
}

} // namespace inbetween
