#pragma once

// X-configuration quadrotor: quadratic rotor thrust/drag torque, gravity,
// fixed-step semi-implicit Euler. Rotor layout (body frame, x forward,
// y left, z up), lever d = arm_length / sqrt(2):
//
//   rotor 1 front-right (+d, -d)    rotor 4 front-left (+d, +d)
//   rotor 2 back-right  (-d, -d)    rotor 3 back-left  (-d, +d)

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "ductnav/error.hpp"

namespace ductnav::dynamics {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using Vec4 = std::array<double, 4>;

inline constexpr double kRpmToRadPerSec = 2.0 * std::numbers::pi / 60.0;
inline constexpr double kHoverRpm = 14468.43;

struct QuadParams {
    double mass = 0.027;
    Vec3 inertia_diag = Vec3(1.4e-5, 1.4e-5, 2.17e-5);
    double arm_length = 0.046;
    double k_thrust = 0.0;  // derived from hover balance by crazyflie()
    double k_torque = 7.8e-11;
    double omega_hover = kHoverRpm * kRpmToRadPerSec;
    std::array<double, 4> spin_dirs{-1.0, 1.0, -1.0, 1.0};
    double dt = 0.01;
    double collision_radius = 0.05;
    double gravity = 9.81;

    /// Thrust coefficient that makes four rotors at omega_hover carry mass * gravity.
    static double hover_thrust_coefficient(double mass, double gravity, double omega_hover) {
        return mass * gravity / (4.0 * omega_hover * omega_hover);
    }

    void calibrate_thrust() { k_thrust = hover_thrust_coefficient(mass, gravity, omega_hover); }

    static QuadParams crazyflie() {
        QuadParams p;
        p.calibrate_thrust();
        return p;
    }

    void validate() const {
        if (!(mass > 0.0) || !(gravity > 0.0) || !(dt > 0.0) || !(omega_hover > 0.0))
            throw PreconditionError("quad: mass, gravity, dt and omega_hover must be > 0");
        if (!(inertia_diag.array() > 0.0).all()) throw PreconditionError("quad: inertia must be > 0");
        if (!(arm_length > 0.0) || !(collision_radius > 0.0))
            throw PreconditionError("quad: arm_length and collision_radius must be > 0");
        const double balance = 4.0 * k_thrust * omega_hover * omega_hover;
        if (std::abs(balance - mass * gravity) > 1e-9 * mass * gravity)
            throw PreconditionError("quad: k_thrust does not balance gravity at omega_hover");
        double s = 0.0;
        for (double d : spin_dirs) {
            if (d != 1.0 && d != -1.0) throw PreconditionError("quad: spin_dirs must be +/-1");
            s += d;
        }
        if (s != 0.0) throw PreconditionError("quad: spin_dirs must contain two CW and two CCW rotors");
    }
};

/// Orientation maps body-frame vectors into the world frame (v_w = q * v_b).
struct RigidState {
    Vec3 position = Vec3::Zero();
    Quat orientation = Quat::Identity();
    Vec3 lin_vel_world = Vec3::Zero();
    Vec3 ang_vel_body = Vec3::Zero();

    Vec3 lin_vel_body() const { return orientation.conjugate() * lin_vel_world; }

    bool finite() const {
        return position.allFinite() && orientation.coeffs().allFinite() && lin_vel_world.allFinite() &&
               ang_vel_body.allFinite();
    }
};

struct MotorCommand {
    Vec4 a{0.0, 0.0, 0.0, 0.0};

    /// Components clamped to [-1, 1]; NaN maps to 0.
    MotorCommand clamped() const {
        MotorCommand out;
        for (std::size_t i = 0; i < 4; ++i) out.a[i] = std::isnan(a[i]) ? 0.0 : std::clamp(a[i], -1.0, 1.0);
        return out;
    }

    bool finite() const {
        return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
    }
};

/// External world-frame force / body torque added to the rotor wrench. Zero by default.
struct Disturbance {
    Vec3 force_world = Vec3::Zero();
    Vec3 torque_body = Vec3::Zero();
};

struct Wrench {
    double thrust = 0.0;  // along body +z
    Vec3 torque = Vec3::Zero();
};

inline Vec4 action_to_speed(const MotorCommand& cmd, const QuadParams& params) {
    const MotorCommand c = cmd.clamped();
    Vec4 w{};
    for (std::size_t i = 0; i < 4; ++i) w[i] = (1.0 + 0.8 * c.a[i]) * params.omega_hover;
    return w;
}

inline Wrench forces_torques(const Vec4& speeds, const QuadParams& params) {
    std::array<double, 4> f{};
    double yaw = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double w2 = speeds[i] * speeds[i];
        f[i] = params.k_thrust * w2;
        yaw += params.spin_dirs[i] * params.k_torque * w2;
    }
    const double d = params.arm_length / std::numbers::sqrt2;
    Wrench out;
    out.thrust = (f[0] + f[1]) + (f[2] + f[3]);
    // r x (0,0,F) = (r_y F, -r_x F, 0); grouped so mirrored inputs negate exactly
    out.torque.x() = d * ((f[2] + f[3]) - (f[0] + f[1]));
    out.torque.y() = d * ((f[1] + f[2]) - (f[0] + f[3]));
    out.torque.z() = yaw;
    return out;
}

inline Eigen::Matrix3d skew(const Vec3& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

struct DynamicsStep {
    RigidState state;
    bool fault = false;
};

/// Semi-implicit Euler: velocities first, then positions and attitude from the new velocities.
inline DynamicsStep step_dynamics(const RigidState& s, const MotorCommand& cmd, const QuadParams& params,
                                  const Disturbance& dist = {}) {
    const Wrench w = forces_torques(action_to_speed(cmd, params), params);
    const double dt = params.dt;

    const Vec3 thrust_world = s.orientation * Vec3(0.0, 0.0, w.thrust);
    const Vec3 accel = (thrust_world + dist.force_world) / params.mass + Vec3(0.0, 0.0, -params.gravity);

    // Gyroscopic term omega x I omega taken implicitly (one Newton step), torques explicitly.
    const Vec3& I = params.inertia_diag;
    const Vec3& om = s.ang_vel_body;
    const Vec3 Iom = I.cwiseProduct(om);
    const Eigen::Matrix3d Id = I.asDiagonal();
    const Eigen::Matrix3d J = Id + dt * (skew(om) * Id - skew(Iom));
    const Vec3 om_gyro = om - J.partialPivLu().solve(dt * om.cross(Iom));

    DynamicsStep out;
    RigidState& n = out.state;
    n.lin_vel_world = s.lin_vel_world + dt * accel;
    n.ang_vel_body = om_gyro + dt * (w.torque + dist.torque_body).cwiseQuotient(I);
    n.position = s.position + dt * n.lin_vel_world;

    const double rate = n.ang_vel_body.norm();
    if (rate > 0.0) {
        const Quat dq(Eigen::AngleAxisd(rate * dt, n.ang_vel_body / rate));
        n.orientation = s.orientation * dq;
    } else {
        n.orientation = s.orientation;
    }
    n.orientation.normalize();

    out.fault = !n.finite();
    return out;
}

}  // namespace ductnav::dynamics
