#pragma once

// Procedural gait generator: a smooth root path at constant speed, footsteps
// planted along it, and two-bone leg IK so stance feet stay pinned to the
// ground. Used as a desk-scale stand-in for captured locomotion data.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "clip.hpp"
#include "random.hpp"
#include "error.hpp"
#include "skeleton.hpp"

namespace inbetween {

struct SyntheticStyleSpec {
    int style_id = 1;
    std::string name = "walk";
    double speed = 1.2;            // m/s, constant along the root path
    double turn_rate = 0.5;        // rad/s amplitude of the random turning signal
    double turn_bias = 0.0;        // rad/s constant turning
    double arm_swing = 0.35;       // rad
    double crouch = 0.0;           // m the pelvis drops below normal standing height
    double stride_frequency = 1.0; // gait cycles per second (one left + one right step)
    double duty = 0.62;            // stance fraction of a cycle for each foot
    double bob = 0.015;            // m vertical pelvis oscillation
    double lean = 0.05;            // rad forward pelvis pitch
    double step_height = 0.10;     // m peak swing-foot lift
};

inline SyntheticStyleSpec idle_style() {
    return {0, "idle", 0.0, 0.0, 0.0, 0.05, 0.02, 0.3, 1.0, 0.004, 0.0, 0.0};
}
inline SyntheticStyleSpec walk_style() { return {}; }
inline SyntheticStyleSpec run_style() {
    return {2, "run", 3.0, 0.4, 0.0, 0.6, 0.06, 1.45, 0.38, 0.03, 0.15, 0.14};
}
inline SyntheticStyleSpec crouch_walk_style() {
    return {3, "crouch-walk", 0.7, 0.5, 0.0, 0.15, 0.22, 0.8, 0.65, 0.01, 0.3, 0.07};
}

/// Style presets indexed by style id; ids beyond the four base styles are
/// speed/cadence variants of the moving styles.
inline SyntheticStyleSpec style_preset(int id) {
    switch (id) {
    case 0: return idle_style();
    case 1: return walk_style();
    case 2: return run_style();
    case 3: return crouch_walk_style();
    default: break;
    }
    SyntheticStyleSpec s = style_preset(1 + (id - 4) % 3);
    const double k = 0.8 + 0.1 * ((id - 4) / 3 % 4);
    s.style_id = id;
    s.name += "-v" + std::to_string(id);
    s.speed *= k;
    s.stride_frequency *= std::sqrt(k);
    return s;
}

struct SyntheticClip {
    MotionClip clip;     // with FK and velocity caches
    ContactTrack stance; // ground-truth stance schedule per foot joint
};

namespace synth_detail {

inline double smoothstep(double w) { return w * w * (3.0 - 2.0 * w); }

// Orthonormal frame whose first axis is `dir` and second is `pole` made
// perpendicular to it.
inline Mat3 bone_frame(const Vec3& dir, const Vec3& pole) {
    const Vec3 d = dir.normalized();
    Vec3 p = pole - pole.dot(d) * d;
    if (p.norm() < 1e-9) p = Vec3::UnitZ() - Vec3::UnitZ().dot(d) * d;
    p.normalize();
    Mat3 f;
    f.col(0) = d;
    f.col(1) = p;
    f.col(2) = d.cross(p);
    return f;
}

struct RootPath {
    double t0 = 0, h = 0;
    std::vector<Vec2> pos;
    std::vector<double> yaw;

    Vec2 position(double t) const { return lerp_at(t, pos); }
    double heading(double t) const { return lerp_at(t, yaw); }

    template <class V>
    V lerp_at(double t, const std::vector<V>& v) const {
        double s = (t - t0) / h;
        s = std::clamp(s, 0.0, static_cast<double>(v.size() - 1));
        const auto i = std::min(static_cast<std::size_t>(s), v.size() - 2);
        const double w = s - static_cast<double>(i);
        return V((1.0 - w) * v[i] + w * v[i + 1]);
    }
};

} // namespace synth_detail

inline SyntheticClip generate_synthetic_clip(const SyntheticStyleSpec& spec, double duration, std::uint64_t seed) {
    using namespace synth_detail;
    const double params[] = {spec.speed, spec.turn_rate, spec.turn_bias, spec.arm_swing, spec.crouch,
                             spec.stride_frequency, spec.duty, spec.bob, spec.lean, spec.step_height, duration};
    for (double p : params)
        if (!std::isfinite(p)) throw Error(ErrorKind::InvalidSpec, "non-finite synthetic style parameter");
    if (spec.speed < 0 || spec.stride_frequency <= 0 || spec.duty <= 0 || spec.duty > 1)
        throw Error(ErrorKind::InvalidSpec, "speed must be >= 0, stride frequency > 0, duty in (0, 1]");
    if (duration < 1.0) throw Error(ErrorKind::InvalidSpec, "synthetic clips must last at least 1 s");

    std::mt19937_64 rng(seed);
    const double yaw0 = (uniform01(rng) * 2.0 - 1.0) * kPi;
    const double f1 = 0.05 + 0.15 * uniform01(rng), f2 = 0.1 + 0.2 * uniform01(rng);
    const double ph1 = 2 * kPi * uniform01(rng), ph2 = 2 * kPi * uniform01(rng);
    const double gait0 = uniform01(rng);
    const bool moving = spec.speed > 0.0;

    // Heading is the closed-form integral of the turning-rate signal.
    auto heading_at = [&](double t) {
        const double w1 = 2 * kPi * f1, w2 = 2 * kPi * f2;
        return yaw0 + spec.turn_bias * t +
               spec.turn_rate * (0.6 * (std::cos(ph1) - std::cos(w1 * t + ph1)) / w1 +
                                 0.4 * (std::cos(ph2) - std::cos(w2 * t + ph2)) / w2);
    };

    // Root path sampled finely over [-3, duration + 3] s, integrated outward
    // from the origin at t = 0 with the midpoint rule.
    RootPath path;
    path.h = kFrameTime / 8.0;
    const int zero = static_cast<int>(std::lround(3.0 / path.h));
    const int n_grid = zero + static_cast<int>(std::ceil((duration + 3.0) / path.h)) + 1;
    path.t0 = -zero * path.h;
    path.pos.assign(n_grid, Vec2::Zero());
    path.yaw.resize(n_grid);
    for (int i = 0; i < n_grid; ++i) path.yaw[i] = heading_at(path.t0 + i * path.h);
    for (int i = zero + 1; i < n_grid; ++i) {
        const double tm = path.t0 + (i - 0.5) * path.h;
        path.pos[i] = path.pos[i - 1] + path.h * spec.speed * facing_of_yaw(heading_at(tm));
    }
    for (int i = zero - 1; i >= 0; --i) {
        const double tm = path.t0 + (i + 0.5) * path.h;
        path.pos[i] = path.pos[i + 1] - path.h * spec.speed * facing_of_yaw(heading_at(tm));
    }

    Skeleton sk = default_skeleton();
    const int lup = sk.find("LeftUpLeg"), rup = sk.find("RightUpLeg");
    const double thigh = sk.joints[sk.find("LeftLeg")].offset.norm();
    const double shin = sk.joints[sk.find("LeftFoot")].offset.norm();
    const double ankle_clearance = sk.rest_clearance()[sk.find("LeftFoot")];
    const double lateral = 0.10;
    const double stand_height = moving ? 0.90 : 0.95;

    const double freq = moving ? spec.stride_frequency : 1.0;
    const std::array<double, 2> side_offset{0.0, 0.5}; // left, right
    const std::array<double, 2> side_sign{1.0, -1.0};

    auto left_of = [](double yaw) { return Vec2{std::cos(yaw), -std::sin(yaw)}; };
    auto plant = [&](int foot, double k) {
        const double tm = (k + spec.duty / 2 - gait0 - side_offset[foot]) / freq;
        const double y = path.heading(tm);
        return std::pair<Vec2, double>{path.position(tm) + side_sign[foot] * lateral * left_of(y), y};
    };

    const int frames = static_cast<int>(std::floor(duration / kFrameTime + 1e-9)) + 1;
    MotionClip clip;
    clip.skeleton = sk;
    clip.style = spec.style_id;
    clip.frame_time = kFrameTime;

    FootJoints feet;
    ContactTrack stance;
    stance.joints = feet.names;
    stance.flags.reserve(static_cast<std::size_t>(frames) * 4);

    std::vector<Quat> local(sk.size(), Quat::identity());
    for (int f = 0; f < frames; ++f) {
        const double t = f * kFrameTime;
        const double heading = path.heading(t);
        const Vec2 g = path.position(t);
        const double c_left = t * freq + gait0;

        const double bob = -spec.bob * std::cos(4 * kPi * (c_left - spec.duty / 2));
        const double sway = moving ? 0.03 * std::sin(2 * kPi * c_left) : 0.0;
        const Vec3 root{g.x(), stand_height - spec.crouch + bob, g.y()};
        const Quat root_q = yaw_quat(heading) * Quat::from_axis_angle(Vec3::UnitX(), spec.lean) *
                            Quat::from_axis_angle(Vec3::UnitZ(), sway);
        const Mat3 root_m = root_q.to_matrix();
        local[0] = root_q;

        std::array<bool, 2> in_stance{};
        for (int foot = 0; foot < 2; ++foot) {
            Vec2 ankle_g;
            double foot_yaw, lift = 0.0;
            if (!moving) {
                ankle_g = Vec2(path.position(0.0) + side_sign[foot] * lateral * left_of(yaw0));
                foot_yaw = yaw0;
                in_stance[foot] = true;
            } else {
                const double c = t * freq + gait0 + side_offset[foot];
                const double k = std::floor(c);
                const double u = c - k;
                if (u < spec.duty) {
                    std::tie(ankle_g, foot_yaw) = plant(foot, k);
                    in_stance[foot] = true;
                } else {
                    const double w = (u - spec.duty) / (1.0 - spec.duty);
                    auto [p0, y0] = plant(foot, k);
                    auto [p1, y1] = plant(foot, k + 1);
                    const double s = smoothstep(w);
                    ankle_g = (1 - s) * p0 + s * p1;
                    foot_yaw = y0 + s * wrap_angle(y1 - y0);
                    lift = spec.step_height * std::sin(kPi * w);
                }
            }
            const Vec3 target{ankle_g.x(), ankle_clearance + lift, ankle_g.y()};
            const int up = foot == 0 ? lup : rup;
            const Vec3 hip = root + root_m * sk.joints[up].offset;

            Vec3 to = target - hip;
            double d = to.norm();
            const Vec3 u = to / d;
            d = std::clamp(d, std::abs(thigh - shin) + 1e-4, thigh + shin - 1e-4);
            const Vec3 ankle = hip + d * u;
            const Vec3 forward{std::sin(foot_yaw), 0.0, std::cos(foot_yaw)};
            Vec3 pole = forward - forward.dot(u) * u;
            pole.normalize();
            const double a = (thigh * thigh - shin * shin + d * d) / (2 * d);
            const double hk = std::sqrt(std::max(0.0, thigh * thigh - a * a));
            const Vec3 knee = hip + a * u + hk * pole;

            const Mat3 rest = bone_frame(-Vec3::UnitY(), Vec3::UnitZ());
            const Mat3 thigh_w = bone_frame(knee - hip, forward) * rest.transpose();
            const Mat3 shin_w = bone_frame(ankle - knee, forward) * rest.transpose();
            const Mat3 foot_w = yaw_quat(foot_yaw).to_matrix();
            local[up] = Quat::from_matrix(root_m.transpose() * thigh_w);
            local[up + 1] = Quat::from_matrix(thigh_w.transpose() * shin_w);
            local[up + 2] = Quat::from_matrix(shin_w.transpose() * foot_w);
            local[up + 3] = Quat::identity();
        }
        for (int foot = 0; foot < 2; ++foot) {
            stance.flags.push_back(in_stance[foot] ? 1 : 0); // ankle
            stance.flags.push_back(in_stance[foot] ? 1 : 0); // toe
        }

        // upper body
        const double breathe = moving ? 0.0 : 0.03 * std::sin(2 * kPi * spec.stride_frequency * t);
        const double twist = moving ? -0.08 * std::sin(2 * kPi * c_left) : 0.0;
        local[sk.find("Spine")] = Quat::from_axis_angle(Vec3::UnitY(), twist) *
                                  Quat::from_axis_angle(Vec3::UnitZ(), breathe - sway);
        local[sk.find("Spine1")] = Quat::from_axis_angle(Vec3::UnitX(), -0.3 * spec.lean);
        local[sk.find("Spine2")] = Quat::from_axis_angle(Vec3::UnitX(), breathe * 0.5);
        local[sk.find("Neck")] = Quat::from_axis_angle(Vec3::UnitX(), -0.4 * spec.lean);
        local[sk.find("Head")] = Quat::from_axis_angle(Vec3::UnitX(), -0.3 * spec.lean);
        for (int side = 0; side < 2; ++side) {
            const std::string pre = side == 0 ? "Left" : "Right";
            const double sgn = side_sign[side];
            const double c = t * freq + gait0 + side_offset[side];
            const double swing = moving ? spec.arm_swing * std::cos(2 * kPi * (c - spec.duty))
                                        : spec.arm_swing * std::sin(2 * kPi * spec.stride_frequency * t + side);
            local[sk.find(pre + "Shoulder")] = Quat::identity();
            local[sk.find(pre + "Arm")] = Quat::from_axis_angle(Vec3::UnitZ(), sgn * 0.12) *
                                          Quat::from_axis_angle(Vec3::UnitX(), -swing);
            local[sk.find(pre + "ForeArm")] =
                Quat::from_axis_angle(Vec3::UnitX(), -(0.2 + 0.5 * spec.arm_swing + 0.3 * std::max(0.0, swing)));
            local[sk.find(pre + "Hand")] = Quat::identity();
        }
        clip.push_frame(root, local);
    }
    return {derive(std::move(clip)), std::move(stance)};
}

struct SyntheticDatasetSpec {
    int styles = 4;
    double minutes = 10.0;
    double clip_seconds = 20.0;
    std::uint64_t seed = 7;
    double turn_bias = 0.0; // rad/s; each moving clip gets a constant turn drawn from [-turn_bias, turn_bias]
};

/// Splits the requested minutes evenly across `styles` style ids, in clips
/// of `clip_seconds`. Each clip gets its own seed derived from the dataset seed.
inline std::vector<SyntheticClip> generate_synthetic_dataset(const SyntheticDatasetSpec& spec) {
    if (spec.styles < 1 || !(spec.minutes > 0) || !(spec.clip_seconds >= 1.0) || !(spec.turn_bias >= 0))
        throw Error(ErrorKind::InvalidSpec, "dataset needs >= 1 style, positive minutes, clips >= 1 s, turn bias >= 0");
    const double per_style = spec.minutes * 60.0 / spec.styles;
    const int clips_per_style = std::max(1, static_cast<int>(std::lround(per_style / spec.clip_seconds)));
    std::vector<SyntheticClip> out;
    std::mt19937_64 rng(spec.seed);
    std::mt19937_64 turn_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL); // separate stream: bias 0 leaves clips unchanged
    for (int s = 0; s < spec.styles; ++s) {
        SyntheticStyleSpec style = style_preset(s);
        for (int c = 0; c < clips_per_style; ++c) {
            const std::uint64_t clip_seed = rng();
            if (spec.turn_bias > 0 && style.speed > 0) style.turn_bias = uniform(turn_rng, -spec.turn_bias, spec.turn_bias);
            out.push_back(generate_synthetic_clip(style, spec.clip_seconds, clip_seed));
        }
    }
    return out;
}

} // namespace inbetween
