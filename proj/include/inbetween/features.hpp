#pragma once

// Network-facing features: the expert input (current pose, target pose, root
// trajectory window), the gating condition (phase window, style, time to
// arrive), the prediction targets, and per-dimension normalization.
//
// Everything is expressed in the current root frame: origin at the root's
// ground projection, +z along the root's ground-projected facing.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "clip.hpp"
#include "error.hpp"
#include "rotmath.hpp"

namespace inbetween {

inline constexpr int kWindowSamples = 13; // trajectory and phase windows
inline constexpr int kWindowCenter = 6;
inline constexpr int kWindowStep = 5;     // frames between window samples (2 s span at 30 fps)
inline constexpr int kFutureSamples = 7;  // predicted future window, 1 s
inline constexpr int kFutureStep = 5;
inline constexpr int kTrajDims = 6;       // position, velocity, facing on the ground
inline constexpr int kPhaseDims = 2 * kPhaseChannels;
inline constexpr int kDefaultTtaDims = 128;
inline constexpr int kMaxTrainingHorizon = 90; // 3 s

/// Dimensions of every feature block for a skeleton with `joints` joints and
/// `feet` contact joints.
struct FeatureLayout {
    int joints = kDefaultJointCount;
    int feet = 4;

    int current_dims() const { return joints * 12; }
    int target_dims() const { return joints * 9; }
    int trajectory_dims() const { return kWindowSamples * kTrajDims; }
    int input_dims() const { return current_dims() + target_dims() + trajectory_dims(); }
    int target_offset() const { return current_dims(); }
    int trajectory_offset() const { return current_dims() + target_dims(); }

    int phase_window_dims() const { return kWindowSamples * kPhaseDims; }

    // output: positions | rotations | velocities | contacts | trajectory | phases
    int out_positions() const { return 0; }
    int out_rotations() const { return joints * 3; }
    int out_velocities() const { return joints * 9; }
    int out_contacts() const { return joints * 12; }
    int out_trajectory() const { return out_contacts() + kFutureSamples * feet; }
    int out_phases() const { return out_trajectory() + kFutureSamples * kTrajDims; }
    int output_dims() const { return out_phases() + kFutureSamples * kPhaseDims; }
};

/// Index groups of the input vector sharing one unit and meaning: current
/// positions, velocities, rotations; target positions, rotations; trajectory
/// positions, velocities, facings.
inline std::vector<std::vector<int>> input_feature_groups(const FeatureLayout& L) {
    std::vector<std::vector<int>> g(8);
    for (int j = 0; j < L.joints; ++j) {
        const int c = 12 * j, t = L.target_offset() + 9 * j;
        for (int k = 0; k < 3; ++k) g[0].push_back(c + k), g[1].push_back(c + 3 + k), g[3].push_back(t + k);
        for (int k = 0; k < 6; ++k) g[2].push_back(c + 6 + k), g[4].push_back(t + 3 + k);
    }
    for (int i = 0; i < kWindowSamples; ++i)
        for (int k = 0; k < 2; ++k)
            for (int q = 0; q < 3; ++q) g[5 + q].push_back(L.trajectory_offset() + i * kTrajDims + 2 * q + k);
    return g;
}

// --- phase and time encodings ----------------------------------------------

/// (A sin 2piS, A cos 2piS) per channel.
inline std::array<double, kPhaseDims> encode_phase(const PhaseFrame& p) {
    std::array<double, kPhaseDims> out{};
    for (int n = 0; n < kPhaseChannels; ++n) {
        const double a = 2.0 * kPi * p.phase[n];
        out[2 * n] = p.amplitude[n] * std::sin(a);
        out[2 * n + 1] = p.amplitude[n] * std::cos(a);
    }
    return out;
}

/// Inverse of encode_phase: amplitude = pair norm, phase = atan2 / 2pi in [0, 1).
inline PhaseFrame decode_phase(const double* pairs) {
    PhaseFrame p;
    for (int n = 0; n < kPhaseChannels; ++n) {
        const double s = pairs[2 * n], c = pairs[2 * n + 1];
        p.amplitude[n] = std::hypot(s, c);
        double ph = std::atan2(s, c) / (2.0 * kPi);
        if (ph < 0) ph += 1.0;
        if (ph >= 1.0) ph -= 1.0;
        p.phase[n] = ph;
    }
    return p;
}

/// Sinusoidal time-to-arrive encoding: z[2i] = sin(tta / 10000^(2i/d)),
/// z[2i+1] = cos(same).
inline std::vector<double> encode_tta(double tta, int d = kDefaultTtaDims) {
    if (d <= 0 || d % 2 != 0) throw Error(ErrorKind::OddDimension, "tta encoding dimension must be positive and even");
    std::vector<double> z(d);
    for (int i = 0; i < d / 2; ++i) {
        const double arg = tta / std::pow(10000.0, 2.0 * i / d);
        z[2 * i] = std::sin(arg);
        z[2 * i + 1] = std::cos(arg);
    }
    return z;
}

/// Row `id` of a styles x dims embedding table.
inline Eigen::VectorXd style_embed(int id, const Eigen::MatrixXd& table) {
    if (id < 0 || id >= table.rows())
        throw Error(ErrorKind::UnknownStyle, "style id " + std::to_string(id) + " outside table of " +
                                                 std::to_string(table.rows()) + " styles");
    return table.row(id).transpose();
}

// --- phase proxy ------------------------------------------------------------

namespace phase_detail {

struct Fit {
    double amplitude = 0, phase = 0, residual = 0;
};

// Least-squares fit of x(tau) ~ a sin(w tau) + b cos(w tau) + c.
inline Fit fit_sinusoid(const std::vector<double>& x, const std::vector<double>& tau, double freq) {
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atb = Eigen::Vector3d::Zero();
    const double w = 2.0 * kPi * freq;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const Eigen::Vector3d r(std::sin(w * tau[k]), std::cos(w * tau[k]), 1.0);
        ata += r * r.transpose();
        atb += r * x[k];
    }
    const Eigen::Vector3d sol = ata.ldlt().solve(atb);
    Fit f;
    f.amplitude = std::hypot(sol[0], sol[1]);
    // A sin(w tau + 2 pi S) = A cos(2 pi S) sin(w tau) + A sin(2 pi S) cos(w tau)
    double s = std::atan2(sol[1], sol[0]) / (2.0 * kPi);
    if (s < 0) s += 1.0;
    if (s >= 1.0) s -= 1.0;
    f.phase = s;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double e = x[k] - (sol[0] * std::sin(w * tau[k]) + sol[1] * std::cos(w * tau[k]) + sol[2]);
        f.residual += e * e;
    }
    return f;
}

} // namespace phase_detail

struct PhaseProxyConfig {
    double window_seconds = 2.0;
    double min_frequency = 0.2; // Hz
    double max_frequency = 4.0;
    double grid_step = 0.1;
    int refine_iterations = 14;
    double min_variance = 1e-10; // below this the channel is treated as aperiodic
};

/// Names of the joints whose vertical and forward velocities drive the ten
/// phase channels, in channel order.
inline const std::array<const char*, 5>& phase_channel_joints() {
    static const std::array<const char*, 5> names{"LeftToe", "RightToe", "LeftHand", "RightHand", "Hips"};
    return names;
}

/// Deterministic stand-in for a learned periodic autoencoder: for each
/// channel, fits the dominant sinusoid over a sliding window centered on each
/// frame. Amplitude is the fitted amplitude, phase the fitted phase at the
/// window center.
inline std::vector<PhaseFrame> extract_phase_proxy(const MotionClip& clip, const PhaseProxyConfig& cfg = {}) {
    if (!clip.has_velocities()) throw Error(ErrorKind::Format, "phase extraction needs the velocity cache");
    const int half = static_cast<int>(std::lround(cfg.window_seconds / clip.frame_time / 2.0));
    const int width = 2 * half + 1;
    if (clip.frames() < width)
        throw Error(ErrorKind::TooShort, "phase extraction needs at least " + std::to_string(cfg.window_seconds) + " s");
    std::array<int, 5> joint_idx{};
    for (std::size_t i = 0; i < joint_idx.size(); ++i) {
        joint_idx[i] = clip.skeleton.find(phase_channel_joints()[i]);
        if (joint_idx[i] < 0)
            throw Error(ErrorKind::MissingFootJoint, std::string("phase channel joint '") + phase_channel_joints()[i] + "' missing");
    }

    // channel signals
    const int frames = clip.frames();
    std::vector<std::vector<double>> signal(kPhaseChannels, std::vector<double>(frames));
    for (int f = 0; f < frames; ++f) {
        const Vec2 facing = ground_facing(clip.world_rotation(f, 0));
        for (int i = 0; i < 5; ++i) {
            const Vec3& v = clip.velocity(f, joint_idx[i]);
            signal[2 * i][f] = v.y();
            signal[2 * i + 1][f] = facing.dot(ground(v));
        }
    }

    std::vector<PhaseFrame> out(frames);
    std::vector<double> x(width), tau(width);
    for (int f = 0; f < frames; ++f) {
        const int lo = std::clamp(f - half, 0, frames - width);
        for (int k = 0; k < width; ++k) tau[k] = (lo + k - f) * clip.frame_time;
        for (int ch = 0; ch < kPhaseChannels; ++ch) {
            double mean = 0.0;
            for (int k = 0; k < width; ++k) mean += signal[ch][lo + k];
            mean /= width;
            double var = 0.0;
            for (int k = 0; k < width; ++k) {
                x[k] = signal[ch][lo + k] - mean;
                var += x[k] * x[k];
            }
            if (var / width < cfg.min_variance) continue; // amplitude 0, phase 0

            double best_f = cfg.min_frequency, best_r = INFINITY;
            for (double fr = cfg.min_frequency; fr <= cfg.max_frequency + 1e-9; fr += cfg.grid_step) {
                const double r = phase_detail::fit_sinusoid(x, tau, fr).residual;
                if (r < best_r) {
                    best_r = r;
                    best_f = fr;
                }
            }
            // golden-section refinement around the best grid frequency
            double a = std::max(cfg.min_frequency, best_f - cfg.grid_step);
            double b = std::min(cfg.max_frequency, best_f + cfg.grid_step);
            const double g = 0.5 * (std::sqrt(5.0) - 1.0);
            double c = b - g * (b - a), d = a + g * (b - a);
            double rc = phase_detail::fit_sinusoid(x, tau, c).residual;
            double rd = phase_detail::fit_sinusoid(x, tau, d).residual;
            for (int it = 0; it < cfg.refine_iterations; ++it) {
                if (rc < rd) {
                    b = d;
                    d = c;
                    rd = rc;
                    c = b - g * (b - a);
                    rc = phase_detail::fit_sinusoid(x, tau, c).residual;
                } else {
                    a = c;
                    c = d;
                    rc = rd;
                    d = a + g * (b - a);
                    rd = phase_detail::fit_sinusoid(x, tau, d).residual;
                }
            }
            double fr = 0.5 * (a + b);
            if (best_r < std::min(rc, rd)) fr = best_f;
            const phase_detail::Fit fit = phase_detail::fit_sinusoid(x, tau, fr);
            out[f].amplitude[ch] = fit.amplitude;
            out[f].phase[ch] = fit.phase;
        }
    }
    return out;
}

/// Returns the clip with its phase cache filled.
inline MotionClip with_phases(MotionClip clip, const PhaseProxyConfig& cfg = {}) {
    clip.phases = extract_phase_proxy(clip, cfg);
    return clip;
}

// --- root frame -------------------------------------------------------------

// Ground-projected root frame of one frame.
struct RootFrame {
    Vec2 origin = Vec2::Zero();
    double yaw = 0.0;

    static RootFrame of(const Vec3& root_position, const Quat& root_rotation) {
        return {ground(root_position), yaw_of(ground_facing(root_rotation))};
    }
    static RootFrame of(const MotionClip& clip, int frame) {
        return of(clip.world_position(frame, 0), clip.world_rotation(frame, 0));
    }

    Quat inverse_yaw() const { return yaw_quat(-yaw); }

    Vec3 point_to_local(const Vec3& p) const {
        return inverse_yaw().rotate(p - Vec3(origin.x(), 0.0, origin.y()));
    }
    Vec3 vector_to_local(const Vec3& v) const { return inverse_yaw().rotate(v); }
    Quat rotation_to_local(const Quat& q) const { return (inverse_yaw() * q).normalized(); }
    Vec2 ground_point_to_local(const Vec2& p) const { return apply_yaw(p - origin, -yaw); }
    Vec2 ground_vector_to_local(const Vec2& v) const { return apply_yaw(v, -yaw); }

    Vec3 point_to_world(const Vec3& p) const {
        return yaw_quat(yaw).rotate(p) + Vec3(origin.x(), 0.0, origin.y());
    }
    Vec3 vector_to_world(const Vec3& v) const { return yaw_quat(yaw).rotate(v); }
    Quat rotation_to_world(const Quat& q) const { return (yaw_quat(yaw) * q).normalized(); }
    Vec2 ground_point_to_world(const Vec2& p) const { return apply_yaw(p, yaw) + origin; }
    Vec2 ground_vector_to_world(const Vec2& v) const { return apply_yaw(v, yaw); }
};

/// Root state on the ground plane, world coordinates.
struct RootSample {
    Vec2 position = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();
    Vec2 facing{0.0, 1.0};
};

inline RootSample root_sample(const MotionClip& clip, int frame) {
    return {ground(clip.world_position(frame, 0)), ground(clip.velocity(frame, 0)),
            ground_facing(clip.world_rotation(frame, 0))};
}

// --- network-facing state ---------------------------------------------------

struct PoseState {
    std::vector<double> current;          // joints x {position 3, velocity 3, rotation 6}
    std::vector<double> target;           // joints x {position 3, rotation 6}
    std::vector<std::uint8_t> target_mask; // 1 = masked (entries zeroed)
    std::vector<double> trajectory;       // 13 x {position 2, velocity 2, facing 2}

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd x(current.size() + target.size() + trajectory.size());
        std::size_t k = 0;
        for (double v : current) x[k++] = v;
        for (double v : target) x[k++] = v;
        for (double v : trajectory) x[k++] = v;
        return x;
    }
};

struct Condition {
    std::array<PhaseFrame, kWindowSamples> phases{};
    int style = 0;
    int tta = 1;

    Eigen::VectorXd flatten_phases() const {
        Eigen::VectorXd p(kWindowSamples * kPhaseDims);
        for (int i = 0; i < kWindowSamples; ++i) {
            const auto e = encode_phase(phases[i]);
            for (int k = 0; k < kPhaseDims; ++k) p[i * kPhaseDims + k] = e[k];
        }
        return p;
    }
};

/// Next-frame pose plus the 1 s future window, all in the current root frame.
struct OutputState {
    std::vector<double> positions;  // joints x 3
    std::vector<double> rotations;  // joints x 6
    std::vector<double> velocities; // joints x 3
    std::vector<double> contacts;   // 7 x feet
    std::vector<double> trajectory; // 7 x 6
    std::vector<double> phases;     // 7 x 20

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd y(positions.size() + rotations.size() + velocities.size() + contacts.size() +
                          trajectory.size() + phases.size());
        std::size_t k = 0;
        for (const auto* v : {&positions, &rotations, &velocities, &contacts, &trajectory, &phases})
            for (double s : *v) y[k++] = s;
        return y;
    }

    static OutputState unflatten(const Eigen::VectorXd& y, const FeatureLayout& L) {
        if (y.size() != L.output_dims()) throw Error(ErrorKind::ShapeMismatch, "output vector has wrong size");
        OutputState o;
        auto take = [&](std::vector<double>& dst, int begin, int end) { dst.assign(y.data() + begin, y.data() + end); };
        take(o.positions, L.out_positions(), L.out_rotations());
        take(o.rotations, L.out_rotations(), L.out_velocities());
        take(o.velocities, L.out_velocities(), L.out_contacts());
        take(o.contacts, L.out_contacts(), L.out_trajectory());
        take(o.trajectory, L.out_trajectory(), L.out_phases());
        take(o.phases, L.out_phases(), L.output_dims());
        return o;
    }
};

namespace features_detail {
inline void push3(std::vector<double>& v, const Vec3& a) { v.insert(v.end(), {a.x(), a.y(), a.z()}); }
inline void push2(std::vector<double>& v, const Vec2& a) { v.insert(v.end(), {a.x(), a.y()}); }
inline void push6(std::vector<double>& v, const Quat& q) {
    const SixD s = quat_to_sixd(q);
    push3(v, s.a);
    push3(v, s.b);
}
} // namespace features_detail

/// Builds PoseState from explicit pieces: the clip supplies the current
/// frame, `target` is a world-space pose, `window` the 13 world root samples.
inline PoseState make_pose_state(const MotionClip& clip, int frame, const FramePose& target,
                                 const std::vector<std::uint8_t>& mask,
                                 const std::array<RootSample, kWindowSamples>& window) {
    using namespace features_detail;
    const int n = clip.joints();
    if (static_cast<int>(target.positions.size()) != n || static_cast<int>(mask.size()) != n)
        throw Error(ErrorKind::ShapeMismatch, "target pose / mask size does not match skeleton");
    const RootFrame rf = RootFrame::of(clip, frame);
    PoseState s;
    s.current.reserve(n * 12);
    s.target.reserve(n * 9);
    s.trajectory.reserve(kWindowSamples * kTrajDims);
    for (int j = 0; j < n; ++j) {
        push3(s.current, rf.point_to_local(clip.world_position(frame, j)));
        push3(s.current, rf.vector_to_local(clip.velocity(frame, j)));
        push6(s.current, rf.rotation_to_local(clip.world_rotation(frame, j)));
    }
    s.target_mask = mask;
    for (int j = 0; j < n; ++j) {
        if (mask[j]) {
            s.target.insert(s.target.end(), 9, 0.0);
            continue;
        }
        push3(s.target, rf.point_to_local(target.positions[j]));
        push6(s.target, rf.rotation_to_local(target.rotations[j]));
    }
    for (const RootSample& r : window) {
        push2(s.trajectory, rf.ground_point_to_local(r.position));
        push2(s.trajectory, rf.ground_vector_to_local(r.velocity));
        push2(s.trajectory, rf.ground_vector_to_local(r.facing).normalized());
    }
    return s;
}

/// The trajectory window of a clip around `frame`. Past samples clamp at the
/// first frame; future samples clamp at `horizon_end` (the target frame),
/// beyond which the root is held still.
inline std::array<RootSample, kWindowSamples> clip_root_window(const MotionClip& clip, int frame, int horizon_end) {
    std::array<RootSample, kWindowSamples> w;
    for (int i = 0; i < kWindowSamples; ++i) {
        const int k = frame + (i - kWindowCenter) * kWindowStep;
        if (k > horizon_end) {
            w[i] = root_sample(clip, horizon_end);
            w[i].velocity = Vec2::Zero();
        } else {
            w[i] = root_sample(clip, std::max(0, k));
        }
    }
    return w;
}

inline std::array<PhaseFrame, kWindowSamples> clip_phase_window(const MotionClip& clip, int frame) {
    if (!clip.has_phases()) throw Error(ErrorKind::Format, "clip has no phase cache");
    std::array<PhaseFrame, kWindowSamples> w;
    for (int i = 0; i < kWindowSamples; ++i)
        w[i] = clip.phases[std::clamp(frame + (i - kWindowCenter) * kWindowStep, 0, clip.frames() - 1)];
    return w;
}

/// Expert input and gating condition for a (frame, target frame) pair.
inline std::pair<PoseState, Condition> assemble(const MotionClip& clip, int frame, int target_frame,
                                                const std::vector<std::uint8_t>& mask,
                                                int max_horizon = kMaxTrainingHorizon) {
    if (frame < 0 || target_frame >= clip.frames() || frame >= target_frame || target_frame - frame > max_horizon)
        throw Error(ErrorKind::IndexOutOfRange, "need 0 <= frame < target < frames and target - frame <= " +
                                                    std::to_string(max_horizon));
    if (!clip.has_fk() || !clip.has_velocities()) throw Error(ErrorKind::Format, "assemble needs FK and velocity caches");
    const FramePose target{{clip.world_positions.begin() + clip.idx(target_frame, 0),
                            clip.world_positions.begin() + clip.idx(target_frame + 1, 0)},
                           {clip.world_rotations.begin() + clip.idx(target_frame, 0),
                            clip.world_rotations.begin() + clip.idx(target_frame + 1, 0)}};
    PoseState s = make_pose_state(clip, frame, target, mask, clip_root_window(clip, frame, target_frame));
    Condition c;
    c.phases = clip_phase_window(clip, frame);
    c.style = clip.style;
    c.tta = target_frame - frame;
    return {std::move(s), c};
}

/// Prediction target for `frame`: the next frame's pose and the future window
/// starting at the next frame, in the root frame of `frame`.
inline OutputState ground_truth(const MotionClip& clip, int frame, const ContactTrack& contacts) {
    using namespace features_detail;
    if (frame < 0 || frame + 1 >= clip.frames()) throw Error(ErrorKind::IndexOutOfRange, "ground truth needs a next frame");
    if (contacts.frames() != clip.frames()) throw Error(ErrorKind::ShapeMismatch, "contact track length mismatch");
    const RootFrame rf = RootFrame::of(clip, frame);
    const int next = frame + 1;
    OutputState o;
    for (int j = 0; j < clip.joints(); ++j) {
        push3(o.positions, rf.point_to_local(clip.world_position(next, j)));
        push6(o.rotations, rf.rotation_to_local(clip.world_rotation(next, j)));
        push3(o.velocities, rf.vector_to_local(clip.velocity(next, j)));
    }
    for (int t = 0; t < kFutureSamples; ++t) {
        const int k = std::min(next + t * kFutureStep, clip.frames() - 1);
        for (int foot = 0; foot < contacts.feet(); ++foot) o.contacts.push_back(contacts.at(k, foot) ? 1.0 : 0.0);
        const RootSample r = root_sample(clip, k);
        push2(o.trajectory, rf.ground_point_to_local(r.position));
        push2(o.trajectory, rf.ground_vector_to_local(r.velocity));
        push2(o.trajectory, rf.ground_vector_to_local(r.facing).normalized());
        const auto e = encode_phase(clip.phases.at(k));
        o.phases.insert(o.phases.end(), e.begin(), e.end());
    }
    return o;
}

// --- normalization ----------------------------------------------------------

struct Normalizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;

    static constexpr double kStdFloor = 1e-6;

    /// Columns of `samples` are observations.
    static Normalizer fit(const Eigen::MatrixXd& samples) {
        if (samples.cols() == 0) throw Error(ErrorKind::EmptyDataset, "cannot fit a normalizer on no samples");
        Normalizer n;
        n.mean = samples.rowwise().mean();
        const Eigen::MatrixXd centered = samples.colwise() - n.mean;
        n.stddev = (centered.array().square().rowwise().sum() / static_cast<double>(samples.cols())).sqrt();
        n.stddev = n.stddev.cwiseMax(kStdFloor);
        return n;
    }

    /// Replaces the deviations at `idx` by their mean, so a feature that barely
    /// moves in the data is scaled like its siblings instead of blown up.
    void pool(const std::vector<int>& idx) {
        if (idx.empty()) return;
        double s = 0.0;
        for (int i : idx) s += stddev[i];
        s = std::max(s / static_cast<double>(idx.size()), kStdFloor);
        for (int i : idx) stddev[i] = s;
    }

    static Normalizer identity(int dims) { return {Eigen::VectorXd::Zero(dims), Eigen::VectorXd::Ones(dims)}; }

    int dims() const { return static_cast<int>(mean.size()); }

    Eigen::VectorXd normalize(const Eigen::VectorXd& x) const { return (x - mean).cwiseQuotient(stddev); }
    Eigen::VectorXd denormalize(const Eigen::VectorXd& z) const { return z.cwiseProduct(stddev) + mean; }
};

} // namespace inbetween
