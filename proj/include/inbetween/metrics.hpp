#pragma once

// Transition quality: global position / rotation error against ground truth,
// foot skating, and the linear-root + SLERP interpolation baseline.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clip.hpp"
#include "error.hpp"
#include "random.hpp"
#include "rotmath.hpp"

namespace inbetween {

namespace metrics_detail {
inline void check_pair(const MotionClip& pred, const MotionClip& truth) {
    if (pred.frames() != truth.frames())
        throw Error(ErrorKind::LengthMismatch, "clips have " + std::to_string(pred.frames()) + " and " +
                                                   std::to_string(truth.frames()) + " frames");
    if (pred.joints() != truth.joints()) throw Error(ErrorKind::ShapeMismatch, "clips have different joint counts");
    if (!pred.has_fk() || !truth.has_fk()) throw Error(ErrorKind::Format, "metrics need FK caches");
    if (pred.frames() == 0) throw Error(ErrorKind::LengthMismatch, "empty clips");
}
} // namespace metrics_detail

/// Mean over frames of the distance between stacked global joint positions (m).
inline double l2p(const MotionClip& pred, const MotionClip& truth) {
    metrics_detail::check_pair(pred, truth);
    double sum = 0.0;
    for (int f = 0; f < pred.frames(); ++f) {
        double sq = 0.0;
        for (int j = 0; j < pred.joints(); ++j) sq += (pred.world_position(f, j) - truth.world_position(f, j)).squaredNorm();
        sum += std::sqrt(sq);
    }
    return sum / pred.frames();
}

/// Same over global rotations as quaternions, each joint sign-flipped onto
/// the truth's hemisphere first.
inline double l2q(const MotionClip& pred, const MotionClip& truth) {
    metrics_detail::check_pair(pred, truth);
    double sum = 0.0;
    for (int f = 0; f < pred.frames(); ++f) {
        double sq = 0.0;
        for (int j = 0; j < pred.joints(); ++j) {
            const Quat& a = truth.world_rotation(f, j);
            Quat b = pred.world_rotation(f, j);
            if (a.dot(b) < 0) b = -b;
            const double dw = a.w - b.w, dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
            sq += dw * dw + dx * dx + dy * dy + dz * dz;
        }
        sum += std::sqrt(sq);
    }
    return sum / pred.frames();
}

struct FootSlideConfig {
    double max_height = 0.025; // H, m
    bool exponential = false;  // weight 2 - 2^(h/H) instead of 2 - 2h/H
    FootJoints feet{};
};

/// Per foot and frame, s = v (2 - 2h/H) when h < H, else 0, with v the
/// horizontal foot speed and h the height net of rest clearance. Mean over
/// frames and feet.
inline double foot_slide(const MotionClip& clip, const FootSlideConfig& cfg = {}) {
    const std::vector<int> idx = cfg.feet.resolve(clip.skeleton);
    if (!clip.has_fk() || !clip.has_velocities()) throw Error(ErrorKind::Format, "foot_slide needs FK and velocity caches");
    if (clip.frames() == 0 || idx.empty()) return 0.0;
    const auto clearance = clip.skeleton.rest_clearance();
    double sum = 0.0;
    for (int f = 0; f < clip.frames(); ++f)
        for (int j : idx) {
            const double h = foot_height(clip, f, j, clearance);
            if (h >= cfg.max_height) continue;
            const Vec3& v3 = clip.velocity(f, j);
            const double v = std::hypot(v3.x(), v3.z());
            const double w = cfg.exponential ? 2.0 - std::exp2(h / cfg.max_height) : 2.0 - 2.0 * h / cfg.max_height;
            sum += v * w;
        }
    return sum / (static_cast<double>(clip.frames()) * static_cast<double>(idx.size()));
}

/// One key pose: root position plus local joint rotations.
struct KeyPose {
    Vec3 root = Vec3::Zero();
    std::vector<Quat> rotations;

    static KeyPose of(const MotionClip& c, int frame) { return {c.root_positions.at(frame), c.frame_rotations(frame)}; }
};

/// n frames from a to b inclusive: root linear, every local rotation SLERPed.
/// The end frames are copies of the inputs.
inline MotionClip interpolate_baseline(const Skeleton& skeleton, const KeyPose& a, const KeyPose& b, int n,
                                       double frame_time = kFrameTime) {
    if (n < 2) throw Error(ErrorKind::InvalidSpec, "interpolation needs at least 2 frames");
    if (static_cast<int>(a.rotations.size()) != skeleton.size() || static_cast<int>(b.rotations.size()) != skeleton.size())
        throw Error(ErrorKind::ShapeMismatch, "key pose size does not match skeleton");
    MotionClip c;
    c.skeleton = skeleton;
    c.frame_time = frame_time;
    std::vector<Quat> rot(skeleton.size());
    for (int i = 0; i < n; ++i) {
        if (i == 0 || i == n - 1) {
            const KeyPose& k = i == 0 ? a : b;
            c.push_frame(k.root, k.rotations);
            continue;
        }
        const double t = static_cast<double>(i) / (n - 1);
        for (int j = 0; j < skeleton.size(); ++j) rot[j] = slerp(a.rotations[j], b.rotations[j], t);
        c.push_frame((1.0 - t) * a.root + t * b.root, rot);
    }
    return derive(std::move(c));
}

// --- evaluation -------------------------------------------------------------

/// Produces the `length` frames following `start` in `clip`, ending on the
/// pose at start + length.
using TransitionMethod = std::function<MotionClip(const MotionClip& clip, int start, int length)>;

inline TransitionMethod interpolation_method() {
    return [](const MotionClip& clip, int start, int length) {
        const MotionClip full = interpolate_baseline(clip.skeleton, KeyPose::of(clip, start), KeyPose::of(clip, start + length),
                                                     length + 1, clip.frame_time);
        MotionClip out = slice(full, 1, length + 1);
        out.style = clip.style;
        return out;
    };
}

/// Ground-truth frames: every metric against them is zero.
inline TransitionMethod truth_method() {
    return [](const MotionClip& clip, int start, int length) { return slice(clip, start + 1, start + 1 + length); };
}

struct EvalRow {
    std::string method;
    int frames = 0;
    int samples = 0;
    double l2p = 0.0;              // m
    double l2q = 0.0;              // quaternion distance, unitless
    double foot_slide = 0.0;       // m/s, linear weight
    double foot_slide_exp = 0.0;   // m/s, exponential weight
};

struct EvalConfig {
    std::vector<int> lengths{15, 30, 45, 60, 75, 90};
    int pairs = 50;     // transitions per length
    int history = 30;   // frames required before each start
    std::uint64_t seed = 1;
};

struct Transition {
    int clip = 0;
    int start = 0;
    int length = 0;
};

/// Seeded transition windows; clips too short for a length are skipped.
inline std::vector<Transition> sample_transitions(const std::vector<MotionClip>& clips, int length, const EvalConfig& cfg) {
    std::vector<int> ok;
    for (std::size_t c = 0; c < clips.size(); ++c)
        if (clips[c].frames() - 1 - length >= cfg.history) ok.push_back(static_cast<int>(c));
    std::vector<Transition> out;
    if (ok.empty()) return out;
    std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(length));
    for (int i = 0; i < cfg.pairs; ++i) {
        const int c = ok[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ok.size()) - 1))];
        out.push_back({c, uniform_int(rng, cfg.history, clips[c].frames() - 1 - length), length});
    }
    return out;
}

inline EvalRow evaluate_method(const std::string& name, const std::vector<MotionClip>& clips, int length,
                               const TransitionMethod& method, const EvalConfig& cfg = {}) {
    EvalRow row;
    row.method = name;
    row.frames = length;
    FootSlideConfig exp_cfg;
    exp_cfg.exponential = true;
    for (const Transition& t : sample_transitions(clips, length, cfg)) {
        const MotionClip& c = clips[t.clip];
        const MotionClip truth = slice(c, t.start + 1, t.start + 1 + length);
        const MotionClip pred = method(c, t.start, length);
        row.l2p += l2p(pred, truth);
        row.l2q += l2q(pred, truth);
        row.foot_slide += foot_slide(pred);
        row.foot_slide_exp += foot_slide(pred, exp_cfg);
        ++row.samples;
    }
    if (row.samples > 0) {
        const double n = row.samples;
        row.l2p /= n, row.l2q /= n, row.foot_slide /= n, row.foot_slide_exp /= n;
    }
    return row;
}

struct EvalReport {
    std::vector<EvalRow> rows;

    void sort() {
        std::stable_sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
            return a.frames != b.frames ? a.frames < b.frames : a.method < b.method;
        });
    }

    std::string table() const {
        std::ostringstream os;
        os << std::left << std::setw(10) << "method" << std::right << std::setw(8) << "frames" << std::setw(9) << "samples"
           << std::setw(12) << "L2P[m]" << std::setw(12) << "L2Q" << std::setw(14) << "slide[m/s]" << std::setw(14)
           << "slide-exp" << '\n';
        os << std::fixed << std::setprecision(5);
        for (const EvalRow& r : rows)
            os << std::left << std::setw(10) << r.method << std::right << std::setw(8) << r.frames << std::setw(9)
               << r.samples << std::setw(12) << r.l2p << std::setw(12) << r.l2q << std::setw(14) << r.foot_slide
               << std::setw(14) << r.foot_slide_exp << '\n';
        return os.str();
    }

    std::string json_lines() const {
        std::string s;
        for (const EvalRow& r : rows) {
            nlohmann::json j{{"method", r.method},         {"frames", r.frames},
                             {"samples", r.samples},       {"l2p_m", r.l2p},
                             {"l2q", r.l2q},               {"foot_slide_mps", r.foot_slide},
                             {"foot_slide_exp_mps", r.foot_slide_exp}};
            s += j.dump() + "\n";
        }
        return s;
    }
};

} // namespace inbetween
