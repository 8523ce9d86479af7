#pragma once

// Autoregressive generation under root-trajectory guidance: each step
// predicts the next frame from the generated history, the target pose and
// the guidance path, then appends it and repeats until the target time.

#include <array>
#include <optional>
#include <vector>

#include "dcmoe.hpp"
#include "features.hpp"

namespace inbetween {

inline constexpr int kMinRolloutFrames = 15;
inline constexpr int kMaxRolloutFrames = 150;

struct RolloutRequest {
    MotionClip context;               // history; its last frame is the start pose. Needs FK, velocity, phase caches
    FramePose target;                 // world-space target pose
    std::vector<RootSample> guidance; // root path for frames 1..tta0 after the start; last entry sits at the target
    int style = 0;
};

/// History made of `frames` copies of one pose: zero velocity, zero phase
/// amplitude.
inline MotionClip static_context(const Skeleton& skeleton, const Vec3& root, const std::vector<Quat>& local_rotations,
                                 int style = 0, int frames = 2) {
    MotionClip c;
    c.skeleton = skeleton;
    c.style = style;
    for (int f = 0; f < std::max(frames, 2); ++f) c.push_frame(root, local_rotations);
    c = derive(std::move(c));
    c.phases.assign(c.frames(), PhaseFrame{});
    return c;
}

/// Guidance velocities are backward differences of guidance positions (the
/// first against the start root).
inline std::vector<RootSample> with_guidance_velocities(std::vector<RootSample> g, const Vec2& start, double dt) {
    Vec2 prev = start;
    for (RootSample& s : g) {
        s.velocity = (s.position - prev) / dt;
        prev = s.position;
    }
    return g;
}

/// Request that replays a clip's own root path: history ends at `start`, the
/// target is the pose `length` frames later. The clip needs phase caches.
inline RolloutRequest request_from_clip(const MotionClip& clip, int start, int length, int history = 30) {
    if (start < 0 || length < 1 || start + length >= clip.frames())
        throw Error(ErrorKind::IndexOutOfRange, "transition window outside the clip");
    RolloutRequest req;
    req.context = slice(clip, std::max(0, start - history), start + 1);
    req.target = forward_kinematics(clip, start + length);
    for (int f = start + 1; f <= start + length; ++f) req.guidance.push_back(root_sample(clip, f));
    req.style = clip.style;
    return req;
}

namespace rollout_detail {

// Per-channel phase extrapolated `offset` frames past `frame` at the recent
// average rate, amplitude held.
inline PhaseFrame extrapolate_phase(const MotionClip& c, int frame, int offset) {
    PhaseFrame p = c.phases[frame];
    const int span = std::min(frame, 10);
    for (int n = 0; n < kPhaseChannels; ++n) {
        double rate = 0.0;
        for (int k = frame - span + 1; k <= frame; ++k) {
            double d = c.phases[k].phase[n] - c.phases[k - 1].phase[n];
            d -= std::floor(d + 0.5);
            rate += d;
        }
        if (span > 0) rate /= span;
        double ph = p.phase[n] + rate * offset;
        ph -= std::floor(ph);
        p.phase[n] = ph >= 1.0 ? 0.0 : ph;
    }
    return p;
}

inline void append_frame(MotionClip& c, const Vec3& root, const std::vector<Quat>& local, const PhaseFrame& phase) {
    const int prev = c.frames() - 1;
    c.push_frame(root, local);
    const FramePose pose = forward_kinematics(c.skeleton, root, local.data());
    const int n = c.joints();
    for (int j = 0; j < n; ++j) {
        c.world_positions.push_back(pose.positions[j]);
        c.world_rotations.push_back(pose.rotations[j]);
    }
    for (int j = 0; j < n; ++j)
        c.velocities.push_back((pose.positions[j] - c.world_positions[c.idx(prev, j)]) / c.frame_time);
    c.phases.push_back(phase);
}

} // namespace rollout_detail

/// Generates exactly guidance.size() frames following the context.
template <class T>
MotionClip rollout(const Model<T>& m, const RolloutRequest& req) {
    using namespace rollout_detail;
    const int tta0 = static_cast<int>(req.guidance.size());
    if (tta0 < kMinRolloutFrames)
        throw Error(ErrorKind::GuidanceTooShort, "guidance has " + std::to_string(tta0) + " frames; need at least " +
                                                     std::to_string(kMinRolloutFrames));
    if (tta0 > kMaxRolloutFrames) throw Error(ErrorKind::InvalidSpec, "guidance longer than " + std::to_string(kMaxRolloutFrames) + " frames");
    const MotionClip& ctx = req.context;
    if (ctx.frames() < 2 || !ctx.has_fk() || !ctx.has_velocities() || !ctx.has_phases())
        throw Error(ErrorKind::Format, "rollout context needs two frames with FK, velocity and phase caches");
    if (ctx.joints() != m.config.layout.joints || static_cast<int>(req.target.positions.size()) != ctx.joints() ||
        static_cast<int>(req.target.rotations.size()) != ctx.joints())
        throw Error(ErrorKind::ShapeMismatch, "rollout pose sizes do not match the model");
    if (req.style < 0 || req.style >= m.config.styles) throw Error(ErrorKind::UnknownStyle, "style not in model");

    MotionClip ext = ctx;
    ext.style = req.style;
    const int s0 = ext.frames() - 1;
    std::vector<RootSample> guide{root_sample(ext, s0)};
    guide.insert(guide.end(), req.guidance.begin(), req.guidance.end());
    const std::vector<std::uint8_t> no_mask(ext.joints(), 0);
    const FeatureLayout& L = m.config.layout;

    std::optional<std::array<PhaseFrame, kFutureSamples>> future;
    for (int step = 0; step < tta0; ++step) {
        const int c = s0 + step;
        std::array<RootSample, kWindowSamples> window;
        Condition cond;
        for (int i = 0; i < kWindowSamples; ++i) {
            const int o = (i - kWindowCenter) * kWindowStep;
            if (o <= 0) {
                window[i] = root_sample(ext, std::max(0, c + o));
                cond.phases[i] = ext.phases[std::max(0, c + o)];
                continue;
            }
            const int g = step + o;
            window[i] = guide[std::min(g, tta0)];
            if (g > tta0) window[i].velocity = Vec2::Zero();
            cond.phases[i] = future ? (*future)[o / kFutureStep] : extrapolate_phase(ext, c, o);
        }
        cond.style = req.style;
        cond.tta = tta0 - step;
        const PoseState s = make_pose_state(ext, c, req.target, no_mask, window);
        const OutputState out = OutputState::unflatten(predict(m, s, cond), L);

        const RootFrame rf = RootFrame::of(ext, c);
        std::vector<Quat> world(ext.joints()), local(ext.joints());
        for (int j = 0; j < ext.joints(); ++j) {
            const SixD r{Vec3(out.rotations[6 * j], out.rotations[6 * j + 1], out.rotations[6 * j + 2]),
                         Vec3(out.rotations[6 * j + 3], out.rotations[6 * j + 4], out.rotations[6 * j + 5])};
            world[j] = rf.rotation_to_world(Quat::from_matrix(sixd_to_matrix(r)));
        }
        for (int j = 0; j < ext.joints(); ++j) {
            const int p = ext.skeleton.joints[j].parent;
            local[j] = p < 0 ? world[j] : (world[p].conjugate() * world[j]).normalized();
        }
        const Vec3 root = rf.point_to_world(Vec3(out.positions[0], out.positions[1], out.positions[2]));
        std::array<PhaseFrame, kFutureSamples> next;
        for (int t = 0; t < kFutureSamples; ++t) next[t] = decode_phase(out.phases.data() + t * kPhaseDims);
        append_frame(ext, root, local, next[0]);
        future = next;
    }
    return slice(ext, s0 + 1, s0 + 1 + tta0);
}

} // namespace inbetween
