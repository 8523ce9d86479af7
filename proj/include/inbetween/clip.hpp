#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"
#include "rotmath.hpp"
#include "skeleton.hpp"

namespace inbetween {

inline constexpr double kFrameTime = 1.0 / 30.0;
inline constexpr int kPhaseChannels = 10;

/// Per-channel amplitude (>= 0) and phase in [0, 1).
struct PhaseFrame {
    std::array<double, kPhaseChannels> amplitude{};
    std::array<double, kPhaseChannels> phase{};
};

/// World transforms of every joint for one frame.
struct FramePose {
    std::vector<Vec3> positions;
    std::vector<Quat> rotations;
};

// A skeleton plus per-frame root positions and local joint rotations, with
// optional derived caches. Clips are treated as values: the derivation passes
// (compute_fk, compute_velocities, ...) return new clips.
struct MotionClip {
    Skeleton skeleton;
    double frame_time = kFrameTime;
    int style = 0;

    std::vector<Vec3> root_positions;  // [frames]
    std::vector<Quat> local_rotations; // [frames * joints]

    // derived caches
    std::vector<Vec3> world_positions; // [frames * joints]
    std::vector<Quat> world_rotations; // [frames * joints]
    std::vector<Vec3> velocities;      // [frames * joints]
    std::vector<PhaseFrame> phases;    // [frames]

    int frames() const { return static_cast<int>(root_positions.size()); }
    int joints() const { return skeleton.size(); }

    bool has_fk() const { return world_positions.size() == root_positions.size() * joints(); }
    bool has_velocities() const { return velocities.size() == root_positions.size() * joints(); }
    bool has_phases() const { return phases.size() == root_positions.size(); }

    Quat& rotation(int f, int j) { return local_rotations[idx(f, j)]; }
    const Quat& rotation(int f, int j) const { return local_rotations[idx(f, j)]; }
    const Vec3& world_position(int f, int j) const { return world_positions[idx(f, j)]; }
    const Quat& world_rotation(int f, int j) const { return world_rotations[idx(f, j)]; }
    const Vec3& velocity(int f, int j) const { return velocities[idx(f, j)]; }

    /// Appends a frame of root position + local rotations.
    void push_frame(const Vec3& root, const std::vector<Quat>& rotations) {
        if (static_cast<int>(rotations.size()) != joints())
            throw Error(ErrorKind::ShapeMismatch, "frame rotation count does not match skeleton");
        root_positions.push_back(root);
        local_rotations.insert(local_rotations.end(), rotations.begin(), rotations.end());
    }

    std::vector<Quat> frame_rotations(int f) const {
        return {local_rotations.begin() + idx(f, 0), local_rotations.begin() + idx(f, 0) + joints()};
    }

    void clear_caches() {
        world_positions.clear();
        world_rotations.clear();
        velocities.clear();
        phases.clear();
    }

    std::size_t idx(int f, int j) const { return static_cast<std::size_t>(f) * joints() + j; }
};

/// World transforms for one frame: each joint is its parent's transform
/// composed with (offset, local rotation); the root uses the root position.
inline FramePose forward_kinematics(const Skeleton& skeleton, const Vec3& root, const Quat* local) {
    const int n = skeleton.size();
    FramePose out;
    out.positions.resize(n);
    out.rotations.resize(n);
    for (int j = 0; j < n; ++j) {
        const int p = skeleton.joints[j].parent;
        if (p < 0) {
            out.positions[j] = root;
            out.rotations[j] = local[j];
        } else {
            out.positions[j] = out.positions[p] + out.rotations[p].rotate(skeleton.joints[j].offset);
            out.rotations[j] = (out.rotations[p] * local[j]).normalized();
        }
    }
    return out;
}

inline FramePose forward_kinematics(const MotionClip& clip, int frame) {
    if (frame < 0 || frame >= clip.frames())
        throw Error(ErrorKind::IndexOutOfRange, "frame " + std::to_string(frame) + " outside clip of " +
                                                    std::to_string(clip.frames()) + " frames");
    return forward_kinematics(clip.skeleton, clip.root_positions[frame], &clip.local_rotations[clip.idx(frame, 0)]);
}

/// Fills the world-transform cache for every frame.
inline MotionClip compute_fk(MotionClip clip) {
    const int n = clip.joints();
    clip.world_positions.resize(clip.root_positions.size() * n);
    clip.world_rotations.resize(clip.root_positions.size() * n);
    for (int f = 0; f < clip.frames(); ++f) {
        FramePose pose = forward_kinematics(clip, f);
        std::copy(pose.positions.begin(), pose.positions.end(), clip.world_positions.begin() + clip.idx(f, 0));
        std::copy(pose.rotations.begin(), pose.rotations.end(), clip.world_rotations.begin() + clip.idx(f, 0));
    }
    return clip;
}

/// v_n = (p_n - p_{n-1}) / dt; frame 0 copies frame 1.
inline MotionClip compute_velocities(MotionClip clip) {
    if (clip.frames() < 2) throw Error(ErrorKind::TooShort, "velocities need at least 2 frames");
    if (!clip.has_fk()) clip = compute_fk(std::move(clip));
    const int n = clip.joints();
    clip.velocities.assign(clip.world_positions.size(), Vec3::Zero());
    for (int f = 1; f < clip.frames(); ++f)
        for (int j = 0; j < n; ++j)
            clip.velocities[clip.idx(f, j)] =
                (clip.world_positions[clip.idx(f, j)] - clip.world_positions[clip.idx(f - 1, j)]) / clip.frame_time;
    for (int j = 0; j < n; ++j) clip.velocities[clip.idx(0, j)] = clip.velocities[clip.idx(1, j)];
    return clip;
}

/// FK + velocities.
inline MotionClip derive(MotionClip clip) { return compute_velocities(compute_fk(std::move(clip))); }

// --- contacts ---------------------------------------------------------------

struct ContactThresholds {
    double height = 0.025; // m
    double speed = 0.15;   // m/s
};

// Binary per-foot, per-frame flags.
struct ContactTrack {
    std::vector<std::string> joints;
    std::vector<std::uint8_t> flags; // [frames * feet]

    int feet() const { return static_cast<int>(joints.size()); }
    int frames() const { return feet() == 0 ? 0 : static_cast<int>(flags.size()) / feet(); }
    bool at(int f, int foot) const { return flags[static_cast<std::size_t>(f) * feet() + foot] != 0; }
};

/// Height of a foot joint above the ground, net of its rest-pose clearance.
inline double foot_height(const MotionClip& clip, int frame, int joint, const std::vector<double>& clearance) {
    return clip.world_position(frame, joint).y() - clearance[joint];
}

/// Flag is 1 iff foot height < height threshold AND foot speed < speed threshold.
inline ContactTrack detect_contacts(const MotionClip& clip, const ContactThresholds& th = {},
                                    const FootJoints& feet = {}) {
    const std::vector<int> idx = feet.resolve(clip.skeleton);
    if (!clip.has_fk() || !clip.has_velocities())
        throw Error(ErrorKind::Format, "detect_contacts needs FK and velocity caches");
    const auto clearance = clip.skeleton.rest_clearance();
    ContactTrack out;
    out.joints = feet.names;
    out.flags.resize(static_cast<std::size_t>(clip.frames()) * idx.size());
    for (int f = 0; f < clip.frames(); ++f) {
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double h = foot_height(clip, f, idx[k], clearance);
            const double v = clip.velocity(f, idx[k]).norm();
            out.flags[static_cast<std::size_t>(f) * idx.size() + k] = (h < th.height && v < th.speed) ? 1 : 0;
        }
    }
    return out;
}

// --- mirroring --------------------------------------------------------------

/// Reflection of a rotation through the x = 0 plane: S R S with S = diag(-1, 1, 1).
inline Quat mirror_quat(const Quat& q) { return {q.w, q.x, -q.y, -q.z}; }
inline Vec3 mirror_vec(const Vec3& v) { return {-v.x(), v.y(), v.z()}; }

/// Reflects the clip across the sagittal (x = 0) plane and swaps left/right
/// joint data. Derived caches are recomputed when the input had them.
inline MotionClip mirror_clip(const MotionClip& clip) {
    if (!clip.skeleton.pairing_complete())
        throw Error(ErrorKind::IncompletePairing, "skeleton lacks a complete left/right pairing table");
    MotionClip out;
    out.skeleton = clip.skeleton;
    out.frame_time = clip.frame_time;
    out.style = clip.style;
    out.root_positions.reserve(clip.root_positions.size());
    out.local_rotations.resize(clip.local_rotations.size());
    const int n = clip.joints();
    for (int f = 0; f < clip.frames(); ++f) {
        out.root_positions.push_back(mirror_vec(clip.root_positions[f]));
        for (int j = 0; j < n; ++j)
            out.local_rotations[out.idx(f, j)] = mirror_quat(clip.rotation(f, clip.skeleton.mirror[j]));
    }
    if (clip.has_fk()) out = compute_fk(std::move(out));
    if (clip.has_velocities()) out = compute_velocities(std::move(out));
    return out;
}

/// Resamples to a new frame time (linear root, slerped rotations).
inline MotionClip resample(const MotionClip& clip, double frame_time) {
    if (std::abs(clip.frame_time - frame_time) < 1e-9 || clip.frames() < 2) {
        MotionClip c = clip;
        c.frame_time = frame_time;
        c.clear_caches();
        return c;
    }
    MotionClip out;
    out.skeleton = clip.skeleton;
    out.frame_time = frame_time;
    out.style = clip.style;
    const double duration = (clip.frames() - 1) * clip.frame_time;
    const int count = static_cast<int>(std::floor(duration / frame_time + 1e-9)) + 1;
    std::vector<Quat> rot(clip.joints());
    for (int f = 0; f < count; ++f) {
        const double src = f * frame_time / clip.frame_time;
        const int i0 = std::min(static_cast<int>(std::floor(src)), clip.frames() - 1);
        const int i1 = std::min(i0 + 1, clip.frames() - 1);
        const double t = src - i0;
        const Vec3 root = (1.0 - t) * clip.root_positions[i0] + t * clip.root_positions[i1];
        for (int j = 0; j < clip.joints(); ++j) rot[j] = slerp(clip.rotation(i0, j), clip.rotation(i1, j), t);
        out.push_frame(root, rot);
    }
    return out;
}

/// Sub-range [begin, end) of frames (caches sliced along).
inline MotionClip slice(const MotionClip& clip, int begin, int end) {
    if (begin < 0 || end > clip.frames() || begin >= end)
        throw Error(ErrorKind::IndexOutOfRange, "invalid slice range");
    MotionClip out;
    out.skeleton = clip.skeleton;
    out.frame_time = clip.frame_time;
    out.style = clip.style;
    out.root_positions.assign(clip.root_positions.begin() + begin, clip.root_positions.begin() + end);
    auto cut = [&](const auto& v, auto& dst) {
        if (v.empty()) return;
        dst.assign(v.begin() + clip.idx(begin, 0), v.begin() + clip.idx(end, 0));
    };
    cut(clip.local_rotations, out.local_rotations);
    cut(clip.world_positions, out.world_positions);
    cut(clip.world_rotations, out.world_rotations);
    cut(clip.velocities, out.velocities);
    if (clip.has_phases()) out.phases.assign(clip.phases.begin() + begin, clip.phases.begin() + end);
    return out;
}

} // namespace inbetween
