#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "rotmath.hpp"

namespace inbetween {

struct Joint {
    std::string name;
    int parent = -1;
    Vec3 offset = Vec3::Zero();
    std::optional<Vec3> end_site; // BVH "End Site" offset, kept for writing back
};

// Joints in topological order (parent index < child index, single root at 0).
// `mirror[j]` is the left/right counterpart of joint j (itself for joints on
// the sagittal plane, -1 when unknown).
struct Skeleton {
    std::vector<Joint> joints;
    std::vector<int> mirror;

    int size() const { return static_cast<int>(joints.size()); }

    int find(std::string_view name) const {
        for (int j = 0; j < size(); ++j)
            if (joints[j].name == name) return j;
        return -1;
    }

    void validate() const {
        if (joints.empty()) throw Error(ErrorKind::Format, "skeleton has no joints");
        if (joints[0].parent != -1) throw Error(ErrorKind::Format, "joint 0 must be the root");
        for (int j = 1; j < size(); ++j) {
            const int p = joints[j].parent;
            if (p < 0 || p >= j)
                throw Error(ErrorKind::Format, "joint '" + joints[j].name + "' breaks topological order");
        }
        if (!mirror.empty() && static_cast<int>(mirror.size()) != size())
            throw Error(ErrorKind::Format, "mirror table size does not match joint count");
    }

    bool pairing_complete() const {
        if (static_cast<int>(mirror.size()) != size()) return false;
        for (int j = 0; j < size(); ++j) {
            const int m = mirror[j];
            if (m < 0 || m >= size() || mirror[m] != j) return false;
            const int p = joints[j].parent;
            const int mp = joints[m].parent;
            if ((p < 0) != (mp < 0)) return false;
            if (p >= 0 && mirror[p] != mp) return false;
        }
        return true;
    }

    /// Pairs "Left*" with "Right*" (and "l_"/"r_" prefixes); everything else
    /// maps onto itself.
    void build_mirror_from_names() {
        mirror.assign(joints.size(), -1);
        auto counterpart = [](const std::string& n) -> std::string {
            auto swap_prefix = [&](std::string_view a, std::string_view b) -> std::optional<std::string> {
                if (n.rfind(a, 0) == 0) return std::string(b) + n.substr(a.size());
                return std::nullopt;
            };
            for (auto [a, b] : {std::pair<std::string_view, std::string_view>{"Left", "Right"},
                                {"Right", "Left"},
                                {"left", "right"},
                                {"right", "left"},
                                {"l_", "r_"},
                                {"r_", "l_"}}) {
                if (auto s = swap_prefix(a, b)) return *s;
            }
            return n;
        };
        for (int j = 0; j < size(); ++j) mirror[j] = find(counterpart(joints[j].name));
    }

    /// Height of each joint above the lowest joint when every rotation is
    /// identity. Foot heights are measured relative to this clearance so that
    /// an ankle resting on flat ground reads as height zero.
    std::vector<double> rest_clearance() const {
        std::vector<Vec3> p(joints.size());
        double lowest = 0.0;
        for (int j = 0; j < size(); ++j) {
            p[j] = joints[j].parent < 0 ? Vec3::Zero() : Vec3(p[joints[j].parent] + joints[j].offset);
            lowest = std::min(lowest, p[j].y());
        }
        std::vector<double> c(joints.size());
        for (int j = 0; j < size(); ++j) c[j] = p[j].y() - lowest;
        return c;
    }
};

/// Names of the foot joints used for contact labels and the foot-slide metric.
struct FootJoints {
    std::vector<std::string> names{"LeftFoot", "LeftToe", "RightFoot", "RightToe"};

    std::vector<int> resolve(const Skeleton& s) const {
        std::vector<int> idx;
        for (const auto& n : names) {
            const int j = s.find(n);
            if (j < 0) throw Error(ErrorKind::MissingFootJoint, "skeleton has no joint named '" + n + "'");
            idx.push_back(j);
        }
        return idx;
    }
};

inline constexpr int kDefaultJointCount = 22;

/// The 22-joint LaFAN1-style hierarchy used throughout, in meters, arms
/// hanging down in the rest pose, +x on the character's left.
inline Skeleton default_skeleton() {
    Skeleton s;
    auto add = [&](std::string name, int parent, Vec3 offset) {
        s.joints.push_back({std::move(name), parent, offset, std::nullopt});
    };
    add("Hips", -1, {0, 0, 0});
    add("LeftUpLeg", 0, {0.09, -0.06, 0});
    add("LeftLeg", 1, {0, -0.45, 0});
    add("LeftFoot", 2, {0, -0.45, 0});
    add("LeftToe", 3, {0, -0.06, 0.14});
    add("RightUpLeg", 0, {-0.09, -0.06, 0});
    add("RightLeg", 5, {0, -0.45, 0});
    add("RightFoot", 6, {0, -0.45, 0});
    add("RightToe", 7, {0, -0.06, 0.14});
    add("Spine", 0, {0, 0.10, 0});
    add("Spine1", 9, {0, 0.12, 0});
    add("Spine2", 10, {0, 0.12, 0});
    add("Neck", 11, {0, 0.14, 0});
    add("Head", 12, {0, 0.10, 0.02});
    add("LeftShoulder", 11, {0.04, 0.10, 0});
    add("LeftArm", 14, {0.13, 0, 0});
    add("LeftForeArm", 15, {0, -0.28, 0});
    add("LeftHand", 16, {0, -0.26, 0});
    add("RightShoulder", 11, {-0.04, 0.10, 0});
    add("RightArm", 18, {-0.13, 0, 0});
    add("RightForeArm", 19, {0, -0.28, 0});
    add("RightHand", 20, {0, -0.26, 0});
    s.joints[4].end_site = Vec3{0, 0, 0.05};
    s.joints[8].end_site = Vec3{0, 0, 0.05};
    s.joints[13].end_site = Vec3{0, 0.12, 0};
    s.joints[17].end_site = Vec3{0, -0.08, 0};
    s.joints[21].end_site = Vec3{0, -0.08, 0};
    s.build_mirror_from_names();
    return s;
}

} // namespace inbetween
