#pragma once

// Clip cache files: a set of clips sharing one skeleton, stored in a
// Container of kind "clips". Derived caches (FK, velocities) are recomputed
// on load; phases and stance schedules are stored when present.

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clip.hpp"
#include "container.hpp"

namespace inbetween {

struct ClipRecord {
    MotionClip clip;
    std::optional<ContactTrack> stance;
};

namespace clipio_detail {
inline std::string clip_key(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip%05zu", i);
    return buf;
}

inline std::string join_names(const Skeleton& s) {
    std::string out;
    for (const auto& j : s.joints) {
        if (!out.empty()) out += '\n';
        out += j.name;
    }
    return out;
}
} // namespace clipio_detail

inline void write_skeleton(Container& c, const Skeleton& s) {
    const auto n = static_cast<std::uint32_t>(s.size());
    std::vector<float> parents, offsets, mirror, ends;
    for (int j = 0; j < s.size(); ++j) {
        parents.push_back(static_cast<float>(s.joints[j].parent));
        for (int k = 0; k < 3; ++k) offsets.push_back(static_cast<float>(s.joints[j].offset[k]));
        mirror.push_back(static_cast<float>(s.mirror.empty() ? -1 : s.mirror[j]));
        const auto& e = s.joints[j].end_site;
        ends.push_back(e ? 1.0f : 0.0f);
        for (int k = 0; k < 3; ++k) ends.push_back(e ? static_cast<float>((*e)[k]) : 0.0f);
    }
    c.set("skeleton/parents", {n}, parents);
    c.set("skeleton/offsets", {n, 3}, offsets);
    c.set("skeleton/mirror", {n}, mirror);
    c.set("skeleton/end_sites", {n, 4}, ends);
    c.set_meta("skeleton.joint_names", clipio_detail::join_names(s));
}

inline Skeleton read_skeleton(const Container& c) {
    Skeleton s;
    std::istringstream names(c.meta("skeleton.joint_names"));
    std::string name;
    while (std::getline(names, name)) s.joints.push_back({name, -1, Vec3::Zero(), std::nullopt});
    const auto n = static_cast<std::uint32_t>(s.joints.size());
    const std::uint32_t s1[] = {n}, s3[] = {n, 3}, s4[] = {n, 4};
    const auto& parents = c.get("skeleton/parents", s1).data;
    const auto& offsets = c.get("skeleton/offsets", s3).data;
    const auto& mirror = c.get("skeleton/mirror", s1).data;
    const auto& ends = c.get("skeleton/end_sites", s4).data;
    s.mirror.resize(n);
    for (std::uint32_t j = 0; j < n; ++j) {
        s.joints[j].parent = static_cast<int>(parents[j]);
        s.joints[j].offset = Vec3(offsets[3 * j], offsets[3 * j + 1], offsets[3 * j + 2]);
        s.mirror[j] = static_cast<int>(mirror[j]);
        if (ends[4 * j] != 0.0f) s.joints[j].end_site = Vec3(ends[4 * j + 1], ends[4 * j + 2], ends[4 * j + 3]);
    }
    s.validate();
    return s;
}

inline Container clips_to_container(const std::vector<ClipRecord>& clips) {
    Container c("clips");
    if (clips.empty()) throw Error(ErrorKind::EmptyDataset, "no clips to write");
    const Skeleton& sk = clips.front().clip.skeleton;
    write_skeleton(c, sk);
    c.set_meta("clip_count", std::to_string(clips.size()));
    const auto j = static_cast<std::uint32_t>(sk.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const MotionClip& m = clips[i].clip;
        if (m.joints() != sk.size()) throw Error(ErrorKind::ShapeMismatch, "clips must share one skeleton");
        const auto f = static_cast<std::uint32_t>(m.frames());
        const std::string key = clipio_detail::clip_key(i);
        std::vector<float> root, rot;
        for (const Vec3& p : m.root_positions)
            for (int k = 0; k < 3; ++k) root.push_back(static_cast<float>(p[k]));
        for (const Quat& q : m.local_rotations)
            for (double v : {q.w, q.x, q.y, q.z}) rot.push_back(static_cast<float>(v));
        c.set(key + "/root", {f, 3}, root);
        c.set(key + "/rotations", {f, j, 4}, rot);
        c.set(key + "/style", {1}, {static_cast<float>(m.style)});
        c.set(key + "/frame_time", {1}, {static_cast<float>(m.frame_time)});
        if (clips[i].stance) {
            const ContactTrack& st = *clips[i].stance;
            c.set_from(key + "/stance", {f, static_cast<std::uint32_t>(st.feet())}, st.flags);
        }
        if (m.has_phases()) {
            std::vector<float> amp, ph;
            for (const PhaseFrame& p : m.phases)
                for (int k = 0; k < kPhaseChannels; ++k) {
                    amp.push_back(static_cast<float>(p.amplitude[k]));
                    ph.push_back(static_cast<float>(p.phase[k]));
                }
            c.set(key + "/phase_amplitude", {f, kPhaseChannels}, amp);
            c.set(key + "/phase", {f, kPhaseChannels}, ph);
        }
    }
    return c;
}

inline std::vector<ClipRecord> clips_from_container(const Container& c) {
    if (c.kind() != "clips") throw Error(ErrorKind::Format, "container kind '" + c.kind() + "' is not a clip cache");
    const Skeleton sk = read_skeleton(c);
    const std::size_t count = std::stoul(c.meta("clip_count"));
    std::vector<ClipRecord> out;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string key = clipio_detail::clip_key(i);
        const FloatArray& root = c.get(key + "/root");
        const FloatArray& rot = c.get(key + "/rotations");
        if (root.shape.size() != 2 || root.shape[1] != 3 || rot.shape.size() != 3 || rot.shape[0] != root.shape[0] ||
            rot.shape[1] != static_cast<std::uint32_t>(sk.size()) || rot.shape[2] != 4)
            throw Error(ErrorKind::ShapeMismatch, "clip '" + key + "' arrays have inconsistent shapes");
        ClipRecord rec;
        MotionClip& m = rec.clip;
        m.skeleton = sk;
        m.style = static_cast<int>(c.get(key + "/style").data.at(0));
        m.frame_time = c.get(key + "/frame_time").data.at(0);
        const std::size_t frames = root.shape[0];
        std::vector<Quat> q(sk.size());
        for (std::size_t f = 0; f < frames; ++f) {
            for (int j = 0; j < sk.size(); ++j) {
                const float* r = &rot.data[(f * sk.size() + j) * 4];
                q[j] = Quat{r[0], r[1], r[2], r[3]}.normalized();
            }
            m.push_frame(Vec3(root.data[3 * f], root.data[3 * f + 1], root.data[3 * f + 2]), q);
        }
        if (m.frames() >= 2) m = derive(std::move(m));
        if (c.has(key + "/stance")) {
            const FloatArray& st = c.get(key + "/stance");
            ContactTrack t;
            t.joints = FootJoints{}.names;
            t.joints.resize(st.shape.at(1));
            for (float v : st.data) t.flags.push_back(v != 0.0f ? 1 : 0);
            rec.stance = std::move(t);
        }
        if (c.has(key + "/phase")) {
            const FloatArray& amp = c.get(key + "/phase_amplitude");
            const FloatArray& ph = c.get(key + "/phase");
            if (amp.count() != frames * kPhaseChannels || ph.count() != frames * kPhaseChannels)
                throw Error(ErrorKind::ShapeMismatch, "clip '" + key + "' phase arrays have wrong size");
            m.phases.resize(frames);
            for (std::size_t f = 0; f < frames; ++f)
                for (int k = 0; k < kPhaseChannels; ++k) {
                    m.phases[f].amplitude[k] = amp.data[f * kPhaseChannels + k];
                    m.phases[f].phase[k] = ph.data[f * kPhaseChannels + k];
                }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

inline void save_clips(const std::string& path, const std::vector<ClipRecord>& clips) {
    clips_to_container(clips).save(path);
}

inline std::vector<ClipRecord> load_clips(const std::string& path) { return clips_from_container(Container::load(path)); }

} // namespace inbetween
