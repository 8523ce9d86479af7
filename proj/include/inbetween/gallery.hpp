#pragma once

// Root-trajectory gallery. Sliding windows over a clip database give atomic
// trajectories (start-relative facing/displacement summaries); queries are
// answered with single trajectories or chains of them, each piece rotated so
// its displacement lies along the query's.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clip.hpp"
#include "clipio.hpp"
#include "container.hpp"
#include "error.hpp"
#include "features.hpp"
#include "random.hpp"
#include "rotmath.hpp"

namespace inbetween {

inline constexpr const char* kGalleryVersion = "1";

enum class DurationLabel : std::uint8_t { Fast = 0, Medium = 1, Slow = 2 };

inline const char* to_string(DurationLabel l) {
    switch (l) {
    case DurationLabel::Fast: return "fast";
    case DurationLabel::Medium: return "medium";
    case DurationLabel::Slow: return "slow";
    }
    return "medium";
}

inline DurationLabel parse_duration_label(const std::string& s) {
    if (s == "fast") return DurationLabel::Fast;
    if (s == "medium") return DurationLabel::Medium;
    if (s == "slow") return DurationLabel::Slow;
    throw Error(ErrorKind::InvalidSpec, "duration label must be fast, medium or slow, got '" + s + "'");
}

struct AtomicTrajectory {
    int clip = 0;
    int start = 0; // t_s
    int end = 0;   // t_e
    Vec2 os{0.0, 1.0};
    Vec2 oe{0.0, 1.0};
    Vec2 vp = Vec2::Zero();
    int style = 0;

    int duration() const { return end - start; }
};

/// Root path of one source clip, world ground coordinates.
struct RootTrack {
    std::vector<Vec2> position;
    std::vector<Vec2> facing;

    int frames() const { return static_cast<int>(position.size()); }
    RootFrame frame(int f) const { return {position[f], yaw_of(facing[f])}; }
};

struct GalleryConfig {
    std::vector<int> durations{15, 30, 45, 60, 75, 90, 105, 120, 135, 150};
    int stride = 5;
    double bin_width = 0.05; // m
};

struct SearchConfig {
    double alpha = 0.35; // rad
    int k = 4;
    int max_depth = 5;
    int max_frames = std::numeric_limits<int>::max() / 2; // longest chain; a rollout follows at most 150
    double min_remainder = 0.1;  // m; a split must leave at least this much distance
    std::uint64_t seed = 1;
};

/// Orientations and displacement in one common ground frame.
struct Query {
    Vec2 os{0.0, 1.0};
    Vec2 oe{0.0, 1.0};
    Vec2 vp = Vec2::Zero();
    std::optional<int> style;
};

inline constexpr double kMinQueryDistance = 0.1;
inline constexpr double kMaxQueryDistance = 10.0;

inline Query make_query(const Vec2& start_pos, const Vec2& start_facing, const Vec2& target_pos,
                        const Vec2& target_facing, std::optional<int> style = {}) {
    if (start_facing.norm() < 1e-12 || target_facing.norm() < 1e-12)
        throw Error(ErrorKind::ZeroVector, "query facing must be nonzero");
    return {start_facing.normalized(), target_facing.normalized(), target_pos - start_pos, style};
}

namespace gallery_detail {
// Values are stored as f32 on disk; rounding at build time keeps a gallery
// bit-identical before and after a save/load cycle.
inline double q32(double v) { return static_cast<double>(static_cast<float>(v)); }
inline Vec2 q32(const Vec2& v) { return {q32(v.x()), q32(v.y())}; }
inline constexpr double kMinAlignNorm = 1e-9;
} // namespace gallery_detail

inline RootTrack root_track(const MotionClip& clip) {
    if (!clip.has_fk()) throw Error(ErrorKind::Format, "gallery extraction needs FK caches");
    using gallery_detail::q32;
    RootTrack t;
    for (int f = 0; f < clip.frames(); ++f) {
        t.position.push_back(q32(ground(clip.world_position(f, 0))));
        t.facing.push_back(q32(ground_facing(clip.world_rotation(f, 0))));
    }
    return t;
}

inline AtomicTrajectory make_atomic(const RootTrack& track, int clip, int style, int start, int end) {
    using gallery_detail::q32;
    const RootFrame rf = track.frame(start);
    AtomicTrajectory a;
    a.clip = clip;
    a.start = start;
    a.end = end;
    a.style = style;
    a.os = Vec2(0.0, 1.0);
    a.oe = q32(rf.ground_vector_to_local(track.facing[end]).normalized());
    a.vp = q32(rf.ground_point_to_local(track.position[end]));
    return a;
}

inline void validate(const GalleryConfig& cfg) {
    if (cfg.stride < 1 || !(cfg.bin_width > 0) || cfg.durations.empty())
        throw Error(ErrorKind::InvalidSpec, "gallery needs stride >= 1, positive bin width, some durations");
    for (int d : cfg.durations)
        if (d < 15 || d > 150) throw Error(ErrorKind::InvalidSpec, "atomic durations must lie in [15, 150] frames");
}

inline std::vector<AtomicTrajectory> extract_atomics(const std::vector<MotionClip>& clips, const GalleryConfig& cfg = {}) {
    validate(cfg);
    std::vector<AtomicTrajectory> out;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const RootTrack track = root_track(clips[c]);
        for (int d : cfg.durations)
            for (int s = 0; s + d < track.frames(); s += cfg.stride)
                out.push_back(make_atomic(track, static_cast<int>(c), clips[c].style, s, s + d));
    }
    return out;
}

// --- error, alignment, ranking ----------------------------------------------

/// Start mismatch of the first piece plus end mismatch of the last.
inline double error(std::span<const AtomicTrajectory> chain, const Query& q) {
    if (chain.empty()) throw Error(ErrorKind::EmptySequence, "error of an empty trajectory sequence");
    return angle2d(chain.front().os, q.os) + angle2d(chain.back().oe, q.oe);
}

inline double error(const AtomicTrajectory& t, const Query& q) { return error(std::span(&t, 1), q); }

inline AtomicTrajectory rotate_align(AtomicTrajectory t, const Vec2& v_target) {
    if (t.vp.norm() < gallery_detail::kMinAlignNorm || v_target.norm() < gallery_detail::kMinAlignNorm)
        throw Error(ErrorKind::ZeroDisplacement, "cannot align a zero displacement");
    const double theta = signed_angle2d(t.vp, v_target);
    t.vp = rotate2d(t.vp, theta);
    t.os = rotate2d(t.os, theta);
    t.oe = rotate2d(t.oe, theta);
    return t;
}

struct Scored {
    int index = 0;
    double error = 0.0;
};

// --- K-means duration labels ------------------------------------------------

struct DurationClusters {
    std::vector<DurationLabel> labels;
    std::array<double, 3> centroids{};
    bool fallback = false; // fewer than 3 candidates or distinct durations: tercile split
};

namespace gallery_detail {
inline double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= v.size()) return v.back();
    return v[i] + (pos - static_cast<double>(i)) * (v[i + 1] - v[i]);
}
} // namespace gallery_detail

/// 1-D k-means (k = 3) over frame counts, centroids seeded at min / median /
/// max. Lloyd iterations are followed by single-point moves until no move
/// lowers the within-cluster sum of squares.
inline DurationClusters cluster_durations(const std::vector<int>& durations) {
    DurationClusters r;
    const std::size_t n = durations.size();
    r.labels.assign(n, DurationLabel::Medium);
    if (n == 0) {
        r.fallback = true;
        return r;
    }
    std::vector<double> x(durations.begin(), durations.end());
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    const auto distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
    if (n < 3 || distinct < 3) {
        r.fallback = true;
        const double lo = gallery_detail::quantile(x, 1.0 / 3.0), hi = gallery_detail::quantile(x, 2.0 / 3.0);
        for (std::size_t i = 0; i < n; ++i)
            r.labels[i] = x[i] < lo ? DurationLabel::Fast : x[i] > hi ? DurationLabel::Slow : DurationLabel::Medium;
        std::array<double, 3> sum{}, cnt{};
        for (std::size_t i = 0; i < n; ++i) sum[static_cast<int>(r.labels[i])] += x[i], cnt[static_cast<int>(r.labels[i])] += 1;
        for (int c = 0; c < 3; ++c) r.centroids[c] = cnt[c] > 0 ? sum[c] / cnt[c] : gallery_detail::quantile(x, 0.5 * c);
        return r;
    }
    std::sort(x.begin(), x.end());
    std::array<double, 3> c{x.front(), x[(n - 1) / 2], x.back()};
    x.assign(durations.begin(), durations.end());
    std::vector<int> a(n, -1);
    for (int it = 0; it < 1000; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            for (int k = 1; k < 3; ++k)
                if (std::abs(x[i] - c[k]) < std::abs(x[i] - c[best])) best = k;
            if (best != a[i]) a[i] = best, changed = true;
        }
        std::array<double, 3> sum{}, cnt{};
        for (std::size_t i = 0; i < n; ++i) sum[a[i]] += x[i], cnt[a[i]] += 1;
        for (int k = 0; k < 3; ++k)
            if (cnt[k] > 0) c[k] = sum[k] / cnt[k];
        if (!changed) break;
    }
    // single-point refinement
    std::array<double, 3> sum{}, cnt{};
    for (std::size_t i = 0; i < n; ++i) sum[a[i]] += x[i], cnt[a[i]] += 1;
    for (bool moved = true; moved;) {
        moved = false;
        for (std::size_t i = 0; i < n; ++i) {
            const int from = a[i];
            if (cnt[from] <= 1) continue;
            const double mf = sum[from] / cnt[from];
            const double leave = cnt[from] / (cnt[from] - 1) * (x[i] - mf) * (x[i] - mf);
            int best = from;
            double gain = 1e-12;
            for (int k = 0; k < 3; ++k) {
                if (k == from) continue;
                const double mk = cnt[k] > 0 ? sum[k] / cnt[k] : x[i];
                const double join = cnt[k] / (cnt[k] + 1) * (x[i] - mk) * (x[i] - mk);
                if (leave - join > gain) gain = leave - join, best = k;
            }
            if (best != from) {
                sum[from] -= x[i], cnt[from] -= 1, sum[best] += x[i], cnt[best] += 1;
                a[i] = best;
                moved = true;
            }
        }
    }
    for (int k = 0; k < 3; ++k) c[k] = cnt[k] > 0 ? sum[k] / cnt[k] : c[k];
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int p, int q) { return c[p] < c[q]; });
    std::array<int, 3> rank{};
    for (int k = 0; k < 3; ++k) rank[order[k]] = k, r.centroids[k] = c[order[k]];
    for (std::size_t i = 0; i < n; ++i) r.labels[i] = static_cast<DurationLabel>(rank[a[i]]);
    return r;
}

// --- gallery index ----------------------------------------------------------

class Gallery {
public:
    GalleryConfig config;
    std::vector<AtomicTrajectory> items;
    std::vector<DurationLabel> labels;
    std::array<double, 3> centroids{};
    std::vector<RootTrack> tracks;

    Gallery() = default;
    Gallery(GalleryConfig cfg, std::vector<AtomicTrajectory> atomics, std::vector<RootTrack> root_tracks)
        : config(std::move(cfg)), items(std::move(atomics)), tracks(std::move(root_tracks)) {
        validate(config);
        reindex();
    }

    int size() const { return static_cast<int>(items.size()); }
    const AtomicTrajectory& operator[](int i) const { return items.at(i); }

    int bin_of(double distance) const { return static_cast<int>(std::floor(distance / config.bin_width)); }
    const std::map<int, std::vector<int>>& bins() const { return bins_; }

    /// Trajectories whose bin is within one of `distance`'s bin.
    template <class F>
    void for_each_near(double distance, F&& f) const {
        const int b = bin_of(distance);
        for (int k = b - 1; k <= b + 1; ++k) {
            auto it = bins_.find(k);
            if (it == bins_.end()) continue;
            for (int i : it->second) f(i);
        }
    }

    void reindex() {
        bins_.clear();
        std::vector<int> d;
        d.reserve(items.size());
        for (int i = 0; i < size(); ++i) {
            bins_[bin_of(items[i].vp.norm())].push_back(i);
            d.push_back(items[i].duration());
        }
        const DurationClusters c = cluster_durations(d);
        labels = c.labels;
        centroids = c.centroids;
    }

private:
    std::map<int, std::vector<int>> bins_;
};

inline Gallery build_gallery(const std::vector<MotionClip>& clips, const GalleryConfig& cfg = {}) {
    std::vector<RootTrack> tracks;
    for (const MotionClip& c : clips) tracks.push_back(root_track(c));
    return Gallery(cfg, extract_atomics(clips, cfg), std::move(tracks));
}

namespace gallery_detail {
inline bool usable(const Gallery& g, int i, const Query& q) {
    const AtomicTrajectory& t = g.items[i];
    return (!q.style || t.style == *q.style) && t.vp.norm() >= kMinAlignNorm;
}
// Errors equal to a nanoradian tie; rounding noise must not decide order.
inline long long error_key(double e) { return std::llround(e * 1e9); }
inline bool ranks_before(const Gallery& g, const Scored& a, const Scored& b) {
    if (error_key(a.error) != error_key(b.error)) return a.error < b.error;
    const int da = g.items[a.index].duration(), db = g.items[b.index].duration();
    if (da != db) return da < db;
    return a.index < b.index;
}
} // namespace gallery_detail

struct Ranking {
    std::vector<Scored> items;
    bool insufficient = false; // fewer than k usable trajectories
};

/// The k trajectories with the lowest error after alignment to q's
/// displacement, ties going to the shorter and then the lower index.
inline Ranking kth_best(const Gallery& g, const Query& q, int k) {
    if (k < 1) throw Error(ErrorKind::InvalidSpec, "k must be >= 1");
    if (q.vp.norm() < gallery_detail::kMinAlignNorm) throw Error(ErrorKind::ZeroDisplacement, "query has no displacement");
    std::vector<Scored> all;
    for (int i = 0; i < g.size(); ++i)
        if (gallery_detail::usable(g, i, q)) all.push_back({i, error(rotate_align(g.items[i], q.vp), q)});
    Ranking r;
    const auto cmp = [&](const Scored& a, const Scored& b) { return gallery_detail::ranks_before(g, a, b); };
    const std::size_t m = std::min<std::size_t>(all.size(), k);
    std::partial_sort(all.begin(), all.begin() + m, all.end(), cmp);
    all.resize(m);
    r.items = std::move(all);
    r.insufficient = static_cast<int>(m) < k;
    return r;
}

/// Same-distance trajectories (|‖v^p‖ - ‖v^p(q)‖| within one bin width) with
/// error <= budget, best first.
inline std::vector<Scored> direct_candidates(const Gallery& g, const Query& q, double budget,
                                             int max_frames = std::numeric_limits<int>::max()) {
    std::vector<Scored> out;
    const double dist = q.vp.norm();
    if (dist < gallery_detail::kMinAlignNorm) return out;
    g.for_each_near(dist, [&](int i) {
        const AtomicTrajectory& t = g.items[i];
        if (!gallery_detail::usable(g, i, q) || t.duration() > max_frames) return;
        if (std::abs(t.vp.norm() - dist) > g.config.bin_width) return;
        const double e = error(rotate_align(t, q.vp), q);
        if (e <= budget) out.push_back({i, e});
    });
    std::sort(out.begin(), out.end(), [&](const Scored& a, const Scored& b) { return gallery_detail::ranks_before(g, a, b); });
    return out;
}

// --- trajectory candidate search ---------------------------------------------

struct SearchResult {
    std::vector<int> chain; // gallery indices; empty = no match
    double error = 0.0;     // accumulated start errors plus the final piece's full error
    int depth = 0;

    bool found() const { return !chain.empty(); }
};

/// The remainder of q after walking the aligned piece y.
inline Query subtract(const Query& q, const AtomicTrajectory& aligned) {
    return {aligned.oe, q.oe, q.vp - aligned.vp, q.style};
}

namespace gallery_detail {

struct Search {
    const Gallery& g;
    const SearchConfig& cfg;
    std::mt19937_64 rng;

    bool run(const Query& q, double budget, int depth, int frames_left, bool allow_direct, std::vector<int>& chain,
             double& err) {
        const double dist = q.vp.norm();
        if (dist < kMinAlignNorm) return false;
        if (allow_direct) {
            const auto direct = direct_candidates(g, q, budget, frames_left);
            if (!direct.empty()) {
                chain.push_back(direct.front().index);
                err = direct.front().error;
                return true;
            }
        }
        if (depth >= cfg.max_depth) return false;
        std::vector<Scored> cand;
        for (int i = 0; i < g.size(); ++i) {
            const AtomicTrajectory& t = g.items[i];
            if (!usable(g, i, q) || t.duration() > frames_left - 15) continue;
            if (t.vp.norm() > dist - cfg.min_remainder) continue;
            const double e = angle2d(rotate_align(t, q.vp).os, q.os);
            if (e <= budget) cand.push_back({i, e});
        }
        // Sub-distances: k distinct distance bins drawn without replacement,
        // weight 1 / (E' + 1e-3) of the bin's best candidate, which represents it.
        std::map<int, Scored> best;
        for (const Scored& s : cand) {
            const int b = g.bin_of(g.items[s.index].vp.norm());
            auto it = best.find(b);
            if (it == best.end() || ranks_before(g, s, it->second)) best[b] = s;
        }
        std::vector<Scored> pool;
        for (const auto& [b, s] : best) pool.push_back(s);
        std::vector<Scored> kept;
        while (static_cast<int>(kept.size()) < cfg.k && !pool.empty()) {
            double total = 0.0;
            for (const Scored& s : pool) total += 1.0 / (s.error + 1e-3);
            double u = uniform01(rng) * total;
            std::size_t pick = pool.size() - 1;
            for (std::size_t i = 0; i < pool.size(); ++i) {
                u -= 1.0 / (pool[i].error + 1e-3);
                if (u < 0) {
                    pick = i;
                    break;
                }
            }
            kept.push_back(pool[pick]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        for (const Scored& s : kept) {
            const AtomicTrajectory y = rotate_align(g.items[s.index], q.vp);
            chain.push_back(s.index);
            double sub = 0.0;
            if (run(subtract(q, y), budget - s.error, depth + 1, frames_left - y.duration(), true, chain, sub)) {
                err = sub + s.error;
                return true;
            }
            chain.pop_back();
        }
        return false;
    }
};

} // namespace gallery_detail

inline void validate(const SearchConfig& cfg) {
    if (!(cfg.alpha >= 0) || cfg.k < 1 || cfg.max_depth < 1 || cfg.max_frames < 15 || !(cfg.min_remainder >= 0))
        throw Error(ErrorKind::InvalidSpec, "search needs alpha >= 0, k >= 1, depth >= 1, max_frames >= 15");
}

/// Aligned copies of the chain's pieces, all rotated onto q's displacement.
inline std::vector<AtomicTrajectory> aligned_chain(const Gallery& g, const std::vector<int>& chain, const Query& q) {
    std::vector<AtomicTrajectory> out;
    Query rest = q;
    for (int i : chain) {
        out.push_back(rotate_align(g[i], rest.vp));
        rest = subtract(rest, out.back());
    }
    return out;
}

/// Recursive search. With `split_first`, the top level skips direct matches
/// so the answer is always a chain; used to widen candidate pools.
inline SearchResult tcs(const Gallery& g, const Query& q, const SearchConfig& cfg = {}, bool split_first = false) {
    validate(cfg);
    gallery_detail::Search s{g, cfg, std::mt19937_64(cfg.seed)};
    SearchResult r;
    if (!s.run(q, cfg.alpha, 1, cfg.max_frames, !split_first, r.chain, r.error)) return {};
    const auto aligned = aligned_chain(g, r.chain, q);
    if (error(aligned, q) > cfg.alpha) return {}; // total check against the full threshold
    r.depth = static_cast<int>(r.chain.size());
    return r;
}

inline int chain_frames(const Gallery& g, const std::vector<int>& chain) {
    int n = 0;
    for (int i : chain) n += g[i].duration();
    return n;
}

/// Sum of the aligned pieces' displacements.
inline Vec2 chain_displacement(const Gallery& g, const std::vector<int>& chain, const Query& q) {
    Vec2 d = Vec2::Zero();
    for (const AtomicTrajectory& a : aligned_chain(g, chain, q)) d += a.vp;
    return d;
}

/// Root samples for frames 1..chain_frames after the start, in the query's
/// frame. Each piece replays its source root path rotated like its aligned
/// summary; the closure gap is spread linearly so the last sample lands on
/// start + v^p(q).
inline std::vector<RootSample> chain_guidance(const Gallery& g, const std::vector<int>& chain, const Vec2& start,
                                              const Query& q, double dt = kFrameTime) {
    std::vector<RootSample> out;
    Vec2 origin = start;
    Query rest = q;
    for (int i : chain) {
        const AtomicTrajectory& t = g[i];
        const RootTrack& tr = g.tracks.at(t.clip);
        const double theta = signed_angle2d(t.vp, rest.vp);
        const RootFrame rf = tr.frame(t.start);
        for (int f = t.start + 1; f <= t.end; ++f) {
            RootSample s;
            s.position = origin + rotate2d(rf.ground_point_to_local(tr.position[f]), theta);
            s.facing = rotate2d(rf.ground_vector_to_local(tr.facing[f]), theta).normalized();
            out.push_back(s);
        }
        const AtomicTrajectory aligned = rotate_align(t, rest.vp);
        origin += aligned.vp;
        rest = subtract(rest, aligned);
    }
    if (out.empty()) return out;
    const Vec2 gap = (start + q.vp) - out.back().position;
    const double n = static_cast<double>(out.size());
    Vec2 prev = start;
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].position += gap * (static_cast<double>(k + 1) / n);
        out[k].velocity = (out[k].position - prev) / dt;
        prev = out[k].position;
    }
    return out;
}

inline std::vector<Vec2> chain_polyline(const Gallery& g, const std::vector<int>& chain, const Vec2& start, const Query& q) {
    std::vector<Vec2> p{start};
    for (const RootSample& s : chain_guidance(g, chain, start, q)) p.push_back(s.position);
    return p;
}

// --- candidate lists for authoring ------------------------------------------

struct Candidate {
    std::vector<int> chain;
    int frames = 0;
    double error = 0.0; // chain error against the query, radians
    DurationLabel label = DurationLabel::Medium;
};

/// Up to `count` candidates. The pool holds direct matches plus split chains
/// from reseeded searches; its durations are clustered into fast / medium /
/// slow. Without a label filter, picks rotate through the labels so the list
/// spans the available durations.
inline std::vector<Candidate> query_candidates(const Gallery& g, const Query& q, const SearchConfig& cfg = {},
                                               int count = 7, std::optional<DurationLabel> want = {}) {
    validate(cfg);
    if (count < 1) throw Error(ErrorKind::InvalidSpec, "candidate count must be >= 1");
    std::vector<Candidate> pool;
    auto add = [&](std::vector<int> chain) {
        for (const Candidate& c : pool)
            if (c.chain == chain) return;
        Candidate c;
        c.frames = chain_frames(g, chain);
        c.error = error(aligned_chain(g, chain, q), q);
        c.chain = std::move(chain);
        pool.push_back(std::move(c));
    };
    const auto direct = direct_candidates(g, q, cfg.alpha, cfg.max_frames);
    for (std::size_t i = 0; i < direct.size() && static_cast<int>(pool.size()) < 4 * count; ++i) add({direct[i].index});
    for (int i = 0; i < count; ++i) {
        SearchConfig c = cfg;
        c.seed = cfg.seed + static_cast<std::uint64_t>(i);
        SearchResult r = tcs(g, q, c, true);
        if (r.found()) add(std::move(r.chain));
    }
    if (pool.empty()) return {};
    std::vector<int> d;
    for (const Candidate& c : pool) d.push_back(c.frames);
    const DurationClusters cl = cluster_durations(d);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i].label = cl.labels[i];
    std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
        if (a.error != b.error) return a.error < b.error;
        if (a.frames != b.frames) return a.frames < b.frames;
        return a.chain < b.chain;
    });
    std::vector<Candidate> out;
    if (want) {
        for (const Candidate& c : pool)
            if (c.label == *want && static_cast<int>(out.size()) < count) out.push_back(c);
        return out;
    }
    std::array<std::vector<const Candidate*>, 3> by;
    for (const Candidate& c : pool) by[static_cast<int>(c.label)].push_back(&c);
    std::array<std::size_t, 3> next{};
    while (static_cast<int>(out.size()) < count) {
        bool any = false;
        for (int l = 0; l < 3 && static_cast<int>(out.size()) < count; ++l)
            if (next[l] < by[l].size()) out.push_back(*by[l][next[l]++]), any = true;
        if (!any) break;
    }
    return out;
}

// --- persistence --------------------------------------------------------------

inline Container gallery_to_container(const Gallery& g, const std::map<std::string, std::string>& echo = {}) {
    Container c("gallery");
    c.set_meta("gallery_version", kGalleryVersion);
    c.set_meta("bin_width", nlohmann::json(g.config.bin_width).dump());
    c.set_meta("stride", std::to_string(g.config.stride));
    c.set_meta("durations", nlohmann::json(g.config.durations).dump());
    c.set_meta("trajectory_count", std::to_string(g.size()));
    c.set_meta("clip_count", std::to_string(g.tracks.size()));
    for (const auto& [k, v] : echo) c.set_meta("config/" + k, v);
    std::vector<float> rows;
    std::vector<float> bins, labels;
    for (int i = 0; i < g.size(); ++i) {
        const AtomicTrajectory& t = g.items[i];
        for (double v : {double(t.clip), double(t.start), double(t.end), t.os.x(), t.os.y(), t.oe.x(), t.oe.y(), t.vp.x(),
                         t.vp.y(), double(t.style)})
            rows.push_back(static_cast<float>(v));
        bins.push_back(static_cast<float>(g.bin_of(t.vp.norm())));
        labels.push_back(static_cast<float>(static_cast<int>(g.labels[i])));
    }
    const auto n = static_cast<std::uint32_t>(g.size());
    c.set("atomics", {n, 10}, std::move(rows));
    c.set("bins", {n}, std::move(bins));
    c.set("labels", {n}, std::move(labels));
    c.set_from("centroids", {3}, g.centroids);
    for (std::size_t k = 0; k < g.tracks.size(); ++k) {
        const RootTrack& tr = g.tracks[k];
        std::vector<float> v;
        for (int f = 0; f < tr.frames(); ++f)
            for (double x : {tr.position[f].x(), tr.position[f].y(), tr.facing[f].x(), tr.facing[f].y()})
                v.push_back(static_cast<float>(x));
        c.set("track/" + clipio_detail::clip_key(k), {static_cast<std::uint32_t>(tr.frames()), 4}, std::move(v));
    }
    return c;
}

inline Gallery gallery_from_container(const Container& c) {
    if (c.kind() != "gallery") throw Error(ErrorKind::Format, "container is a '" + c.kind() + "', not a gallery");
    if (c.meta("gallery_version") != kGalleryVersion)
        throw Error(ErrorKind::Format, "unsupported gallery version " + c.meta("gallery_version"));
    GalleryConfig cfg;
    try {
        cfg.bin_width = nlohmann::json::parse(c.meta("bin_width")).get<double>();
        cfg.durations = nlohmann::json::parse(c.meta("durations")).get<std::vector<int>>();
        cfg.stride = std::stoi(c.meta("stride"));
    } catch (const std::exception& e) {
        throw Error(ErrorKind::Format, std::string("bad gallery metadata: ") + e.what());
    }
    const int n = std::stoi(c.meta("trajectory_count"));
    const int clips = std::stoi(c.meta("clip_count"));
    const std::uint32_t shape[] = {static_cast<std::uint32_t>(n), 10};
    const FloatArray& rows = c.get("atomics", shape);
    std::vector<AtomicTrajectory> items(n);
    for (int i = 0; i < n; ++i) {
        const float* r = rows.data.data() + 10 * i;
        AtomicTrajectory& t = items[i];
        t.clip = static_cast<int>(r[0]);
        t.start = static_cast<int>(r[1]);
        t.end = static_cast<int>(r[2]);
        t.os = Vec2(r[3], r[4]);
        t.oe = Vec2(r[5], r[6]);
        t.vp = Vec2(r[7], r[8]);
        t.style = static_cast<int>(r[9]);
        if (t.clip < 0 || t.clip >= clips) throw Error(ErrorKind::Format, "gallery trajectory refers to a missing clip");
    }
    std::vector<RootTrack> tracks(clips);
    for (int k = 0; k < clips; ++k) {
        const FloatArray& a = c.get("track/" + clipio_detail::clip_key(k));
        if (a.shape.size() != 2 || a.shape[1] != 4) throw Error(ErrorKind::ShapeMismatch, "bad root track shape");
        for (std::uint32_t f = 0; f < a.shape[0]; ++f) {
            const float* r = a.data.data() + 4 * f;
            tracks[k].position.emplace_back(r[0], r[1]);
            tracks[k].facing.emplace_back(r[2], r[3]);
        }
    }
    for (const AtomicTrajectory& t : items)
        if (t.end >= tracks[t.clip].frames() || t.start < 0 || t.start >= t.end)
            throw Error(ErrorKind::Format, "gallery trajectory span outside its track");
    return Gallery(cfg, std::move(items), std::move(tracks));
}

inline void save_gallery(const std::string& path, const Gallery& g, const std::map<std::string, std::string>& echo = {}) {
    gallery_to_container(g, echo).save(path);
}

inline Gallery load_gallery(const std::string& path) { return gallery_from_container(Container::load(path)); }

/// One JSON object per line, one line per atomic trajectory.
inline void export_gallery_text(std::ostream& os, const Gallery& g) {
    for (int i = 0; i < g.size(); ++i) {
        const AtomicTrajectory& t = g.items[i];
        nlohmann::json j{{"index", i},
                         {"clip", t.clip},
                         {"start", t.start},
                         {"end", t.end},
                         {"duration", t.duration()},
                         {"os", {t.os.x(), t.os.y()}},
                         {"oe", {t.oe.x(), t.oe.y()}},
                         {"vp", {t.vp.x(), t.vp.y()}},
                         {"style", t.style},
                         {"bin", g.bin_of(t.vp.norm())},
                         {"label", to_string(g.labels[i])}};
        os << j.dump() << '\n';
    }
}

} // namespace inbetween
