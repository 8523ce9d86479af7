#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "inbetween/gallery.hpp"
#include "inbetween/synth.hpp"

using namespace inbetween;

namespace {

MotionClip straight_walk(double speed, double seconds, double turn_bias = 0.0) {
    SyntheticStyleSpec s = walk_style();
    s.speed = speed;
    s.turn_rate = 0.0;
    s.turn_bias = turn_bias;
    return generate_synthetic_clip(s, seconds, 3).clip;
}

// Hand-rolled gallery whose tracks are never read.
Gallery manual_gallery(std::vector<AtomicTrajectory> items, double bin_width = 0.05) {
    RootTrack t;
    for (int f = 0; f < 400; ++f) t.position.emplace_back(0.0, 0.0), t.facing.emplace_back(0.0, 1.0);
    GalleryConfig cfg;
    cfg.bin_width = bin_width;
    for (AtomicTrajectory& a : items) a.clip = 0;
    return Gallery(cfg, std::move(items), {t});
}

AtomicTrajectory atomic(Vec2 os, Vec2 oe, Vec2 vp, int duration, int start = 0) {
    AtomicTrajectory a;
    a.start = start;
    a.end = start + duration;
    a.os = os.normalized();
    a.oe = oe.normalized();
    a.vp = vp;
    return a;
}

// Independent error oracle: relative headings against the displacement
// direction, no rotation of the trajectory involved.
double oracle_error(const AtomicTrajectory& t, const Query& q) {
    auto head = [](const Vec2& v) { return std::atan2(v.y(), v.x()); };
    auto diff = [](double a) { return std::abs(std::remainder(a, 2 * kPi)); };
    const double s = (head(t.os) - head(t.vp)) - (head(q.os) - head(q.vp));
    const double e = (head(t.oe) - head(t.vp)) - (head(q.oe) - head(q.vp));
    return diff(s) + diff(e);
}

Vec2 random_unit(std::mt19937_64& r) {
    const double a = std::uniform_real_distribution<double>(-kPi, kPi)(r);
    return {std::cos(a), std::sin(a)};
}

const Gallery& synthetic_gallery() {
    static const Gallery g = [] {
        std::vector<MotionClip> clips;
        for (auto& s : generate_synthetic_dataset({4, 2.0, 20.0, 7, 0.5})) clips.push_back(s.clip);
        return build_gallery(clips);
    }();
    return g;
}

} // namespace

TEST(Atomics, StraightWalkKeepsFacingAndCoversDistance) {
    const MotionClip c = straight_walk(1.2, 6.0);
    GalleryConfig cfg;
    cfg.durations = {50};
    const auto a = extract_atomics({c}, cfg);
    ASSERT_FALSE(a.empty());
    for (const AtomicTrajectory& t : a) {
        EXPECT_EQ(t.duration(), 50);
        EXPECT_NEAR(t.vp.norm(), 1.2 * 50 * kFrameTime, 0.02 * 2.0);
        EXPECT_LT(angle2d(t.os, t.oe), 0.01);
        EXPECT_EQ(t.os, Vec2(0.0, 1.0));
        EXPECT_NEAR(t.oe.norm(), 1.0, 1e-6);
    }
}

TEST(Atomics, IdleWindowHasNoDisplacement) {
    const MotionClip c = generate_synthetic_clip(idle_style(), 6.0, 5).clip;
    for (const AtomicTrajectory& t : extract_atomics({c})) EXPECT_LT(t.vp.norm(), 0.03);
}

TEST(Atomics, QuarterTurnWindow) {
    const int d = 90;
    const MotionClip c = straight_walk(1.2, 6.0, (kPi / 2) / (d * kFrameTime));
    GalleryConfig cfg;
    cfg.durations = {d};
    for (const AtomicTrajectory& t : extract_atomics({c}, cfg)) EXPECT_NEAR(angle2d(t.os, t.oe), kPi / 2, 0.1);
}

TEST(Atomics, WindowCountsAndDurationRange) {
    const MotionClip c = straight_walk(1.0, 4.0);
    GalleryConfig cfg;
    cfg.durations = {15, 100};
    cfg.stride = 5;
    const auto a = extract_atomics({c}, cfg);
    // starts s = 0, 5, ... with s + d < frames
    const int n = c.frames();
    const int expect = (n - 15 - 1) / 5 + 1 + (n - 100 - 1) / 5 + 1;
    EXPECT_EQ(static_cast<int>(a.size()), expect);
    cfg.durations = {10};
    EXPECT_THROW(extract_atomics({c}, cfg), Error);
}

TEST(ErrorFn, Examples) {
    const Query q{{0, 1}, {0, 1}, {0, 2}, {}};
    EXPECT_DOUBLE_EQ(error(atomic({0, 1}, {0, 1}, {0, 2}, 30), q), 0.0);
    EXPECT_NEAR(error(atomic({1, 0}, {0, 1}, {0, 2}, 30), q), kPi / 2, 1e-12);
    EXPECT_NEAR(error(atomic(rotate2d({0, 1}, kPi / 4), rotate2d({0, 1}, -kPi / 4), {0, 2}, 30), q), kPi / 2, 1e-9);
    std::vector<AtomicTrajectory> none;
    EXPECT_THROW(error(std::span<const AtomicTrajectory>(none), q), Error);
}

TEST(ErrorFn, ChainUsesFirstStartAndLastEnd) {
    const Query q{{0, 1}, {1, 0}, {0, 2}, {}};
    const std::vector<AtomicTrajectory> chain{atomic({0, 1}, {-1, 0}, {0, 1}, 30), atomic({0, -1}, {1, 0}, {0, 1}, 30)};
    EXPECT_NEAR(error(chain, q), 0.0, 1e-12);
}

TEST(ErrorFn, InvariantUnderCommonRotation) {
    std::mt19937_64 r(3);
    for (int i = 0; i < 200; ++i) {
        const AtomicTrajectory t = atomic(random_unit(r), random_unit(r), random_unit(r) * 2.0, 30);
        const Query q{random_unit(r), random_unit(r), random_unit(r), {}};
        const double th = std::uniform_real_distribution<double>(-kPi, kPi)(r);
        AtomicTrajectory tr = t;
        tr.os = rotate2d(t.os, th), tr.oe = rotate2d(t.oe, th), tr.vp = rotate2d(t.vp, th);
        const Query qr{rotate2d(q.os, th), rotate2d(q.oe, th), rotate2d(q.vp, th), {}};
        EXPECT_NEAR(error(t, q), error(tr, qr), 1e-9);
    }
}

TEST(RotateAlign, Examples) {
    const AtomicTrajectory t = atomic({0, 1}, {1, 0}, {1, 0}, 30);
    const AtomicTrajectory same = rotate_align(t, {3, 0});
    EXPECT_NEAR((same.vp - t.vp).norm(), 0.0, 1e-12);
    EXPECT_NEAR((same.os - t.os).norm(), 0.0, 1e-12);
    const AtomicTrajectory r = rotate_align(t, {0, 2});
    EXPECT_NEAR((r.vp - Vec2(0, 1)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((r.os - Vec2(-1, 0)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((r.oe - Vec2(0, 1)).norm(), 0.0, 1e-12);
    EXPECT_THROW(rotate_align(atomic({0, 1}, {0, 1}, {0, 0}, 30), {1, 0}), Error);
    EXPECT_THROW(rotate_align(t, {0, 0}), Error);
}

TEST(RotateAlign, PreservesLengthAndFacingAngle) {
    std::mt19937_64 r(4);
    for (int i = 0; i < 500; ++i) {
        const AtomicTrajectory t = atomic(random_unit(r), random_unit(r), random_unit(r) * 3.0, 30);
        const AtomicTrajectory a = rotate_align(t, random_unit(r) * 0.5);
        EXPECT_NEAR(a.vp.norm(), t.vp.norm(), 1e-9);
        EXPECT_NEAR(angle2d(a.os, a.oe), angle2d(t.os, t.oe), 1e-9);
    }
}

TEST(RotateAlign, AlignedMatchHasZeroError) {
    std::mt19937_64 r(5);
    for (int i = 0; i < 100; ++i) {
        const AtomicTrajectory t = atomic(random_unit(r), random_unit(r), random_unit(r) * 2.0, 30);
        const double th = std::uniform_real_distribution<double>(-kPi, kPi)(r);
        const Query q{rotate2d(t.os, th), rotate2d(t.oe, th), rotate2d(t.vp, th) * 1.7, {}};
        EXPECT_NEAR(error(rotate_align(t, q.vp), q), 0.0, 1e-9);
    }
}

TEST(KthBest, ExactMatchFirstAndFullList) {
    std::mt19937_64 r(6);
    std::vector<AtomicTrajectory> items;
    for (int i = 0; i < 40; ++i) items.push_back(atomic(random_unit(r), random_unit(r), random_unit(r) * 2.0, 15 + i % 5 * 15));
    const Gallery g = manual_gallery(items);
    const AtomicTrajectory& t = g[17];
    const Query q{rotate2d(t.os, 1.0), rotate2d(t.oe, 1.0), rotate2d(t.vp, 1.0), {}};
    const Ranking top = kth_best(g, q, 1);
    ASSERT_EQ(top.items.size(), 1u);
    EXPECT_EQ(top.items[0].index, 17);
    EXPECT_NEAR(top.items[0].error, 0.0, 1e-9);
    const Ranking all = kth_best(g, q, g.size());
    EXPECT_EQ(static_cast<int>(all.items.size()), g.size());
    EXPECT_FALSE(all.insufficient);
    for (std::size_t i = 1; i < all.items.size(); ++i) EXPECT_LE(all.items[i - 1].error, all.items[i].error);
    const Ranking more = kth_best(g, q, g.size() + 3);
    EXPECT_TRUE(more.insufficient);
    EXPECT_THROW(kth_best(g, q, 0), Error);
}

TEST(KthBest, MatchesExhaustiveScan) {
    std::mt19937_64 r(7);
    std::vector<AtomicTrajectory> items;
    std::uniform_int_distribution<int> dur(1, 10);
    for (int i = 0; i < 200; ++i) {
        // coarse angles make exact ties common, exercising the tie rule
        auto coarse = [&] { return rotate2d({0, 1}, kPi / 4 * std::uniform_int_distribution<int>(0, 7)(r)); };
        items.push_back(atomic(coarse(), coarse(), coarse() * 2.0, 15 * dur(r)));
    }
    const Gallery g = manual_gallery(items);
    for (int trial = 0; trial < 20; ++trial) {
        const Query q{random_unit(r), random_unit(r), random_unit(r) * 3.0, {}};
        std::vector<std::tuple<double, int, int>> oracle;
        for (int i = 0; i < g.size(); ++i) oracle.emplace_back(oracle_error(g[i], q), g[i].duration(), i);
        std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
            // equal to a nanoradian counts as a tie
            const auto ka = std::llround(std::get<0>(a) * 1e9), kb = std::llround(std::get<0>(b) * 1e9);
            if (ka != kb) return ka < kb;
            return std::make_pair(std::get<1>(a), std::get<2>(a)) < std::make_pair(std::get<1>(b), std::get<2>(b));
        });
        const int k = 25;
        const Ranking got = kth_best(g, q, k);
        ASSERT_EQ(static_cast<int>(got.items.size()), k);
        for (int i = 0; i < k; ++i) {
            EXPECT_NEAR(got.items[i].error, std::get<0>(oracle[i]), 1e-9);
            EXPECT_EQ(g[got.items[i].index].duration(), std::get<1>(oracle[i]));
        }
    }
}

TEST(DirectCandidates, MatchExhaustiveScan) {
    const Gallery& g = synthetic_gallery();
    std::mt19937_64 r(8);
    for (int trial = 0; trial < 30; ++trial) {
        const AtomicTrajectory& t = g[static_cast<int>(r() % g.size())];
        if (t.vp.norm() < 0.1) continue;
        const Query q{rotate2d(random_unit(r), 0.0), random_unit(r), rotate2d(t.vp, 0.3), {}};
        const double alpha = 1.0;
        std::vector<int> oracle;
        for (int i = 0; i < g.size(); ++i)
            if (g[i].vp.norm() >= 1e-9 && std::abs(g[i].vp.norm() - q.vp.norm()) <= g.config.bin_width &&
                oracle_error(g[i], q) <= alpha)
                oracle.push_back(i);
        std::vector<int> got;
        for (const Scored& s : direct_candidates(g, q, alpha)) got.push_back(s.index);
        std::vector<int> got_sorted = got;
        std::sort(got_sorted.begin(), got_sorted.end());
        EXPECT_EQ(got_sorted, oracle);
    }
}

TEST(Tcs, IdenticalQueryReturnsThatTrajectory) {
    std::vector<AtomicTrajectory> items{atomic({0, 1}, {1, 0}, {0.5, 1.5}, 45), atomic({0, 1}, {0, 1}, {0, 3}, 60),
                                        atomic({1, 0}, {0, 1}, {2, 2}, 90)};
    const Gallery g = manual_gallery(items);
    const Query q{items[0].os, items[0].oe, items[0].vp, {}};
    const SearchResult r = tcs(g, q);
    ASSERT_TRUE(r.found());
    EXPECT_EQ(r.chain, std::vector<int>{0});
    EXPECT_NEAR(r.error, 0.0, 1e-12);
    EXPECT_EQ(r.depth, 1);
}

TEST(Tcs, TwoHopCollinearWalks) {
    std::vector<AtomicTrajectory> items;
    for (int i = 0; i < 5; ++i) items.push_back(atomic({0, 1}, {0, 1}, {0, 1.0 + 0.01 * i}, 30, 5 * i));
    const Gallery g = manual_gallery(items);
    const Query q{{1, 0}, {1, 0}, {2.02, 0}, {}};
    SearchConfig cfg;
    cfg.alpha = 0.2;
    const SearchResult r = tcs(g, q, cfg);
    ASSERT_TRUE(r.found());
    EXPECT_EQ(r.chain.size(), 2u);
    EXPECT_LE(error(aligned_chain(g, r.chain, q), q), cfg.alpha);
    EXPECT_LE((chain_displacement(g, r.chain, q) - q.vp).norm(), g.config.bin_width);
}

TEST(Tcs, ZeroAlphaWithoutExactMatchFails) {
    std::vector<AtomicTrajectory> items{atomic({0, 1}, {0.1, 1}, {0, 1}, 30), atomic({0, 1}, {-0.1, 1}, {0, 2}, 60)};
    const Gallery g = manual_gallery(items);
    SearchConfig cfg;
    cfg.alpha = 0.0;
    EXPECT_FALSE(tcs(g, Query{{0, 1}, {0, 1}, {0, 2}, {}}, cfg).found());
}

TEST(Tcs, SuccessesSatisfyThresholdAndClosure) {
    const Gallery& g = synthetic_gallery();
    std::mt19937_64 r(9);
    int found = 0;
    for (int i = 0; i < 60; ++i) {
        const double dist = std::uniform_real_distribution<double>(0.1, 10.0)(r);
        const Query q{random_unit(r), random_unit(r), random_unit(r) * dist, {}};
        SearchConfig cfg;
        cfg.seed = i;
        const SearchResult res = tcs(g, q, cfg);
        if (!res.found()) continue;
        ++found;
        EXPECT_LE(error(aligned_chain(g, res.chain, q), q), cfg.alpha + 1e-12);
        EXPECT_LE(res.error, cfg.alpha + 1e-12);
        EXPECT_LE((chain_displacement(g, res.chain, q) - q.vp).norm(), g.config.bin_width + 1e-9);
        EXPECT_LE(res.depth, cfg.max_depth);
    }
    EXPECT_GT(found, 0);
}

TEST(Tcs, DeterministicForSeed) {
    const Gallery& g = synthetic_gallery();
    const Query q{{0, 1}, {1, 0}, {3, 4}, {}};
    SearchConfig cfg;
    cfg.seed = 42;
    const SearchResult a = tcs(g, q, cfg), b = tcs(g, q, cfg);
    EXPECT_EQ(a.chain, b.chain);
    EXPECT_EQ(a.error, b.error);
}

TEST(Tcs, StyleFilterAndFrameCap) {
    const Gallery& g = synthetic_gallery();
    std::mt19937_64 r(10);
    for (int i = 0; i < 20; ++i) {
        Query q{random_unit(r), random_unit(r), random_unit(r) * 2.0, 2};
        SearchConfig cfg;
        cfg.seed = i;
        cfg.max_frames = 150;
        const SearchResult res = tcs(g, q, cfg);
        for (int k : res.chain) EXPECT_EQ(g[k].style, 2);
        if (res.found()) EXPECT_LE(chain_frames(g, res.chain), 150);
    }
}

TEST(Clusters, SeparatedGroups) {
    const DurationClusters c = cluster_durations({60, 15, 140, 61, 16, 141});
    EXPECT_FALSE(c.fallback);
    using L = DurationLabel;
    EXPECT_EQ(c.labels, (std::vector<L>{L::Medium, L::Fast, L::Slow, L::Medium, L::Fast, L::Slow}));
    EXPECT_NEAR(c.centroids[0], 15.5, 1e-12);
    EXPECT_NEAR(c.centroids[1], 60.5, 1e-12);
    EXPECT_NEAR(c.centroids[2], 140.5, 1e-12);
}

TEST(Clusters, DegenerateInputsFallBack) {
    const DurationClusters same = cluster_durations({45, 45, 45, 45});
    EXPECT_TRUE(same.fallback);
    for (DurationLabel l : same.labels) EXPECT_EQ(l, DurationLabel::Medium);
    const DurationClusters two = cluster_durations({15, 90});
    EXPECT_TRUE(two.fallback);
    EXPECT_EQ(two.labels[0], DurationLabel::Fast);
    EXPECT_EQ(two.labels[1], DurationLabel::Slow);
}

TEST(Clusters, FixedPointOfSingleMoves) {
    std::mt19937_64 r(11);
    auto sse = [](const std::vector<double>& x, const std::vector<int>& a) {
        double total = 0;
        for (int k = 0; k < 3; ++k) {
            double s = 0, n = 0;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (a[i] == k) s += x[i], n += 1;
            if (n == 0) continue;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (a[i] == k) total += (x[i] - s / n) * (x[i] - s / n);
        }
        return total;
    };
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> d(40);
        for (int& v : d) v = std::uniform_int_distribution<int>(15, 450)(r);
        const DurationClusters c = cluster_durations(d);
        ASSERT_FALSE(c.fallback);
        std::vector<double> x(d.begin(), d.end());
        std::vector<int> a;
        for (DurationLabel l : c.labels) a.push_back(static_cast<int>(l));
        const double base = sse(x, a);
        for (std::size_t i = 0; i < x.size(); ++i)
            for (int k = 0; k < 3; ++k) {
                if (k == a[i]) continue;
                std::vector<int> b = a;
                b[i] = k;
                EXPECT_GE(sse(x, b), base - 1e-9);
            }
        EXPECT_LT(c.centroids[0], c.centroids[1]);
        EXPECT_LT(c.centroids[1], c.centroids[2]);
    }
}

TEST(Gallery, LabelsAndBinsCoverEveryTrajectory) {
    const Gallery& g = synthetic_gallery();
    EXPECT_EQ(static_cast<int>(g.labels.size()), g.size());
    std::size_t binned = 0;
    for (const auto& [b, idx] : g.bins()) {
        binned += idx.size();
        for (int i : idx) EXPECT_EQ(g.bin_of(g[i].vp.norm()), b);
    }
    EXPECT_EQ(binned, static_cast<std::size_t>(g.size()));
}

TEST(Candidates, LabelFilterCountAndCap) {
    const Gallery& g = synthetic_gallery();
    const Query q = make_query({0, 0}, {0, 1}, {0, 2}, {0, 1});
    SearchConfig cfg;
    cfg.max_frames = 150;
    const auto all = query_candidates(g, q, cfg, 7);
    ASSERT_FALSE(all.empty());
    EXPECT_LE(all.size(), 7u);
    for (const Candidate& c : all) {
        EXPECT_LE(c.error, cfg.alpha);
        EXPECT_LE(c.frames, 150);
        EXPECT_EQ(c.frames, chain_frames(g, c.chain));
    }
    for (DurationLabel l : {DurationLabel::Fast, DurationLabel::Medium, DurationLabel::Slow})
        for (const Candidate& c : query_candidates(g, q, cfg, 7, l)) EXPECT_EQ(c.label, l);
    EXPECT_EQ(parse_duration_label("slow"), DurationLabel::Slow);
    EXPECT_THROW(parse_duration_label("quick"), Error);
}

TEST(Guidance, EndsOnTargetWithOneSamplePerFrame) {
    const Gallery& g = synthetic_gallery();
    const Vec2 start(1.0, -2.0);
    const Query q = make_query(start, {1, 0}, start + Vec2(2.5, 1.0), {0, 1});
    SearchConfig cfg;
    cfg.alpha = 1.0;
    const SearchResult r = tcs(g, q, cfg);
    ASSERT_TRUE(r.found());
    const auto s = chain_guidance(g, r.chain, start, q);
    EXPECT_EQ(static_cast<int>(s.size()), chain_frames(g, r.chain));
    EXPECT_NEAR((s.back().position - (start + q.vp)).norm(), 0.0, 1e-9);
    Vec2 prev = start;
    for (const RootSample& x : s) {
        EXPECT_NEAR(x.facing.norm(), 1.0, 1e-9);
        EXPECT_NEAR((x.velocity - (x.position - prev) / kFrameTime).norm(), 0.0, 1e-9);
        prev = x.position;
    }
    EXPECT_EQ(chain_polyline(g, r.chain, start, q).size(), s.size() + 1);
}

TEST(Guidance, SinglePieceReplaysSourcePath) {
    const MotionClip c = straight_walk(1.2, 6.0, 0.3);
    GalleryConfig cfg;
    cfg.durations = {60};
    const Gallery g = build_gallery({c}, cfg);
    const AtomicTrajectory& t = g[3];
    const Vec2 start = ground(c.world_position(t.start, 0));
    const Vec2 sf = ground_facing(c.world_rotation(t.start, 0));
    const Query q = make_query(start, sf, start + RootFrame{start, yaw_of(sf)}.ground_vector_to_world(t.vp),
                               ground_facing(c.world_rotation(t.end, 0)));
    const auto s = chain_guidance(g, {3}, start, q);
    for (int f = 1; f <= t.duration(); ++f)
        EXPECT_NEAR((s[f - 1].position - ground(c.world_position(t.start + f, 0))).norm(), 0.0, 1e-5);
}

TEST(GalleryFile, RoundTripAndTextExport) {
    const Gallery& g = synthetic_gallery();
    const auto path = std::filesystem::temp_directory_path() / "inbetween_gallery_test.ibtc";
    save_gallery(path.string(), g, {{"seed", "7"}});
    const Gallery h = load_gallery(path.string());
    std::filesystem::remove(path);
    ASSERT_EQ(h.size(), g.size());
    for (int i = 0; i < g.size(); ++i) {
        EXPECT_EQ(h[i].vp, g[i].vp);
        EXPECT_EQ(h[i].oe, g[i].oe);
        EXPECT_EQ(h[i].start, g[i].start);
        EXPECT_EQ(h[i].end, g[i].end);
        EXPECT_EQ(h[i].style, g[i].style);
        EXPECT_EQ(h.labels[i], g.labels[i]);
    }
    const Query q{{0, 1}, {1, 0}, {3, 4}, {}};
    EXPECT_EQ(tcs(g, q).chain, tcs(h, q).chain);
    std::ostringstream os;
    export_gallery_text(os, g);
    std::istringstream is(os.str());
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["index"].get<int>(), n);
        EXPECT_EQ(j["duration"].get<int>(), g[n].duration());
        ++n;
    }
    EXPECT_EQ(n, g.size());
    EXPECT_THROW(gallery_from_container(Container("clips")), Error);
}
