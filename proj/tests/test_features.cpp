#include <gtest/gtest.h>

#include <random>

#include "inbetween/features.hpp"
#include "inbetween/synth.hpp"

using namespace inbetween;

namespace {

MotionClip transform_clip(const MotionClip& in, double yaw, Vec3 shift) {
    MotionClip c = in;
    c.clear_caches();
    const Quat q = yaw_quat(yaw);
    for (int f = 0; f < c.frames(); ++f) {
        c.root_positions[f] = q.rotate(c.root_positions[f]) + shift;
        c.rotation(f, 0) = q * c.rotation(f, 0);
    }
    return derive(std::move(c));
}

MotionClip walking_clip(double seconds, std::uint64_t seed) {
    return with_phases(generate_synthetic_clip(walk_style(), seconds, seed).clip);
}

std::vector<std::uint8_t> no_mask(int n) { return std::vector<std::uint8_t>(n, 0); }

} // namespace

TEST(EncodePhase, Examples) {
    PhaseFrame p;
    p.amplitude[0] = 1.0;
    p.phase[0] = 0.0;
    p.amplitude[1] = 2.0;
    p.phase[1] = 0.25;
    const auto e = encode_phase(p);
    EXPECT_NEAR(e[0], 0.0, 1e-12);
    EXPECT_NEAR(e[1], 1.0, 1e-12);
    EXPECT_NEAR(e[2], 2.0, 1e-12);
    EXPECT_NEAR(e[3], 0.0, 1e-12);
}

TEST(EncodePhase, PairNormIsAmplitudeAndDecodeInverts) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> amp(0.0, 5.0), ph(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        PhaseFrame p;
        for (int n = 0; n < kPhaseChannels; ++n) {
            p.amplitude[n] = amp(rng);
            p.phase[n] = ph(rng);
        }
        const auto e = encode_phase(p);
        const PhaseFrame d = decode_phase(e.data());
        for (int n = 0; n < kPhaseChannels; ++n) {
            EXPECT_NEAR(std::hypot(e[2 * n], e[2 * n + 1]), p.amplitude[n], 1e-9);
            EXPECT_NEAR(d.amplitude[n], p.amplitude[n], 1e-9);
            const double dphi = std::abs(d.phase[n] - p.phase[n]);
            EXPECT_LT(std::min(dphi, 1.0 - dphi), 1e-9);
        }
    }
}

TEST(EncodeTta, Examples) {
    const auto z0 = encode_tta(0);
    ASSERT_EQ(z0.size(), 128u);
    for (int i = 0; i < 64; ++i) {
        EXPECT_EQ(z0[2 * i], 0.0);
        EXPECT_EQ(z0[2 * i + 1], 1.0);
    }
    const auto z1 = encode_tta(1);
    EXPECT_NEAR(z1[0], 0.84147, 1e-4);
    EXPECT_NEAR(z1[1], 0.54030, 1e-4);
    // i = 1 of d = 128: frequency 10000^(-2/128)
    EXPECT_NEAR(z1[2], std::sin(std::pow(10000.0, -2.0 / 128.0)), 1e-12);
    for (int tta : {1, 7, 45, 90, 150}) {
        const auto z = encode_tta(tta, 16);
        for (int i = 0; i < 8; ++i) EXPECT_NEAR(z[2 * i] * z[2 * i] + z[2 * i + 1] * z[2 * i + 1], 1.0, 1e-9);
    }
}

TEST(EncodeTta, OddDimension) {
    try {
        encode_tta(3, 7);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::OddDimension);
    }
}

TEST(StyleEmbed, LookupAndUnknown) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 0.02);
    Eigen::MatrixXd table(4, 256);
    for (int i = 0; i < table.size(); ++i) table.data()[i] = n(rng);
    EXPECT_EQ(style_embed(0, table), table.row(0).transpose());
    EXPECT_GT((style_embed(1, table) - style_embed(2, table)).norm(), 0.0);
    try {
        style_embed(4, table);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnknownStyle);
    }
    EXPECT_THROW(style_embed(-1, table), Error);
}

TEST(PhaseProxy, ConstantVelocityHasNoAmplitude) {
    MotionClip c;
    c.skeleton = default_skeleton();
    for (int f = 0; f < 90; ++f) c.push_frame(Vec3(0.0, 1.0, 1.3 * f * kFrameTime), std::vector<Quat>(c.skeleton.size()));
    c = derive(std::move(c));
    for (const PhaseFrame& p : extract_phase_proxy(c))
        for (int n = 0; n < kPhaseChannels; ++n) EXPECT_LT(p.amplitude[n], 1e-3);
}

TEST(PhaseProxy, FootChannelAdvancesAtStrideFrequency) {
    for (const auto& style : {walk_style(), run_style(), crouch_walk_style()}) {
        const MotionClip c = generate_synthetic_clip(style, 8.0, 31).clip;
        const auto phases = extract_phase_proxy(c);
        for (int ch : {1, 3}) { // forward velocity of left and right toe
            double total = 0.0;
            int count = 0;
            for (int f = 31; f < c.frames() - 31; ++f) {
                double d = phases[f].phase[ch] - phases[f - 1].phase[ch];
                d -= std::floor(d + 0.5); // wrap into [-0.5, 0.5)
                total += d;
                ++count;
            }
            const double expect = style.stride_frequency * c.frame_time;
            EXPECT_NEAR(total / count, expect, 0.05 * expect) << style.name << " channel " << ch;
        }
    }
}

TEST(PhaseProxy, DeterministicAndRange) {
    const MotionClip c = generate_synthetic_clip(run_style(), 3.0, 2).clip;
    const auto a = extract_phase_proxy(c), b = extract_phase_proxy(c);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t f = 0; f < a.size(); ++f)
        for (int n = 0; n < kPhaseChannels; ++n) {
            EXPECT_EQ(a[f].amplitude[n], b[f].amplitude[n]);
            EXPECT_EQ(a[f].phase[n], b[f].phase[n]);
            EXPECT_GE(a[f].amplitude[n], 0.0);
            EXPECT_GE(a[f].phase[n], 0.0);
            EXPECT_LT(a[f].phase[n], 1.0);
        }
}

TEST(PhaseProxy, TooShort) {
    const MotionClip c = slice(generate_synthetic_clip(walk_style(), 2.0, 2).clip, 0, 50);
    try {
        extract_phase_proxy(c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooShort);
    }
}

TEST(Assemble, TtaAndWindowShape) {
    const MotionClip c = walking_clip(4.0, 1);
    const auto [s, cond] = assemble(c, 40, 41, no_mask(c.joints()));
    EXPECT_EQ(cond.tta, 1);
    EXPECT_EQ(cond.style, c.style);
    const FeatureLayout L;
    EXPECT_EQ(static_cast<int>(s.flatten().size()), L.input_dims());
    EXPECT_EQ(L.input_dims(), 540);
    EXPECT_EQ(L.output_dims(), 474);
    EXPECT_EQ(static_cast<int>(cond.flatten_phases().size()), L.phase_window_dims());
    ASSERT_EQ(s.trajectory.size(), 13u * 6u);
    for (int i = 0; i < 13; ++i) EXPECT_NEAR(std::hypot(s.trajectory[6 * i + 4], s.trajectory[6 * i + 5]), 1.0, 1e-6);
    // center sample is the current root: origin, facing +z
    EXPECT_NEAR(s.trajectory[6 * 6 + 0], 0.0, 1e-12);
    EXPECT_NEAR(s.trajectory[6 * 6 + 1], 0.0, 1e-12);
    EXPECT_NEAR(s.trajectory[6 * 6 + 4], 0.0, 1e-12);
    EXPECT_NEAR(s.trajectory[6 * 6 + 5], 1.0, 1e-12);
}

TEST(Assemble, IdentityPoseAtOriginGivesOffsets) {
    MotionClip c;
    c.skeleton = default_skeleton();
    for (int f = 0; f < 70; ++f) c.push_frame(Vec3::Zero(), std::vector<Quat>(c.skeleton.size()));
    c = with_phases(derive(std::move(c)));
    const auto [s, cond] = assemble(c, 10, 20, no_mask(c.joints()));
    for (int j = 0; j < c.joints(); ++j) {
        Vec3 expect = Vec3::Zero();
        for (int k = j; k >= 0; k = c.skeleton.joints[k].parent) expect += c.skeleton.joints[k].offset;
        for (int a = 0; a < 3; ++a) EXPECT_NEAR(s.current[12 * j + a], expect[a], 1e-12);
    }
}

TEST(Assemble, InvariantUnderGlobalYawAndShift) {
    const MotionClip c = walking_clip(5.0, 4);
    const MotionClip moved = with_phases(transform_clip(c, 2.3, {4.0, 0.0, -7.5}));
    for (auto [frame, target] : {std::pair{0, 60}, std::pair{70, 150}, std::pair{100, 101}}) {
        const auto [a, ca] = assemble(c, frame, target, no_mask(c.joints()));
        const auto [b, cb] = assemble(moved, frame, target, no_mask(c.joints()));
        EXPECT_LT((a.flatten() - b.flatten()).cwiseAbs().maxCoeff(), 1e-5);
        EXPECT_LT((ca.flatten_phases() - cb.flatten_phases()).cwiseAbs().maxCoeff(), 1e-5);
    }
}

TEST(Assemble, MaskedJointsAreZero) {
    const MotionClip c = walking_clip(3.0, 5);
    auto mask = no_mask(c.joints());
    mask[3] = mask[17] = 1;
    const auto [s, cond] = assemble(c, 30, 60, mask);
    for (int j = 0; j < c.joints(); ++j)
        for (int k = 0; k < 9; ++k) {
            if (mask[j]) EXPECT_EQ(s.target[9 * j + k], 0.0);
        }
    EXPECT_NE(s.target[9 * 4 + 1], 0.0);
}

TEST(Assemble, IndexOutOfRange) {
    const MotionClip c = walking_clip(5.0, 6);
    const auto m = no_mask(c.joints());
    for (auto [f, t] : {std::pair{10, 10}, std::pair{10, 5}, std::pair{0, 91}, std::pair{-1, 10}, std::pair{140, 151}}) {
        try {
            assemble(c, f, t, m);
            FAIL() << f << " " << t;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::IndexOutOfRange);
        }
    }
    EXPECT_NO_THROW(assemble(c, 0, 90, m));
}

TEST(Assemble, FutureTrajectoryHeldAtTarget) {
    const MotionClip c = walking_clip(4.0, 7);
    const auto [s, cond] = assemble(c, 50, 60, no_mask(c.joints()));
    // offsets 15, 20, ... lie beyond the target: same position, zero velocity
    for (int i = 9; i < 13; ++i) {
        EXPECT_EQ(s.trajectory[6 * i], s.trajectory[6 * 9]);
        EXPECT_EQ(s.trajectory[6 * i + 2], 0.0);
        EXPECT_EQ(s.trajectory[6 * i + 3], 0.0);
    }
    // offset 10 is the target frame itself; its root position matches the target root
    EXPECT_NEAR(s.trajectory[6 * 8], s.target[0], 1e-12);
    EXPECT_NEAR(s.trajectory[6 * 8 + 1], s.target[2], 1e-12);
}

TEST(GroundTruth, NextPositionIsCurrentPlusVelocityStep) {
    const MotionClip c = walking_clip(3.0, 8);
    const ContactTrack contacts = detect_contacts(c);
    const auto [s, cond] = assemble(c, 20, 40, no_mask(c.joints()));
    const OutputState o = ground_truth(c, 20, contacts);
    for (int j = 0; j < c.joints(); ++j)
        for (int a = 0; a < 3; ++a)
            EXPECT_NEAR(s.current[12 * j + a] + o.velocities[3 * j + a] * c.frame_time, o.positions[3 * j + a], 1e-9);
    EXPECT_EQ(o.contacts.size(), 7u * 4u);
    EXPECT_EQ(o.trajectory.size(), 7u * 6u);
    EXPECT_EQ(o.phases.size(), 7u * 20u);
    const FeatureLayout L;
    const OutputState back = OutputState::unflatten(o.flatten(), L);
    EXPECT_EQ(back.flatten(), o.flatten());
    EXPECT_THROW(ground_truth(c, c.frames() - 1, contacts), Error);
}

TEST(Normalizer, RoundTripAndStatistics) {
    Eigen::MatrixXd samples(540, 0);
    std::vector<Eigen::VectorXd> cols;
    for (int seed = 0; seed < 3; ++seed) {
        const MotionClip c = walking_clip(4.0, 20 + seed);
        for (int f = 0; f + 30 < c.frames(); f += 3) cols.push_back(assemble(c, f, f + 30, no_mask(c.joints())).first.flatten());
    }
    samples.resize(540, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) samples.col(static_cast<Eigen::Index>(i)) = cols[i];
    const Normalizer n = Normalizer::fit(samples);
    for (int i = 0; i < n.dims(); ++i) EXPECT_GE(n.stddev[i], Normalizer::kStdFloor);

    Eigen::MatrixXd z(samples.rows(), samples.cols());
    for (Eigen::Index i = 0; i < samples.cols(); ++i) {
        z.col(i) = n.normalize(samples.col(i));
        EXPECT_LT((n.denormalize(z.col(i)) - samples.col(i)).cwiseAbs().maxCoeff(), 1e-6);
    }
    for (Eigen::Index d = 0; d < z.rows(); ++d) {
        if (n.stddev[d] <= Normalizer::kStdFloor * 1.0000001) continue; // constant feature
        const double mean = z.row(d).mean();
        const double sd = std::sqrt((z.row(d).array() - mean).square().mean());
        EXPECT_NEAR(mean, 0.0, 0.05) << d;
        EXPECT_NEAR(sd, 1.0, 0.05) << d;
    }
    EXPECT_THROW(Normalizer::fit(Eigen::MatrixXd(3, 0)), Error);
}

TEST(Normalizer, PoolReplacesGroupByItsMean) {
    Normalizer n{Eigen::VectorXd::Zero(4), Eigen::VectorXd(4)};
    n.stddev << 1.0, 3.0, 0.5, 7.0;
    n.pool({0, 1, 2});
    EXPECT_DOUBLE_EQ(n.stddev[0], 1.5);
    EXPECT_DOUBLE_EQ(n.stddev[1], 1.5);
    EXPECT_DOUBLE_EQ(n.stddev[2], 1.5);
    EXPECT_DOUBLE_EQ(n.stddev[3], 7.0);
    n.pool({});
    EXPECT_DOUBLE_EQ(n.stddev[3], 7.0);
    n.stddev.setConstant(1e-9);
    n.pool({0, 1});
    EXPECT_EQ(n.stddev[0], Normalizer::kStdFloor);
}

TEST(FeatureGroups, PartitionTheInputByMeaning) {
    const FeatureLayout L;
    const auto groups = input_feature_groups(L);
    ASSERT_EQ(groups.size(), 8u);
    const std::vector<std::size_t> sizes{66, 66, 132, 66, 132, 26, 26, 26};
    std::vector<int> seen(L.input_dims(), 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        EXPECT_EQ(groups[g].size(), sizes[g]) << g;
        for (int i : groups[g]) ++seen.at(i);
    }
    for (int c : seen) EXPECT_EQ(c, 1);

    // Semantics on real data: 6D columns and facings are unit vectors, current
    // root position (root frame) is (0, height, 0).
    const MotionClip c = walking_clip(4.0, 5);
    const Eigen::VectorXd x = assemble(c, 40, 70, no_mask(c.joints())).first.flatten();
    for (std::size_t k = 0; k < groups[2].size(); k += 6)
        EXPECT_NEAR(Eigen::Vector3d(x[groups[2][k]], x[groups[2][k + 1]], x[groups[2][k + 2]]).norm(), 1.0, 1e-9);
    for (std::size_t k = 0; k < groups[7].size(); k += 2)
        EXPECT_NEAR(std::hypot(x[groups[7][k]], x[groups[7][k + 1]]), 1.0, 1e-9);
    EXPECT_NEAR(x[groups[0][0]], 0.0, 1e-9);
    EXPECT_NEAR(x[groups[0][2]], 0.0, 1e-9);
    EXPECT_NEAR(x[groups[0][1]], c.world_position(40, 0).y(), 1e-9);
}
