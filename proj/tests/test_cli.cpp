#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "inbetween/cli.hpp"

using namespace inbetween;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult cli_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path workdir() {
    static const fs::path d = [] {
        fs::path p = fs::temp_directory_path() / "inbetween_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return d;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

std::string bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Small shared dataset with phases, built once.
const std::string& dataset() {
    static const std::string p = [] {
        const std::string path = at("base/clips.ibc");
        const CliResult r = cli_run({"synth", "--styles", "4", "--minutes", "1.5", "--seed", "7", "--phases", "-o", path});
        EXPECT_EQ(r.code, 0) << r.err;
        return path;
    }();
    return p;
}

const std::string& gallery_file() {
    static const std::string p = [] {
        const std::string path = at("base/gallery.ibc");
        const CliResult r = cli_run({"gallery", "build", "--clips", dataset(), "--stride", "10", "-o", path});
        EXPECT_EQ(r.code, 0) << r.err;
        return path;
    }();
    return p;
}

} // namespace

TEST(Cli, SynthIsByteIdenticalAcrossRuns) {
    for (const char* d : {"s1", "s2"}) {
        const CliResult r = cli_run({"synth", "--styles", "4", "--minutes", "1", "--seed", "7", "-o", at(std::string(d) + "/x.ibc")});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_TRUE(bytes(at("s1/x.ibc")) == bytes(at("s2/x.ibc")));
    EXPECT_FALSE(bytes(at("s1/x.ibc")).empty());
    const auto echo = nlohmann::json::parse(bytes(at("s1/x.ibc.config.json")));
    EXPECT_EQ(echo["command"], "synth");
    EXPECT_EQ(echo["options"]["seed"], "7");
    EXPECT_EQ(echo["options"]["styles"], "4");
    EXPECT_EQ(echo["options"]["phases"], "false");
}

TEST(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(cli_run({}).code, 1);
    EXPECT_EQ(cli_run({"frobnicate"}).code, 1);
    const CliResult r = cli_run({"synth", "--bogus-flag", "-o", at("u.ibc")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(cli_run({"synth"}).code, 1); // --out is required
    EXPECT_EQ(cli_run({"gallery"}).code, 1);
    EXPECT_EQ(cli_run({"gallery", "query", "--gallery", gallery_file(), "--to", "0,2", "--duration", "brisk"}).code, 1);
    EXPECT_EQ(cli_run({"eval", "--clips", dataset(), "--frames", "30,x"}).code, 1);
    EXPECT_EQ(cli_run({"eval", "--clips", dataset(), "--method", "model"}).code, 1);
    EXPECT_EQ(cli_run({"gallery", "query", "--gallery", gallery_file(), "--to", "0,0.01"}).code, 1);
    EXPECT_EQ(cli_run({"--help"}).code, 0);
}

TEST(Cli, DataErrorsExitTwo) {
    EXPECT_EQ(cli_run({"gallery", "query", "--gallery", at("missing.ibc"), "--to", "0,2"}).code, 2);
    std::ofstream(at("broken.bvh")) << "HIERARCHY\nROOT Hips\n{\n";
    const CliResult r = cli_run({"ingest", at("broken.bvh"), "-o", at("broken.ibc")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error"), std::string::npos);
    EXPECT_EQ(cli_run({"synth", "--minutes", "-1", "-o", at("neg.ibc")}).code, 2);
    EXPECT_EQ(cli_run({"gallery", "build", "--clips", gallery_file(), "-o", at("g2.ibc")}).code, 2); // wrong kind
}

TEST(Cli, IngestReadsSynthBvh) {
    ASSERT_EQ(cli_run({"synth", "--styles", "2", "--minutes", "0.5", "--bvh-dir", at("bvh"), "-o", at("bvh.ibc")}).code, 0);
    const CliResult r = cli_run({"ingest", at("bvh"), "--style", "1", "-o", at("ingested.ibc")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto orig = load_clips(at("bvh.ibc")), back = load_clips(at("ingested.ibc"));
    ASSERT_EQ(orig.size(), back.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
        EXPECT_EQ(orig[i].clip.frames(), back[i].clip.frames());
        EXPECT_EQ(back[i].clip.style, 1);
        EXPECT_NEAR((orig[i].clip.root_positions[10] - back[i].clip.root_positions[10]).norm(), 0.0, 1e-4);
    }
}

TEST(Cli, PhasesAddsCaches) {
    ASSERT_EQ(cli_run({"synth", "--styles", "2", "--minutes", "0.5", "-o", at("nophase.ibc")}).code, 0);
    EXPECT_FALSE(load_clips(at("nophase.ibc"))[0].clip.has_phases());
    ASSERT_EQ(cli_run({"phases", "-i", at("nophase.ibc"), "-o", at("phase.ibc")}).code, 0);
    for (const ClipRecord& r : load_clips(at("phase.ibc"))) EXPECT_TRUE(r.clip.has_phases());
}

TEST(Cli, GalleryQueryReportsCandidatesOrNoMatch) {
    const CliResult r = cli_run({"gallery", "query", "--gallery", gallery_file(), "--to", "0,2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(r.out.find("chain") != std::string::npos || r.out.find("no match within") != std::string::npos);

    const CliResult j = cli_run({"gallery", "query", "--gallery", gallery_file(), "--to", "0,2", "--duration", "fast", "--json"});
    ASSERT_EQ(j.code, 0) << j.err;
    const auto body = nlohmann::json::parse(j.out);
    for (const auto& c : body["candidates"]) {
        EXPECT_EQ(c["label"], "fast");
        EXPECT_LE(c["error"].get<double>(), 0.35);
    }
    const CliResult none = cli_run({"gallery", "query", "--gallery", gallery_file(), "--to", "0,2", "--alpha", "0"});
    ASSERT_EQ(none.code, 0);
    EXPECT_NE(none.out.find("no match within alpha"), std::string::npos);
}

TEST(Cli, GalleryBuildIsDeterministicAndExportsText) {
    std::vector<std::string> runs;
    for (int i = 0; i < 2; ++i) {
        ASSERT_EQ(cli_run({"gallery", "build", "--clips", dataset(), "--stride", "10", "-o", at("g/g.ibc"), "--text",
                           at("g/g.jsonl")})
                      .code,
                  0);
        runs.push_back(bytes(at("g/g.ibc")));
    }
    EXPECT_TRUE(runs[0] == runs[1]);
    std::istringstream lines(bytes(at("g/g.jsonl")));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) nlohmann::json::parse(line), ++n;
    EXPECT_EQ(n, load_gallery(at("g/g.ibc")).size());
}

TEST(Cli, EvalTruthIsExactlyZero) {
    const CliResult r = cli_run({"eval", "--clips", dataset(), "--method", "truth,interp", "--frames", "30", "--pairs", "8",
                           "-o", at("eval.jsonl")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("interp"), std::string::npos);
    std::istringstream lines(bytes(at("eval.jsonl")));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto row = nlohmann::json::parse(line);
        ++n;
        EXPECT_EQ(row["frames"], 30);
        EXPECT_EQ(row["samples"], 8);
        if (row["method"] == "truth") {
            EXPECT_EQ(row["l2p_m"].get<double>(), 0.0);
            EXPECT_EQ(row["l2q"].get<double>(), 0.0);
        } else {
            EXPECT_TRUE(std::isfinite(row["l2p_m"].get<double>()));
            EXPECT_GT(row["l2p_m"].get<double>(), 0.0);
            EXPECT_TRUE(std::isfinite(row["foot_slide_mps"].get<double>()));
        }
    }
    EXPECT_EQ(n, 2);
}

TEST(Cli, TrainAndRolloutAreDeterministic) {
    const std::string dir = at("t");
    std::vector<std::string> models, bvhs;
    for (int i = 0; i < 2; ++i) {
        const CliResult t = cli_run({"train", "--clips", dataset(), "-o", dir + "/m.ibc", "--steps", "20", "--experts", "2",
                                     "--width", "16", "--gating", "8", "--style-dims", "4", "--norm-samples", "64", "--seed",
                                     "3", "--log-json", "--log-every", "10", "--curve", dir + "/curve.csv"});
        ASSERT_EQ(t.code, 0) << t.err;
        std::istringstream lines(t.err);
        std::string line;
        while (std::getline(lines, line)) EXPECT_TRUE(nlohmann::json::parse(line).contains("event"));
        const CliResult r = cli_run({"rollout", "--model", dir + "/m.ibc", "--clips", dataset(), "--clip", "3", "--start",
                                     "40", "--frames", "20", "-o", dir + "/r.bvh", "--json"});
        ASSERT_EQ(r.code, 0) << r.err;
        EXPECT_EQ(nlohmann::json::parse(r.out)["frames"], 20);
        models.push_back(bytes(dir + "/m.ibc"));
        bvhs.push_back(bytes(dir + "/r.bvh"));
    }
    EXPECT_TRUE(models[0] == models[1]);
    EXPECT_TRUE(bvhs[0] == bvhs[1]);
    EXPECT_EQ(parse_bvh(bvhs[0]).frames(), 20);
    EXPECT_TRUE(fs::exists(dir + "/m.ibc.config.json"));
    const Model<float> m = load_model<float>(dir + "/m.ibc");
    EXPECT_EQ(m.config.experts, 2);
    EXPECT_EQ(m.config.styles, 4);
    const CliResult e = cli_run({"eval", "--clips", dataset(), "--method", "model", "--model", dir + "/m.ibc", "--frames",
                                 "15", "--pairs", "2"});
    EXPECT_EQ(e.code, 0) << e.err;
}

TEST(Cli, ConfigFileWithFlagOverride) {
    std::ofstream(at("run.toml")) << "[synth]\nminutes = 0.5\nstyles = 2\nseed = 11\n";
    CliResult r = cli_run({"--config", at("run.toml"), "synth", "-o", at("cfg/a.ibc")});
    ASSERT_EQ(r.code, 0) << r.err;
    auto echo = nlohmann::json::parse(bytes(at("cfg/a.ibc.config.json")));
    EXPECT_EQ(echo["options"]["styles"], "2");
    EXPECT_EQ(echo["options"]["seed"], "11");
    EXPECT_EQ(load_clips(at("cfg/a.ibc")).size(), 2u);
    r = cli_run({"--config", at("run.toml"), "synth", "--seed", "12", "-o", at("cfg/b.ibc")});
    ASSERT_EQ(r.code, 0) << r.err;
    echo = nlohmann::json::parse(bytes(at("cfg/b.ibc.config.json")));
    EXPECT_EQ(echo["options"]["seed"], "12");
    EXPECT_EQ(echo["options"]["styles"], "2");
}

TEST(Cli, DataDirectory) {
    const std::string dd = at("datadir");
    ASSERT_EQ(cli_run({"--data-dir", dd, "synth", "--minutes", "0.5", "--styles", "2", "-o", "rel.ibc"}).code, 0);
    EXPECT_TRUE(fs::exists(dd + "/rel.ibc"));
    ::setenv("INBETWEEN_DATA_DIR", dd.c_str(), 1);
    const CliResult r = cli_run({"phases", "-i", "rel.ibc", "-o", "rel_ph.ibc"});
    ::unsetenv("INBETWEEN_DATA_DIR");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dd + "/rel_ph.ibc"));
}
