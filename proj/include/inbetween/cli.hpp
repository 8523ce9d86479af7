#pragma once

// The `inbetween` command line: one binary, one subcommand per pipeline stage.
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvh.hpp"
#include "clipio.hpp"
#include "dcmoe.hpp"
#include "gallery.hpp"
#include "metrics.hpp"
#include "rollout.hpp"
#include "synth.hpp"
#include "service.hpp"

#include <CLI11.hpp>

namespace inbetween::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Human text or one JSON record per line, on the error stream.
class Logger {
public:
    Logger(std::ostream& os, bool json) : os_(os), json_(json) {}

    void operator()(const std::string& event, const nlohmann::json& fields = nlohmann::json::object()) const {
        if (json_) {
            nlohmann::json rec = fields;
            rec["event"] = event;
            os_ << rec.dump() << '\n';
        } else {
            os_ << event;
            for (auto it = fields.begin(); it != fields.end(); ++it)
                os_ << ' ' << it.key() << '=' << (it->is_string() ? it->get<std::string>() : it->dump());
            os_ << '\n';
        }
        os_.flush();
    }

private:
    std::ostream& os_;
    bool json_;
};

namespace cli_detail {

namespace fs = std::filesystem;

struct Env {
    std::ostream& out;
    std::ostream& err;
    std::string data_dir;
    bool log_json = false;

    Logger log() const { return Logger(err, log_json); }

    // Relative paths live under the data directory when one is set.
    std::string path(const std::string& p) const {
        if (data_dir.empty() || p.empty() || fs::path(p).is_absolute()) return p;
        return (fs::path(data_dir) / p).string();
    }
};

inline void ensure_parent(const std::string& file) {
    const fs::path parent = fs::path(file).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

/// Every option of a subcommand with its effective value.
inline nlohmann::json option_values(const CLI::App& app) {
    nlohmann::json o = nlohmann::json::object();
    for (const CLI::Option* opt : app.get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "h") continue;
        std::vector<std::string> vals = opt->results();
        if (vals.empty() && !opt->get_default_str().empty()) vals = {opt->get_default_str()};
        if (vals.empty()) o[name] = opt->get_expected_max() == 0 ? nlohmann::json("false") : nlohmann::json();
        else if (vals.size() == 1) o[name] = vals[0];
        else o[name] = vals;
    }
    return o;
}

/// `<out>.config.json` next to an artifact: subcommand, options, tool versions.
inline std::string write_echo(const std::string& artifact, const std::string& command, const CLI::App& app) {
    nlohmann::json e{{"command", command},
                     {"options", option_values(app)},
                     {"model_version", kModelVersion},
                     {"gallery_version", kGalleryVersion}};
    const std::string path = artifact + ".config.json";
    ensure_parent(path);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + path);
    f << e.dump(2) << '\n';
    return e.dump();
}

inline std::map<std::string, std::string> echo_map(const CLI::App& app) {
    std::map<std::string, std::string> m;
    const nlohmann::json o = option_values(app);
    for (auto it = o.begin(); it != o.end(); ++it) m[it.key()] = it->is_string() ? it->get<std::string>() : it->dump();
    return m;
}

inline Vec2 vec2(const std::vector<double>& v, const std::string& what) {
    if (v.size() != 2) throw Error(ErrorKind::Usage, what + " takes two numbers x,z");
    return {v[0], v[1]};
}

inline std::vector<MotionClip> load_motion(const Env& env, const std::string& path) {
    std::vector<MotionClip> clips;
    for (ClipRecord& r : load_clips(env.path(path))) clips.push_back(std::move(r.clip));
    if (clips.empty()) throw Error(ErrorKind::EmptyDataset, path + " holds no clips");
    return clips;
}

inline std::vector<MotionClip> with_phase_caches(std::vector<MotionClip> clips, const Logger& log) {
    int computed = 0;
    for (MotionClip& c : clips)
        if (!c.has_phases()) c = with_phases(std::move(c)), ++computed;
    if (computed) log("phases.computed", {{"clips", computed}});
    return clips;
}

inline std::vector<std::string> bvh_files(const std::vector<std::string>& inputs) {
    std::vector<std::string> files;
    for (const std::string& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<std::string> found;
            for (const auto& e : fs::recursive_directory_iterator(in))
                if (e.is_regular_file() && e.path().extension() == ".bvh") found.push_back(e.path().string());
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else if (fs::is_regular_file(in)) {
            files.push_back(in);
        } else {
            throw Error(ErrorKind::Io, "no such file or directory: " + in);
        }
    }
    if (files.empty()) throw Error(ErrorKind::EmptyDataset, "no .bvh files found");
    return files;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::Io, "cannot write " + path);
    f << text;
}

inline std::vector<int> parse_ints(const std::string& s, const std::string& what) {
    std::vector<int> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw Error(ErrorKind::Usage, what + " must be a comma-separated list of integers");
        }
    }
    return v;
}

// --- option bundles -------------------------------------------------------

struct SynthOpts {
    SyntheticDatasetSpec spec;
    std::string out, bvh_dir;
    bool phases = false;
};

struct IngestOpts {
    std::vector<std::string> inputs;
    std::string out;
    double scale = 1.0;
    int style = 0;
    bool phases = false;
};

struct PhasesOpts {
    std::string in, out;
};

struct GalleryBuildOpts {
    std::string clips, out, text;
    GalleryConfig cfg;
};

struct GalleryQueryOpts {
    std::string gallery;
    std::vector<double> from{0.0, 0.0}, from_facing{0.0, 1.0}, to, to_facing{0.0, 1.0};
    int style = -1;
    std::string duration;
    SearchConfig search = [] {
        SearchConfig s;
        s.max_frames = kMaxRolloutFrames;
        return s;
    }();
    int count = 7;
    bool json = false;
};

struct TrainOpts {
    std::string clips, out, curve;
    TrainingConfig tc = [] {
        TrainingConfig t;
        t.steps = 5000;
        t.learning_rate = 1e-3;
        t.final_lr_fraction = 0.05;
        return t;
    }();
    int experts = 4, width = 256, style_dims = 32, styles = 0, norm_samples = 4096, log_every = 100;
    std::string gating = "128,32";
};

struct RolloutOpts {
    std::string model, clips, out;
    int clip = 0, start = 30, frames = 45, history = 30;
    bool json = false;
};

struct EvalOpts {
    std::string clips, model, out;
    std::vector<std::string> methods{"interp"};
    std::string frames = "15,30,45,60,75,90";
    EvalConfig cfg;
};

struct ServeOpts {
    std::string model, gallery;
    ServiceConfig cfg;
};

// --- subcommands ------------------------------------------------------------

inline void run_synth(const Env& env, const SynthOpts& o, const CLI::App& app) {
    const Logger log = env.log();
    std::vector<ClipRecord> recs;
    for (SyntheticClip& s : generate_synthetic_dataset(o.spec)) {
        MotionClip c = o.phases ? with_phases(std::move(s.clip)) : std::move(s.clip);
        recs.push_back({std::move(c), std::move(s.stance)});
    }
    const std::string out = env.path(o.out);
    ensure_parent(out);
    save_clips(out, recs);
    write_echo(out, "synth", app);
    if (!o.bvh_dir.empty()) {
        const std::string dir = env.path(o.bvh_dir);
        fs::create_directories(dir);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "synth_%04zu_style%d.bvh", i, recs[i].clip.style);
            write_file((fs::path(dir) / name).string(), write_bvh(recs[i].clip));
        }
    }
    long frames = 0;
    for (const ClipRecord& r : recs) frames += r.clip.frames();
    log("synth.done", {{"clips", recs.size()}, {"frames", frames}, {"out", out}});
}

inline void run_ingest(const Env& env, const IngestOpts& o, const CLI::App& app) {
    const Logger log = env.log();
    std::vector<std::string> inputs;
    for (const std::string& p : o.inputs) inputs.push_back(env.path(p));
    std::vector<ClipRecord> recs;
    for (const std::string& f : bvh_files(inputs)) {
        MotionClip c = parse_bvh(read_file(f), BvhOptions{o.scale});
        if (c.frames() < 2) throw Error(ErrorKind::TooShort, f + " has fewer than 2 frames");
        c.style = o.style;
        c = derive(std::move(c));
        if (o.phases) c = with_phases(std::move(c));
        log("ingest.clip", {{"file", f}, {"frames", c.frames()}, {"joints", c.joints()}});
        recs.push_back({std::move(c), std::nullopt});
    }
    const std::string out = env.path(o.out);
    ensure_parent(out);
    save_clips(out, recs);
    write_echo(out, "ingest", app);
    log("ingest.done", {{"clips", recs.size()}, {"out", out}});
}

inline void run_phases(const Env& env, const PhasesOpts& o, const CLI::App& app) {
    std::vector<ClipRecord> recs = load_clips(env.path(o.in));
    for (ClipRecord& r : recs) r.clip = with_phases(std::move(r.clip));
    const std::string out = env.path(o.out);
    ensure_parent(out);
    save_clips(out, recs);
    write_echo(out, "phases", app);
    env.log()("phases.done", {{"clips", recs.size()}, {"out", out}});
}

inline void run_gallery_build(const Env& env, const GalleryBuildOpts& o, const CLI::App& app) {
    const Gallery g = build_gallery(load_motion(env, o.clips), o.cfg);
    const std::string out = env.path(o.out);
    ensure_parent(out);
    save_gallery(out, g, echo_map(app));
    write_echo(out, "gallery build", app);
    if (!o.text.empty()) {
        std::ostringstream ss;
        export_gallery_text(ss, g);
        write_file(env.path(o.text), ss.str());
    }
    env.log()("gallery.built", {{"trajectories", g.size()},
                                {"clips", g.tracks.size()},
                                {"centroids", g.centroids},
                                {"out", out}});
}

inline void run_gallery_query(const Env& env, const GalleryQueryOpts& o) {
    const Gallery g = load_gallery(env.path(o.gallery));
    const Vec2 p0 = vec2(o.from, "--from"), p1 = vec2(o.to, "--to");
    const double d = (p1 - p0).norm();
    if (d < kMinQueryDistance || d > kMaxQueryDistance)
        throw Error(ErrorKind::Usage, "start-target distance must lie in [0.1, 10] m");
    std::optional<int> style;
    if (o.style >= 0) style = o.style;
    std::optional<DurationLabel> label;
    if (!o.duration.empty()) label = parse_duration_label(o.duration);
    const Query q = make_query(p0, vec2(o.from_facing, "--from-facing"), p1, vec2(o.to_facing, "--to-facing"), style);
    const auto cands = query_candidates(g, q, o.search, o.count, label);
    if (o.json) {
        nlohmann::json list = nlohmann::json::array();
        for (const Candidate& c : cands) {
            nlohmann::json poly = nlohmann::json::array();
            for (const Vec2& p : chain_polyline(g, c.chain, p0, q)) poly.push_back({p.x(), p.y()});
            list.push_back({{"chain", c.chain}, {"frames", c.frames}, {"label", to_string(c.label)}, {"error", c.error},
                            {"polyline", poly}});
        }
        env.out << nlohmann::json{{"alpha", o.search.alpha}, {"candidates", list}}.dump() << '\n';
        return;
    }
    if (cands.empty()) {
        env.out << "no match within alpha = " << o.search.alpha << " rad\n";
        return;
    }
    env.out << "#  label   frames  error[rad]  chain\n";
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const Candidate& c = cands[i];
        std::ostringstream chain;
        for (std::size_t k = 0; k < c.chain.size(); ++k) chain << (k ? "," : "") << c.chain[k];
        char line[160];
        std::snprintf(line, sizeof line, "%-2zu %-7s %6d  %10.5f  %s\n", i, to_string(c.label), c.frames, c.error,
                      chain.str().c_str());
        env.out << line;
    }
}

inline void run_train(const Env& env, const TrainOpts& o, const CLI::App& app) {
    const Logger log = env.log();
    std::vector<MotionClip> clips = with_phase_caches(load_motion(env, o.clips), log);
    ModelConfig mc;
    mc.experts = o.experts;
    mc.expert_width = o.width;
    mc.gating_hidden = parse_ints(o.gating, "--gating");
    mc.style_dims = o.style_dims;
    int styles = 0;
    for (const MotionClip& c : clips) styles = std::max(styles, c.style + 1);
    mc.styles = o.styles > 0 ? o.styles : styles;
    if (styles > mc.styles) throw Error(ErrorKind::UnknownStyle, "clips use more styles than --styles allows");
    mc.validate();

    Model<float> m(mc, clips.front().skeleton);
    m.initialize(o.tc.seed);
    ClipSampler sampler(clips, o.tc.max_tta);
    std::mt19937_64 norm_rng(o.tc.seed ^ 0x5bd1e995ULL);
    std::vector<TrainingSample> norm;
    for (int i = 0; i < o.norm_samples; ++i) norm.push_back(sampler.draw(norm_rng, 0.0));
    fit_normalizers(m, norm);
    log("train.start", {{"parameters", m.params.size()}, {"steps", o.tc.steps}, {"styles", mc.styles}, {"clips", clips.size()}});

    const double mask = o.tc.mask_rate;
    const SampleSource src = [&](std::mt19937_64& g) { return sampler.draw(g, mask); };
    const TrainingResult r = train(m, src, o.tc, [&](int step, const LossTerms& t) {
        if (o.log_every > 0 && (step % o.log_every == 0 || step + 1 == o.tc.steps))
            log("train.step", {{"step", step}, {"loss", t.total}, {"lr", scheduled_lr(o.tc, step)}});
    });
    const std::string out = env.path(o.out);
    ensure_parent(out);
    const std::string echo = write_echo(out, "train", app);
    save_model(out, m, echo);
    if (!o.curve.empty()) {
        std::ostringstream ss;
        ss << "step,total\n";
        for (std::size_t i = 0; i < r.curve.size(); ++i) ss << i << ',' << r.curve[i].total << '\n';
        write_file(env.path(o.curve), ss.str());
    }
    log("train.done", {{"final_loss", r.curve.empty() ? 0.0 : r.curve.back().total}, {"out", out}});
}

inline void run_rollout(const Env& env, const RolloutOpts& o, const CLI::App& app) {
    const Model<float> m = load_model<float>(env.path(o.model));
    std::vector<MotionClip> clips = load_motion(env, o.clips);
    if (o.clip < 0 || o.clip >= static_cast<int>(clips.size())) throw Error(ErrorKind::IndexOutOfRange, "--clip out of range");
    const MotionClip c = with_phases(clips[o.clip]);
    const MotionClip out = rollout(m, request_from_clip(c, o.start, o.frames, o.history));
    const double reach = (out.world_position(out.frames() - 1, 0) - c.world_position(o.start + o.frames, 0)).norm();
    double jump = 0.0;
    for (int f = 0; f < out.frames(); ++f)
        for (int j = 0; j < out.joints(); ++j) {
            const Vec3 prev = f == 0 ? c.world_position(o.start, j) : out.world_position(f - 1, j);
            jump = std::max(jump, (out.world_position(f, j) - prev).norm());
        }
    if (!o.out.empty()) {
        const std::string path = env.path(o.out);
        write_file(path, write_bvh(out));
        write_echo(path, "rollout", app);
    }
    const nlohmann::json summary{{"frames", out.frames()}, {"final_root_error_m", reach}, {"max_joint_step_m", jump}};
    if (o.json) env.out << summary.dump() << '\n';
    else
        env.out << "frames " << out.frames() << "  final root error " << reach << " m  max joint step " << jump << " m\n";
}

inline void run_eval(const Env& env, const EvalOpts& o, const CLI::App& app) {
    std::vector<MotionClip> clips = load_motion(env, o.clips);
    std::optional<Model<float>> model;
    EvalConfig cfg = o.cfg;
    cfg.lengths = parse_ints(o.frames, "--frames");
    for (int l : cfg.lengths)
        if (l < 1) throw Error(ErrorKind::Usage, "--frames entries must be positive");
    std::sort(cfg.lengths.begin(), cfg.lengths.end());
    EvalReport report;
    for (const std::string& name : o.methods) {
        TransitionMethod method;
        if (name == "interp") method = interpolation_method();
        else if (name == "truth") method = truth_method();
        else if (name == "model") {
            if (o.model.empty()) throw Error(ErrorKind::Usage, "--method model needs --model");
            if (!model) {
                model = load_model<float>(env.path(o.model));
                clips = with_phase_caches(std::move(clips), env.log());
            }
            const Model<float>* mp = &*model;
            const int history = cfg.history;
            method = [mp, history](const MotionClip& c, int start, int length) {
                return rollout(*mp, request_from_clip(c, start, length, history));
            };
        } else {
            throw Error(ErrorKind::Usage, "unknown method '" + name + "' (interp, truth, model)");
        }
        for (int l : cfg.lengths) report.rows.push_back(evaluate_method(name, clips, l, method, cfg));
    }
    report.sort();
    env.out << report.table();
    if (!o.out.empty()) {
        const std::string path = env.path(o.out);
        write_file(path, report.json_lines());
        write_echo(path, "eval", app);
    }
}

inline void run_serve(const Env& env, const ServeOpts& o) {
    auto session = std::make_shared<const Session>(load_session(env.path(o.model), env.path(o.gallery)));
    const Service svc(session, o.cfg);
    env.log()("serve.start", {{"host", o.cfg.host},
                              {"port", o.cfg.port},
                              {"model_version", session->model_meta.count("model_version") ? session->model_meta.at("model_version") : ""},
                              {"gallery_version", session->gallery_meta.count("gallery_version") ? session->gallery_meta.at("gallery_version") : ""},
                              {"trajectories", session->gallery.size()}});
    serve(svc, &env.out);
}

} // namespace cli_detail

/// Parses and runs one command. Never throws.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace cli_detail;
    CLI::App app{"Motion in-betweening toolkit: synthetic data, trajectory gallery, DC-MoE training and rollout", "inbetween"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "Config file (TOML/INI); command-line flags take precedence");
    Env env{out, err};
    app.add_option("--data-dir", env.data_dir, "Base directory for relative paths")->envname("INBETWEEN_DATA_DIR");
    app.add_flag("--log-json", env.log_json, "Log one JSON record per line");

    SynthOpts so;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic motion dataset");
    synth->add_option("--styles", so.spec.styles, "Number of styles")->capture_default_str();
    synth->add_option("--minutes", so.spec.minutes, "Total minutes of motion")->capture_default_str();
    synth->add_option("--clip-seconds", so.spec.clip_seconds, "Length of each clip")->capture_default_str();
    synth->add_option("--turn-bias", so.spec.turn_bias, "Max constant turn rate per clip, rad/s")->capture_default_str();
    synth->add_option("--seed", so.spec.seed, "Random seed")->capture_default_str();
    synth->add_option("-o,--out", so.out, "Clip cache to write")->required();
    synth->add_option("--bvh-dir", so.bvh_dir, "Also write one BVH per clip here");
    synth->add_flag("--phases", so.phases, "Store phase caches");

    IngestOpts io;
    CLI::App* ingest = app.add_subcommand("ingest", "Convert BVH files into a clip cache");
    ingest->add_option("inputs", io.inputs, "BVH files or directories")->required();
    ingest->add_option("-o,--out", io.out, "Clip cache to write")->required();
    ingest->add_option("--scale", io.scale, "Length scale (0.01 for centimetre files)")->capture_default_str();
    ingest->add_option("--style", io.style, "Style id for every clip")->capture_default_str();
    ingest->add_flag("--phases", io.phases, "Store phase caches");

    PhasesOpts po;
    CLI::App* phases = app.add_subcommand("phases", "Add phase caches to a clip cache");
    phases->add_option("-i,--in", po.in, "Clip cache to read")->required();
    phases->add_option("-o,--out", po.out, "Clip cache to write")->required();

    CLI::App* gallery = app.add_subcommand("gallery", "Build or query a trajectory gallery");
    gallery->require_subcommand(1);
    gallery->fallthrough();
    GalleryBuildOpts gb;
    CLI::App* gbuild = gallery->add_subcommand("build", "Extract atomic trajectories from a clip cache");
    gbuild->add_option("--clips", gb.clips, "Clip cache")->required();
    gbuild->add_option("-o,--out", gb.out, "Gallery file to write")->required();
    gbuild->add_option("--stride", gb.cfg.stride, "Window stride, frames")->capture_default_str();
    gbuild->add_option("--bin-width", gb.cfg.bin_width, "Distance bin width, m")->capture_default_str();
    gbuild->add_option("--durations", gb.cfg.durations, "Window lengths, frames")->delimiter(',')->capture_default_str();
    gbuild->add_option("--text", gb.text, "Also export line-delimited JSON here");
    GalleryQueryOpts gq;
    CLI::App* gquery = gallery->add_subcommand("query", "Candidate root trajectories between two ground poses");
    gquery->add_option("--gallery", gq.gallery, "Gallery file")->required();
    gquery->add_option("--from", gq.from, "Start position x,z")->delimiter(',')->expected(2)->capture_default_str();
    gquery->add_option("--from-facing", gq.from_facing, "Start facing x,z")->delimiter(',')->expected(2)->capture_default_str();
    gquery->add_option("--to", gq.to, "Target position x,z")->delimiter(',')->expected(2)->required();
    gquery->add_option("--to-facing", gq.to_facing, "Target facing x,z")->delimiter(',')->expected(2)->capture_default_str();
    gquery->add_option("--style", gq.style, "Style filter (-1: any)")->capture_default_str();
    gquery->add_option("--duration", gq.duration, "Duration label filter")->check(CLI::IsMember({"fast", "medium", "slow"}));
    gquery->add_option("--alpha", gq.search.alpha, "Error threshold, rad")->capture_default_str();
    gquery->add_option("--k", gq.search.k, "Branches kept per split")->capture_default_str();
    gquery->add_option("--depth", gq.search.max_depth, "Max chain length")->capture_default_str();
    gquery->add_option("--max-frames", gq.search.max_frames, "Max chain duration")->capture_default_str();
    gquery->add_option("--count", gq.count, "Candidates to return")->capture_default_str();
    gquery->add_option("--seed", gq.search.seed, "Search seed")->capture_default_str();
    gquery->add_flag("--json", gq.json, "Print JSON");

    TrainOpts to;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a DC-MoE model on a clip cache");
    train_cmd->add_option("--clips", to.clips, "Clip cache")->required();
    train_cmd->add_option("-o,--out", to.out, "Weights file to write")->required();
    train_cmd->add_option("--steps", to.tc.steps, "Optimizer steps")->capture_default_str();
    train_cmd->add_option("--lr", to.tc.learning_rate, "Learning rate")->capture_default_str();
    train_cmd->add_option("--final-lr", to.tc.final_lr_fraction, "Cosine decay floor as a fraction of --lr")->capture_default_str();
    train_cmd->add_option("--batch", to.tc.batch_size, "Batch size")->capture_default_str();
    train_cmd->add_option("--weight-decay", to.tc.weight_decay, "AdamW weight decay")->capture_default_str();
    train_cmd->add_option("--mask-rate", to.tc.mask_rate, "Target joint mask probability")->capture_default_str();
    train_cmd->add_option("--experts", to.experts, "Experts")->capture_default_str();
    train_cmd->add_option("--width", to.width, "Expert hidden width")->capture_default_str();
    train_cmd->add_option("--gating", to.gating, "Gating hidden widths, comma separated")->capture_default_str();
    train_cmd->add_option("--style-dims", to.style_dims, "Style embedding size")->capture_default_str();
    train_cmd->add_option("--styles", to.styles, "Style count (0: from the clips)")->capture_default_str();
    train_cmd->add_option("--norm-samples", to.norm_samples, "Samples for the normalizers")->capture_default_str();
    train_cmd->add_option("--seed", to.tc.seed, "Seed")->capture_default_str();
    train_cmd->add_option("--log-every", to.log_every, "Log every n steps (0: never)")->capture_default_str();
    train_cmd->add_option("--curve", to.curve, "Write the loss curve (CSV) here");

    RolloutOpts ro;
    CLI::App* roll = app.add_subcommand("rollout", "Roll a model out along a clip's own root path");
    roll->add_option("--model", ro.model, "Weights file")->required();
    roll->add_option("--clips", ro.clips, "Clip cache")->required();
    roll->add_option("--clip", ro.clip, "Clip index")->capture_default_str();
    roll->add_option("--start", ro.start, "Start frame")->capture_default_str();
    roll->add_option("--frames", ro.frames, "Frames to generate (15-150)")->capture_default_str();
    roll->add_option("--history", ro.history, "Context frames before the start")->capture_default_str();
    roll->add_option("-o,--out", ro.out, "BVH file for the generated frames");
    roll->add_flag("--json", ro.json, "Print JSON");

    EvalOpts eo;
    CLI::App* eval = app.add_subcommand("eval", "L2P / L2Q / foot sliding over seeded transitions");
    eval->add_option("--clips", eo.clips, "Clip cache (held-out data)")->required();
    eval->add_option("--method", eo.methods, "interp, truth or model; repeatable")->delimiter(',')->capture_default_str();
    eval->add_option("--model", eo.model, "Weights file for --method model");
    eval->add_option("--frames", eo.frames, "Transition lengths, comma separated")->capture_default_str();
    eval->add_option("--pairs", eo.cfg.pairs, "Transitions per length")->capture_default_str();
    eval->add_option("--history", eo.cfg.history, "Frames required before each start")->capture_default_str();
    eval->add_option("--seed", eo.cfg.seed, "Seed")->capture_default_str();
    eval->add_option("-o,--out", eo.out, "Write JSON lines here");

    ServeOpts sv;
    CLI::App* serve_cmd = app.add_subcommand("serve", "HTTP service for the authoring client");
    serve_cmd->add_option("--model", sv.model, "Weights file")->required();
    serve_cmd->add_option("--gallery", sv.gallery, "Gallery file")->required();
    serve_cmd->add_option("--host", sv.cfg.host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", sv.cfg.port, "Port")->capture_default_str();
    serve_cmd->add_option("--candidates", sv.cfg.candidates, "Candidates per query")->capture_default_str();
    serve_cmd->add_option("--alpha", sv.cfg.search.alpha, "Error threshold, rad")->capture_default_str();
    serve_cmd->add_option("--max-frames", sv.cfg.search.max_frames, "Max chain duration")->capture_default_str();
    serve_cmd->add_option("--seed", sv.cfg.search.seed, "Search seed")->capture_default_str();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::CallForVersion& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return kExitUsage;
    }

    try {
        if (*synth) run_synth(env, so, *synth);
        else if (*ingest) run_ingest(env, io, *ingest);
        else if (*phases) run_phases(env, po, *phases);
        else if (*gbuild) run_gallery_build(env, gb, *gbuild);
        else if (*gquery) run_gallery_query(env, gq);
        else if (*train_cmd) run_train(env, to, *train_cmd);
        else if (*roll) run_rollout(env, ro, *roll);
        else if (*eval) run_eval(env, eo, *eval);
        else if (*serve_cmd) run_serve(env, sv);
        return kExitOk;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        if (e.kind() == ErrorKind::Usage) {
            err << app.help();
            return kExitUsage;
        }
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

} // namespace inbetween::cli
