#pragma once

// HTTP facade for the authoring client: candidate trajectories from the
// gallery and guided rollouts from the model. Handlers are pure functions of
// the request body over an immutable session, so they can be exercised
// without a socket.

#include <chrono>
#include <cmath>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "container.hpp"
#include "dcmoe.hpp"
#include "gallery.hpp"
#include "rollout.hpp"
#include "synth.hpp"

// After Eigen: <resolv.h> (pulled in by httplib) defines a `_res` macro that
// collides with Eigen parameter names.
#include <httplib.h>

namespace inbetween {

inline constexpr int kPoseWireVersion = 1;

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    int candidates = 7;
    SearchConfig search = [] {
        SearchConfig s;
        s.max_frames = kMaxRolloutFrames;
        return s;
    }();
};

/// Immutable after load.
struct Session {
    Model<float> model;
    Gallery gallery;
    std::map<std::string, std::string> model_meta;
    std::map<std::string, std::string> gallery_meta;
};

inline Session load_session(const std::string& model_path, const std::string& gallery_path) {
    const Container mc = Container::load(model_path);
    const Container gc = Container::load(gallery_path);
    return {model_from_container<float>(mc), gallery_from_container(gc), mc.metadata(), gc.metadata()};
}

struct HttpResult {
    int status = 200;
    nlohmann::json body;
};

struct WirePose {
    Vec3 root = Vec3::Zero();
    Vec2 facing{0.0, 1.0};
    std::vector<Quat> rotations; // local, root first; root yaw already matches `facing`
};

namespace service_detail {

struct HttpError {
    int status;
    std::string message;
};

[[noreturn]] inline void bad(const std::string& m) { throw HttpError{400, m}; }
[[noreturn]] inline void unprocessable(const std::string& m) { throw HttpError{422, m}; }

inline const nlohmann::json& field(const nlohmann::json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) bad(std::string("missing field '") + key + "'");
    return j.at(key);
}

inline std::vector<double> numbers(const nlohmann::json& j, const std::string& what, std::size_t n0, std::size_t n1) {
    if (!j.is_array() || j.size() < n0 || j.size() > n1) bad(what + " must be an array of " + std::to_string(n0) +
                                                             (n0 == n1 ? "" : "-" + std::to_string(n1)) + " numbers");
    std::vector<double> v;
    for (const auto& x : j) {
        if (!x.is_number()) bad(what + " must hold numbers");
        const double d = x.get<double>();
        if (!std::isfinite(d)) unprocessable(what + " is not finite");
        v.push_back(d);
    }
    return v;
}

// [x, z] or [x, y, z]
inline Vec2 ground_of(const nlohmann::json& j, const std::string& what) {
    const auto v = numbers(j, what, 2, 3);
    return v.size() == 2 ? Vec2(v[0], v[1]) : Vec2(v[0], v[2]);
}

inline Vec2 facing_of(const nlohmann::json& j, const std::string& what) {
    const Vec2 f = ground_of(j, what);
    if (f.norm() < 1e-9) unprocessable(what + " is a zero vector");
    return f.normalized();
}

inline std::optional<int> style_of(const nlohmann::json& body, int styles) {
    if (!body.contains("style") || body["style"].is_null()) return std::nullopt;
    if (!body["style"].is_number_integer()) bad("style must be an integer");
    const int s = body["style"].get<int>();
    if (s < 0 || s >= styles) unprocessable("style " + std::to_string(s) + " is not in the model");
    return s;
}

inline nlohmann::json parse_body(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) bad("body is not valid JSON");
    if (!j.is_object()) bad("body must be a JSON object");
    return j;
}

inline void check_distance(const Vec2& from, const Vec2& to) {
    const double d = (to - from).norm();
    if (d < kMinQueryDistance || d > kMaxQueryDistance)
        unprocessable("start-target distance " + std::to_string(d) + " m is outside [" + std::to_string(kMinQueryDistance) +
                      ", " + std::to_string(kMaxQueryDistance) + "]");
}

inline nlohmann::json vec(const Vec2& v) { return {v.x(), v.y()}; }
inline nlohmann::json vec(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline nlohmann::json vec(const Quat& q) { return {q.w, q.x, q.y, q.z}; }

} // namespace service_detail

/// Wire pose: {"version": 1, "root": [x,y,z], "facing": [x,z], "rotations": [[w,x,y,z] x joints]}.
/// The root rotation is re-yawed so its ground facing equals `facing`.
inline WirePose parse_pose(const nlohmann::json& j, int joints) {
    using namespace service_detail;
    if (!j.is_object()) bad("pose must be an object");
    if (j.contains("version") && j["version"] != kPoseWireVersion)
        unprocessable("pose version must be " + std::to_string(kPoseWireVersion));
    WirePose p;
    const auto r = numbers(field(j, "root"), "pose root", 3, 3);
    p.root = Vec3(r[0], r[1], r[2]);
    p.facing = facing_of(field(j, "facing"), "pose facing");
    const auto& rots = field(j, "rotations");
    if (!rots.is_array()) bad("pose rotations must be an array");
    if (static_cast<int>(rots.size()) != joints)
        unprocessable("pose has " + std::to_string(rots.size()) + " rotations; skeleton has " + std::to_string(joints));
    for (const auto& q : rots) {
        const auto v = numbers(q, "joint rotation", 4, 4);
        Quat k{v[0], v[1], v[2], v[3]};
        if (k.norm() < 1e-6) unprocessable("joint rotation is a zero quaternion");
        p.rotations.push_back(k.normalized());
    }
    const double turn = wrap_angle(yaw_of(p.facing) - yaw_of(ground_facing(p.rotations[0])));
    p.rotations[0] = (yaw_quat(turn) * p.rotations[0]).normalized();
    return p;
}

inline nlohmann::json pose_to_json(const Vec3& root, const std::vector<Quat>& rotations) {
    nlohmann::json rots = nlohmann::json::array();
    for (const Quat& q : rotations) rots.push_back(service_detail::vec(q));
    return {{"version", kPoseWireVersion},
            {"root", service_detail::vec(root)},
            {"facing", service_detail::vec(ground_facing(rotations.at(0)))},
            {"rotations", rots}};
}

class Service {
public:
    Service(std::shared_ptr<const Session> session, ServiceConfig cfg = {}) : s_(std::move(session)), cfg_(std::move(cfg)) {
        if (!s_) throw Error(ErrorKind::InvalidSpec, "service needs a session");
        validate(cfg_.search);
        if (cfg_.candidates < 1) throw Error(ErrorKind::InvalidSpec, "candidate count must be >= 1");
        if (s_->model.skeleton.size() != s_->model.config.layout.joints)
            throw Error(ErrorKind::ShapeMismatch, "model skeleton does not match its layout");
    }

    const ServiceConfig& config() const { return cfg_; }

    HttpResult gallery_query(const std::string& text) const {
        return guarded([&] {
            using namespace service_detail;
            const nlohmann::json body = parse_body(text);
            const auto& start = field(body, "start");
            const auto& target = field(body, "target");
            const Vec2 p0 = ground_of(field(start, "pos"), "start pos"), p1 = ground_of(field(target, "pos"), "target pos");
            const Vec2 f0 = facing_of(field(start, "facing"), "start facing"), f1 = facing_of(field(target, "facing"), "target facing");
            const std::optional<int> style = style_of(body, s_->model.config.styles);
            std::optional<DurationLabel> label;
            if (body.contains("duration_label") && !body["duration_label"].is_null()) {
                if (!body["duration_label"].is_string()) bad("duration_label must be a string");
                try {
                    label = parse_duration_label(body["duration_label"].get<std::string>());
                } catch (const Error& e) {
                    bad(e.what());
                }
            }
            check_distance(p0, p1);
            const Query q = make_query(p0, f0, p1, f1, style);
            nlohmann::json list = nlohmann::json::array();
            for (const Candidate& c : query_candidates(s_->gallery, q, cfg_.search, cfg_.candidates, label)) {
                nlohmann::json poly = nlohmann::json::array();
                for (const Vec2& p : chain_polyline(s_->gallery, c.chain, p0, q)) poly.push_back(vec(p));
                list.push_back({{"chain", c.chain},
                                {"frames", c.frames},
                                {"label", to_string(c.label)},
                                {"error", c.error},
                                {"polyline", poly}});
            }
            return HttpResult{200, {{"candidates", list}, {"alpha", cfg_.search.alpha}}};
        });
    }

    HttpResult inbetween(const std::string& text) const {
        return guarded([&] {
            using namespace service_detail;
            const nlohmann::json body = parse_body(text);
            const int joints = s_->model.config.layout.joints;
            const WirePose a = parse_pose(field(body, "start"), joints);
            const WirePose b = parse_pose(field(body, "target"), joints);
            const auto& ids = field(body, "chain");
            if (!ids.is_array()) bad("chain must be an array of trajectory ids");
            std::vector<int> chain;
            for (const auto& id : ids) {
                if (!id.is_number_integer()) bad("chain ids must be integers");
                const long long i = id.get<long long>();
                if (i < 0 || i >= static_cast<long long>(s_->gallery.size()))
                    throw HttpError{404, "unknown trajectory id " + std::to_string(i)};
                chain.push_back(static_cast<int>(i));
            }
            if (chain.empty()) throw HttpError{404, "empty candidate chain"};
            const int style = style_of(body, s_->model.config.styles).value_or(0);
            const int frames = chain_frames(s_->gallery, chain);
            if (frames < kMinRolloutFrames || frames > kMaxRolloutFrames)
                unprocessable("chain lasts " + std::to_string(frames) + " frames; rollouts take " +
                              std::to_string(kMinRolloutFrames) + "-" + std::to_string(kMaxRolloutFrames));
            const Vec2 p0 = ground(a.root), p1 = ground(b.root);
            check_distance(p0, p1);
            const Query q = make_query(p0, a.facing, p1, b.facing, style);

            RolloutRequest req;
            req.context = static_context(s_->model.skeleton, a.root, a.rotations, style);
            req.target = forward_kinematics(s_->model.skeleton, b.root, b.rotations.data());
            req.guidance = chain_guidance(s_->gallery, chain, p0, q);
            req.style = style;
            const MotionClip out = rollout(s_->model, req);

            nlohmann::json list = nlohmann::json::array();
            for (int f = 0; f < out.frames(); ++f) {
                nlohmann::json frame = pose_to_json(out.root_positions[f], out.frame_rotations(f));
                nlohmann::json pos = nlohmann::json::array();
                for (int j = 0; j < out.joints(); ++j) pos.push_back(vec(out.world_position(f, j)));
                frame["positions"] = pos;
                list.push_back(std::move(frame));
            }
            return HttpResult{200, {{"tta0", frames}, {"frame_time", out.frame_time}, {"frames", list}}};
        });
    }

    HttpResult meta() const {
        nlohmann::json styles = nlohmann::json::array();
        for (int i = 0; i < s_->model.config.styles; ++i) styles.push_back({{"id", i}, {"name", style_preset(i).name}});
        nlohmann::json joints = nlohmann::json::array();
        for (const auto& j : s_->model.skeleton.joints) joints.push_back({{"name", j.name}, {"parent", j.parent}});
        const Gallery& g = s_->gallery;
        const auto m = [&](const std::map<std::string, std::string>& mm, const char* k) {
            auto it = mm.find(k);
            return it == mm.end() ? std::string() : it->second;
        };
        return {200,
                {{"styles", styles},
                 {"skeleton", joints},
                 {"pose_version", kPoseWireVersion},
                 {"model", {{"version", m(s_->model_meta, "model_version")},
                            {"experts", s_->model.config.experts},
                            {"styles", s_->model.config.styles}}},
                 {"gallery", {{"version", m(s_->gallery_meta, "gallery_version")},
                              {"trajectories", g.size()},
                              {"clips", g.tracks.size()},
                              {"bin_width", g.config.bin_width},
                              {"stride", g.config.stride},
                              {"centroids", g.centroids}}},
                 {"search", {{"alpha", cfg_.search.alpha},
                             {"k", cfg_.search.k},
                             {"max_depth", cfg_.search.max_depth},
                             {"max_frames", cfg_.search.max_frames},
                             {"candidates", cfg_.candidates}}}}};
    }

    /// Registers the routes; one JSON access-log line per request when `log` is set.
    void mount(httplib::Server& srv, std::ostream* log = nullptr) const {
        auto reply = [](httplib::Response& res, const HttpResult& r) {
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json");
        };
        srv.Post("/api/gallery/query", [this, reply](const httplib::Request& req, httplib::Response& res) {
            reply(res, gallery_query(req.body));
        });
        srv.Post("/api/inbetween", [this, reply](const httplib::Request& req, httplib::Response& res) {
            reply(res, inbetween(req.body));
        });
        srv.Get("/api/meta", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, meta()); });
        if (log) {
            auto mu = std::make_shared<std::mutex>();
            srv.set_logger([log, mu](const httplib::Request& req, const httplib::Response& res) {
                const nlohmann::json rec{{"method", req.method}, {"path", req.path}, {"status", res.status},
                                         {"request_bytes", req.body.size()}, {"response_bytes", res.body.size()}};
                std::lock_guard<std::mutex> lock(*mu);
                *log << rec.dump() << '\n' << std::flush;
            });
        }
    }

private:
    template <class F>
    HttpResult guarded(F&& f) const {
        try {
            return f();
        } catch (const service_detail::HttpError& e) {
            return {e.status, {{"error", e.message}}};
        } catch (const Error& e) {
            const int status = e.kind() == ErrorKind::UnknownCandidate ? 404 : 422;
            return {status, {{"error", e.what()}, {"kind", std::string(to_string(e.kind()))}}};
        }
    }

    std::shared_ptr<const Session> s_;
    ServiceConfig cfg_;
};

/// Blocks until the server stops.
inline void serve(const Service& svc, std::ostream* access_log = &std::cout) {
    httplib::Server srv;
    svc.mount(srv, access_log);
    if (!srv.bind_to_port(svc.config().host, svc.config().port))
        throw Error(ErrorKind::Io, "cannot bind " + svc.config().host + ":" + std::to_string(svc.config().port));
    srv.listen_after_bind();
}

} // namespace inbetween
