#pragma once

// BVH (Biovision hierarchy) reader and writer.
//
// Euler channels are applied in the order listed on the CHANNELS line, i.e.
// "Zrotation Xrotation Yrotation" yields R = Rz * Rx * Ry. Position channels on
// non-root joints are accepted and ignored (the skeleton offset is used).

#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "clip.hpp"
#include "error.hpp"

namespace inbetween {

namespace bvh_detail {

enum class Channel { Xpos, Ypos, Zpos, Xrot, Yrot, Zrot };

struct Token {
    std::string text;
    int line = 0;
    int column = 0;
};

class Lexer {
public:
    explicit Lexer(std::string text) : text_(std::move(text)) {}

    bool at_end() {
        skip_space();
        return pos_ >= text_.size();
    }

    Token next() {
        skip_space();
        if (pos_ >= text_.size()) throw ParseError(line_, col_, "unexpected end of input");
        Token t{{}, line_, col_};
        if (text_[pos_] == '{' || text_[pos_] == '}') {
            t.text = text_.substr(pos_, 1);
            advance();
            return t;
        }
        // "Frame Time:" is the one header whose key spans a space.
        const std::size_t start = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
               text_[pos_] != '{' && text_[pos_] != '}')
            advance();
        t.text = text_.substr(start, pos_ - start);
        return t;
    }

    Token expect(std::string_view word) {
        Token t = next();
        if (t.text != word) throw ParseError(t.line, t.column, "expected '" + std::string(word) + "', got '" + t.text + "'");
        return t;
    }

    double number() {
        Token t = next();
        double v = 0.0;
        const char* b = t.text.data();
        const char* e = b + t.text.size();
        auto [ptr, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || ptr != e) throw ParseError(t.line, t.column, "expected a number, got '" + t.text + "'");
        return v;
    }

    int integer() {
        Token t = next();
        int v = 0;
        const char* b = t.text.data();
        const char* e = b + t.text.size();
        auto [ptr, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || ptr != e) throw ParseError(t.line, t.column, "expected an integer, got '" + t.text + "'");
        return v;
    }

private:
    void advance() {
        if (text_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }
    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) advance();
    }

    std::string text_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

struct JointChannels {
    std::vector<Channel> channels;
};

inline Channel parse_channel(const Token& t) {
    static const std::array<std::pair<std::string_view, Channel>, 6> names{{{"Xposition", Channel::Xpos},
                                                                            {"Yposition", Channel::Ypos},
                                                                            {"Zposition", Channel::Zpos},
                                                                            {"Xrotation", Channel::Xrot},
                                                                            {"Yrotation", Channel::Yrot},
                                                                            {"Zrotation", Channel::Zrot}}};
    for (auto [n, c] : names)
        if (t.text == n) return c;
    throw ParseError(t.line, t.column, "unknown channel '" + t.text + "'");
}

inline bool is_rotation(Channel c) { return c == Channel::Xrot || c == Channel::Yrot || c == Channel::Zrot; }

inline void check_channel_set(const Token& where, const std::vector<Channel>& ch) {
    int rot = 0, pos = 0;
    bool seen[6] = {};
    for (Channel c : ch) {
        if (seen[static_cast<int>(c)])
            throw Error(ErrorKind::UnsupportedChannel, "duplicate channel at line " + std::to_string(where.line));
        seen[static_cast<int>(c)] = true;
        (is_rotation(c) ? rot : pos)++;
    }
    if (!((rot == 3 && pos == 0) || (rot == 3 && pos == 3)))
        throw Error(ErrorKind::UnsupportedChannel,
                    "line " + std::to_string(where.line) + ": only 3 rotations or 3 positions + 3 rotations are supported");
}

inline Vec3 axis_of(Channel c) {
    switch (c) {
    case Channel::Xrot: return Vec3::UnitX();
    case Channel::Yrot: return Vec3::UnitY();
    default: return Vec3::UnitZ();
    }
}

inline void parse_joint(Lexer& lex, Skeleton& sk, std::vector<JointChannels>& chans, int parent, const std::string& name) {
    const int index = sk.size();
    sk.joints.push_back({name, parent, Vec3::Zero(), std::nullopt});
    chans.emplace_back();
    lex.expect("{");
    lex.expect("OFFSET");
    const double x = lex.number(), y = lex.number(), z = lex.number();
    sk.joints[index].offset = {x, y, z};
    Token kw = lex.next();
    if (kw.text == "CHANNELS") {
        const Token at = kw;
        const int n = lex.integer();
        std::vector<Channel> ch;
        for (int i = 0; i < n; ++i) ch.push_back(parse_channel(lex.next()));
        check_channel_set(at, ch);
        chans[index].channels = std::move(ch);
        kw = lex.next();
    } else {
        throw ParseError(kw.line, kw.column, "joint '" + name + "' has no CHANNELS line");
    }
    while (kw.text != "}") {
        if (kw.text == "JOINT") {
            const Token n = lex.next();
            parse_joint(lex, sk, chans, index, n.text);
        } else if (kw.text == "End") {
            lex.expect("Site");
            lex.expect("{");
            lex.expect("OFFSET");
            const double ex = lex.number(), ey = lex.number(), ez = lex.number();
            sk.joints[index].end_site = Vec3{ex, ey, ez};
            lex.expect("}");
        } else {
            throw ParseError(kw.line, kw.column, "unexpected token '" + kw.text + "' in joint '" + name + "'");
        }
        kw = lex.next();
    }
}

} // namespace bvh_detail

struct BvhOptions {
    double scale = 1.0; // multiplies offsets and root positions (0.01 for centimeter files)
};

inline MotionClip parse_bvh(const std::string& text, const BvhOptions& opt = {}) {
    using namespace bvh_detail;
    Lexer lex(text);
    lex.expect("HIERARCHY");
    lex.expect("ROOT");
    MotionClip clip;
    std::vector<JointChannels> chans;
    const Token root_name = lex.next();
    parse_joint(lex, clip.skeleton, chans, -1, root_name.text);
    for (auto& j : clip.skeleton.joints) {
        j.offset *= opt.scale;
        if (j.end_site) *j.end_site *= opt.scale;
    }
    clip.skeleton.build_mirror_from_names();

    lex.expect("MOTION");
    lex.expect("Frames:");
    const int frames = lex.integer();
    if (frames < 0) throw Error(ErrorKind::ParseError, "negative frame count");
    lex.expect("Frame");
    lex.expect("Time:");
    clip.frame_time = lex.number();
    if (!(clip.frame_time > 0.0)) throw Error(ErrorKind::ParseError, "frame time must be positive");

    const int n = clip.skeleton.size();
    std::vector<Quat> rot(n);
    for (int f = 0; f < frames; ++f) {
        Vec3 root = clip.skeleton.joints[0].offset;
        for (int j = 0; j < n; ++j) {
            Quat q = Quat::identity();
            Vec3 pos = Vec3::Zero();
            bool has_pos = false;
            for (Channel c : chans[j].channels) {
                const double v = lex.number();
                switch (c) {
                case Channel::Xpos: pos.x() = v; has_pos = true; break;
                case Channel::Ypos: pos.y() = v; has_pos = true; break;
                case Channel::Zpos: pos.z() = v; has_pos = true; break;
                default: q = q * Quat::from_axis_angle(axis_of(c), v * kPi / 180.0); break;
                }
            }
            rot[j] = q.normalized();
            if (j == 0 && has_pos) root = pos * opt.scale;
        }
        clip.push_frame(root, rot);
    }
    if (!lex.at_end()) {
        Token extra = lex.next();
        throw ParseError(extra.line, extra.column, "trailing data after the last frame");
    }
    return clip;
}

inline MotionClip parse_bvh(std::istream& in, const BvhOptions& opt = {}) {
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_bvh(ss.str(), opt);
}

/// Decomposes R = Rz(a) * Ry(b) * Rx(c); returns (a, b, c) in degrees.
inline Vec3 matrix_to_euler_zyx(const Mat3& m) {
    const double sb = std::clamp(-m(2, 0), -1.0, 1.0);
    const double b = std::asin(sb);
    double a, c;
    if (std::abs(sb) < 1.0 - 1e-10) {
        a = std::atan2(m(1, 0), m(0, 0));
        c = std::atan2(m(2, 1), m(2, 2));
    } else {
        // gimbal lock: fold everything into z
        a = std::atan2(-m(0, 1), m(1, 1));
        c = 0.0;
    }
    return Vec3{a, b, c} * (180.0 / kPi);
}

/// Writes the root with 6 channels and every other joint with 3, all in
/// Z-Y-X rotation order.
inline std::string write_bvh(const MotionClip& clip) {
    std::string out;
    char buf[160];
    auto line = [&](int depth, const std::string& s) {
        out.append(static_cast<std::size_t>(depth), '\t');
        out += s;
        out += '\n';
    };
    auto vec = [&](const Vec3& v) {
        std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f", v.x(), v.y(), v.z());
        return std::string(buf);
    };
    const Skeleton& sk = clip.skeleton;
    std::vector<std::vector<int>> children(sk.size());
    for (int j = 1; j < sk.size(); ++j) children[sk.joints[j].parent].push_back(j);

    out += "HIERARCHY\n";
    auto emit = [&](auto&& self, int j, int depth) -> void {
        line(depth, (j == 0 ? "ROOT " : "JOINT ") + sk.joints[j].name);
        line(depth, "{");
        line(depth + 1, "OFFSET " + vec(sk.joints[j].offset));
        line(depth + 1, j == 0 ? "CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation"
                               : "CHANNELS 3 Zrotation Yrotation Xrotation");
        for (int c : children[j]) self(self, c, depth + 1);
        if (children[j].empty()) {
            line(depth + 1, "End Site");
            line(depth + 1, "{");
            line(depth + 2, "OFFSET " + vec(sk.joints[j].end_site.value_or(Vec3::Zero())));
            line(depth + 1, "}");
        }
        line(depth, "}");
    };
    emit(emit, 0, 0);
    out += "MOTION\n";
    out += "Frames: " + std::to_string(clip.frames()) + "\n";
    std::snprintf(buf, sizeof buf, "Frame Time: %.10f\n", clip.frame_time);
    out += buf;
    for (int f = 0; f < clip.frames(); ++f) {
        std::string row = vec(clip.root_positions[f]);
        for (int j = 0; j < sk.size(); ++j) {
            const Vec3 e = matrix_to_euler_zyx(clip.rotation(f, j).to_matrix());
            row += ' ';
            row += vec(e);
        }
        out += row;
        out += '\n';
    }
    return out;
}

} // namespace inbetween
