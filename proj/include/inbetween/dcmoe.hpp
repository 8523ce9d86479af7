#pragma once

// Mixture-of-experts pose predictor. K expert MLPs map the pose input to the
// output vector; a gating MLP maps (phase window, style embedding, tta
// encoding) to softmax weights that blend the expert outputs. Includes the
// training loss, exact reverse-mode gradients, AdamW and weight files.
//
// Matrices hold one sample per column. Parameters live in one flat buffer so
// the optimizer and the finite-difference check can treat them uniformly.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "clipio.hpp"
#include "container.hpp"
#include "error.hpp"
#include "features.hpp"
#include "random.hpp"

namespace inbetween {

inline constexpr const char* kModelVersion = "1";

struct ModelConfig {
    int experts = 16;
    int expert_width = 512;
    int expert_hidden_layers = 2; // plus the output layer: three fully connected layers
    std::vector<int> gating_hidden{512, 128};
    int styles = 4;
    int style_dims = 256;
    int tta_dims = kDefaultTtaDims;
    FeatureLayout layout{};
    std::vector<int> foot_joints{3, 4, 7, 8};

    int gating_input_dims() const { return layout.phase_window_dims() + style_dims + tta_dims; }

    void validate() const {
        if (experts < 1 || expert_width < 1 || expert_hidden_layers < 0 || styles < 1 || style_dims < 1)
            throw Error(ErrorKind::InvalidSpec, "model sizes must be positive");
        if (tta_dims <= 0 || tta_dims % 2) throw Error(ErrorKind::OddDimension, "tta dimension must be positive and even");
        for (int w : gating_hidden)
            if (w < 1) throw Error(ErrorKind::InvalidSpec, "gating widths must be positive");
        if (static_cast<int>(foot_joints.size()) != layout.feet)
            throw Error(ErrorKind::InvalidSpec, "foot joint list does not match layout");
        for (int j : foot_joints)
            if (j < 0 || j >= layout.joints) throw Error(ErrorKind::InvalidSpec, "foot joint index out of range");
    }
};

// Tensors start on 16-element boundaries of an aligned buffer, so Eigen takes
// the same vectorized path (and rounding) wherever the buffer lands.
template <class T>
using ParamBuffer = std::vector<T, Eigen::aligned_allocator<T>>;
inline constexpr std::size_t kTensorAlign = 16;

struct TensorInfo {
    std::string name;
    int rows = 0, cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

template <class T>
struct Model {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using MatMap = Eigen::Map<Mat>;
    using ConstMatMap = Eigen::Map<const Mat>;
    struct Layer {
        std::size_t weight = 0, bias = 0;
    };

    ModelConfig config;
    Skeleton skeleton;
    Normalizer input_norm, phase_norm, output_norm;

    ParamBuffer<T> params; // includes alignment padding, which stays zero
    std::vector<TensorInfo> tensors;
    std::vector<std::vector<Layer>> experts;
    std::vector<Layer> gating;
    std::size_t style_table = 0;

    Model() = default;

    /// Allocates the parameter layout; weights are zero until initialize().
    Model(ModelConfig cfg, Skeleton sk) : config(std::move(cfg)), skeleton(std::move(sk)) {
        config.validate();
        if (skeleton.size() != config.layout.joints)
            throw Error(ErrorKind::ShapeMismatch, "skeleton joint count does not match model layout");
        const FeatureLayout& L = config.layout;
        auto add = [&](const std::string& name, int rows, int cols) {
            std::size_t off = tensors.empty() ? 0 : tensors.back().offset + tensors.back().size();
            off = (off + kTensorAlign - 1) / kTensorAlign * kTensorAlign;
            tensors.push_back({name, rows, cols, off});
            return tensors.size() - 1;
        };
        auto add_layer = [&](const std::string& prefix, int out, int in) {
            Layer l;
            l.weight = add(prefix + "/weight", out, in);
            l.bias = add(prefix + "/bias", out, 1);
            return l;
        };
        for (int k = 0; k < config.experts; ++k) {
            std::vector<Layer> layers;
            int in = L.input_dims();
            for (int h = 0; h < config.expert_hidden_layers; ++h) {
                layers.push_back(add_layer("expert" + std::to_string(k) + "/layer" + std::to_string(h), config.expert_width, in));
                in = config.expert_width;
            }
            layers.push_back(add_layer("expert" + std::to_string(k) + "/layer" + std::to_string(config.expert_hidden_layers),
                                       L.output_dims(), in));
            experts.push_back(std::move(layers));
        }
        int in = config.gating_input_dims();
        for (std::size_t h = 0; h < config.gating_hidden.size(); ++h) {
            gating.push_back(add_layer("gating/layer" + std::to_string(h), config.gating_hidden[h], in));
            in = config.gating_hidden[h];
        }
        gating.push_back(add_layer("gating/layer" + std::to_string(config.gating_hidden.size()), config.experts, in));
        style_table = add("style_embedding", config.styles, config.style_dims);
        params.assign(tensors.back().offset + tensors.back().size(), T(0));
        input_norm = Normalizer::identity(L.input_dims());
        phase_norm = Normalizer::identity(L.phase_window_dims());
        output_norm = Normalizer::identity(L.output_dims());
    }

    /// Weights uniform in +-sqrt(6 / fan_in), biases zero, embedding N(0, 0.02).
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            MatMap t = tensor(i);
            if (i == style_table) {
                for (Eigen::Index e = 0; e < t.size(); ++e) t.data()[e] = static_cast<T>(normal(rng, 0.0, 0.02));
            } else if (tensors[i].cols == 1 && tensors[i].name.ends_with("/bias")) {
                t.setZero();
            } else {
                const double bound = std::sqrt(6.0 / tensors[i].cols);
                for (Eigen::Index e = 0; e < t.size(); ++e) t.data()[e] = static_cast<T>(uniform(rng, -bound, bound));
            }
        }
    }

    MatMap tensor(std::size_t i) { return view(params, tensors[i]); }
    ConstMatMap tensor(std::size_t i) const { return view(params, tensors[i]); }

    static MatMap view(ParamBuffer<T>& buf, const TensorInfo& t) { return MatMap(buf.data() + t.offset, t.rows, t.cols); }
    static ConstMatMap view(const ParamBuffer<T>& buf, const TensorInfo& t) {
        return ConstMatMap(buf.data() + t.offset, t.rows, t.cols);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }

    template <class U>
    Model<U> cast() const {
        Model<U> m;
        m.config = config;
        m.skeleton = skeleton;
        m.input_norm = input_norm;
        m.phase_norm = phase_norm;
        m.output_norm = output_norm;
        m.tensors = tensors;
        m.gating.clear();
        for (const auto& l : gating) m.gating.push_back({l.weight, l.bias});
        for (const auto& e : experts) {
            std::vector<typename Model<U>::Layer> layers;
            for (const auto& l : e) layers.push_back({l.weight, l.bias});
            m.experts.push_back(std::move(layers));
        }
        m.style_table = style_table;
        m.params.assign(params.begin(), params.end());
        return m;
    }
};

// --- samples and batches ----------------------------------------------------

/// One training pair in physical units: raw expert input, raw phase window,
/// style, tta, the target mask and the prediction target.
struct TrainingSample {
    Eigen::VectorXd input;
    Eigen::VectorXd phases;
    int style = 0;
    int tta = 1;
    std::vector<std::uint8_t> mask;
    Eigen::VectorXd truth;
};

inline TrainingSample make_sample(const PoseState& s, const Condition& c, Eigen::VectorXd truth = {}) {
    return {s.flatten(), c.flatten_phases(), c.style, c.tta, s.target_mask, std::move(truth)};
}

template <class T>
struct Batch {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    Mat input;   // normalized, masked target entries zeroed
    Mat phases;  // normalized phase window
    Mat tta;     // sinusoidal encoding
    std::vector<int> styles;
    Mat truth;   // physical units
    Mat current; // physical current joint positions, joints*3 rows
    int size() const { return static_cast<int>(styles.size()); }
};

template <class T>
Batch<T> make_batch(const Model<T>& m, const std::vector<const TrainingSample*>& samples) {
    const FeatureLayout& L = m.config.layout;
    const int B = static_cast<int>(samples.size());
    Batch<T> b;
    b.input.resize(L.input_dims(), B);
    b.phases.resize(L.phase_window_dims(), B);
    b.tta.resize(m.config.tta_dims, B);
    b.current.resize(3 * L.joints, B);
    b.truth.resize(L.output_dims(), B);
    bool have_truth = true;
    for (int i = 0; i < B; ++i) {
        const TrainingSample& s = *samples[i];
        if (s.input.size() != L.input_dims() || s.phases.size() != L.phase_window_dims() ||
            static_cast<int>(s.mask.size()) != L.joints)
            throw Error(ErrorKind::ShapeMismatch, "sample does not match the model layout");
        if (s.style < 0 || s.style >= m.config.styles)
            throw Error(ErrorKind::UnknownStyle, "style id " + std::to_string(s.style) + " not in model");
        Eigen::VectorXd x = m.input_norm.normalize(s.input);
        for (int j = 0; j < L.joints; ++j)
            if (s.mask[j]) x.segment(L.target_offset() + 9 * j, 9).setZero();
        b.input.col(i) = x.cast<T>();
        b.phases.col(i) = m.phase_norm.normalize(s.phases).template cast<T>();
        const auto z = encode_tta(s.tta, m.config.tta_dims);
        for (int k = 0; k < m.config.tta_dims; ++k) b.tta(k, i) = static_cast<T>(z[k]);
        for (int j = 0; j < L.joints; ++j) b.current.template block<3, 1>(3 * j, i) = s.input.segment<3>(12 * j).cast<T>();
        b.styles.push_back(s.style);
        if (s.truth.size() == L.output_dims()) b.truth.col(i) = s.truth.cast<T>();
        else have_truth = false;
    }
    if (!have_truth) b.truth.resize(0, 0);
    return b;
}

// --- forward ----------------------------------------------------------------

namespace dcmoe_detail {

template <class M>
auto silu(const M& z) {
    using T = typename M::Scalar;
    return (z.array() / (T(1) + (-z.array()).exp())).matrix().eval();
}

template <class M>
auto silu_grad(const M& z) {
    using T = typename M::Scalar;
    const auto s = (T(1) / (T(1) + (-z.array()).exp())).eval();
    return (s * (T(1) + z.array() * (T(1) - s))).matrix().eval();
}

template <class T>
T sigmoid(T z) {
    return T(1) / (T(1) + std::exp(-z));
}

} // namespace dcmoe_detail

template <class T>
struct ForwardCache {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    Mat gate_input;
    std::vector<Mat> gate_pre, gate_act;
    Mat logits, weights;
    std::vector<std::vector<Mat>> expert_pre, expert_act;
    std::vector<Mat> expert_out;
    Mat blended;  // normalized output space
    Mat physical; // denormalized; contact rows are probabilities
};

template <class T>
typename ForwardCache<T>::Mat gating_input(const Model<T>& m, const Batch<T>& b) {
    const int P = m.config.layout.phase_window_dims(), D = m.config.style_dims;
    typename ForwardCache<T>::Mat g(m.config.gating_input_dims(), b.size());
    g.topRows(P) = b.phases;
    const auto table = m.tensor(m.style_table);
    for (int i = 0; i < b.size(); ++i) g.block(P, i, D, 1) = table.row(b.styles[i]).transpose();
    g.bottomRows(m.config.tta_dims) = b.tta;
    return g;
}

/// Runs gating and experts. `forced_weights` (experts x batch) replaces the
/// gating output when given.
template <class T>
void forward(const Model<T>& m, const Batch<T>& b, ForwardCache<T>& c,
             const typename ForwardCache<T>::Mat* forced_weights = nullptr) {
    using Mat = typename ForwardCache<T>::Mat;
    using namespace dcmoe_detail;
    const FeatureLayout& L = m.config.layout;
    if (b.input.rows() != L.input_dims()) throw Error(ErrorKind::ShapeMismatch, "batch input has wrong dimension");
    const int B = b.size();

    c.gate_input = gating_input(m, b);
    c.gate_pre.clear();
    c.gate_act.clear();
    const Mat* a = &c.gate_input;
    for (std::size_t l = 0; l + 1 < m.gating.size(); ++l) {
        Mat z = m.tensor(m.gating[l].weight) * (*a);
        z.colwise() += m.tensor(m.gating[l].bias).col(0);
        c.gate_pre.push_back(z);
        c.gate_act.push_back(silu(z));
        a = &c.gate_act.back();
    }
    c.logits = m.tensor(m.gating.back().weight) * (*a);
    c.logits.colwise() += m.tensor(m.gating.back().bias).col(0);
    if (forced_weights) {
        if (forced_weights->rows() != m.config.experts || forced_weights->cols() != B)
            throw Error(ErrorKind::ShapeMismatch, "forced blend weights have wrong shape");
        c.weights = *forced_weights;
    } else {
        c.weights.resize(m.config.experts, B);
        for (int i = 0; i < B; ++i) {
            const auto col = c.logits.col(i);
            const auto e = (col.array() - col.maxCoeff()).exp();
            c.weights.col(i) = (e / e.sum()).matrix();
        }
    }

    c.expert_pre.assign(m.config.experts, {});
    c.expert_act.assign(m.config.experts, {});
    c.expert_out.assign(m.config.experts, Mat());
    c.blended = Mat::Zero(L.output_dims(), B);
    for (int k = 0; k < m.config.experts; ++k) {
        const auto& layers = m.experts[k];
        const Mat* x = &b.input;
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
            Mat z = m.tensor(layers[l].weight) * (*x);
            z.colwise() += m.tensor(layers[l].bias).col(0);
            c.expert_pre[k].push_back(z);
            c.expert_act[k].push_back(silu(z));
            x = &c.expert_act[k].back();
        }
        Mat o = m.tensor(layers.back().weight) * (*x);
        o.colwise() += m.tensor(layers.back().bias).col(0);
        c.blended += (o.array().rowwise() * c.weights.row(k).array()).matrix();
        c.expert_out[k] = std::move(o);
    }

    c.physical.resize(L.output_dims(), B);
    for (int d = 0; d < L.output_dims(); ++d) {
        if (d >= L.out_contacts() && d < L.out_trajectory()) {
            for (int i = 0; i < B; ++i) c.physical(d, i) = sigmoid(c.blended(d, i));
        } else {
            const T mu = static_cast<T>(m.output_norm.mean[d]), sd = static_cast<T>(m.output_norm.stddev[d]);
            c.physical.row(d) = (c.blended.row(d).array() * sd + mu).matrix();
        }
    }
}

/// Blend weights for one condition.
template <class T>
Eigen::VectorXd gating_forward(const Model<T>& m, const Condition& cond) {
    TrainingSample s;
    s.input = Eigen::VectorXd::Zero(m.config.layout.input_dims());
    s.phases = cond.flatten_phases();
    s.style = cond.style;
    s.tta = cond.tta;
    s.mask.assign(m.config.layout.joints, 0);
    const Batch<T> b = make_batch(m, {&s});
    ForwardCache<T> c;
    forward(m, b, c);
    return c.weights.col(0).template cast<double>();
}

/// Physical prediction for one (pose, condition) pair.
template <class T>
Eigen::VectorXd predict(const Model<T>& m, const PoseState& s, const Condition& cond) {
    const TrainingSample sample = make_sample(s, cond);
    const Batch<T> b = make_batch(m, {&sample});
    ForwardCache<T> c;
    forward(m, b, c);
    return c.physical.col(0).template cast<double>();
}

// --- loss -------------------------------------------------------------------

struct LossConfig {
    double lambda_recon = 1.0;
    double lambda_consist = 2.5;
    double dt = kFrameTime;
};

struct LossTerms {
    double pos = 0, rot = 0, vel = 0, contacts = 0, trajectory = 0, phase = 0;
    double contact_consistency = 0, position_consistency = 0;
    double total = 0;
};

/// Reconstruction terms are mean Euclidean norms over element groups (joint,
/// future sample); the contact term uses the next-frame contact probability
/// times the predicted foot velocity; the position term is the squared gap
/// between x + v dt and the predicted position. Writes d(total)/d(pred) into
/// `grad` when given.
template <class T>
LossTerms compute_loss(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& pred,
                       const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& truth,
                       const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& current, const ModelConfig& cfg,
                       const LossConfig& lc, Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>* grad = nullptr) {
    const FeatureLayout& L = cfg.layout;
    if (pred.rows() != L.output_dims() || truth.rows() != pred.rows() || truth.cols() != pred.cols() ||
        current.rows() != 3 * L.joints || current.cols() != pred.cols())
        throw Error(ErrorKind::ShapeMismatch, "loss inputs have inconsistent shapes");
    const int B = static_cast<int>(pred.cols());
    if (B == 0) throw Error(ErrorKind::EmptyDataset, "empty batch");
    if (grad) grad->setZero(pred.rows(), pred.cols());

    auto groups = [&](int offset, int count, int width, double weight) {
        double sum = 0.0;
        const double scale = weight / (static_cast<double>(B) * count);
        for (int i = 0; i < B; ++i)
            for (int g = 0; g < count; ++g) {
                const int o = offset + g * width;
                const auto e = (pred.col(i).segment(o, width) - truth.col(i).segment(o, width)).eval();
                const double n = static_cast<double>(e.norm());
                sum += n;
                if (grad && n > 0.0) grad->col(i).segment(o, width) += e * static_cast<T>(scale / n);
            }
        return sum / (static_cast<double>(B) * count);
    };

    LossTerms t;
    const int F = L.feet, J = L.joints;
    t.pos = groups(L.out_positions(), J, 3, lc.lambda_recon);
    t.rot = groups(L.out_rotations(), J, 6, lc.lambda_recon);
    t.vel = groups(L.out_velocities(), J, 3, lc.lambda_recon);
    t.contacts = groups(L.out_contacts(), kFutureSamples, F, lc.lambda_recon);
    t.trajectory = groups(L.out_trajectory(), kFutureSamples, kTrajDims, lc.lambda_recon);
    t.phase = groups(L.out_phases(), kFutureSamples, kPhaseDims, lc.lambda_recon);

    {
        const double scale = lc.lambda_consist / (static_cast<double>(B) * F);
        double sum = 0.0;
        for (int i = 0; i < B; ++i)
            for (int f = 0; f < F; ++f) {
                const int cr = L.out_contacts() + f, vr = L.out_velocities() + 3 * cfg.foot_joints[f];
                const double c = static_cast<double>(pred(cr, i));
                const auto v = pred.col(i).template segment<3>(vr).eval();
                const double vn = static_cast<double>(v.norm());
                sum += std::abs(c) * vn;
                if (grad) {
                    (*grad)(cr, i) += static_cast<T>(scale * (c > 0 ? vn : c < 0 ? -vn : 0.0));
                    if (vn > 0.0) grad->col(i).template segment<3>(vr) += v * static_cast<T>(scale * std::abs(c) / vn);
                }
            }
        t.contact_consistency = sum / (static_cast<double>(B) * F);
    }
    {
        const double scale = lc.lambda_consist / (static_cast<double>(B) * J);
        const T dt = static_cast<T>(lc.dt);
        double sum = 0.0;
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < J; ++j) {
                const auto e = (current.col(i).template segment<3>(3 * j) +
                                pred.col(i).template segment<3>(L.out_velocities() + 3 * j) * dt -
                                pred.col(i).template segment<3>(L.out_positions() + 3 * j))
                                   .eval();
                sum += static_cast<double>(e.squaredNorm());
                if (grad) {
                    grad->col(i).template segment<3>(L.out_velocities() + 3 * j) += e * static_cast<T>(2.0 * scale * lc.dt);
                    grad->col(i).template segment<3>(L.out_positions() + 3 * j) -= e * static_cast<T>(2.0 * scale);
                }
            }
        t.position_consistency = sum / (static_cast<double>(B) * J);
    }
    t.total = lc.lambda_recon * (t.pos + t.rot + t.vel + t.contacts + t.trajectory + t.phase) +
              lc.lambda_consist * (t.contact_consistency + t.position_consistency);
    return t;
}

// --- backward ---------------------------------------------------------------

/// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(physical output).
template <class T>
void backward(const Model<T>& m, const Batch<T>& b, const ForwardCache<T>& c,
              const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& dphysical, ParamBuffer<T>& grad) {
    using Mat = typename ForwardCache<T>::Mat;
    using namespace dcmoe_detail;
    const FeatureLayout& L = m.config.layout;
    const int B = b.size();
    if (grad.size() != m.params.size()) grad.assign(m.params.size(), T(0));
    auto g = [&](std::size_t id) { return Model<T>::view(grad, m.tensors[id]); };

    Mat dy(L.output_dims(), B);
    for (int d = 0; d < L.output_dims(); ++d) {
        if (d >= L.out_contacts() && d < L.out_trajectory()) {
            const auto s = c.physical.row(d).array();
            dy.row(d) = (dphysical.row(d).array() * s * (T(1) - s)).matrix();
        } else {
            dy.row(d) = dphysical.row(d) * static_cast<T>(m.output_norm.stddev[d]);
        }
    }

    Mat dweights(m.config.experts, B);
    for (int k = 0; k < m.config.experts; ++k) {
        dweights.row(k) = dy.cwiseProduct(c.expert_out[k]).colwise().sum();
        Mat delta = (dy.array().rowwise() * c.weights.row(k).array()).matrix();
        const auto& layers = m.experts[k];
        for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
            const Mat& in = l == 0 ? b.input : c.expert_act[k][l - 1];
            g(layers[l].weight).noalias() += delta * in.transpose();
            g(layers[l].bias) += delta.rowwise().sum();
            if (l > 0) delta = (m.tensor(layers[l].weight).transpose() * delta).cwiseProduct(silu_grad(c.expert_pre[k][l - 1]));
        }
    }

    // softmax
    Mat delta(m.config.experts, B);
    for (int i = 0; i < B; ++i) {
        const auto w = c.weights.col(i);
        const T inner = w.dot(dweights.col(i));
        delta.col(i) = (w.array() * (dweights.col(i).array() - inner)).matrix();
    }
    for (int l = static_cast<int>(m.gating.size()) - 1; l >= 0; --l) {
        const Mat& in = l == 0 ? c.gate_input : c.gate_act[l - 1];
        g(m.gating[l].weight).noalias() += delta * in.transpose();
        g(m.gating[l].bias) += delta.rowwise().sum();
        if (l > 0) delta = (m.tensor(m.gating[l].weight).transpose() * delta).cwiseProduct(silu_grad(c.gate_pre[l - 1]));
        else delta = m.tensor(m.gating[0].weight).transpose() * delta;
    }
    const int P = L.phase_window_dims(), D = m.config.style_dims;
    auto table = g(m.style_table);
    for (int i = 0; i < B; ++i) table.row(b.styles[i]) += delta.block(P, i, D, 1).transpose();

    for (const T& v : grad)
        if (!std::isfinite(static_cast<double>(v))) throw Error(ErrorKind::NonFiniteGradient, "non-finite gradient");
}

/// Loss on a batch; fills `grad` (resized and zeroed) when given.
template <class T>
LossTerms evaluate(const Model<T>& m, const Batch<T>& b, const LossConfig& lc, ParamBuffer<T>* grad = nullptr) {
    ForwardCache<T> c;
    forward(m, b, c);
    if (b.truth.cols() != b.size()) throw Error(ErrorKind::ShapeMismatch, "batch has no ground truth");
    typename ForwardCache<T>::Mat dphys;
    const LossTerms t = compute_loss<T>(c.physical, b.truth, b.current, m.config, lc, grad ? &dphys : nullptr);
    if (grad) {
        grad->assign(m.params.size(), T(0));
        backward(m, b, c, dphys, *grad);
    }
    return t;
}

// --- training ---------------------------------------------------------------

struct TrainingConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    int batch_size = 32;
    LossConfig loss{};
    double mask_rate = 0.15;
    int steps = 1000;
    std::uint64_t seed = 1;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    double final_lr_fraction = 1.0; // cosine decay to lr * fraction; 1 = constant
    int max_tta = kMaxTrainingHorizon;
    bool full_batch = false; // vector datasets: every step uses the whole set
};

template <class T>
struct AdamW {
    std::vector<double> m1, m2;
    long step_count = 0;

    void step(ParamBuffer<T>& params, const ParamBuffer<T>& grad, double lr, const TrainingConfig& cfg) {
        if (m1.empty()) {
            m1.assign(params.size(), 0.0);
            m2.assign(params.size(), 0.0);
        }
        ++step_count;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = static_cast<double>(grad[i]);
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
            const double update = (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.epsilon) + cfg.weight_decay * params[i];
            params[i] = static_cast<T>(params[i] - lr * update);
        }
    }
};

struct TrainingResult {
    std::vector<LossTerms> curve;
};

using SampleSource = std::function<TrainingSample(std::mt19937_64&)>;
using StepCallback = std::function<void(int, const LossTerms&)>;

inline double scheduled_lr(const TrainingConfig& cfg, int step) {
    if (cfg.final_lr_fraction >= 1.0 || cfg.steps <= 1) return cfg.learning_rate;
    const double p = static_cast<double>(step) / (cfg.steps - 1);
    const double f = cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 * (1.0 + std::cos(kPi * p));
    return cfg.learning_rate * f;
}

namespace dcmoe_detail {
inline std::string describe(const LossTerms& t) {
    std::ostringstream s;
    s << "pos=" << t.pos << " rot=" << t.rot << " vel=" << t.vel << " contacts=" << t.contacts
      << " traj=" << t.trajectory << " phase=" << t.phase << " contact'=" << t.contact_consistency
      << " pos'=" << t.position_consistency;
    return s.str();
}
} // namespace dcmoe_detail

template <class T>
TrainingResult train(Model<T>& m, const std::function<std::vector<const TrainingSample*>(std::mt19937_64&)>& next_batch,
                     const TrainingConfig& cfg, const StepCallback& on_step = {}) {
    std::mt19937_64 rng(cfg.seed);
    AdamW<T> opt;
    TrainingResult r;
    ParamBuffer<T> grad;
    for (int step = 0; step < cfg.steps; ++step) {
        const Batch<T> b = make_batch(m, next_batch(rng));
        const LossTerms t = evaluate(m, b, cfg.loss, &grad);
        if (!std::isfinite(t.total))
            throw Error(ErrorKind::NonFiniteLoss,
                        "loss became non-finite at step " + std::to_string(step) + ": " + dcmoe_detail::describe(t));
        opt.step(m.params, grad, scheduled_lr(cfg, step), cfg);
        r.curve.push_back(t);
        if (on_step) on_step(step, t);
    }
    return r;
}

/// Trains on a fixed dataset, drawing batches uniformly with replacement (or
/// the whole set each step with full_batch).
template <class T>
TrainingResult train(Model<T>& m, const std::vector<TrainingSample>& data, const TrainingConfig& cfg,
                     const StepCallback& on_step = {}) {
    if (data.empty()) throw Error(ErrorKind::EmptyDataset, "training dataset is empty");
    std::vector<const TrainingSample*> all;
    for (const auto& s : data) all.push_back(&s);
    return train<T>(
        m,
        [&](std::mt19937_64& rng) {
            if (cfg.full_batch) return all;
            std::vector<const TrainingSample*> b;
            for (int i = 0; i < cfg.batch_size; ++i)
                b.push_back(all[uniform_int(rng, 0, static_cast<int>(all.size()) - 1)]);
            return b;
        },
        cfg, on_step);
}

/// Trains on samples drawn on the fly.
template <class T>
TrainingResult train(Model<T>& m, const SampleSource& source, const TrainingConfig& cfg, const StepCallback& on_step = {}) {
    std::vector<TrainingSample> scratch;
    std::vector<const TrainingSample*> ptrs;
    return train<T>(
        m,
        [&](std::mt19937_64& rng) {
            scratch.clear();
            for (int i = 0; i < cfg.batch_size; ++i) scratch.push_back(source(rng));
            ptrs.clear();
            for (const auto& s : scratch) ptrs.push_back(&s);
            return ptrs;
        },
        cfg, on_step);
}

// --- sampling training pairs from clips ------------------------------------

/// Draws (frame, target) pairs from clips that carry FK, velocity and phase
/// caches.
class ClipSampler {
public:
    explicit ClipSampler(std::vector<MotionClip> clips, int max_tta = kMaxTrainingHorizon)
        : clips_(std::move(clips)), max_tta_(max_tta) {
        if (clips_.empty()) throw Error(ErrorKind::EmptyDataset, "no clips to sample from");
        for (const MotionClip& c : clips_) {
            if (c.frames() < 2) throw Error(ErrorKind::TooShort, "training clips need at least 2 frames");
            if (!c.has_phases()) throw Error(ErrorKind::Format, "training clips need phase caches");
            contacts_.push_back(detect_contacts(c));
            total_ += c.frames() - 1;
            cumulative_.push_back(total_);
        }
    }

    const std::vector<MotionClip>& clips() const { return clips_; }

    TrainingSample make(int clip, int frame, int target, std::vector<std::uint8_t> mask) const {
        const MotionClip& c = clips_.at(clip);
        auto [s, cond] = assemble(c, frame, target, mask, max_tta_);
        return make_sample(s, cond, ground_truth(c, frame, contacts_[clip]).flatten());
    }

    TrainingSample draw(std::mt19937_64& rng, double mask_rate) const {
        const long pick = static_cast<long>(rng() % static_cast<std::uint64_t>(total_));
        const int clip = static_cast<int>(std::upper_bound(cumulative_.begin(), cumulative_.end(), pick) - cumulative_.begin());
        const MotionClip& c = clips_[clip];
        const int frame = uniform_int(rng, 0, c.frames() - 2);
        const int target = frame + uniform_int(rng, 1, std::min(max_tta_, c.frames() - 1 - frame));
        std::vector<std::uint8_t> mask(c.joints(), 0);
        for (int j = 1; j < c.joints(); ++j) mask[j] = uniform01(rng) < mask_rate ? 1 : 0;
return make(clip, frame, target, std::move(mask));
    }

private:
    std::vector<MotionClip> clips_;
    std::vector<ContactTrack> contacts_;
    std::vector<long> cumulative_;
    long total_ = 0;
    int max_tta_;
};

/// Fits the input, phase and output normalizers on unmasked samples. Contact
/// outputs stay un-normalized (they pass through a sigmoid).
template <class T>
void fit_normalizers(Model<T>& m, const std::vector<TrainingSample>& samples) {
    if (samples.empty()) throw Error(ErrorKind::EmptyDataset, "no samples for normalizer");
    const FeatureLayout& L = m.config.layout;
    Eigen::MatrixXd in(L.input_dims(), samples.size()), ph(L.phase_window_dims(), samples.size()),
        out(L.output_dims(), samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        in.col(i) = samples[i].input;
        ph.col(i) = samples[i].phases;
        out.col(i) = samples[i].truth;
    }
    m.input_norm = Normalizer::fit(in);
    for (const auto& g : input_feature_groups(L)) m.input_norm.pool(g);
    m.phase_norm = Normalizer::fit(ph);
    std::vector<int> all(L.phase_window_dims());
    std::iota(all.begin(), all.end(), 0);
    m.phase_norm.pool(all);
    m.output_norm = Normalizer::fit(out);
    const int c0 = L.out_contacts(), c1 = L.out_trajectory();
    m.output_norm.mean.segment(c0, c1 - c0).setZero();
    m.output_norm.stddev.segment(c0, c1 - c0).setOnes();
}

// --- weight files -----------------------------------------------------------

namespace dcmoe_detail {
inline std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}
inline std::vector<int> split_ints(const std::string& s) {
    std::vector<int> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) v.push_back(std::stoi(item));
    return v;
}
inline void put_normalizer(Container& c, const std::string& name, const Normalizer& n) {
    const auto d = static_cast<std::uint32_t>(n.dims());
    c.set_from("normalizer/" + name + "/mean", {d}, std::vector<double>(n.mean.data(), n.mean.data() + d));
    c.set_from("normalizer/" + name + "/std", {d}, std::vector<double>(n.stddev.data(), n.stddev.data() + d));
}
inline Normalizer get_normalizer(const Container& c, const std::string& name, int dims) {
    const std::uint32_t shape[] = {static_cast<std::uint32_t>(dims)};
    const auto& mean = c.get("normalizer/" + name + "/mean", shape).data;
    const auto& sd = c.get("normalizer/" + name + "/std", shape).data;
    Normalizer n{Eigen::VectorXd(dims), Eigen::VectorXd(dims)};
    for (int i = 0; i < dims; ++i) {
        n.mean[i] = mean[i];
        n.stddev[i] = sd[i];
    }
    return n;
}
} // namespace dcmoe_detail

template <class T>
Container model_to_container(const Model<T>& m, const std::string& config_echo = "{}") {
    using namespace dcmoe_detail;
    Container c("dcmoe-weights");
    const ModelConfig& k = m.config;
    c.set_meta("model_version", kModelVersion);
    c.set_meta("experts", std::to_string(k.experts));
    c.set_meta("expert_width", std::to_string(k.expert_width));
    c.set_meta("expert_hidden_layers", std::to_string(k.expert_hidden_layers));
    c.set_meta("gating_hidden", join_ints(k.gating_hidden));
    c.set_meta("styles", std::to_string(k.styles));
    c.set_meta("style_dims", std::to_string(k.style_dims));
    c.set_meta("tta_dims", std::to_string(k.tta_dims));
    c.set_meta("joints", std::to_string(k.layout.joints));
    c.set_meta("feet", std::to_string(k.layout.feet));
    c.set_meta("foot_joints", join_ints(k.foot_joints));
    c.set_meta("config", config_echo);
    write_skeleton(c, m.skeleton);
    for (std::size_t i = 0; i < m.tensors.size(); ++i) {
        const TensorInfo& t = m.tensors[i];
        std::vector<float> data(t.size());
        // row-major on disk
        const auto view = m.tensor(i);
        for (int r = 0; r < t.rows; ++r)
            for (int col = 0; col < t.cols; ++col) data[static_cast<std::size_t>(r) * t.cols + col] = static_cast<float>(view(r, col));
        c.set(t.name, {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)}, std::move(data));
    }
    put_normalizer(c, "input", m.input_norm);
    put_normalizer(c, "phase", m.phase_norm);
    put_normalizer(c, "output", m.output_norm);
    return c;
}

template <class T = float>
Model<T> model_from_container(const Container& c) {
    using namespace dcmoe_detail;
    if (c.kind() != "dcmoe-weights") throw Error(ErrorKind::Format, "container kind '" + c.kind() + "' is not model weights");
    if (c.meta("model_version") != kModelVersion)
        throw Error(ErrorKind::Format, "unsupported model version " + c.meta("model_version"));
    ModelConfig k;
    k.experts = std::stoi(c.meta("experts"));
    k.expert_width = std::stoi(c.meta("expert_width"));
    k.expert_hidden_layers = std::stoi(c.meta("expert_hidden_layers"));
    k.gating_hidden = split_ints(c.meta("gating_hidden"));
    k.styles = std::stoi(c.meta("styles"));
    k.style_dims = std::stoi(c.meta("style_dims"));
    k.tta_dims = std::stoi(c.meta("tta_dims"));
    k.layout.joints = std::stoi(c.meta("joints"));
    k.layout.feet = std::stoi(c.meta("feet"));
    k.foot_joints = split_ints(c.meta("foot_joints"));
    Model<T> m(k, read_skeleton(c));
    for (std::size_t i = 0; i < m.tensors.size(); ++i) {
        const TensorInfo& t = m.tensors[i];
        const std::uint32_t shape[] = {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)};
        const auto& data = c.get(t.name, shape).data;
        auto view = m.tensor(i);
        for (int r = 0; r < t.rows; ++r)
            for (int col = 0; col < t.cols; ++col) view(r, col) = static_cast<T>(data[static_cast<std::size_t>(r) * t.cols + col]);
    }
    m.input_norm = get_normalizer(c, "input", k.layout.input_dims());
    m.phase_norm = get_normalizer(c, "phase", k.layout.phase_window_dims());
    m.output_norm = get_normalizer(c, "output", k.layout.output_dims());
    return m;
}

template <class T>
void save_model(const std::string& path, const Model<T>& m, const std::string& config_echo = "{}") {
    model_to_container(m, config_echo).save(path);
}

template <class T = float>
Model<T> load_model(const std::string& path) {
    return model_from_container<T>(Container::load(path));
}

} // namespace inbetween
