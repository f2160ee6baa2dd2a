#pragma once

// Dense tanh MLPs with closed-form reverse-mode gradients, Adam, freezing and
// a binary parameter format. Everything is templated on the scalar so the same
// code trains in float and is gradient-checked in double.
//
// Batches are column-major: one sample per column, features along rows.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "licorice/common.hpp"

namespace licorice::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct Tensor {
    std::string name;
    Matrix<S> value;
    bool trainable = true;
};

template <typename S>
using Gradients = std::vector<Matrix<S>>;

/// Named tensors with fixed shapes. Shapes never change after add().
template <typename S>
class ParamSet {
public:
    std::size_t add(std::string name, int rows, int cols) {
        for (const auto& t : tensors_)
            if (t.name == name) throw Error("duplicate tensor name: " + name);
        tensors_.push_back({std::move(name), Matrix<S>::Zero(rows, cols), true});
        return tensors_.size() - 1;
    }

    std::size_t size() const { return tensors_.size(); }
    Tensor<S>& operator[](std::size_t i) { return tensors_[i]; }
    const Tensor<S>& operator[](std::size_t i) const { return tensors_[i]; }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

    void set_trainable(bool trainable) {
        for (auto& t : tensors_) t.trainable = trainable;
    }

    bool any_trainable() const {
        return std::any_of(tensors_.begin(), tensors_.end(), [](const auto& t) { return t.trainable; });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
        return n;
    }

    /// Hash over names and shapes; identifies the architecture, not the values.
    std::uint64_t schema_hash() const {
        std::uint64_t h = fnv1a("licorice-params");
        for (const auto& t : tensors_) {
            h = fnv1a(t.name, h);
            const std::int64_t shape[2] = {t.value.rows(), t.value.cols()};
            h = fnv1a(shape, sizeof(shape), h);
        }
        return h;
    }

    Gradients<S> zero_gradients() const {
        Gradients<S> g;
        g.reserve(tensors_.size());
        for (const auto& t : tensors_) g.push_back(Matrix<S>::Zero(t.value.rows(), t.value.cols()));
        return g;
    }

    /// Copies values (and only values) of another set with the same schema.
    void copy_values_from(const ParamSet& other) {
        if (other.schema_hash() != schema_hash()) throw Error("copy_values_from: schema mismatch");
        for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].value = other.tensors_[i].value;
    }

    template <typename T>
    ParamSet<T> cast() const {
        ParamSet<T> out;
        for (const auto& t : tensors_) {
            auto idx = out.add(t.name, static_cast<int>(t.value.rows()), static_cast<int>(t.value.cols()));
            out[idx].value = t.value.template cast<T>();
            out[idx].trainable = t.trainable;
        }
        return out;
    }

private:
    std::vector<Tensor<S>> tensors_;
};

/// Architecture of one dense stack: tanh hidden layers, then an output kind.
struct MlpSpec {
    enum class Output { Features, Linear, SoftmaxHeads };

    int input_dim = 1;
    std::vector<int> hidden;
    Output output = Output::Linear;
    int linear_dim = 0;
    std::vector<int> head_cardinalities;

    /// Output is the last tanh layer.
    static MlpSpec features(int input_dim, std::vector<int> hidden) {
        return {input_dim, std::move(hidden), Output::Features, 0, {}};
    }
    static MlpSpec linear(int input_dim, std::vector<int> hidden, int out) {
        return {input_dim, std::move(hidden), Output::Linear, out, {}};
    }
    static MlpSpec softmax_heads(int input_dim, std::vector<int> hidden, std::vector<int> cards) {
        return {input_dim, std::move(hidden), Output::SoftmaxHeads, 0, std::move(cards)};
    }

    int output_dim() const {
        switch (output) {
            case Output::Features: return hidden.empty() ? input_dim : hidden.back();
            case Output::Linear: return linear_dim;
            case Output::SoftmaxHeads: {
                int n = 0;
                for (int k : head_cardinalities) n += k;
                return n;
            }
        }
        return 0;
    }

    void validate() const {
        if (input_dim < 1) throw Error("MlpSpec: input dim must be >= 1");
        for (int h : hidden)
            if (h < 1) throw Error("MlpSpec: hidden widths must be >= 1");
        if (output == Output::Features && hidden.empty()) throw Error("MlpSpec: feature stack needs a hidden layer");
        if (output == Output::Linear && linear_dim < 1) throw Error("MlpSpec: output dim must be >= 1");
        if (output == Output::SoftmaxHeads) {
            if (head_cardinalities.empty()) throw Error("MlpSpec: no softmax heads");
            for (int k : head_cardinalities)
                if (k < 2) throw Error("MlpSpec: head cardinality must be >= 2");
        }
    }
};

template <typename S>
struct MlpCache {
    std::vector<Matrix<S>> inputs;   // input of every layer
    std::vector<Matrix<S>> outputs;  // output of every layer (post-activation)
};

/// A view onto tensors registered in a ParamSet. Holds indices, not values.
template <typename S>
class Mlp {
public:
    Mlp() = default;

    Mlp(MlpSpec spec, ParamSet<S>& params, const std::string& prefix) : spec_(std::move(spec)) {
        spec_.validate();
        std::vector<int> dims{spec_.input_dim};
        dims.insert(dims.end(), spec_.hidden.begin(), spec_.hidden.end());
        if (spec_.output != MlpSpec::Output::Features) dims.push_back(spec_.output_dim());
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            Layer layer;
            layer.weight = params.add(prefix + ".l" + std::to_string(l) + ".w", dims[l + 1], dims[l]);
            layer.bias = params.add(prefix + ".l" + std::to_string(l) + ".b", dims[l + 1], 1);
            layer.tanh = spec_.output == MlpSpec::Output::Features || l + 2 < dims.size();
            layers_.push_back(layer);
        }
    }

    const MlpSpec& spec() const { return spec_; }
    int input_dim() const { return spec_.input_dim; }
    int output_dim() const { return spec_.output_dim(); }

    /// Orthogonal weights with the given gains; zero biases.
    void init(ParamSet<S>& params, Rng& rng, double hidden_gain, double output_gain) const {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const bool last = l + 1 == layers_.size();
            const double gain = (last && spec_.output != MlpSpec::Output::Features) ? output_gain : hidden_gain;
            orthogonal_init(params[layers_[l].weight].value, rng, gain);
            params[layers_[l].bias].value.setZero();
        }
    }

    /// Raw outputs: features, linear values, or concatenated head logits.
    Matrix<S> forward(const ParamSet<S>& params, const Matrix<S>& x, MlpCache<S>* cache = nullptr) const {
        if (x.rows() != spec_.input_dim)
            throw Error("Mlp::forward: input has " + std::to_string(x.rows()) + " rows, expected " +
                        std::to_string(spec_.input_dim));
        if (cache) {
            cache->inputs.clear();
            cache->outputs.clear();
        }
        Matrix<S> h = x;
        for (const auto& layer : layers_) {
            Matrix<S> z = params[layer.weight].value * h;
            z.colwise() += params[layer.bias].value.col(0);
            if (layer.tanh) z = z.array().tanh().matrix();
            if (cache) cache->inputs.push_back(std::move(h));
            h = std::move(z);
            if (cache) cache->outputs.push_back(h);
        }
        return h;
    }

    /// Accumulates parameter gradients of trainable tensors into grads and
    /// returns the gradient with respect to the input.
    Matrix<S> backward(const ParamSet<S>& params, const MlpCache<S>& cache, const Matrix<S>& d_out,
                       Gradients<S>& grads, bool need_input_grad = true) const {
        Matrix<S> d = d_out;
        for (std::size_t li = layers_.size(); li-- > 0;) {
            const auto& layer = layers_[li];
            if (layer.tanh) d = (d.array() * (S(1) - cache.outputs[li].array().square())).matrix();
            if (params[layer.weight].trainable) grads[layer.weight].noalias() += d * cache.inputs[li].transpose();
            if (params[layer.bias].trainable) grads[layer.bias].col(0) += d.rowwise().sum();
            if (li == 0 && !need_input_grad) return {};
            d = params[layer.weight].value.transpose() * d;
        }
        return d;
    }

    std::vector<std::size_t> tensor_indices() const {
        std::vector<std::size_t> out;
        for (const auto& l : layers_) {
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
        return out;
    }

private:
    struct Layer {
        std::size_t weight = 0;
        std::size_t bias = 0;
        bool tanh = false;
    };

    static void orthogonal_init(Matrix<S>& w, Rng& rng, double gain) {
        const auto rows = w.rows(), cols = w.cols();
        const auto n = std::max(rows, cols);
        Eigen::MatrixXd a(n, std::min(rows, cols));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = normal(rng);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, a.cols());
        // Sign correction makes the distribution uniform over orthogonal matrices.
        Eigen::MatrixXd r = qr.matrixQR().topRows(a.cols()).template triangularView<Eigen::Upper>();
        for (Eigen::Index j = 0; j < q.cols(); ++j)
            if (r(j, j) < 0) q.col(j) *= -1.0;
        Eigen::MatrixXd out = rows >= cols ? Eigen::MatrixXd(q) : Eigen::MatrixXd(q.transpose());
        w = (gain * out).cast<S>();
    }

    MlpSpec spec_;
    std::vector<Layer> layers_;
};

/// Per-head softmax over concatenated logits.
template <typename S>
Matrix<S> softmax_heads(const Matrix<S>& logits, const std::vector<int>& cards) {
    Matrix<S> out(logits.rows(), logits.cols());
    int offset = 0;
    for (int k : cards) {
        auto block = logits.middleRows(offset, k);
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            const S mx = block.col(c).maxCoeff();
            auto e = (block.col(c).array() - mx).exp();
            out.middleRows(offset, k).col(c) = (e / e.sum()).matrix();
        }
        offset += k;
    }
    return out;
}

/// Argmax class per head; ties resolve to the lowest class index.
template <typename S>
Eigen::MatrixXi argmax_heads(const Matrix<S>& logits, const std::vector<int>& cards) {
    Eigen::MatrixXi out(static_cast<Eigen::Index>(cards.size()), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        int offset = 0;
        for (std::size_t h = 0; h < cards.size(); ++h) {
            Eigen::Index best = 0;
            logits.middleRows(offset, cards[h]).col(c).maxCoeff(&best);
            out(static_cast<Eigen::Index>(h), c) = static_cast<int>(best);
            offset += cards[h];
        }
    }
    return out;
}

/// Cross-entropy summed over heads, averaged over the batch. labels: heads x batch.
template <typename S>
S cross_entropy_heads(const Matrix<S>& logits, const Eigen::MatrixXi& labels, const std::vector<int>& cards,
                      Matrix<S>* d_logits = nullptr, S scale = S(1)) {
    const auto batch = logits.cols();
    Matrix<S> probs = softmax_heads(logits, cards);
    S loss = 0;
    int offset = 0;
    for (std::size_t h = 0; h < cards.size(); ++h) {
        for (Eigen::Index c = 0; c < batch; ++c) {
            const int y = labels(static_cast<Eigen::Index>(h), c);
            loss -= std::log(std::max(probs(offset + y, c), std::numeric_limits<S>::min()));
        }
        offset += cards[h];
    }
    loss /= static_cast<S>(batch);
    if (d_logits) {
        Matrix<S> d = probs;
        offset = 0;
        for (std::size_t h = 0; h < cards.size(); ++h) {
            for (Eigen::Index c = 0; c < batch; ++c) d(offset + labels(static_cast<Eigen::Index>(h), c), c) -= S(1);
            offset += cards[h];
        }
        *d_logits = d * (scale / static_cast<S>(batch));
    }
    return loss;
}

/// Mean squared error over every entry (variables and batch).
template <typename S>
S mean_squared_error(const Matrix<S>& pred, const Matrix<S>& target, Matrix<S>* d_pred = nullptr,
                     S scale = S(1)) {
    Matrix<S> diff = pred - target;
    const S n = static_cast<S>(diff.size());
    if (d_pred) *d_pred = diff * (S(2) * scale / n);
    return diff.squaredNorm() / n;
}

/// Constant learning rate, or linear decay to zero over total_steps.
struct LrSchedule {
    double initial = 3e-4;
    long total_steps = 0;  // 0 means constant

    double at(long step) const {
        if (total_steps <= 0) return initial;
        const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
        return initial * std::max(0.0, frac);
    }
};

struct AdamConfig {
    LrSchedule lr;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename S>
class Adam {
public:
    Adam() = default;
    Adam(const ParamSet<S>& params, AdamConfig config) : config_(config) {
        for (const auto& t : params) {
            m_.push_back(Matrix<S>::Zero(t.value.rows(), t.value.cols()));
            v_.push_back(Matrix<S>::Zero(t.value.rows(), t.value.cols()));
        }
    }

    long steps() const { return steps_; }
    double current_lr() const { return config_.lr.at(steps_); }
    const AdamConfig& config() const { return config_; }

    void step(ParamSet<S>& params, const Gradients<S>& grads) {
        if (grads.size() != params.size() || m_.size() != params.size())
            throw Error("Adam::step: gradient/parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].trainable && !grads[i].allFinite())
                throw Error("Adam::step: non-finite gradient in tensor '" + params[i].name + "'");

        const double lr = config_.lr.at(steps_);
        ++steps_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
        const S b1 = static_cast<S>(config_.beta1), b2 = static_cast<S>(config_.beta2);
        const S step_size = static_cast<S>(lr / bc1);
        const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
        const S eps = static_cast<S>(config_.eps);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].trainable) continue;
            m_[i] = b1 * m_[i] + (S(1) - b1) * grads[i];
            v_[i] = b2 * v_[i] + (S(1) - b2) * grads[i].cwiseAbs2();
            if (lr == 0.0) continue;
            params[i].value.array() -=
                step_size * m_[i].array() / ((v_[i].array().sqrt() * inv_sqrt_bc2) + eps);
        }
    }

private:
    AdamConfig config_;
    std::vector<Matrix<S>> m_, v_;
    long steps_ = 0;
};

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns the pre-clip norm.
template <typename S>
double clip_grad_norm(std::vector<Gradients<S>*> groups, double max_norm) {
    double sq = 0;
    for (auto* g : groups)
        for (const auto& m : *g) sq += static_cast<double>(m.squaredNorm());
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const S scale = static_cast<S>(max_norm / (norm + 1e-6));
        for (auto* g : groups)
            for (auto& m : *g) m *= scale;
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Binary parameter files: little-endian header {magic, version, scalar width,
// schema hash, tensor table}, then raw column-major data, then a data checksum.

inline constexpr char kParamMagic[8] = {'L', 'C', 'R', 'P', 'A', 'R', 'A', 'M'};
inline constexpr std::uint32_t kParamVersion = 1;

static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");

namespace detail {
template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("parameter file truncated");
    return v;
}
}  // namespace detail

template <typename S>
void write_params(std::ostream& os, const ParamSet<S>& params) {
    os.write(kParamMagic, sizeof(kParamMagic));
    detail::put<std::uint32_t>(os, kParamVersion);
    detail::put<std::uint32_t>(os, sizeof(S));
    detail::put<std::uint64_t>(os, params.schema_hash());
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& t : params) {
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rows()));
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.cols()));
        detail::put<std::uint8_t>(os, t.trainable ? 1 : 0);
    }
    std::uint64_t checksum = fnv1a("data", 4);
    for (const auto& t : params) {
        const auto bytes = static_cast<std::size_t>(t.value.size()) * sizeof(S);
        os.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(bytes));
        checksum = fnv1a(t.value.data(), bytes, checksum);
    }
    detail::put<std::uint64_t>(os, checksum);
}

/// Reads into target, which must already have the file's schema. Either every
/// tensor is replaced or target is left untouched.
template <typename S>
void read_params(std::istream& is, ParamSet<S>& target, bool restore_trainable = true) {
    char magic[sizeof(kParamMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kParamMagic, sizeof(magic)) != 0)
        throw Error("not a parameter file (bad magic)");
    if (const auto version = detail::get<std::uint32_t>(is); version != kParamVersion)
        throw Error("unsupported parameter file version " + std::to_string(version));
    if (detail::get<std::uint32_t>(is) != sizeof(S)) throw Error("parameter file scalar width mismatch");
    if (detail::get<std::uint64_t>(is) != target.schema_hash()) throw Error("parameter file schema hash mismatch");
    const auto count = detail::get<std::uint32_t>(is);
    if (count != target.size()) throw Error("parameter file tensor count mismatch");
    std::vector<std::uint8_t> trainable(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::get<std::uint32_t>(is);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw Error("parameter file truncated");
        const auto rows = detail::get<std::uint32_t>(is);
        const auto cols = detail::get<std::uint32_t>(is);
        trainable[i] = detail::get<std::uint8_t>(is);
        if (name != target[i].name || rows != target[i].value.rows() || cols != target[i].value.cols())
            throw Error("parameter file tensor table mismatch at '" + name + "'");
    }
    std::vector<Matrix<S>> values;
    std::uint64_t checksum = fnv1a("data", 4);
    for (std::uint32_t i = 0; i < count; ++i) {
        Matrix<S> m(target[i].value.rows(), target[i].value.cols());
        const auto bytes = static_cast<std::size_t>(m.size()) * sizeof(S);
        if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bytes)))
            throw Error("parameter file truncated");
        checksum = fnv1a(m.data(), bytes, checksum);
        values.push_back(std::move(m));
    }
    if (detail::get<std::uint64_t>(is) != checksum) throw Error("parameter file checksum mismatch (corrupt)");
    for (std::uint32_t i = 0; i < count; ++i) {
        target[i].value = std::move(values[i]);
        if (restore_trainable) target[i].trainable = trainable[i] != 0;
    }
}

template <typename S>
std::string serialize_params(const ParamSet<S>& params) {
    std::ostringstream os(std::ios::binary);
    write_params(os, params);
    return os.str();
}

template <typename S>
void save_params(const ParamSet<S>& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_params(os, params);
    if (!os) throw Error("write failed for '" + path + "'");
}

template <typename S>
void load_params(ParamSet<S>& target, const std::string& path, bool restore_trainable = true) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open '" + path + "' for reading");
    read_params(is, target, restore_trainable);
}

}  // namespace licorice::nn
