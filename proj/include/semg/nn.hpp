#pragma once

// Dense feed-forward networks with layer-wise reverse-mode gradients, Adam,
// and a text checkpoint format. Batches are column-major: one sample per
// column of an Eigen matrix.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "semg/error.hpp"
#include "semg/files.hpp"
#include "semg/rng.hpp"

namespace semg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { smooth_gated, rectifier, tanh, identity };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::smooth_gated: return "smooth_gated";
        case Activation::rectifier: return "rectifier";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "identity";
}

inline Activation activation_from_string(std::string_view s) {
    if (s == "smooth_gated" || s == "silu") return Activation::smooth_gated;
    if (s == "rectifier" || s == "relu") return Activation::rectifier;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline double activate(Activation a, double z) {
    switch (a) {
        case Activation::smooth_gated: return z / (1.0 + std::exp(-z));
        case Activation::rectifier: return z > 0.0 ? z : 0.0;
        case Activation::tanh: return std::tanh(z);
        case Activation::identity: return z;
    }
    return z;
}

inline double activate_derivative(Activation a, double z) {
    switch (a) {
        case Activation::smooth_gated: {
            const double s = 1.0 / (1.0 + std::exp(-z));
            return s * (1.0 + z * (1.0 - s));
        }
        case Activation::rectifier: return z > 0.0 ? 1.0 : 0.0;
        case Activation::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

/// Layer sizes from input to output; one activation per hidden layer. The
/// output layer is always linear.
struct NetSpec {
    std::vector<int> layer_sizes;
    std::vector<Activation> hidden_activations;

    NetSpec() = default;
    NetSpec(std::vector<int> sizes, Activation hidden)
        : layer_sizes(std::move(sizes)),
          hidden_activations(layer_sizes.size() >= 2 ? layer_sizes.size() - 2 : 0, hidden) {}
    NetSpec(std::vector<int> sizes, std::vector<Activation> hidden)
        : layer_sizes(std::move(sizes)), hidden_activations(std::move(hidden)) {}

    std::size_t n_layers() const { return layer_sizes.size() - 1; }
    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }

    Activation activation(std::size_t layer) const {
        return layer + 1 < n_layers() ? hidden_activations[layer] : Activation::identity;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
            n += static_cast<std::size_t>(layer_sizes[l + 1]) * (layer_sizes[l] + 1);
        return n;
    }

    void validate() const {
        if (layer_sizes.size() < 2) throw ConfigError("net spec: at least two layer sizes required");
        for (int s : layer_sizes)
            if (s <= 0) throw ConfigError("net spec: layer sizes must be positive");
        if (hidden_activations.size() != layer_sizes.size() - 2)
            throw ConfigError("net spec: one activation per hidden layer required");
    }

    friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

/// Flat parameter store. Layer l occupies [W_l (out x in, column-major), b_l].
/// `version` changes on every mutation so stale forward caches are detectable.
class Params {
  public:
    Params() = default;

    explicit Params(NetSpec spec, std::uint64_t seed = 0) : spec_(std::move(spec)), seed_(seed) {
        spec_.validate();
        values_ = Vector::Zero(static_cast<Eigen::Index>(spec_.param_count()));
        std::size_t off = 0;
        for (std::size_t l = 0; l < spec_.n_layers(); ++l) {
            offsets_.push_back(off);
            off += static_cast<std::size_t>(spec_.layer_sizes[l + 1]) * (spec_.layer_sizes[l] + 1);
        }
        version_ = next_version();
    }

    /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    static Params initialized(NetSpec spec, std::uint64_t seed) {
        Params p(std::move(spec), seed);
        Rng rng(seed, Stream::init);
        for (std::size_t l = 0; l < p.spec_.n_layers(); ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(p.spec_.layer_sizes[l]));
            const auto n = static_cast<std::size_t>(p.spec_.layer_sizes[l + 1]) * (p.spec_.layer_sizes[l] + 1);
            for (std::size_t i = 0; i < n; ++i) p.values_[static_cast<Eigen::Index>(p.offsets_[l] + i)] = rng.uniform(-bound, bound);
        }
        return p;
    }

    const NetSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }
    std::uint64_t version() const { return version_; }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

    const Vector& values() const { return values_; }
    Vector& mutable_values() {
        version_ = next_version();
        return values_;
    }

    Eigen::Map<const Matrix> weight(std::size_t l) const {
        return {values_.data() + offsets_[l], spec_.layer_sizes[l + 1], spec_.layer_sizes[l]};
    }
    Eigen::Map<Matrix> weight(std::size_t l) {
        version_ = next_version();
        return {values_.data() + offsets_[l], spec_.layer_sizes[l + 1], spec_.layer_sizes[l]};
    }
    Eigen::Map<const Vector> bias(std::size_t l) const {
        return {values_.data() + offsets_[l] + weight_count(l), spec_.layer_sizes[l + 1]};
    }
    Eigen::Map<Vector> bias(std::size_t l) {
        version_ = next_version();
        return {values_.data() + offsets_[l] + weight_count(l), spec_.layer_sizes[l + 1]};
    }

    std::size_t offset(std::size_t l) const { return offsets_[l]; }
    std::size_t weight_count(std::size_t l) const {
        return static_cast<std::size_t>(spec_.layer_sizes[l + 1]) * spec_.layer_sizes[l];
    }

    bool all_finite() const { return values_.allFinite(); }

  private:
    static std::uint64_t next_version() {
        static std::uint64_t counter = 0;
        return ++counter;
    }

    NetSpec spec_;
    Vector values_;
    std::vector<std::size_t> offsets_;
    std::uint64_t seed_ = 0;
    std::uint64_t version_ = 0;
};

struct ForwardCache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
    std::uint64_t params_version = 0;
};

/// Batched forward pass; columns of `input` are samples.
inline Matrix forward(const Params& params, const Matrix& input, ForwardCache* cache = nullptr) {
    const NetSpec& spec = params.spec();
    if (input.rows() != spec.input_size())
        throw ContractViolation("forward: input has " + std::to_string(input.rows()) + " rows, network expects " +
                                std::to_string(spec.input_size()));
    if (cache) {
        cache->inputs.assign(spec.n_layers(), Matrix());
        cache->pre.assign(spec.n_layers(), Matrix());
        cache->params_version = params.version();
    }
    Matrix a = input;
    for (std::size_t l = 0; l < spec.n_layers(); ++l) {
        Matrix z = params.weight(l) * a;
        z.colwise() += params.bias(l);
        const Activation act = spec.activation(l);
        if (cache) {
            cache->inputs[l] = std::move(a);
            cache->pre[l] = z;
        }
        if (act == Activation::identity)
            a = std::move(z);
        else
            a = z.unaryExpr([act](double v) { return activate(act, v); });
    }
    return a;
}

inline std::pair<Vector, ForwardCache> forward(const Params& params, const Vector& input) {
    ForwardCache cache;
    Matrix out = forward(params, Matrix(input), &cache);
    return {Vector(out.col(0)), std::move(cache)};
}

/// Reverse-mode gradients of sum(output .* output_grad) with respect to every
/// parameter, accumulated into `grads`. Returns the gradient with respect to the
/// network input when `input_grad` is non-null.
inline void backward(const Params& params, const ForwardCache& cache, const Matrix& output_grad, Vector& grads,
                     Matrix* input_grad = nullptr) {
    const NetSpec& spec = params.spec();
    if (cache.params_version != params.version() || cache.pre.size() != spec.n_layers())
        throw ContractViolation("backward: cache does not belong to the current parameters");
    if (output_grad.rows() != spec.output_size() || output_grad.cols() != cache.pre.back().cols())
        throw ContractViolation("backward: output gradient shape mismatch");
    if (grads.size() != static_cast<Eigen::Index>(params.size())) grads = Vector::Zero(static_cast<Eigen::Index>(params.size()));

    Matrix dz = output_grad;
    for (std::size_t l = spec.n_layers(); l-- > 0;) {
        const Activation act = spec.activation(l);
        if (act != Activation::identity)
            dz = dz.cwiseProduct(cache.pre[l].unaryExpr([act](double v) { return activate_derivative(act, v); }));
        Eigen::Map<Matrix> dw(grads.data() + params.offset(l), spec.layer_sizes[l + 1], spec.layer_sizes[l]);
        Eigen::Map<Vector> db(grads.data() + params.offset(l) + params.weight_count(l), spec.layer_sizes[l + 1]);
        dw.noalias() += dz * cache.inputs[l].transpose();
        db.noalias() += dz.rowwise().sum();
        if (l > 0 || input_grad) {
            Matrix da = params.weight(l).transpose() * dz;
            if (l == 0)
                *input_grad = std::move(da);
            else
                dz = std::move(da);
        }
    }
}

inline Vector backward(const Params& params, const ForwardCache& cache, const Vector& output_grad) {
    Vector grads = Vector::Zero(static_cast<Eigen::Index>(params.size()));
    backward(params, cache, Matrix(output_grad), grads);
    return grads;
}

struct AdamState {
    Vector m;
    Vector v;
    std::int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n, double learning_rate = 1e-3)
        : m(Vector::Zero(static_cast<Eigen::Index>(n))), v(Vector::Zero(static_cast<Eigen::Index>(n))), lr(learning_rate) {}
};

/// Bias-corrected Adam update in place.
inline void adam_step(Vector& params, const Vector& grads, AdamState& state) {
    if (params.size() != grads.size()) throw ContractViolation("adam: parameter/gradient size mismatch");
    if (state.m.size() == 0) {
        state.m = Vector::Zero(params.size());
        state.v = Vector::Zero(params.size());
    }
    if (state.m.size() != params.size()) throw ContractViolation("adam: optimizer state does not match parameters");
    if (!grads.allFinite()) {
        Eigen::Index bad = 0;
        while (std::isfinite(grads[bad])) ++bad;
        throw TrainingError("adam: non-finite gradient at index " + std::to_string(bad) + " (value " +
                            std::to_string(grads[bad]) + ", step " + std::to_string(state.step + 1) + ")");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const double b1 = state.beta1, b2 = state.beta2, lr = state.lr / c1, eps = state.eps, inv_c2 = 1.0 / c2;
    double* __restrict p = params.data();
    double* __restrict m = state.m.data();
    double* __restrict v = state.v.data();
    const double* __restrict g = grads.data();
    const Eigen::Index n = params.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mi = b1 * m[i] + (1.0 - b1) * g[i];
        const double vi = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        m[i] = mi;
        v[i] = vi;
        p[i] -= lr * mi / (std::sqrt(vi * inv_c2) + eps);
    }
}

inline void adam_step(Params& params, const Vector& grads, AdamState& state) {
    adam_step(params.mutable_values(), grads, state);
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, one value per line (%.17g), "end" line.

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
    nlohmann::json header;
    std::vector<double> values;
};

inline std::string format_double17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string serialize_checkpoint(nlohmann::json header, const Vector& values) {
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i])) throw NumericError("checkpoint: refusing to serialize non-finite parameter");
    header["format"] = "semg-ckpt";
    header["schema_version"] = kCheckpointSchemaVersion;
    header["count"] = values.size();
    std::string out = header.dump();
    out += '\n';
    out.reserve(out.size() + static_cast<std::size_t>(values.size()) * 24 + 8);
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        out += format_double17(values[i]);
        out += '\n';
    }
    out += "end\n";
    return out;
}

inline Checkpoint parse_checkpoint(std::string_view text) {
    const auto nl = text.find('\n');
    if (nl == std::string_view::npos) throw LoadError("checkpoint: missing header line");
    Checkpoint ck;
    try {
        ck.header = nlohmann::json::parse(text.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("checkpoint: bad header: ") + e.what());
    }
    if (ck.header.value("format", "") != "semg-ckpt") throw LoadError("checkpoint: not a semg checkpoint");
    if (ck.header.value("schema_version", -1) != kCheckpointSchemaVersion)
        throw LoadError("checkpoint: unsupported schema version");
    const auto count = ck.header.value("count", std::int64_t{-1});
    if (count < 0) throw LoadError("checkpoint: missing value count");
    ck.values.reserve(static_cast<std::size_t>(count));
    std::size_t pos = nl + 1;
    for (std::int64_t i = 0; i < count; ++i) {
        const auto end = text.find('\n', pos);
        if (end == std::string_view::npos) throw LoadError("checkpoint: truncated at value " + std::to_string(i));
        const auto line = text.substr(pos, end - pos);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
        if (ec != std::errc() || ptr != line.data() + line.size() || !std::isfinite(v))
            throw LoadError("checkpoint: malformed value at index " + std::to_string(i));
        ck.values.push_back(v);
        pos = end + 1;
    }
    if (text.substr(pos) != "end\n") throw LoadError("checkpoint: missing end marker (truncated or trailing data)");
    return ck;
}

inline nlohmann::json net_spec_json(const NetSpec& spec) {
    nlohmann::json j;
    j["layer_sizes"] = spec.layer_sizes;
    std::vector<std::string> acts;
    for (auto a : spec.hidden_activations) acts.push_back(to_string(a));
    j["activations"] = acts;
    return j;
}

inline std::string serialize_params(const Params& params) {
    nlohmann::json header;
    header["kind"] = "dense";
    header["net"] = net_spec_json(params.spec());
    header["seed"] = params.seed();
    return serialize_checkpoint(header, params.values());
}

/// Builds parameters from a parsed checkpoint whose "net" entry must match `expected`.
inline Params deserialize_params_values(const Checkpoint& ck, const NetSpec& expected) {
    NetSpec stored;
    try {
        stored.layer_sizes = ck.header.at("net").at("layer_sizes").get<std::vector<int>>();
        for (const auto& a : ck.header.at("net").at("activations")) stored.hidden_activations.push_back(activation_from_string(a.get<std::string>()));
    } catch (const std::exception& e) {
        throw LoadError(std::string("checkpoint: bad network manifest: ") + e.what());
    }
    if (!(stored == expected)) throw LoadError("checkpoint: shape mismatch with expected network");
    Params p(expected, ck.header.value("seed", std::uint64_t{0}));
    if (ck.values.size() != p.size()) throw LoadError("checkpoint: parameter count mismatch");
    Vector& v = p.mutable_values();
    for (std::size_t i = 0; i < ck.values.size(); ++i) v[static_cast<Eigen::Index>(i)] = ck.values[i];
    return p;
}

/// Loads a dense checkpoint; the stored network must match `expected`.
inline Params deserialize_params(std::string_view text, const NetSpec& expected) {
    const Checkpoint ck = parse_checkpoint(text);
    if (ck.header.value("kind", "") != "dense") throw LoadError("checkpoint: not a dense network");
    return deserialize_params_values(ck, expected);
}

}  // namespace semg
