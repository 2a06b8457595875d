#pragma once

// Comparison estimators: inverse-distance weighting and mean fill (non-learned),
// and a gated recurrent network that reads the measurements in visit order
// and decodes its final state into a full map.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semg/error.hpp"
#include "semg/nn.hpp"
#include "semg/rf_env.hpp"
#include "semg/uav_mission.hpp"

namespace semg {

inline SnrMap idw_interpolate(const MeasurementSet& m, double cell_size_m, double power = 2.0) {
    if (m.empty()) throw UndefinedResultError("idw: no measurements");
    if (!(power > 0.0)) throw ConfigError("idw: power must be > 0");
    SnrMap out(m.width, m.height, cell_size_m);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const int cell = y * m.width + x;
            if (m.mask[cell]) {
                out.at(x, y) = m.cell_values_db[cell];
                continue;
            }
            double num = 0.0, den = 0.0;
            for (int o : m.order) {
                const double dx = x - o % m.width;
                const double dy = y - o / m.width;
                const double w = std::pow(dx * dx + dy * dy, -0.5 * power);
                num += w * m.cell_values_db[o];
                den += w;
            }
            out.at(x, y) = num / den;
        }
    return out;
}

inline SnrMap mean_fill(const MeasurementSet& m, double cell_size_m) {
    if (m.empty()) throw UndefinedResultError("mean_fill: no measurements");
    double mean = 0.0;
    for (int o : m.order) mean += m.cell_values_db[o];
    mean /= static_cast<double>(m.count());
    SnrMap out(m.width, m.height, cell_size_m, mean);
    for (int o : m.order) out.values[o] = m.cell_values_db[o];
    return out;
}

// ---------------------------------------------------------------------------
// Gated recurrent baseline

enum class GateVariant { gru, minimal };

inline std::string to_string(GateVariant v) { return v == GateVariant::gru ? "gru" : "minimal"; }

inline GateVariant gate_variant_from_string(std::string_view s) {
    if (s == "gru") return GateVariant::gru;
    if (s == "minimal" || s == "mgu") return GateVariant::minimal;
    throw ConfigError("unknown recurrent cell variant '" + std::string(s) + "'");
}

struct RecurrentSpec {
    int input_size = 3;
    int hidden = 64;
    GateVariant variant = GateVariant::gru;
    int cells = 0;  // readout width (H * W)

    int gates() const { return variant == GateVariant::gru ? 3 : 2; }
    std::size_t gate_block() const { return static_cast<std::size_t>(hidden) * (input_size + hidden + 1); }
    std::size_t cell_param_count() const { return gates() * gate_block(); }
    NetSpec readout_spec() const { return NetSpec({hidden, cells}, Activation::identity); }

    void validate() const {
        if (hidden <= 0) throw ConfigError("recurrent: hidden size must be positive");
        if (cells <= 0) throw ConfigError("recurrent: readout size must be positive");
        if (input_size != 3) throw ConfigError("recurrent: input triples have size 3");
    }
};

/// One measurement sequence: rows are (x / (W-1), y / (H-1), unit value).
using Sequence = std::vector<std::array<double, 3>>;

inline Sequence make_sequence(const MeasurementSet& m, const EnvConfig& env) {
    Sequence seq;
    seq.reserve(m.count());
    const double sx = m.width > 1 ? 1.0 / (m.width - 1) : 0.0;
    const double sy = m.height > 1 ? 1.0 / (m.height - 1) : 0.0;
    for (int o : m.order)
        seq.push_back({(o % m.width) * sx, (o / m.width) * sy, std::clamp(to_unit(m.cell_values_db[o], env), -1.0, 1.0)});
    return seq;
}

/// Gate g (update/reset/candidate for GRU; forget/candidate for the minimal
/// cell) stores [W_g (H x 3), U_g (H x H), b_g (H)]; the readout follows as a
/// dense network. Both live in one flat vector so a single Adam state covers them.
class RecurrentModel {
  public:
    RecurrentModel() = default;
    RecurrentModel(RecurrentSpec spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
        spec_.validate();
        readout_ = Params::initialized(spec_.readout_spec(), seed);
        values_ = Vector::Zero(static_cast<Eigen::Index>(spec_.cell_param_count() + readout_.size()));
        Rng rng(seed, Stream::init, 1);
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.hidden));
        for (std::size_t i = 0; i < spec_.cell_param_count(); ++i) values_[static_cast<Eigen::Index>(i)] = rng.uniform(-bound, bound);
        values_.tail(static_cast<Eigen::Index>(readout_.size())) = readout_.values();
    }

    const RecurrentSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }
    const Vector& values() const { return values_; }
    Vector& mutable_values() { return values_; }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

    struct Forward {
        std::vector<Matrix> x;       // 3 x B inputs per step
        std::vector<Matrix> h_prev;  // H x B
        std::vector<Matrix> gate1;   // z (GRU) or f (minimal)
        std::vector<Matrix> gate2;   // r (GRU only)
        std::vector<Matrix> cand;    // candidate state
        std::vector<Matrix> active;  // 1 x B
        Matrix h_final;
        ForwardCache readout;
        Matrix output;
    };

    /// Runs all sequences (padded to the longest) and decodes unit maps.
    Matrix predict(std::span<const Sequence> seqs, Forward* fwd = nullptr) const {
        const auto B = static_cast<Eigen::Index>(seqs.size());
        const int H = spec_.hidden;
        std::size_t steps = 0;
        for (const auto& s : seqs) steps = std::max(steps, s.size());
        Matrix h = Matrix::Zero(H, B);
        const auto W = [&](int g) { return gate_w(g); };
        const auto U = [&](int g) { return gate_u(g); };
        const auto b = [&](int g) { return gate_b(g); };
        const auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        for (std::size_t k = 0; k < steps; ++k) {
            Matrix x(3, B);
            Matrix act(1, B);
            for (Eigen::Index c = 0; c < B; ++c) {
                const auto& s = seqs[static_cast<std::size_t>(c)];
                const bool on = k < s.size();
                act(0, c) = on ? 1.0 : 0.0;
                for (int j = 0; j < 3; ++j) x(j, c) = on ? s[k][j] : 0.0;
            }
            Matrix g1 = W(0) * x + U(0) * h;
            g1.colwise() += b(0);
            g1 = g1.unaryExpr(sigmoid);
            Matrix g2;
            Matrix gated;
            if (spec_.variant == GateVariant::gru) {
                g2 = W(1) * x + U(1) * h;
                g2.colwise() += b(1);
                g2 = g2.unaryExpr(sigmoid);
                gated = g2.cwiseProduct(h);
            } else {
                gated = g1.cwiseProduct(h);
            }
            const int cg = spec_.gates() - 1;
            Matrix cand = W(cg) * x + U(cg) * gated;
            cand.colwise() += b(cg);
            cand = cand.array().tanh().matrix();
            Matrix h_new = h + g1.cwiseProduct(cand - h);
            for (Eigen::Index c = 0; c < B; ++c)
                if (act(0, c) == 0.0) h_new.col(c) = h.col(c);
            if (fwd) {
                fwd->x.push_back(std::move(x));
                fwd->h_prev.push_back(h);
                fwd->gate1.push_back(std::move(g1));
                fwd->gate2.push_back(std::move(g2));
                fwd->cand.push_back(std::move(cand));
                fwd->active.push_back(std::move(act));
            }
            h = std::move(h_new);
        }
        const Params ro = readout_view();
        Matrix out = fwd ? forward(ro, h, &fwd->readout) : forward(ro, h);
        if (fwd) {
            fwd->h_final = h;
            fwd->output = out;
        }
        return out;
    }

    /// Gradient of sum(output .* output_grad) over every parameter.
    Vector gradient(const Forward& fwd, const Matrix& output_grad) const {
        Vector grads = Vector::Zero(values_.size());
        const Params ro = readout_view();
        Vector ro_grads = Vector::Zero(static_cast<Eigen::Index>(ro.size()));
        Matrix dh;
        ForwardCache cache = fwd.readout;
        cache.params_version = ro.version();
        backward(ro, cache, output_grad, ro_grads, &dh);
        grads.tail(ro_grads.size()) = ro_grads;

        const int H = spec_.hidden;
        const int I = spec_.input_size;
        auto dW = [&](int g) { return Eigen::Map<Matrix>(grads.data() + g * spec_.gate_block(), H, I); };
        auto dU = [&](int g) { return Eigen::Map<Matrix>(grads.data() + g * spec_.gate_block() + H * I, H, H); };
        auto db = [&](int g) { return Eigen::Map<Vector>(grads.data() + g * spec_.gate_block() + H * (I + H), H); };
        const int cg = spec_.gates() - 1;
        for (std::size_t k = fwd.x.size(); k-- > 0;) {
            const Matrix& h = fwd.h_prev[k];
            const Matrix& g1 = fwd.gate1[k];
            const Matrix& cand = fwd.cand[k];
            Matrix dh_new = dh;
            Matrix dh_skip = Matrix::Zero(H, dh.cols());
            for (Eigen::Index c = 0; c < dh.cols(); ++c)
                if (fwd.active[k](0, c) == 0.0) {
                    dh_skip.col(c) = dh.col(c);
                    dh_new.col(c).setZero();
                }
            // h_new = h + g1 .* (cand - h)
            Matrix dcand = dh_new.cwiseProduct(g1);
            Matrix dg1 = dh_new.cwiseProduct(cand - h);
            Matrix dh_prev = dh_new - dh_new.cwiseProduct(g1) + dh_skip;

            const Matrix da_c = dcand.cwiseProduct((1.0 - cand.array().square()).matrix());
            const Matrix gate_for_h = spec_.variant == GateVariant::gru ? fwd.gate2[k] : g1;
            const Matrix gated = gate_for_h.cwiseProduct(h);
            dW(cg).noalias() += da_c * fwd.x[k].transpose();
            dU(cg).noalias() += da_c * gated.transpose();
            db(cg).noalias() += da_c.rowwise().sum();
            const Matrix dgated = gate_u(cg).transpose() * da_c;
            dh_prev += dgated.cwiseProduct(gate_for_h);
            const Matrix dgate_h = dgated.cwiseProduct(h);

            if (spec_.variant == GateVariant::gru) {
                const Matrix& g2 = fwd.gate2[k];
                const Matrix da2 = dgate_h.cwiseProduct(g2.cwiseProduct((1.0 - g2.array()).matrix()));
                dW(1).noalias() += da2 * fwd.x[k].transpose();
                dU(1).noalias() += da2 * h.transpose();
                db(1).noalias() += da2.rowwise().sum();
                dh_prev.noalias() += gate_u(1).transpose() * da2;
            } else {
                dg1 += dgate_h;
            }
            const Matrix da1 = dg1.cwiseProduct(g1.cwiseProduct((1.0 - g1.array()).matrix()));
            dW(0).noalias() += da1 * fwd.x[k].transpose();
            dU(0).noalias() += da1 * h.transpose();
            db(0).noalias() += da1.rowwise().sum();
            dh_prev.noalias() += gate_u(0).transpose() * da1;
            dh = std::move(dh_prev);
        }
        return grads;
    }

    std::string serialize() const {
        nlohmann::json header;
        header["kind"] = "recurrent";
        header["hidden"] = spec_.hidden;
        header["variant"] = to_string(spec_.variant);
        header["cells"] = spec_.cells;
        header["seed"] = seed_;
        return serialize_checkpoint(header, values_);
    }

    static RecurrentModel deserialize(std::string_view text, const RecurrentSpec& expected) {
        Checkpoint ck = parse_checkpoint(text);
        if (ck.header.value("kind", "") != "recurrent") throw LoadError("checkpoint: not a recurrent model");
        if (ck.header.value("hidden", -1) != expected.hidden || ck.header.value("cells", -1) != expected.cells ||
            ck.header.value("variant", "") != to_string(expected.variant))
            throw LoadError("checkpoint: recurrent shape mismatch");
        RecurrentModel m(expected, ck.header.value("seed", std::uint64_t{0}));
        if (ck.values.size() != m.size()) throw LoadError("checkpoint: parameter count mismatch");
        for (std::size_t i = 0; i < ck.values.size(); ++i) m.values_[static_cast<Eigen::Index>(i)] = ck.values[i];
        return m;
    }

  private:
    Eigen::Map<const Matrix> gate_w(int g) const {
        return {values_.data() + g * spec_.gate_block(), spec_.hidden, spec_.input_size};
    }
    Eigen::Map<const Matrix> gate_u(int g) const {
        return {values_.data() + g * spec_.gate_block() + spec_.hidden * spec_.input_size, spec_.hidden, spec_.hidden};
    }
    Eigen::Map<const Vector> gate_b(int g) const {
        return {values_.data() + g * spec_.gate_block() + spec_.hidden * (spec_.input_size + spec_.hidden), spec_.hidden};
    }
    Params readout_view() const {
        Params ro(spec_.readout_spec(), seed_);
        ro.mutable_values() = values_.tail(static_cast<Eigen::Index>(ro.size()));
        return ro;
    }

    RecurrentSpec spec_;
    std::uint64_t seed_ = 0;
    Params readout_;
    Vector values_;
};

/// One Adam step on the mean squared error between decoded maps and targets.
inline double recurrent_train_step(RecurrentModel& model, AdamState& adam, std::span<const Sequence> seqs,
                                   std::span<const std::span<const double>> targets) {
    require(seqs.size() == targets.size() && !seqs.empty(), "recurrent_train_step: batch mismatch");
    RecurrentModel::Forward fwd;
    const Matrix out = model.predict(seqs, &fwd);
    Matrix diff = out;
    for (Eigen::Index c = 0; c < out.cols(); ++c)
        for (Eigen::Index i = 0; i < out.rows(); ++i) diff(i, c) -= targets[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)];
    const double n = static_cast<double>(diff.size());
    const double loss = diff.squaredNorm() / n;
    if (!std::isfinite(loss)) throw TrainingError("recurrent: non-finite loss at step " + std::to_string(adam.step + 1));
    const Vector grads = model.gradient(fwd, diff * (2.0 / n));
    adam_step(model.mutable_values(), grads, adam);
    return loss;
}

inline SnrMap recurrent_predict(const RecurrentModel& model, const MeasurementSet& m, const EnvConfig& env) {
    const Sequence seq = make_sequence(m, env);
    const Matrix out = model.predict(std::span<const Sequence>(&seq, 1));
    UnitMap u(m.width, m.height);
    for (std::size_t i = 0; i < u.size(); ++i) u.values[i] = out(static_cast<Eigen::Index>(i), 0);
    return from_unit(u, env);
}

}  // namespace semg
