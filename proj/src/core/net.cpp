#include "net.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "rng.hpp"

namespace nnc {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<const Eigen::VectorXd>;
using MutMat = Eigen::Map<RowMat>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

void check_finite(VecView x) {
    for (double v : x)
        if (!std::isfinite(v)) throw UsageError("non-finite input to network");
}

}  // namespace

Mlp::Mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, int classes,
         std::uint64_t seed)
    : seed_(seed) {
    if (input_dim == 0) throw UsageError("network input dimension must be positive");
    if (classes < 2) throw UsageError("network needs at least two classes");
    std::vector<std::size_t> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(static_cast<std::size_t>(classes));
    Rng rng(seed);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer l;
        l.in = dims[i];
        l.out = dims[i + 1];
        l.w.resize(l.in * l.out);
        l.b.assign(l.out, 0.0);
        double scale = std::sqrt(2.0 / static_cast<double>(l.in));  // He init for ReLU
        for (double& v : l.w) v = scale * rng.next_normal();
        layers_.push_back(std::move(l));
    }
}

Mlp Mlp::make_default(std::size_t input_dim, std::uint64_t seed) {
    return Mlp(input_dim, {256, 128}, 2, seed);
}

std::vector<double> forward(const Mlp& mlp, VecView x, Tape& tape) {
    const auto& layers = mlp.layers();
    if (layers.empty()) throw UsageError("forward on an empty network");
    if (x.size() != mlp.input_dim()) throw UsageError("input dimension mismatch");
    check_finite(x);
    tape.acts.clear();
    tape.spent = false;
    tape.acts.emplace_back(x.begin(), x.end());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        const std::vector<double>& a = tape.acts.back();
        std::vector<double> h(l.out);
        MutVec(h.data(), l.out) = MapMat(l.w.data(), l.out, l.in) * MapVec(a.data(), l.in) +
                                  MapVec(l.b.data(), l.out);
        if (i + 1 < layers.size())
            for (double& v : h) v = v > 0.0 ? v : 0.0;
        tape.acts.push_back(std::move(h));
    }
    return tape.acts.back();
}

std::vector<double> Mlp::logits(VecView x) const {
    Tape t;
    return forward(*this, x, t);
}

GradientBundle backward(const Mlp& mlp, Tape& tape, VecView d_logits) {
    const auto& layers = mlp.layers();
    if (tape.spent) throw UsageError("tape already consumed by a backward pass");
    if (tape.acts.size() != layers.size() + 1) throw UsageError("tape does not match network");
    if (d_logits.size() != layers.back().out) throw UsageError("d_logits dimension mismatch");
    tape.spent = true;

    GradientBundle g;
    g.d_layers.resize(layers.size());
    std::vector<double> d(d_logits.begin(), d_logits.end());
    for (std::size_t i = layers.size(); i-- > 0;) {
        const Layer& l = layers[i];
        const std::vector<double>& a_prev = tape.acts[i];
        Layer& dl = g.d_layers[i];
        dl.in = l.in;
        dl.out = l.out;
        dl.w.resize(l.in * l.out);
        dl.b = d;
        MutMat(dl.w.data(), l.out, l.in) =
            MapVec(d.data(), l.out) * MapVec(a_prev.data(), l.in).transpose();
        std::vector<double> d_prev(l.in);
        MutVec(d_prev.data(), l.in) =
            MapMat(l.w.data(), l.out, l.in).transpose() * MapVec(d.data(), l.out);
        if (i > 0) {
            // gate through the previous layer's ReLU (its output is cached;
            // output > 0 iff the pre-activation was)
            for (std::size_t k = 0; k < l.in; ++k)
                if (tape.acts[i][k] <= 0.0) d_prev[k] = 0.0;
        }
        d = std::move(d_prev);
    }
    g.d_input = std::move(d);
    return g;
}

std::vector<double> Mlp::input_grad(VecView x, VecView d_logits) const {
    Tape t;
    forward(*this, x, t);
    return backward(*this, t, d_logits).d_input;
}

double Mlp::ce_loss_and_grad(VecView x, int label, std::vector<double>& grad_out) const {
    Tape t;
    std::vector<double> l = forward(*this, x, t);
    grad_out = backward(*this, t, softmax_ce_dlogits(l, label)).d_input;
    return softmax_ce(l, label);
}

GradientBundle zero_gradients(const Mlp& mlp) {
    GradientBundle g;
    for (const Layer& l : mlp.layers()) {
        Layer z;
        z.in = l.in;
        z.out = l.out;
        z.w.assign(l.w.size(), 0.0);
        z.b.assign(l.b.size(), 0.0);
        g.d_layers.push_back(std::move(z));
    }
    g.d_input.assign(mlp.input_dim(), 0.0);
    return g;
}

void add_scaled(GradientBundle& acc, const GradientBundle& g, double scale) {
    if (acc.d_layers.size() != g.d_layers.size()) throw UsageError("gradient shape mismatch");
    for (std::size_t i = 0; i < acc.d_layers.size(); ++i) {
        Layer& a = acc.d_layers[i];
        const Layer& b = g.d_layers[i];
        if (a.w.size() != b.w.size() || a.b.size() != b.b.size())
            throw UsageError("gradient shape mismatch");
        for (std::size_t k = 0; k < a.w.size(); ++k) a.w[k] += scale * b.w[k];
        for (std::size_t k = 0; k < a.b.size(); ++k) a.b[k] += scale * b.b[k];
    }
    if (!g.d_input.empty() && acc.d_input.size() == g.d_input.size())
        for (std::size_t k = 0; k < acc.d_input.size(); ++k)
            acc.d_input[k] += scale * g.d_input[k];
}

void sgd_step(Mlp& mlp, SgdState& state, const GradientBundle& grads, double lr,
              double momentum) {
    auto& layers = mlp.layers();
    if (grads.d_layers.size() != layers.size()) throw UsageError("gradient shape mismatch");
    if (state.velocity.empty()) {
        for (const Layer& l : layers) {
            Layer v;
            v.in = l.in;
            v.out = l.out;
            v.w.assign(l.w.size(), 0.0);
            v.b.assign(l.b.size(), 0.0);
            state.velocity.push_back(std::move(v));
        }
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Layer& l = layers[i];
        Layer& v = state.velocity[i];
        const Layer& g = grads.d_layers[i];
        if (g.w.size() != l.w.size() || g.b.size() != l.b.size())
            throw UsageError("gradient shape mismatch");
        for (std::size_t k = 0; k < l.w.size(); ++k) {
            v.w[k] = momentum * v.w[k] + g.w[k];
            l.w[k] -= lr * v.w[k];
        }
        for (std::size_t k = 0; k < l.b.size(); ++k) {
            v.b[k] = momentum * v.b[k] + g.b[k];
            l.b[k] -= lr * v.b[k];
        }
    }
}

double loss_boundary(VecView logits_clean, VecView logits_adv) {
    std::vector<double> p = softmax(logits_clean);
    std::vector<double> q = softmax(logits_adv);
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    return std::max(kl, 0.0);  // clamp the tiny negative round-off at p == q
}

void loss_boundary_dlogits(VecView logits_clean, VecView logits_adv,
                           std::vector<double>& d_clean, std::vector<double>& d_adv) {
    std::vector<double> p = softmax(logits_clean);
    std::vector<double> q = softmax(logits_adv);
    // d/dadv_j KL = q_j - p_j; d/dclean_j = p_j (r_j - sum_i p_i r_i),
    // r_i = log p_i - log q_i.
    d_adv.resize(p.size());
    d_clean.resize(p.size());
    std::vector<double> r(p.size());
    double mean_r = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        r[i] = std::log(p[i]) - std::log(q[i]);
        mean_r += p[i] * r[i];
        d_adv[i] = q[i] - p[i];
    }
    for (std::size_t i = 0; i < p.size(); ++i) d_clean[i] = p[i] * (r[i] - mean_r);
}

namespace {

void put_le32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

void put_le64(std::string& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& s, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_le64(s, bits);
}

std::uint32_t le32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(p[i]);
    return v;
}

std::uint64_t le64(const char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | std::uint8_t(p[i]);
    return v;
}

double f64_at(const char* p) {
    std::uint64_t bits = le64(p);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_model(const Mlp& mlp, const std::string& path) {
    std::string out;
    out += "NNCM";
    put_le32(out, 1);  // version
    put_le64(out, mlp.seed());
    put_le32(out, std::uint32_t(mlp.layers().size()));
    for (const Layer& l : mlp.layers()) {
        put_le32(out, std::uint32_t(l.in));
        put_le32(out, std::uint32_t(l.out));
    }
    for (const Layer& l : mlp.layers()) {
        for (double v : l.w) put_f64(out, v);
        for (double v : l.b) put_f64(out, v);
    }
    write_file_atomic(path, out);
}

Mlp load_model(const std::string& path) {
    std::string data = read_file(path);
    if (data.size() < 20) throw FormatError("truncated model file: " + path);
    if (std::memcmp(data.data(), "NNCM", 4) != 0)
        throw FormatError("bad model magic in " + path);
    if (le32(data.data() + 4) != 1) throw FormatError("unsupported model version in " + path);
    Mlp mlp;
    std::uint64_t seed = le64(data.data() + 8);
    std::uint32_t n_layers = le32(data.data() + 16);
    if (n_layers == 0 || n_layers > 64) throw FormatError("bad layer count in " + path);
    std::size_t off = 20;
    if (data.size() < off + std::size_t(n_layers) * 8)
        throw FormatError("truncated model header: " + path);
    std::vector<Layer> layers(n_layers);
    for (auto& l : layers) {
        l.in = le32(data.data() + off);
        l.out = le32(data.data() + off + 4);
        off += 8;
        if (l.in == 0 || l.out == 0) throw FormatError("zero layer dimension in " + path);
    }
    for (std::size_t i = 1; i < layers.size(); ++i)
        if (layers[i].in != layers[i - 1].out)
            throw FormatError("layer shapes do not chain in " + path);
    for (auto& l : layers) {
        std::size_t need = (l.in * l.out + l.out) * 8;
        if (data.size() < off + need) throw FormatError("truncated model payload: " + path);
        l.w.resize(l.in * l.out);
        for (double& v : l.w) {
            v = f64_at(data.data() + off);
            off += 8;
        }
        l.b.resize(l.out);
        for (double& v : l.b) {
            v = f64_at(data.data() + off);
            off += 8;
        }
    }
    for (const auto& l : layers)
        for (double v : l.w)
            if (!std::isfinite(v)) throw FormatError("non-finite parameter in " + path);
    // rebuild through the public shape so invariants hold
    Mlp out;
    out = Mlp(layers.front().in, {}, int(layers.back().out), seed);
    out.layers() = std::move(layers);
    return out;
}

}  // namespace nnc
