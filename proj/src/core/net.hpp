#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "diffmodel.hpp"

namespace nnc {

// One fully-connected layer; w is row-major (out x in). The same shape pair
// doubles as the gradient / momentum carrier so updates stay shape-checked.
struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;
    std::vector<double> b;
};

// Cached activations of one forward pass. acts[0] is the input copy,
// acts[i>0] the post-ReLU output of layer i (the last entry is the logits,
// which get no ReLU). A tape feeds exactly one backward pass.
struct Tape {
    std::vector<std::vector<double>> acts;
    bool spent = false;
};

struct GradientBundle {
    std::vector<Layer> d_layers;  // w/b hold dL/dw, dL/db
    std::vector<double> d_input;
};

// Small ReLU MLP with f64 parameters, He-initialized from a fixed seed.
// Implements DiffModel so attacks can drive it without knowing the concrete
// type; const calls are safe across threads.
class Mlp : public DiffModel {
public:
    Mlp() = default;
    Mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, int classes,
        std::uint64_t seed);
    // Adopts existing parameters (checkpoint load); validates shape chaining.
    Mlp(std::vector<Layer> layers, std::uint64_t seed);

    // The desk-scale default: input -> 256 -> 128 -> 2.
    static Mlp make_default(std::size_t input_dim, std::uint64_t seed);

    std::size_t input_dim() const override { return layers_.empty() ? 0 : layers_.front().in; }
    int class_count() const override {
        return layers_.empty() ? 0 : static_cast<int>(layers_.back().out);
    }
    std::uint64_t seed() const { return seed_; }

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

    std::vector<double> logits(VecView x) const override;
    std::vector<double> input_grad(VecView x, VecView d_logits) const override;
    double ce_loss_and_grad(VecView x, int label, std::vector<double>& grad_out) const override;

private:
    std::vector<Layer> layers_;
    std::uint64_t seed_ = 0;
};

// Forward pass recording activations for backward(). Returns the logits.
std::vector<double> forward(const Mlp& mlp, VecView x, Tape& tape);

// Reverse-mode gradients of a scalar loss with the given dL/dlogits, for all
// parameters and the input. Consumes the tape (reuse throws).
GradientBundle backward(const Mlp& mlp, Tape& tape, VecView d_logits);

// Gradient arithmetic for minibatch accumulation.
GradientBundle zero_gradients(const Mlp& mlp);
void add_scaled(GradientBundle& acc, const GradientBundle& g, double scale);

// SGD with momentum: v <- momentum*v + g; theta <- theta - lr*v.
// Velocity buffers are created lazily on the first step.
struct SgdState {
    std::vector<Layer> velocity;
};
void sgd_step(Mlp& mlp, SgdState& state, const GradientBundle& grads, double lr,
              double momentum);

// Cross-entropy on logits (softmax applied inside).
inline double loss_ce(VecView logits, int label) { return softmax_ce(logits, label); }
inline std::vector<double> loss_ce_dlogits(VecView logits, int label) {
    return softmax_ce_dlogits(logits, label);
}

// Boundary loss of the TRADES surrogate: KL(softmax(clean) || softmax(adv)).
// Zero iff the two softmax outputs coincide.
double loss_boundary(VecView logits_clean, VecView logits_adv);

// Partials of loss_boundary with respect to each logit vector (both are
// needed: the adversarial search differentiates through the adv branch, the
// parameter step through both branches).
void loss_boundary_dlogits(VecView logits_clean, VecView logits_adv,
                           std::vector<double>& d_clean, std::vector<double>& d_adv);

// Versioned binary checkpoint (magic "NNCM"): architecture, init seed, and
// all parameters as little-endian f64. Byte layout is deterministic.
void save_model(const Mlp& mlp, const std::string& path);
Mlp load_model(const std::string& path);

}  // namespace nnc
