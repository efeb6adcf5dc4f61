#pragma once

#include <vector>

#include "common.hpp"

namespace nnc {

// Minimal interface attacks need: logits plus gradients of a scalar loss with
// respect to the input. Implementations must be safe for concurrent calls on
// a const instance.
class DiffModel {
public:
    virtual ~DiffModel() = default;

    virtual std::size_t input_dim() const = 0;
    virtual int class_count() const = 0;

    virtual std::vector<double> logits(VecView x) const = 0;

    // dL/dx for the given dL/dlogits (forward state is recomputed internally).
    virtual std::vector<double> input_grad(VecView x, VecView d_logits) const = 0;

    // Cross-entropy loss and its input gradient in one pass. The default is
    // built on logits()+input_grad(); implementations may fuse it.
    virtual double ce_loss_and_grad(VecView x, int label, std::vector<double>& grad_out) const;
};

double softmax_ce(VecView logits, int label);
std::vector<double> softmax_ce_dlogits(VecView logits, int label);  // softmax − onehot
std::vector<double> softmax(VecView logits);

}  // namespace nnc
