#include "diffmodel.hpp"

#include <algorithm>
#include <cmath>

namespace nnc {

std::vector<double> softmax(VecView logits) {
    double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - hi);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

double softmax_ce(VecView logits, int label) {
    double hi = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - hi);
    return std::log(sum) - (logits[static_cast<std::size_t>(label)] - hi);
}

std::vector<double> softmax_ce_dlogits(VecView logits, int label) {
    std::vector<double> d = softmax(logits);
    d[static_cast<std::size_t>(label)] -= 1.0;
    return d;
}

double DiffModel::ce_loss_and_grad(VecView x, int label, std::vector<double>& grad_out) const {
    std::vector<double> l = logits(x);
    grad_out = input_grad(x, softmax_ce_dlogits(l, label));
    return softmax_ce(l, label);
}

}  // namespace nnc
