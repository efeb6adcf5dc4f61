#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "dataset.hpp"
#include "diffmodel.hpp"

namespace nnc {

struct Margin {
    double d_same = 0.0;   // ℓ2 distance to the nearest point of the true class
    double d_other = 0.0;  // ℓ2 distance to the nearest point of the other class
    std::uint32_t nearest_same_id = 0;   // ids refer to the training set as built
    std::uint32_t nearest_other_id = 0;

    double delta() const { return d_other - d_same; }
};

struct Certificate {
    bool correct = false;
    double radius_l2 = 0.0;    // δ/2, clamped at 0; zero when misclassified
    double radius_linf = 0.0;  // radius_l2 / √N
};

Certificate certify(const Margin& m, std::size_t n_dims, bool correct);

// Radius for a query norm; any p ≤ 2 shares the ℓ2 radius.
double certificate_radius(const Certificate& c, Norm p);

// Knobs for the minimal-perturbation geometry (Dykstra bisector projections).
struct GeometryConfig {
    double tol = 1e-6;           // relative convergence tolerance
    int max_sweeps = 10000;      // iteration cap per anchor
    double prune_slack = 1e-9;   // absorbed into triangle-inequality pruning
    bool box_constrain = false;  // additionally keep x+v inside [0,1]^N
};

struct MinPerturbation {
    double distance = 0.0;  // minimal ‖v‖ flipping the prediction (= upper when converged)
    double lower = 0.0;     // proven lower bound
    double upper = 0.0;     // witness-backed upper bound
    bool converged = true;
    bool feasible = true;   // false only under box constraints with no flip inside [0,1]^N
    std::uint32_t anchor_id = 0;  // training id of the wrong-class point made nearest
    std::vector<double> witness;  // perturbation v with predict(x+v) ≠ label
};

enum class Decision : std::uint8_t { Robust, NonRobust, Undecided };

struct ExactRAResult {
    std::vector<Decision> decisions;  // one per example
    std::size_t robust = 0;
    std::size_t non_robust = 0;
    std::size_t undecided = 0;
    double lower = 0.0;  // RA counting undecided examples as non-robust
    double upper = 0.0;  // RA counting undecided examples as robust
    double value() const { return lower; }
};

struct PixelHistogram {
    double bin_width = 1.0 / 255.0;
    std::vector<std::uint64_t> counts;  // counts[k] covers [k·w, (k+1)·w)
    std::uint64_t total = 0;
};

struct GeomCache;  // cross-class distance table, built lazily

// Exact flat 1NN index over a binary training set. Immutable after build and
// safe to share across threads.
class NNIndex {
public:
    explicit NNIndex(const LabeledSet& train);
    NNIndex(const NNIndex&) = delete;
    NNIndex& operator=(const NNIndex&) = delete;
    ~NNIndex();

    std::size_t size() const { return orig_[0].size() + orig_[1].size(); }
    std::size_t dim() const { return dim_; }
    std::size_t class_size(int c) const { return orig_[static_cast<std::size_t>(c)].size(); }
    VecView point(int c, std::size_t j) const {
        return VecView(pts_[static_cast<std::size_t>(c)]).subspan(j * dim_, dim_);
    }
    double sqnorm(int c, std::size_t j) const { return sqnorm_[static_cast<std::size_t>(c)][j]; }
    std::uint32_t original_id(int c, std::size_t j) const {
        return orig_[static_cast<std::size_t>(c)][j];
    }

    // Ties at exactly equal distance break toward the lowest original id.
    int predict(VecView x) const;

    Margin margin(VecView x, int true_label) const;
    std::vector<Margin> margins(const LabeledSet& queries) const;  // batched scan

    // d0: minimum cross-class pairwise distance (exact). Cached.
    double class_distance() const;

    const GeomCache& geom() const;  // built on first use (thread-safe)

private:
    std::size_t dim_ = 0;
    std::array<std::vector<double>, 2> pts_;
    std::array<std::vector<double>, 2> sqnorm_;
    std::array<std::vector<std::uint32_t>, 2> orig_;
    mutable std::once_flag geom_once_;
    mutable std::unique_ptr<GeomCache> geom_;
};

// Fraction with a correct prediction and certificate radius strictly > eps
// (eps = 0 degenerates to clean accuracy). Sound lower bound on true RA.
double certified_robust_accuracy(const NNIndex& index, const LabeledSet& set, double eps, Norm p);

// Exact minimal flipping perturbation. Throws NumericError (message carries
// the best-so-far bounds) if the iteration cap leaves the value unresolved.
MinPerturbation min_adversarial_l2(const NNIndex& index, VecView x, int true_label,
                                   const GeometryConfig& cfg = {});
MinPerturbation min_adversarial_linf(const NNIndex& index, VecView x, int true_label,
                                     const GeometryConfig& cfg = {});

// Exact robust accuracy at eps under p ∈ {2, ∞}: per-example decision whether
// the minimal perturbation strictly exceeds eps. Unresolved examples are
// reported as the [lower, upper] interval instead of failing the run.
ExactRAResult exact_robust_accuracy(const NNIndex& index, const LabeledSet& set, double eps,
                                    Norm p, const GeometryConfig& cfg = {});

// Per-pixel |Δ| histogram of minimal-perturbation witnesses (bin width 1/255).
// Witnesses default to box-constrained so deltas stay in image range.
PixelHistogram attack_1nn_witness_stats(const NNIndex& index, const LabeledSet& set, Norm p,
                                        const GeometryConfig& cfg = GeometryConfig{
                                            .box_constrain = true});

std::string histogram_csv(const PixelHistogram& h);  // "bin_lower,count" lines

// One JSON line per example: {example_id, d_same, d_other, radius_l2,
// radius_linf, min_l2, min_linf, anchor_id}; min fields null when skipped.
struct CertRecord {
    std::size_t example_id = 0;
    double d_same = 0.0;
    double d_other = 0.0;
    double radius_l2 = 0.0;
    double radius_linf = 0.0;
    std::optional<double> min_l2;
    std::optional<double> min_linf;
    std::optional<std::uint32_t> anchor_id;
};
std::string to_json_line(const CertRecord& r);

// Differentiable 1NN surrogate: logit_c = −softmin_τ over class-c squared
// distances. Used to run gradient attacks "against" the 1NN classifier; the
// true index prediction stays the judge of success.
class Soft1nn final : public DiffModel {
public:
    explicit Soft1nn(const NNIndex& index, double temperature = 1.0);

    std::size_t input_dim() const override { return index_.dim(); }
    int class_count() const override { return 2; }
    std::vector<double> logits(VecView x) const override;
    std::vector<double> input_grad(VecView x, VecView d_logits) const override;

private:
    const NNIndex& index_;
    double tau_;
};

}  // namespace nnc
