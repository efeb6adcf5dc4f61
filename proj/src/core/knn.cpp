#include "knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "geom_cache.hpp"
#include "linalg.hpp"

namespace nnc {

namespace {

// Squared distance with early exit once the partial sum passes `cap`.
double sqdist_capped(VecView a, VecView b, double cap) {
    double s = 0.0;
    std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + 64 <= n; i += 64) {
        for (std::size_t k = i; k < i + 64; ++k) {
            double d = a[k] - b[k];
            s += d * d;
        }
        if (s > cap) return s;
    }
    for (; i < n; ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

NNIndex::NNIndex(const LabeledSet& train) {
    if (train.class_count() != 2)
        throw ConfigError("1NN index expects a binary problem, got " +
                          std::to_string(train.class_count()) + " classes");
    dim_ = train.dim();
    for (std::size_t i = 0; i < train.size(); ++i) {
        int c = train.labels[i];
        auto px = train.example(i);
        double sq = 0.0;
        for (double v : px) {
            if (!std::isfinite(v)) throw DataError("non-finite training vector entry");
            sq += v * v;
        }
        auto& dst = pts_[static_cast<std::size_t>(c)];
        dst.insert(dst.end(), px.begin(), px.end());
        sqnorm_[static_cast<std::size_t>(c)].push_back(sq);
        orig_[static_cast<std::size_t>(c)].push_back(static_cast<std::uint32_t>(i));
    }
    if (orig_[0].empty() || orig_[1].empty())
        throw ConfigError("1NN index requires at least one point per class");
}

NNIndex::~NNIndex() = default;

int NNIndex::predict(VecView x) const {
    if (x.size() != dim_) throw UsageError("query dimension mismatch");
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_id = 0;
    int best_class = 0;
    for (int c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < class_size(c); ++j) {
            double d = sqdist_capped(x, point(c, j), best);
            std::uint32_t id = original_id(c, j);
            if (d < best || (d == best && id < best_id)) {
                best = d;
                best_id = id;
                best_class = c;
            }
        }
    }
    return best_class;
}

Margin NNIndex::margin(VecView x, int true_label) const {
    if (x.size() != dim_) throw UsageError("query dimension mismatch");
    Margin m;
    for (int c = 0; c < 2; ++c) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_id = 0;
        for (std::size_t j = 0; j < class_size(c); ++j) {
            double d = sqdist_capped(x, point(c, j), best);
            std::uint32_t id = original_id(c, j);
            if (d < best || (d == best && id < best_id)) {
                best = d;
                best_id = id;
            }
        }
        if (c == true_label) {
            m.d_same = std::sqrt(best);
            m.nearest_same_id = best_id;
        } else {
            m.d_other = std::sqrt(best);
            m.nearest_other_id = best_id;
        }
    }
    return m;
}

std::vector<Margin> NNIndex::margins(const LabeledSet& queries) const {
    if (queries.dim() != dim_) throw UsageError("query dimension mismatch");
    std::size_t n = queries.size();
    std::vector<Margin> out(n);

    // One distance block per class; queries blocked to bound the temporary.
    const std::size_t block = 256;
    std::array<std::vector<double>, 2> d2;
    for (std::size_t q0 = 0; q0 < n; q0 += block) {
        std::size_t rows = std::min(block, n - q0);
        for (int c = 0; c < 2; ++c) {
            d2[static_cast<std::size_t>(c)].resize(rows * class_size(c));
            pairwise_sqdist(queries.pixels.data() + q0 * dim_, rows,
                            pts_[static_cast<std::size_t>(c)].data(), class_size(c), dim_,
                            d2[static_cast<std::size_t>(c)].data());
        }
        for (std::size_t r = 0; r < rows; ++r) {
            int label = queries.labels[q0 + r];
            Margin m;
            for (int c = 0; c < 2; ++c) {
                const double* row = d2[static_cast<std::size_t>(c)].data() + r * class_size(c);
                double best = std::numeric_limits<double>::infinity();
                std::uint32_t best_id = 0;
                for (std::size_t j = 0; j < class_size(c); ++j) {
                    std::uint32_t id = original_id(c, j);
                    if (row[j] < best || (row[j] == best && id < best_id)) {
                        best = row[j];
                        best_id = id;
                    }
                }
                if (c == label) {
                    m.d_same = std::sqrt(best);
                    m.nearest_same_id = best_id;
                } else {
                    m.d_other = std::sqrt(best);
                    m.nearest_other_id = best_id;
                }
            }
            out[q0 + r] = m;
        }
    }
    return out;
}

const GeomCache& NNIndex::geom() const {
    std::call_once(geom_once_, [this] {
        auto cache = std::make_unique<GeomCache>();
        cache->n0 = class_size(0);
        cache->n1 = class_size(1);
        cache->cross.resize(cache->n0 * cache->n1);
        pairwise_sqdist(pts_[0].data(), cache->n0, pts_[1].data(), cache->n1, dim_,
                        cache->cross.data());
        // The GEMM identity leaves ~1e-13 residue on coincident points; the
        // geometry needs exact zeros there, so recompute tiny entries directly.
        double mn = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < cache->n0; ++i) {
            for (std::size_t j = 0; j < cache->n1; ++j) {
                double& v = cache->cross[i * cache->n1 + j];
                if (v < 1e-9) {
                    const double* a = pts_[0].data() + i * dim_;
                    const double* b = pts_[1].data() + j * dim_;
                    double s = 0.0;
                    for (std::size_t k = 0; k < dim_; ++k) {
                        double d = a[k] - b[k];
                        s += d * d;
                    }
                    v = s;
                }
                v = std::sqrt(v);
                mn = std::min(mn, v);
            }
        }
        cache->min_cross = mn;
        geom_ = std::move(cache);
    });
    return *geom_;
}

double NNIndex::class_distance() const { return geom().min_cross; }

Certificate certify(const Margin& m, std::size_t n_dims, bool correct) {
    Certificate c;
    c.correct = correct;
    if (!correct) return c;
    c.radius_l2 = std::max(m.delta(), 0.0) / 2.0;
    c.radius_linf = c.radius_l2 / std::sqrt(static_cast<double>(n_dims));
    return c;
}

double certificate_radius(const Certificate& c, Norm p) {
    return p == Norm::Linf ? c.radius_linf : c.radius_l2;
}

double certified_robust_accuracy(const NNIndex& index, const LabeledSet& set, double eps,
                                 Norm p) {
    if (eps < 0) throw UsageError("eps must be >= 0");
    if (set.size() == 0) throw UsageError("empty evaluation set");
    auto ms = index.margins(set);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        bool correct = index.predict(set.example(i)) == set.labels[i];
        if (!correct) continue;
        if (eps == 0.0) {
            ++hits;  // zero ball: certificate degenerates to clean correctness
            continue;
        }
        Certificate c = certify(ms[i], index.dim(), true);
        if (certificate_radius(c, p) > eps) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(set.size());
}

std::string histogram_csv(const PixelHistogram& h) {
    std::string out = "bin_lower,count\n";
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        out += format_double(static_cast<double>(k) * h.bin_width);
        out += ',';
        out += std::to_string(h.counts[k]);
        out += '\n';
    }
    return out;
}

std::string to_json_line(const CertRecord& r) {
    nlohmann::ordered_json j;
    j["example_id"] = r.example_id;
    j["d_same"] = r.d_same;
    j["d_other"] = r.d_other;
    j["radius_l2"] = r.radius_l2;
    j["radius_linf"] = r.radius_linf;
    j["min_l2"] = r.min_l2 ? nlohmann::ordered_json(*r.min_l2) : nlohmann::ordered_json(nullptr);
    j["min_linf"] =
        r.min_linf ? nlohmann::ordered_json(*r.min_linf) : nlohmann::ordered_json(nullptr);
    j["anchor_id"] =
        r.anchor_id ? nlohmann::ordered_json(*r.anchor_id) : nlohmann::ordered_json(nullptr);
    return j.dump();
}

Soft1nn::Soft1nn(const NNIndex& index, double temperature) : index_(index), tau_(temperature) {
    if (!(tau_ > 0)) throw UsageError("temperature must be positive");
}

std::vector<double> Soft1nn::logits(VecView x) const {
    std::vector<double> out(2);
    std::vector<double> d2;
    for (int c = 0; c < 2; ++c) {
        d2.resize(index_.class_size(c));
        row_sqdist(x.data(), index_.point(c, 0).data(), index_.class_size(c), index_.dim(),
                   d2.data());
        double lo = *std::min_element(d2.begin(), d2.end());
        double sum = 0.0;
        for (double v : d2) sum += std::exp(-tau_ * (v - lo));
        // soft-min of squared distances; logit is its negation
        out[static_cast<std::size_t>(c)] = -(lo - std::log(sum) / tau_);
    }
    return out;
}

std::vector<double> Soft1nn::input_grad(VecView x, VecView d_logits) const {
    std::vector<double> g(index_.dim(), 0.0);
    std::vector<double> d2;
    for (int c = 0; c < 2; ++c) {
        std::size_t n = index_.class_size(c);
        d2.resize(n);
        row_sqdist(x.data(), index_.point(c, 0).data(), n, index_.dim(), d2.data());
        double lo = *std::min_element(d2.begin(), d2.end());
        double sum = 0.0;
        for (double v : d2) sum += std::exp(-tau_ * (v - lo));
        // d logit_c / dx = −Σ_a w_a · 2(x − a),  w = softmax(−τ d²) within class
        double coeff = d_logits[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < n; ++j) {
            double w = std::exp(-tau_ * (d2[j] - lo)) / sum;
            if (w < 1e-16) continue;
            auto a = index_.point(c, j);
            double f = -2.0 * w * coeff;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += f * (x[k] - a[k]);
        }
    }
    return g;
}

}  // namespace nnc
