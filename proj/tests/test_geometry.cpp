#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fixtures.hpp"
#include "knn.hpp"

using namespace nnc;

namespace {

LabeledSet set2d(std::vector<double> flat, std::vector<int> labels) {
    LabeledSet s;
    s.dims = {1, 1, 2};
    s.class_names = {"a", "b"};
    s.pixels = std::move(flat);
    for (int l : labels) s.labels.push_back(static_cast<std::uint8_t>(l));
    return s;
}

double linf(VecView v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double l2(VecView v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// expected values are frozen from an independent cvxpy QP/LP oracle
struct Case2d {
    const char* name;
    std::vector<double> pts;
    std::vector<int> labels;
    std::vector<double> x;
    int y;
    double min_l2;
    double min_linf;
};

const std::vector<Case2d>& cases2d() {
    static std::vector<Case2d> cs = {
        {"pair", {0, 0, 1, 0}, {0, 1}, {0, 0}, 0, 0.5, 0.5},
        {"wedge", {1, 1, 1, -1, 2, 0}, {0, 0, 1}, {0, 0}, 0, 1.0, 1.0},
        // cross-class duplicate: the duplicate anchor can never win a tie
        {"duplicate", {0.3, 0.3, 0.3, 0.3, 0.8, 0.8}, {0, 1, 1}, {0, 0}, 0,
         0.777817459305, 0.55},
        {"corner", {0.05, 0.05, 0.9, 0.9, 0.05, 0.95}, {0, 1, 1}, {0.02, 0.02}, 0,
         0.48, 0.455},
        {"random14",
         {0.897214, 0.775686, 0.225207, 0.300166, 0.873553, 0.005265, 0.821228, 0.797069,
          0.467935, 0.303032, 0.278426, 0.254870, 0.445076, 0.504548, 0.553497, 0.995500,
          0.792662, 0.622179, 0.988960, 0.215309, 0.160212, 0.612540, 0.043942, 0.035680,
          0.514889, 0.466206, 0.917168, 0.629226},
         {1, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1},
         {0.421722, 0.202241}, 0, 0.194538330405, 0.157197945088},
        {"random7a",
         {0.830048, 0.154461, 0.267599, 0.880332, 0.509791, 0.847150, 0.639717, 0.741771,
          0.091496, 0.541144, 0.507772, 0.871339, 0.361264, 0.598184},
         {0, 0, 1, 0, 1, 0, 0}, {0.689803, 0.427668}, 0, 0.329770276706, 0.262435289007},
        {"random7b",
         {0.978748, 0.589992, 0.605056, 0.637997, 0.676450, 0.150788, 0.440313, 0.239564,
          0.402498, 0.096704, 0.967828, 0.215004, 0.671765, 0.300420},
         {0, 1, 0, 1, 1, 0, 1}, {0.766969, 0.742350}, 1, 0.041084358485, 0.036706558410},
    };
    return cs;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("2D minimal perturbations match the QP/LP oracle") {
    for (const auto& c : cases2d()) {
        CAPTURE(c.name);
        LabeledSet train = set2d(c.pts, c.labels);
        NNIndex idx(train);
        MinPerturbation m2 = min_adversarial_l2(idx, c.x, c.y);
        CHECK(m2.converged);
        CHECK(m2.distance == doctest::Approx(c.min_l2).epsilon(1e-5));
        CHECK(m2.lower <= m2.upper + 1e-12);

        MinPerturbation mi = min_adversarial_linf(idx, c.x, c.y);
        CHECK(mi.converged);
        CHECK(mi.distance == doctest::Approx(c.min_linf).epsilon(1e-4));

        // witnesses flip the prediction within the tolerance allowance
        REQUIRE(!m2.witness.empty());
        std::vector<double> z(c.x.size());
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = c.x[k] + m2.witness[k];
        CHECK(idx.predict(z) != c.y);
        CHECK(l2(m2.witness) <= m2.distance * (1 + 1e-5) + 1e-9);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = c.x[k] + mi.witness[k];
        CHECK(idx.predict(z) != c.y);
        CHECK(linf(mi.witness) <= mi.distance * (1 + 1e-4) + 1e-9);
    }
}

TEST_CASE("box constraint never shrinks the distance; matches oracle on corner case") {
    // cvxpy: the corner instance has the same values with and without the box
    const auto& c = cases2d()[3];
    LabeledSet train = set2d(c.pts, c.labels);
    NNIndex idx(train);
    GeometryConfig boxed;
    boxed.box_constrain = true;
    MinPerturbation m2 = min_adversarial_l2(idx, c.x, c.y, boxed);
    CHECK(m2.distance == doctest::Approx(0.48).epsilon(1e-5));
    std::vector<double> z(2);
    for (std::size_t k = 0; k < 2; ++k) {
        z[k] = c.x[k] + m2.witness[k];
        CHECK(z[k] >= -1e-12);
        CHECK(z[k] <= 1 + 1e-12);
    }
    CHECK(idx.predict(z) != c.y);
}

TEST_CASE("784-dim minimal perturbations match the cvxpy oracle (3 vs 5)") {
    const auto& p = nnctest::mini35();
    NNIndex idx(p.train);
    struct Expect {
        std::size_t q;
        double l2_free, l2_box, li;
    };
    // frozen from the 784-dim cvxpy QP/LP oracle on the same subsets
    std::vector<Expect> expected = {
        {0, 0.729272901, 0.876963966, 0.066250599},
        {3, 1.241246545, 1.371548753, 0.098550595},
        {10, 1.424804322, 1.548086601, 0.127923612},
    };
    GeometryConfig boxed;
    boxed.box_constrain = true;
    for (const auto& e : expected) {
        CAPTURE(e.q);
        auto x = p.test.example(e.q);
        int y = p.test.labels[e.q];
        MinPerturbation free2 = min_adversarial_l2(idx, x, y);
        CHECK(free2.converged);
        CHECK(free2.distance == doctest::Approx(e.l2_free).epsilon(5e-5));

        MinPerturbation box2 = min_adversarial_l2(idx, x, y, boxed);
        CHECK(box2.distance == doctest::Approx(e.l2_box).epsilon(5e-5));
        CHECK(box2.distance >= free2.distance - 1e-9);

        MinPerturbation fi = min_adversarial_linf(idx, x, y);
        CHECK(fi.converged);
        CHECK(fi.distance == doctest::Approx(e.li).epsilon(1e-4));

        // flip witnesses verified against the exact index
        std::vector<double> z(x.begin(), x.end());
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += free2.witness[k];
        CHECK(idx.predict(z) != y);
    }
}

TEST_CASE("misclassified query has zero distance and a zero witness") {
    const auto& p = nnctest::mini35();
    NNIndex idx(p.train);
    // query 1 is the one misclassified 3 in the subset
    REQUIRE(idx.predict(p.test.example(1)) != p.test.labels[1]);
    MinPerturbation m = min_adversarial_l2(idx, p.test.example(1), p.test.labels[1]);
    CHECK(m.distance == 0.0);
    CHECK(m.lower == 0.0);
    REQUIRE(m.witness.size() == 784);
    CHECK(l2(m.witness) == 0.0);
}

TEST_CASE("certificate radius lower-bounds the exact distance (sandwich)") {
    const auto& p = nnctest::mini35();
    NNIndex idx(p.train);
    auto ms = idx.margins(p.test);
    for (std::size_t i = 0; i < p.test.size(); ++i) {
        CAPTURE(i);
        auto x = p.test.example(i);
        int y = p.test.labels[i];
        bool ok = idx.predict(x) == y;
        Certificate c = certify(ms[i], idx.dim(), ok);
        MinPerturbation m2 = min_adversarial_l2(idx, x, y);
        MinPerturbation mi = min_adversarial_linf(idx, x, y);
        CHECK(c.radius_l2 <= m2.distance + 1e-9);
        CHECK(c.radius_linf <= mi.distance + 1e-9);
        // ℓ∞ ball of radius r sits inside the ℓ2 ball of radius r√N
        CHECK(mi.distance <= m2.distance + 1e-9);
        CHECK(m2.distance <= mi.distance * 28.0 * (1 + 1e-6) + 1e-9);
        // moving all the way onto the anchor always flips
        if (ok) CHECK(m2.distance <= ms[i].d_other + 1e-9);
    }
}

TEST_CASE("exact robust accuracy: decisions, intervals, and monotonicity") {
    const auto& p = nnctest::mini35();
    NNIndex idx(p.train);

    ExactRAResult r0 = exact_robust_accuracy(idx, p.test, 0.0, Norm::L2);
    CHECK(r0.robust == 17);
    CHECK(r0.undecided == 0);
    CHECK(r0.value() == doctest::Approx(17.0 / 20));

    double prev = 1.0;
    for (double eps : {0.5, 1.0, 2.0, 4.0, 8.4}) {
        CAPTURE(eps);
        ExactRAResult r = exact_robust_accuracy(idx, p.test, eps, Norm::L2);
        CHECK(r.robust + r.non_robust + r.undecided == 20);
        CHECK(r.undecided == 0);  // this small problem resolves fully
        CHECK(r.lower <= r.upper + 1e-12);
        CHECK(r.lower <= prev + 1e-12);
        double cert_ra = certified_robust_accuracy(idx, p.test, eps, Norm::L2);
        CHECK(cert_ra <= r.lower + 1e-12);
        prev = r.lower;
    }

    // the exact decision agrees with the exact distances
    ExactRAResult r2 = exact_robust_accuracy(idx, p.test, 1.0, Norm::L2);
    for (std::size_t i = 0; i < 20; ++i) {
        CAPTURE(i);
        MinPerturbation m = min_adversarial_l2(idx, p.test.example(i), p.test.labels[i]);
        Decision want = m.distance > 1.0 ? Decision::Robust : Decision::NonRobust;
        CHECK(r2.decisions[i] == want);
    }

    ExactRAResult ri = exact_robust_accuracy(idx, p.test, 0.08, Norm::Linf);
    CHECK(ri.robust + ri.non_robust + ri.undecided == 20);
    CHECK(ri.undecided == 0);
    for (std::size_t i = 0; i < 20; ++i) {
        CAPTURE(i);
        MinPerturbation m = min_adversarial_linf(idx, p.test.example(i), p.test.labels[i]);
        Decision want = m.distance > 0.08 ? Decision::Robust : Decision::NonRobust;
        CHECK(ri.decisions[i] == want);
    }
}

TEST_CASE("exact robust accuracy on the train set is total below d0/2") {
    const auto& p = nnctest::mini35();
    NNIndex idx(p.train);
    double d0 = idx.class_distance();
    ExactRAResult r = exact_robust_accuracy(idx, p.train, 0.999 * d0 / 2, Norm::L2);
    CHECK(r.robust == p.train.size());
    CHECK(r.value() == 1.0);
}

TEST_CASE("iteration cap surfaces as non-convergence, never a wrong answer") {
    GeometryConfig strangled;
    strangled.max_sweeps = 1;
    // A capped run must either refuse (NumericError) or still be certified by
    // its own bounds; a silently wrong distance is the one unacceptable mode.
    for (const auto& c : cases2d()) {
        LabeledSet train = set2d(c.pts, c.labels);
        NNIndex idx(train);
        try {
            MinPerturbation m = min_adversarial_l2(idx, c.x, c.y, strangled);
            CHECK(m.distance == doctest::Approx(c.min_l2).epsilon(1e-5));
        } catch (const NumericError&) {
            // honest refusal
        }
        try {
            MinPerturbation m = min_adversarial_linf(idx, c.x, c.y, strangled);
            CHECK(m.distance == doctest::Approx(c.min_linf).epsilon(1e-4));
        } catch (const NumericError&) {
        }
    }

    const auto& c = cases2d()[1];  // wedge: needs the two-constraint projection
    LabeledSet train = set2d(c.pts, c.labels);
    NNIndex idx(train);
    ExactRAResult r = exact_robust_accuracy(idx, train, 1.0, Norm::L2, strangled);
    CHECK(r.lower <= r.upper);  // caps may leave examples undecided but not inconsistent
}

TEST_CASE("witness histogram covers every pixel of every example") {
    const auto& p = nnctest::mini35();
    NNIndex idx(p.train);
    LabeledSet six;
    six.dims = p.test.dims;
    six.class_names = p.test.class_names;
    six.pixels.assign(p.test.pixels.begin(), p.test.pixels.begin() + 6 * 784);
    six.labels.assign(p.test.labels.begin(), p.test.labels.begin() + 6);

    PixelHistogram h = attack_1nn_witness_stats(idx, six, Norm::L2);
    CHECK(h.total == 6 * 784);
    std::uint64_t sum = std::accumulate(h.counts.begin(), h.counts.end(), std::uint64_t{0});
    CHECK(sum == h.total);
    CHECK(h.counts[0] > 0);  // untouched pixels dominate sparse witnesses
    CHECK(h.counts.size() <= 257);  // box-constrained deltas stay within [0,1]

    std::string csv = histogram_csv(h);
    CHECK(csv.rfind("bin_lower,count\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(h.counts.size()) + 1);
}

}  // TEST_SUITE
