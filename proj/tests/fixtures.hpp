#pragma once

// Shared test fixtures: real MNIST splits (loaded once) and a small 3-vs-5
// problem used by the knn and geometry suites. The 3-vs-5 construction
// (first 40 train images per class, first 10 test images per class, scan
// order) matches the independent NumPy/cvxpy oracle that produced the frozen
// expected values.

#include <string>

#include "dataset.hpp"

namespace nnctest {

inline const nnc::LabeledSet& mnist_train() {
    static nnc::LabeledSet s = [] {
        std::string dir = std::string(NNC_TEST_DATA_DIR) + "/mnist";
        return nnc::load_idx(dir + "/train-images-idx3-ubyte.gz",
                             dir + "/train-labels-idx1-ubyte.gz", nnc::digit_class_names());
    }();
    return s;
}

inline const nnc::LabeledSet& mnist_test() {
    static nnc::LabeledSet s = [] {
        std::string dir = std::string(NNC_TEST_DATA_DIR) + "/mnist";
        return nnc::load_idx(dir + "/t10k-images-idx3-ubyte.gz",
                             dir + "/t10k-labels-idx1-ubyte.gz", nnc::digit_class_names());
    }();
    return s;
}

// First `per_class` examples of each class in scan order, labels remapped
// class_a -> 0, class_b -> 1.
inline nnc::LabeledSet take_per_class(const nnc::LabeledSet& src, int class_a, int class_b,
                                      std::size_t per_class) {
    nnc::LabeledSet out;
    out.dims = src.dims;
    out.class_names = {src.class_names[static_cast<std::size_t>(class_a)],
                       src.class_names[static_cast<std::size_t>(class_b)]};
    std::size_t na = 0, nb = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        int l = src.labels[i];
        if (l != class_a && l != class_b) continue;
        std::size_t& n = (l == class_a) ? na : nb;
        if (n >= per_class) continue;
        ++n;
        auto ex = src.example(i);
        out.pixels.insert(out.pixels.end(), ex.begin(), ex.end());
        out.labels.push_back(l == class_a ? 0 : 1);
    }
    out.validate();
    return out;
}

// 3-vs-5: 40 train images per class, 10 test per class.
inline const nnc::BinaryProblem& mini35() {
    static nnc::BinaryProblem p = [] {
        nnc::BinaryProblem prob;
        prob.class_a = 3;
        prob.class_b = 5;
        prob.name = "3_vs_5";
        prob.train = take_per_class(mnist_train(), 3, 5, 40);
        prob.test = take_per_class(mnist_test(), 3, 5, 10);
        return prob;
    }();
    return p;
}

}  // namespace nnctest
