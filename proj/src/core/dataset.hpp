#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace nnc {

// Flat image set: `pixels` holds count*dim() doubles in [0,1], row-major per
// example; immutable by convention once built (loaders return by value).
struct LabeledSet {
    std::array<std::uint32_t, 3> dims{0, 0, 0};  // channels, height, width
    std::vector<double> pixels;
    std::vector<std::uint8_t> labels;
    std::vector<std::string> class_names;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    VecView example(std::size_t i) const { return VecView(pixels).subspan(i * dim(), dim()); }
    std::size_t class_count() const { return class_names.size(); }

    void validate() const;  // throws on violated invariants
};

struct BinaryProblem {
    int class_a = 0;  // original class ids; labels in train/test are remapped to {0,1}
    int class_b = 1;
    std::string name;  // e.g. "dog_vs_frog", lexicographic by class name
    LabeledSet train;
    LabeledSet test;
};

// Lightweight class-pair descriptor; problems can be materialized one at a
// time to keep peak memory at one pair's worth.
struct ClassPair {
    int class_a;
    int class_b;
    std::string name;
};

// IDX (MNIST/Fashion-MNIST distribution format). Gzipped files are accepted
// and inflated transparently. Pixel bytes are scaled by 1/255.
LabeledSet load_idx(const std::string& images_path, const std::string& labels_path,
                    std::vector<std::string> class_names = {});

// Writes images+labels as IDX (ubyte, quantized by round(p*255)).
void save_idx(const LabeledSet& set, const std::string& images_path,
              const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records, channel-planar RGB.
LabeledSet load_cifar10_bin(const std::vector<std::string>& paths,
                            std::vector<std::string> class_names = {});

// Canonical dump: little-endian {magic "NNC1", u32 count, u32 dims[3]},
// f32 pixels, u8 labels.
void save_canonical(const LabeledSet& set, const std::string& path);
LabeledSet load_canonical(const std::string& path, std::vector<std::string> class_names = {});

std::vector<ClassPair> enumerate_class_pairs(const LabeledSet& set);

BinaryProblem make_binary_problem(const LabeledSet& train, const LabeledSet& test,
                                  const ClassPair& pair,
                                  std::optional<std::size_t> test_cap, std::uint64_t seed);

// All C(k,2) pair problems, materialized. Prefer enumerate + make for large sets.
std::vector<BinaryProblem> make_binary_problems(const LabeledSet& train, const LabeledSet& test,
                                                std::optional<std::size_t> test_cap,
                                                std::uint64_t seed);

// Deterministic class-stratified subsample of n examples (original order kept).
LabeledSet subsample(const LabeledSet& set, std::size_t n, std::uint64_t seed);

// Keeps examples whose label passes `keep`; labels optionally remapped.
LabeledSet filter_classes(const LabeledSet& set, int class_a, int class_b);

const std::vector<std::string>& cifar10_class_names();
std::vector<std::string> digit_class_names();

}  // namespace nnc
