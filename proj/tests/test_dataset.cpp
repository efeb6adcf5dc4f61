#include <doctest.h>
#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dataset.hpp"

using namespace nnc;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "nnc_dataset_tests";
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

// 2 images of 2x3 pixels with recognizable byte values
std::vector<std::uint8_t> tiny_idx_images() {
    std::vector<std::uint8_t> v;
    push_be32(v, 0x803);
    push_be32(v, 2);
    push_be32(v, 2);
    push_be32(v, 3);
    for (std::uint8_t b : {0, 51, 102, 153, 204, 255, 255, 204, 153, 102, 51, 0})
        v.push_back(b);
    return v;
}

std::vector<std::uint8_t> tiny_idx_labels() {
    std::vector<std::uint8_t> v;
    push_be32(v, 0x801);
    push_be32(v, 2);
    v.push_back(0);
    v.push_back(1);
    return v;
}

// Small synthetic multi-class set: `per_class` examples per class, constant
// pixel value i/255 for the i-th example overall.
LabeledSet synthetic_set(int classes, int per_class, std::uint32_t side = 2) {
    LabeledSet s;
    s.dims = {1, side, side};
    for (int c = 0; c < classes; ++c) s.class_names.push_back("c" + std::to_string(c));
    int i = 0;
    for (int r = 0; r < per_class; ++r) {
        for (int c = 0; c < classes; ++c, ++i) {
            for (std::size_t k = 0; k < s.dim(); ++k)
                s.pixels.push_back((i % 256) / 255.0);
            s.labels.push_back(static_cast<std::uint8_t>(c));
        }
    }
    s.validate();
    return s;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("idx loader parses big-endian headers and scales bytes") {
    auto img = tmp_dir() / "tiny-images-idx3-ubyte";
    auto lbl = tmp_dir() / "tiny-labels-idx1-ubyte";
    write_bytes(img, tiny_idx_images());
    write_bytes(lbl, tiny_idx_labels());

    LabeledSet s = load_idx(img.string(), lbl.string());
    REQUIRE(s.size() == 2);
    CHECK(s.dims == std::array<std::uint32_t, 3>{1, 2, 3});
    CHECK(s.dim() == 6);
    CHECK(s.labels[0] == 0);
    CHECK(s.labels[1] == 1);
    CHECK(s.pixels[0] == doctest::Approx(0.0));
    CHECK(s.pixels[1] == doctest::Approx(51.0 / 255.0));
    CHECK(s.pixels[5] == doctest::Approx(1.0));
    CHECK(s.example(1)[0] == doctest::Approx(1.0));
}

TEST_CASE("idx loader inflates gzipped files transparently") {
    auto raw = tiny_idx_images();
    auto img = tmp_dir() / "tiny-images-idx3-ubyte.gz";
    gzFile gz = gzopen(img.string().c_str(), "wb");
    REQUIRE(gz != nullptr);
    REQUIRE(gzwrite(gz, raw.data(), static_cast<unsigned>(raw.size())) ==
            static_cast<int>(raw.size()));
    gzclose(gz);
    auto lbl = tmp_dir() / "tiny-labels2-idx1-ubyte";
    write_bytes(lbl, tiny_idx_labels());

    LabeledSet s = load_idx(img.string(), lbl.string());
    REQUIRE(s.size() == 2);
    CHECK(s.pixels[4] == doctest::Approx(204.0 / 255.0));
}

TEST_CASE("idx loader rejects malformed files") {
    auto lbl = tmp_dir() / "ok-labels-idx1-ubyte";
    write_bytes(lbl, tiny_idx_labels());

    SUBCASE("bad magic") {
        auto bad = tiny_idx_images();
        bad[3] = 0x99;
        auto p = tmp_dir() / "badmagic";
        write_bytes(p, bad);
        CHECK_THROWS_AS(load_idx(p.string(), lbl.string()), FormatError);
    }
    SUBCASE("truncated pixel payload") {
        auto bad = tiny_idx_images();
        bad.pop_back();
        auto p = tmp_dir() / "short";
        write_bytes(p, bad);
        CHECK_THROWS_AS(load_idx(p.string(), lbl.string()), FormatError);
    }
    SUBCASE("image/label count mismatch") {
        auto img = tmp_dir() / "ok-images-idx3-ubyte";
        write_bytes(img, tiny_idx_images());
        auto bad = tiny_idx_labels();
        bad[7] = 3;  // claims 3 labels
        bad.push_back(1);
        auto p = tmp_dir() / "mismatch";
        write_bytes(p, bad);
        CHECK_THROWS_AS(load_idx(img.string(), p.string()), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_idx((tmp_dir() / "nope").string(), lbl.string()), DataError);
    }
}

TEST_CASE("idx save/load round-trips 1/255-quantized pixels exactly") {
    LabeledSet s = synthetic_set(3, 4);
    auto img = tmp_dir() / "rt-images-idx3-ubyte";
    auto lbl = tmp_dir() / "rt-labels-idx1-ubyte";
    save_idx(s, img.string(), lbl.string());
    LabeledSet r = load_idx(img.string(), lbl.string());
    REQUIRE(r.size() == s.size());
    CHECK(r.pixels == s.pixels);  // values are k/255, exact through the quantizer
    CHECK(r.labels == s.labels);
}

TEST_CASE("cifar10 binary batches parse channel-planar records") {
    // two records: label byte + 3072 pixel bytes
    std::vector<std::uint8_t> blob;
    for (int rec = 0; rec < 2; ++rec) {
        blob.push_back(static_cast<std::uint8_t>(rec == 0 ? 6 : 9));
        for (int k = 0; k < 3072; ++k)
            blob.push_back(static_cast<std::uint8_t>((k + rec) % 256));
    }
    auto p = tmp_dir() / "batch.bin";
    write_bytes(p, blob);

    LabeledSet s = load_cifar10_bin({p.string()}, cifar10_class_names());
    REQUIRE(s.size() == 2);
    CHECK(s.dims == std::array<std::uint32_t, 3>{3, 32, 32});
    CHECK(s.labels[0] == 6);
    CHECK(s.labels[1] == 9);
    CHECK(s.pixels[0] == doctest::Approx(0.0));
    CHECK(s.pixels[255] == doctest::Approx(1.0));
    CHECK(s.class_names[6] == "frog");

    SUBCASE("label out of range rejected") {
        blob[0] = 10;
        auto bad = tmp_dir() / "badlabel.bin";
        write_bytes(bad, blob);
        CHECK_THROWS_AS(load_cifar10_bin({bad.string()}, cifar10_class_names()), FormatError);
    }
    SUBCASE("trailing garbage rejected") {
        blob.push_back(0);
        auto bad = tmp_dir() / "trailing.bin";
        write_bytes(bad, blob);
        CHECK_THROWS_AS(load_cifar10_bin({bad.string()}, cifar10_class_names()), FormatError);
    }
}

TEST_CASE("canonical dump round-trips within f32 precision") {
    LabeledSet s = synthetic_set(2, 5, 3);
    auto p = tmp_dir() / "set.nnc";
    save_canonical(s, p.string());
    LabeledSet r = load_canonical(p.string(), s.class_names);
    REQUIRE(r.size() == s.size());
    CHECK(r.dims == s.dims);
    CHECK(r.labels == s.labels);
    for (std::size_t i = 0; i < s.pixels.size(); ++i)
        CHECK(r.pixels[i] == doctest::Approx(s.pixels[i]).epsilon(1e-7));

    SUBCASE("bad magic rejected") {
        std::string bytes = read_file(p.string());
        bytes[0] = 'X';
        auto bad = tmp_dir() / "bad.nnc";
        write_file_atomic(bad.string(), bytes);
        CHECK_THROWS_AS(load_canonical(bad.string(), s.class_names), FormatError);
    }
}

TEST_CASE("real MNIST test split loads with known header and content") {
    std::string dir = std::string(NNC_TEST_DATA_DIR) + "/mnist";
    LabeledSet s = load_idx(dir + "/t10k-images-idx3-ubyte.gz",
                            dir + "/t10k-labels-idx1-ubyte.gz", digit_class_names());
    REQUIRE(s.size() == 10000);
    CHECK(s.dims == std::array<std::uint32_t, 3>{1, 28, 28});
    // first eight labels of the canonical distribution
    std::vector<std::uint8_t> head(s.labels.begin(), s.labels.begin() + 8);
    CHECK(head == std::vector<std::uint8_t>{7, 2, 1, 0, 4, 1, 4, 9});
    double mean = 0.0;
    for (double v : s.example(0)) mean += v;
    mean /= static_cast<double>(s.dim());
    CHECK(mean == doctest::Approx(0.092306922769).epsilon(1e-9));  // NumPy oracle
    double lo = 1.0, hi = 0.0;
    for (double v : s.pixels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
}

TEST_CASE("class pair enumeration yields C(k,2) named pairs") {
    LabeledSet s = synthetic_set(10, 2);
    auto pairs = enumerate_class_pairs(s);
    REQUIRE(pairs.size() == 45);
    CHECK(pairs.front().name == "c0_vs_c1");
    CHECK(pairs.back().name == "c8_vs_c9");
    std::set<std::string> names;
    for (const auto& p : pairs) {
        CHECK(p.class_a < p.class_b);
        names.insert(p.name);
    }
    CHECK(names.size() == 45);

    SUBCASE("empty class rejected") {
        LabeledSet t = synthetic_set(3, 2);
        t.class_names.push_back("ghost");  // class 3 has no examples
        CHECK_THROWS_AS(enumerate_class_pairs(t), ConfigError);
    }
}

TEST_CASE("filter_classes keeps order and remaps labels to {0,1}") {
    LabeledSet s = synthetic_set(5, 3);
    LabeledSet f = filter_classes(s, 1, 4);
    REQUIRE(f.size() == 6);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK((f.labels[i] == 0 || f.labels[i] == 1));
    // original interleaving 0,1,2,3,4,0,1,... keeps class-1 before class-4 per round
    CHECK(f.labels[0] == 0);
    CHECK(f.labels[1] == 1);
    CHECK(f.class_names == std::vector<std::string>{"c1", "c4"});
    // pixel payload follows the selected examples
    CHECK(f.example(0)[0] == doctest::Approx(1.0 / 255.0));
    CHECK(f.example(1)[0] == doctest::Approx(4.0 / 255.0));
}

TEST_CASE("subsample is stratified, order-preserving, and seed-deterministic") {
    LabeledSet s = synthetic_set(2, 50);
    LabeledSet a = subsample(s, 30, 17);
    LabeledSet b = subsample(s, 30, 17);
    LabeledSet c = subsample(s, 30, 18);
    REQUIRE(a.size() == 30);
    CHECK(a.pixels == b.pixels);
    CHECK(a.labels == b.labels);
    CHECK(a.pixels != c.pixels);

    std::size_t n0 = 0;
    for (auto l : a.labels) n0 += (l == 0);
    CHECK(n0 == 15);  // balanced classes split evenly

    // original order preserved: overall example id is recoverable from pixel 0
    double prev = -1.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double id = a.example(i)[0] * 255.0;
        CHECK(id > prev);
        prev = id;
    }

    SUBCASE("n >= size returns everything") {
        LabeledSet all = subsample(s, 1000, 3);
        CHECK(all.size() == s.size());
        CHECK(all.pixels == s.pixels);
    }
}

TEST_CASE("make_binary_problem remaps labels and caps the test split") {
    LabeledSet train = synthetic_set(3, 8);
    LabeledSet test = synthetic_set(3, 6);
    ClassPair pair{0, 2, "c0_vs_c2"};
    BinaryProblem p = make_binary_problem(train, test, pair, 8, 5);
    CHECK(p.name == "c0_vs_c2");
    CHECK(p.train.size() == 16);
    CHECK(p.test.size() == 8);
    for (auto l : p.train.labels) CHECK((l == 0 || l == 1));
    BinaryProblem q = make_binary_problem(train, test, pair, 8, 5);
    CHECK(p.test.pixels == q.test.pixels);  // cap subsample is seed-stable
    BinaryProblem r = make_binary_problem(train, test, pair, std::nullopt, 5);
    CHECK(r.test.size() == 12);
}

}  // TEST_SUITE
