#include "dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "rng.hpp"

namespace nnc {

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return data;
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 16) != Z_OK) throw DataError("zlib init failed");
    std::vector<std::uint8_t> out;
    out.reserve(in.size() * 4);
    std::uint8_t buf[1 << 16];
    zs.next_in = const_cast<std::uint8_t*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf;
        zs.avail_out = sizeof(buf);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw DataError("gzip inflate failed");
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
}

// Reads a file, transparently inflating gzip payloads.
std::vector<std::uint8_t> read_maybe_gz(const std::string& path) {
    auto data = read_bytes(path);
    if (data.size() >= 2 && data[0] == 0x1f && data[1] == 0x8b) return gunzip(data);
    return data;
}

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void put_be32(std::string& out, std::uint32_t v) {
    out.push_back(char((v >> 24) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char(v & 0xff));
}

void put_le32(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

std::uint32_t le32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

void LabeledSet::validate() const {
    if (labels.empty()) throw DataError("labeled set is empty");
    if (pixels.size() != labels.size() * dim())
        throw DataError("pixel buffer does not match count * dims");
    for (double p : pixels)
        if (!(p >= 0.0 && p <= 1.0)) throw DataError("pixel intensity outside [0,1]");
    for (std::uint8_t l : labels)
        if (l >= class_names.size()) throw DataError("label exceeds class count");
}

LabeledSet load_idx(const std::string& images_path, const std::string& labels_path,
                    std::vector<std::string> class_names) {
    auto img = read_maybe_gz(images_path);
    auto lbl = read_maybe_gz(labels_path);
    if (img.size() < 16) throw FormatError("truncated IDX image file: " + images_path);
    if (lbl.size() < 8) throw FormatError("truncated IDX label file: " + labels_path);
    if (be32(img.data()) != kIdxImagesMagic)
        throw FormatError("bad IDX image magic in " + images_path);
    if (be32(lbl.data()) != kIdxLabelsMagic)
        throw FormatError("bad IDX label magic in " + labels_path);
    std::uint32_t n_img = be32(img.data() + 4);
    std::uint32_t rows = be32(img.data() + 8);
    std::uint32_t cols = be32(img.data() + 12);
    std::uint32_t n_lbl = be32(lbl.data() + 4);
    if (n_img != n_lbl) throw FormatError("IDX image/label counts differ");
    std::size_t n = n_img, dim = std::size_t(rows) * cols;
    if (img.size() < 16 + n * dim) throw FormatError("truncated IDX image payload: " + images_path);
    if (lbl.size() < 8 + n) throw FormatError("truncated IDX label payload: " + labels_path);

    LabeledSet set;
    set.dims = {1, rows, cols};
    set.pixels.resize(n * dim);
    set.labels.resize(n);
    for (std::size_t i = 0; i < n * dim; ++i) set.pixels[i] = img[16 + i] / 255.0;
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        set.labels[i] = lbl[8 + i];
        max_label = std::max(max_label, int(set.labels[i]));
    }
    set.class_names = class_names.empty() ? digit_class_names() : std::move(class_names);
    if (max_label >= int(set.class_names.size()))
        throw FormatError("IDX label exceeds class-name count");
    return set;
}

void save_idx(const LabeledSet& set, const std::string& images_path,
              const std::string& labels_path) {
    std::string img, lbl;
    put_be32(img, kIdxImagesMagic);
    put_be32(img, std::uint32_t(set.size()));
    put_be32(img, set.dims[1]);
    put_be32(img, set.dims[2]);
    for (double p : set.pixels) {
        long q = std::lround(std::clamp(p, 0.0, 1.0) * 255.0);
        img.push_back(char(std::uint8_t(q)));
    }
    put_be32(lbl, kIdxLabelsMagic);
    put_be32(lbl, std::uint32_t(set.size()));
    for (std::uint8_t l : set.labels) lbl.push_back(char(l));
    write_file_atomic(images_path, img);
    write_file_atomic(labels_path, lbl);
}

LabeledSet load_cifar10_bin(const std::vector<std::string>& paths,
                            std::vector<std::string> class_names) {
    constexpr std::size_t kRecord = 3073;  // label byte + 3*32*32 pixels
    LabeledSet set;
    set.dims = {3, 32, 32};
    for (const auto& path : paths) {
        auto data = read_maybe_gz(path);
        if (data.empty() || data.size() % kRecord != 0)
            throw FormatError("CIFAR-10 batch size not a multiple of 3073: " + path);
        std::size_t n = data.size() / kRecord;
        for (std::size_t r = 0; r < n; ++r) {
            const std::uint8_t* rec = data.data() + r * kRecord;
            if (rec[0] > 9) throw FormatError("CIFAR-10 label out of range in " + path);
            set.labels.push_back(rec[0]);
            for (std::size_t i = 0; i < kRecord - 1; ++i) set.pixels.push_back(rec[1 + i] / 255.0);
        }
    }
    if (set.labels.empty()) throw DataError("no CIFAR-10 records loaded");
    set.class_names = class_names.empty() ? cifar10_class_names() : std::move(class_names);
    return set;
}

void save_canonical(const LabeledSet& set, const std::string& path) {
    std::string out;
    out += "NNC1";
    put_le32(out, std::uint32_t(set.size()));
    for (int d = 0; d < 3; ++d) put_le32(out, set.dims[d]);
    for (double p : set.pixels) {
        float f = float(p);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_le32(out, bits);
    }
    for (std::uint8_t l : set.labels) out.push_back(char(l));
    write_file_atomic(path, out);
}

LabeledSet load_canonical(const std::string& path, std::vector<std::string> class_names) {
    auto data = read_bytes(path);
    if (data.size() < 20) throw FormatError("truncated canonical file: " + path);
    if (std::memcmp(data.data(), "NNC1", 4) != 0)
        throw FormatError("bad canonical magic in " + path);
    std::uint32_t count = le32(data.data() + 4);
    LabeledSet set;
    for (int d = 0; d < 3; ++d) set.dims[d] = le32(data.data() + 8 + 4 * d);
    std::size_t dim = set.dim();
    std::size_t need = 20 + std::size_t(count) * dim * 4 + count;
    if (data.size() < need) throw FormatError("truncated canonical payload: " + path);
    set.pixels.resize(std::size_t(count) * dim);
    for (std::size_t i = 0; i < set.pixels.size(); ++i) {
        std::uint32_t bits = le32(data.data() + 20 + i * 4);
        float f;
        std::memcpy(&f, &bits, 4);
        set.pixels[i] = f;
    }
    set.labels.assign(data.begin() + 20 + set.pixels.size() * 4,
                      data.begin() + 20 + set.pixels.size() * 4 + count);
    int max_label = 0;
    for (auto l : set.labels) max_label = std::max(max_label, int(l));
    if (class_names.empty()) {
        for (int c = 0; c <= max_label; ++c) class_names.push_back("class" + std::to_string(c));
    }
    set.class_names = std::move(class_names);
    return set;
}

std::vector<ClassPair> enumerate_class_pairs(const LabeledSet& set) {
    std::vector<std::size_t> counts(set.class_count(), 0);
    for (auto l : set.labels) counts[l]++;
    int k = int(set.class_count());
    if (k < 2) throw ConfigError("need at least two classes");
    std::vector<ClassPair> pairs;
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            if (counts[i] == 0 || counts[j] == 0)
                throw ConfigError("class with zero examples: " +
                                  set.class_names[counts[i] == 0 ? i : j]);
            const std::string &ni = set.class_names[i], &nj = set.class_names[j];
            std::string name = std::min(ni, nj) + "_vs_" + std::max(ni, nj);
            pairs.push_back({i, j, name});
        }
    }
    return pairs;
}

LabeledSet filter_classes(const LabeledSet& set, int class_a, int class_b) {
    LabeledSet out;
    out.dims = set.dims;
    out.class_names = {set.class_names[class_a], set.class_names[class_b]};
    std::size_t dim = set.dim();
    for (std::size_t i = 0; i < set.size(); ++i) {
        int l = set.labels[i];
        if (l != class_a && l != class_b) continue;
        auto px = set.example(i);
        out.pixels.insert(out.pixels.end(), px.begin(), px.end());
        out.labels.push_back(l == class_a ? 0 : 1);
    }
    if (out.labels.empty()) throw ConfigError("binary filter produced empty set");
    (void)dim;
    return out;
}

BinaryProblem make_binary_problem(const LabeledSet& train, const LabeledSet& test,
                                  const ClassPair& pair,
                                  std::optional<std::size_t> test_cap, std::uint64_t seed) {
    BinaryProblem p;
    p.class_a = pair.class_a;
    p.class_b = pair.class_b;
    p.name = pair.name;
    p.train = filter_classes(train, pair.class_a, pair.class_b);
    p.test = filter_classes(test, pair.class_a, pair.class_b);
    if (test_cap && *test_cap < p.test.size()) {
        std::uint64_t sub = mix_seed(seed, std::uint64_t(pair.class_a) << 8 | pair.class_b);
        p.test = subsample(p.test, *test_cap, sub);
    }
    return p;
}

std::vector<BinaryProblem> make_binary_problems(const LabeledSet& train, const LabeledSet& test,
                                                std::optional<std::size_t> test_cap,
                                                std::uint64_t seed) {
    std::vector<BinaryProblem> out;
    for (const auto& pair : enumerate_class_pairs(train))
        out.push_back(make_binary_problem(train, test, pair, test_cap, seed));
    return out;
}

LabeledSet subsample(const LabeledSet& set, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw UsageError("subsample of size zero");
    if (n >= set.size()) return set;  // a cap at or above the split is a no-op

    // Proportional per-class quotas (largest remainder), then a seeded
    // Fisher-Yates pick inside each class; original example order is kept.
    std::size_t k = set.class_count();
    std::vector<std::vector<std::uint32_t>> by_class(k);
    for (std::size_t i = 0; i < set.size(); ++i)
        by_class[set.labels[i]].push_back(std::uint32_t(i));

    std::vector<std::size_t> quota(k, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
        double exact = double(n) * double(by_class[c].size()) / double(set.size());
        quota[c] = std::min<std::size_t>(std::size_t(exact), by_class[c].size());
        assigned += quota[c];
        remainders.push_back({exact - double(quota[c]), c});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < n; r = (r + 1) % remainders.size()) {
        std::size_t c = remainders[r].second;
        if (quota[c] < by_class[c].size()) {
            quota[c]++;
            assigned++;
        }
    }

    std::vector<std::uint32_t> chosen;
    for (std::size_t c = 0; c < k; ++c) {
        auto ids = by_class[c];
        Rng rng(mix_seed(seed, c));
        rng.shuffle(ids);
        ids.resize(quota[c]);
        chosen.insert(chosen.end(), ids.begin(), ids.end());
    }
    std::sort(chosen.begin(), chosen.end());

    LabeledSet out;
    out.dims = set.dims;
    out.class_names = set.class_names;
    for (auto i : chosen) {
        auto px = set.example(i);
        out.pixels.insert(out.pixels.end(), px.begin(), px.end());
        out.labels.push_back(set.labels[i]);
    }
    return out;
}

const std::vector<std::string>& cifar10_class_names() {
    static const std::vector<std::string> names = {"airplane", "automobile", "bird",  "cat",
                                                   "deer",     "dog",        "frog",  "horse",
                                                   "ship",     "truck"};
    return names;
}

std::vector<std::string> digit_class_names() {
    return {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
}

}  // namespace nnc
