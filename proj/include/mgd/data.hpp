#ifndef MGD_DATA_HPP
#define MGD_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "mgd/network.hpp"
#include "mgd/tensor.hpp"

namespace mgd {

struct IdxMagicError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IdxTruncatedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IdxCountMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Image classification dataset; pixel values scaled to [0, 1].
struct Dataset {
    std::vector<std::vector<double>> images;
    std::vector<int> labels;
    int rows = 28, cols = 28;
    std::vector<int> classes;  // distinct labels admitted

    std::size_t size() const { return images.size(); }
};

namespace detail {

/// Reads the whole file, transparently inflating gzip content.
inline std::vector<unsigned char> read_file(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("read error in " + path);
    return out;
}

inline std::uint32_t be32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void put_be32(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Loads an IDX image/label file pair (magic 0x00000803 / 0x00000801,
/// big-endian). Gzip-compressed files are accepted.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::vector<unsigned char> img = detail::read_file(images_path);
    std::vector<unsigned char> lab = detail::read_file(labels_path);
    if (img.size() < 16) throw IdxTruncatedError("images file too short: " + images_path);
    if (lab.size() < 8) throw IdxTruncatedError("labels file too short: " + labels_path);
    if (detail::be32(img.data()) != 0x00000803u)
        throw IdxMagicError("bad image magic in " + images_path);
    if (detail::be32(lab.data()) != 0x00000801u)
        throw IdxMagicError("bad label magic in " + labels_path);
    const std::uint32_t n_img = detail::be32(img.data() + 4);
    const int rows = static_cast<int>(detail::be32(img.data() + 8));
    const int cols = static_cast<int>(detail::be32(img.data() + 12));
    const std::uint32_t n_lab = detail::be32(lab.data() + 4);
    if (n_img != n_lab)
        throw IdxCountMismatchError("image/label count mismatch: " + std::to_string(n_img) +
                                    " vs " + std::to_string(n_lab));
    const std::size_t px = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (img.size() != 16 + px * n_img)
        throw IdxTruncatedError("truncated image payload in " + images_path);
    if (lab.size() != 8 + static_cast<std::size_t>(n_lab))
        throw IdxTruncatedError("truncated label payload in " + labels_path);

    Dataset ds;
    ds.rows = rows;
    ds.cols = cols;
    ds.images.reserve(n_img);
    ds.labels.reserve(n_img);
    std::vector<bool> seen(256, false);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        std::vector<double> v(px);
        const unsigned char* p = img.data() + 16 + static_cast<std::size_t>(i) * px;
        for (std::size_t j = 0; j < px; ++j) v[j] = p[j] / 255.0;
        ds.images.push_back(std::move(v));
        int label = lab[8 + i];
        ds.labels.push_back(label);
        seen[static_cast<std::size_t>(label)] = true;
    }
    for (int c = 0; c < 256; ++c)
        if (seen[static_cast<std::size_t>(c)]) ds.classes.push_back(c);
    return ds;
}

/// Writes the dataset as a plain (uncompressed) IDX file pair.
inline void write_idx(const Dataset& ds, const std::string& images_path,
                      const std::string& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw std::runtime_error("cannot open output files");
    detail::put_be32(img, 0x00000803u);
    detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
    detail::put_be32(img, static_cast<std::uint32_t>(ds.rows));
    detail::put_be32(img, static_cast<std::uint32_t>(ds.cols));
    for (const auto& im : ds.images)
        for (double v : im) {
            unsigned char b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            img.write(reinterpret_cast<const char*>(&b), 1);
        }
    detail::put_be32(lab, 0x00000801u);
    detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) {
        unsigned char b = static_cast<unsigned char>(l);
        lab.write(reinterpret_cast<const char*>(&b), 1);
    }
}

/// Keeps only items with original label < k. Labels are already in [0, k).
inline Dataset subset_classes(const Dataset& ds, int k) {
    if (k != 2 && k != 4 && k != 6 && k != 8 && k != 10)
        throw std::invalid_argument("subset_classes: k must be one of {2,4,6,8,10}");
    Dataset out;
    out.rows = ds.rows;
    out.cols = ds.cols;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] < k) {
            out.images.push_back(ds.images[i]);
            out.labels.push_back(ds.labels[i]);
        }
    }
    for (int c : ds.classes)
        if (c < k) out.classes.push_back(c);
    return out;
}

/// Seeded permutation of the items.
inline Dataset shuffle_dataset(const Dataset& ds, std::uint64_t seed) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    Dataset out;
    out.rows = ds.rows;
    out.cols = ds.cols;
    out.classes = ds.classes;
    for (std::size_t i : idx) {
        out.images.push_back(ds.images[i]);
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

inline Sample dataset_sample(const Dataset& ds, std::size_t i) {
    Sample s;
    s.input = Tensor({ds.rows, ds.cols, 1}, ds.images.at(i));
    s.label = ds.labels.at(i);
    return s;
}

inline Batch dataset_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
    Batch b;
    b.reserve(indices.size());
    for (std::size_t i : indices) b.push_back(dataset_sample(ds, i));
    return b;
}

/// Fraction of items whose argmax output matches the label.
inline double accuracy(const NetworkModel& net, const Dataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Tensor y = net.forward(Tensor({ds.rows, ds.cols, 1}, ds.images[i]));
        std::size_t am = static_cast<std::size_t>(
            std::max_element(y.values.begin(), y.values.end()) - y.values.begin());
        if (static_cast<int>(am) == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Exactly linear cost C(Theta) = g . Theta, the regime where the
/// estimator moments are exact.
struct LinearTask {
    std::vector<double> gradient;

    double cost(const std::vector<double>& theta) const { return dot(gradient, theta); }
};

inline LinearTask make_linear_task(std::vector<double> gradient) {
    if (gradient.empty()) throw std::invalid_argument("make_linear_task: empty gradient");
    return LinearTask{std::move(gradient)};
}

inline LinearTask make_linear_task_zero(std::size_t k) {
    return make_linear_task(std::vector<double>(k, 0.0));
}

inline LinearTask make_linear_task_basis(std::size_t k, std::size_t axis) {
    std::vector<double> g(k, 0.0);
    g.at(axis) = 1.0;
    return make_linear_task(std::move(g));
}

inline LinearTask make_linear_task_random(std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> g(k);
    for (double& v : g) v = dist(rng);
    return make_linear_task(std::move(g));
}

/// Deterministic stand-in image task: each class is a distinct smooth
/// 28x28 interference pattern plus pixel noise, quantized to bytes so a
/// round trip through IDX files is exact.
inline Dataset make_synthetic_dataset(int num_classes, int per_class, std::uint64_t seed,
                                      double noise = 0.08) {
    if (num_classes < 2 || num_classes > 10)
        throw std::invalid_argument("make_synthetic_dataset: num_classes must be in [2, 10]");
    if (per_class < 1) throw std::invalid_argument("make_synthetic_dataset: per_class must be >= 1");
    const int R = 28, C = 28;
    Dataset ds;
    ds.rows = R;
    ds.cols = C;
    std::mt19937_64 rng(seed);
    std::vector<std::vector<double>> templates;
    for (int c = 0; c < num_classes; ++c) {
        std::uniform_real_distribution<double> phase(0.0, 6.28318530717958647692);
        double fy = 1.0 + 0.5 * c;
        double fx = 1.0 + 0.5 * ((c + num_classes / 2) % num_classes);
        double ph = phase(rng);
        std::vector<double> t(static_cast<std::size_t>(R) * C);
        for (int y = 0; y < R; ++y)
            for (int x = 0; x < C; ++x)
                t[static_cast<std::size_t>(y) * C + x] =
                    0.5 + 0.45 * std::cos(6.28318530717958647692 * (fy * y / R + fx * x / C) + ph);
        templates.push_back(std::move(t));
        ds.classes.push_back(c);
    }
    std::normal_distribution<double> jitter(0.0, noise);
    for (int i = 0; i < per_class; ++i)
        for (int c = 0; c < num_classes; ++c) {
            std::vector<double> img(templates[static_cast<std::size_t>(c)]);
            for (double& v : img) {
                v = std::clamp(v + jitter(rng), 0.0, 1.0);
                v = std::lround(v * 255.0) / 255.0;  // byte-quantized, IDX-exact
            }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(c);
        }
    return ds;
}

}  // namespace mgd

#endif
