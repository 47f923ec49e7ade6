// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "growlearn/error.hpp"
#include "growlearn/rng.hpp"
#include "growlearn/tensor.hpp"

namespace growlearn {

/// Where a dataset came from; enough to regenerate it bit for bit.
struct Provenance {
    std::string source;    // "synthetic:<seed>" or an IDX path
    std::string transform; // "identity", "permute:<seed>", "classes:0,1,2", ...
    std::uint64_t seed = 0;
};

struct LabeledSplit {
    Tensor images; // [N x C x H x W], values in [0, 1]
    std::vector<int> labels;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
};

struct LabeledDataset {
    LabeledSplit train;
    LabeledSplit test;
    std::size_t classes = 10;
    Provenance provenance;

    [[nodiscard]] Shape image_shape() const {
        const auto& s = train.size() ? train.images.shape() : test.images.shape();
        return Shape(s.begin() + 1, s.end());
    }
};

enum class StreamKind { domain_incremental, class_incremental };

struct TaskStream {
    std::vector<LabeledDataset> tasks;
    StreamKind kind = StreamKind::domain_incremental;
    std::size_t classes = 10;
};

// ---------------------------------------------------------------------------
// IDX container (MNIST format). Files may be raw or gzip-compressed.

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw FormatError("no such file: " + path.string());
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw FormatError("cannot open " + path.string());
    std::vector<std::uint8_t> out;
    std::array<std::uint8_t, 1 << 16> buf{};
    for (;;) {
        const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) {
            gzclose(f);
            throw FormatError("corrupt compressed stream in " + path.string());
        }
        if (n == 0) break;
        out.insert(out.end(), buf.begin(), buf.begin() + n);
    }
    gzclose(f);
    return out;
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& name) {
    if (off + 4 > b.size()) throw FormatError(name + ": truncated header");
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    b.push_back(static_cast<std::uint8_t>(v >> 24));
    b.push_back(static_cast<std::uint8_t>(v >> 16));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
    b.push_back(static_cast<std::uint8_t>(v));
}

} // namespace detail

/// Parses an IDX image file and its label file into one split.
inline LabeledSplit load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = detail::read_maybe_gzip(images_path);
    const auto lab = detail::read_maybe_gzip(labels_path);
    const std::string iname = images_path.string(), lname = labels_path.string();
    if (detail::read_be32(img, 0, iname) != kIdxImagesMagic) throw FormatError(iname + ": bad IDX image magic");
    if (detail::read_be32(lab, 0, lname) != kIdxLabelsMagic) throw FormatError(lname + ": bad IDX label magic");
    const std::size_t n = detail::read_be32(img, 4, iname);
    const std::size_t rows = detail::read_be32(img, 8, iname);
    const std::size_t cols = detail::read_be32(img, 12, iname);
    const std::size_t nl = detail::read_be32(lab, 4, lname);
    if (rows == 0 || cols == 0) throw FormatError(iname + ": zero image dimension");
    if (img.size() != 16 + n * rows * cols)
        throw FormatError(iname + ": expected " + std::to_string(16 + n * rows * cols) + " bytes, found " +
                          std::to_string(img.size()));
    if (lab.size() != 8 + nl) throw FormatError(lname + ": expected " + std::to_string(8 + nl) + " bytes");
    if (n != nl)
        throw ConsistencyError("image count " + std::to_string(n) + " does not match label count " + std::to_string(nl));
    if (n == 0) throw FormatError(iname + ": no images");
    LabeledSplit s;
    s.images = Tensor(Shape{n, 1, rows, cols});
    for (std::size_t i = 0; i < n * rows * cols; ++i) s.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
    s.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.labels[i] = lab[8 + i];
    return s;
}

/// Writes a split as uncompressed IDX files. Pixels are quantized to bytes.
inline void write_idx(const LabeledSplit& split, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
    const auto& s = split.images.shape();
    if (s.size() != 4 || s[1] != 1) throw ShapeError("write_idx: expected [N x 1 x H x W], got " + shape_str(s));
    std::vector<std::uint8_t> img, lab;
    detail::put_be32(img, kIdxImagesMagic);
    detail::put_be32(img, static_cast<std::uint32_t>(s[0]));
    detail::put_be32(img, static_cast<std::uint32_t>(s[2]));
    detail::put_be32(img, static_cast<std::uint32_t>(s[3]));
    for (float v : split.images.data())
        img.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    detail::put_be32(lab, kIdxLabelsMagic);
    detail::put_be32(lab, static_cast<std::uint32_t>(split.labels.size()));
    for (int l : split.labels) lab.push_back(static_cast<std::uint8_t>(l));
    std::ofstream(images_path, std::ios::binary).write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    std::ofstream(labels_path, std::ios::binary).write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
}

/// Looks for the four standard MNIST files (optionally .gz) in `dir`.
inline LabeledDataset load_mnist_dir(const std::filesystem::path& dir) {
    auto pick = [&](const std::string& stem) {
        for (const auto& name : {stem, stem + ".gz"})
            if (std::filesystem::exists(dir / name)) return dir / name;
        throw FormatError("missing " + stem + " in " + dir.string());
    };
    LabeledDataset d;
    d.train = load_idx(pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte"));
    d.test = load_idx(pick("t10k-images-idx3-ubyte"), pick("t10k-labels-idx1-ubyte"));
    int mx = 0;
    for (int l : d.train.labels) mx = std::max(mx, l);
    for (int l : d.test.labels) mx = std::max(mx, l);
    d.classes = std::max<std::size_t>(10, static_cast<std::size_t>(mx) + 1);
    d.provenance = Provenance{dir.string(), "identity", 0};
    return d;
}

// ---------------------------------------------------------------------------
// Synthetic glyphs.

struct SyntheticOptions {
    std::size_t n_per_class = 350;
    Shape shape{1, 28, 28};
    /// Std of additive pixel noise. Zero disables every per-sample variation
    /// (noise, shift and contrast), leaving exact class templates.
    float noise = 0.3f;
    std::size_t max_shift = 2;
};

namespace detail {

inline constexpr std::uint64_t kTemplateSeed = 0x6c7970686f6e7473ULL;

/// Class template: a few thick strokes drawn from a class-fixed seed.
inline std::vector<float> glyph_template(int cls, std::size_t h, std::size_t w) {
    Rng rng(derive_seed(kTemplateSeed, "glyph", static_cast<std::uint64_t>(cls)));
    std::vector<float> img(h * w, 0.0f);
    const double lo = 0.2, span = 0.6;
    double px = lo + span * rng.uniform(), py = lo + span * rng.uniform();
    const int strokes = 3 + static_cast<int>(rng.below(2));
    for (int s = 0; s < strokes; ++s) {
        const double qx = lo + span * rng.uniform(), qy = lo + span * rng.uniform();
        for (int step = 0; step <= 64; ++step) {
            const double a = step / 64.0;
            const double cx = (px + a * (qx - px)) * static_cast<double>(w - 1);
            const double cy = (py + a * (qy - py)) * static_cast<double>(h - 1);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    const float v = static_cast<float>(std::exp(-d2 / 1.5));
                    img[y * w + x] = std::max(img[y * w + x], v);
                }
        }
        px = qx;
        py = qy;
    }
    return img;
}

} // namespace detail

/// Ten classes of procedurally drawn glyphs: a fixed template per class plus
/// seeded shift, contrast and pixel noise. Split 6:1 into train and test per
/// class; both splits are shuffled with the seed.
inline LabeledDataset synthetic_digits(std::uint64_t seed, const SyntheticOptions& opt = {}) {
    if (opt.n_per_class < 1) throw InputError("synthetic_digits: n_per_class must be at least 1");
    if (opt.shape.size() != 3) throw ShapeError("synthetic_digits: shape must be [C x H x W]");
    const std::size_t c = opt.shape[0], h = opt.shape[1], w = opt.shape[2], px = c * h * w;
    constexpr int kClasses = 10;
    const std::size_t n_train_pc = opt.n_per_class == 1 ? 1 : (opt.n_per_class * 6) / 7;
    Rng rng(derive_seed(seed, "synthetic-digits"));
    std::vector<std::vector<float>> train_imgs, test_imgs;
    std::vector<int> train_labels, test_labels;
    for (int cls = 0; cls < kClasses; ++cls) {
        const auto tmpl = detail::glyph_template(cls, h, w);
        for (std::size_t s = 0; s < opt.n_per_class; ++s) {
            std::vector<float> img(px);
            const bool vary = opt.noise > 0.0f;
            const auto range = static_cast<std::int64_t>(vary ? opt.max_shift : 0);
            const std::int64_t dx = range ? static_cast<std::int64_t>(rng.below(2 * range + 1)) - range : 0;
            const std::int64_t dy = range ? static_cast<std::int64_t>(rng.below(2 * range + 1)) - range : 0;
            const float contrast = vary ? static_cast<float>(0.6 + 0.4 * rng.uniform()) : 1.0f;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const auto sy = static_cast<std::int64_t>(y) - dy, sx = static_cast<std::int64_t>(x) - dx;
                        float v = 0.0f;
                        if (sy >= 0 && sx >= 0 && sy < static_cast<std::int64_t>(h) && sx < static_cast<std::int64_t>(w))
                            v = tmpl[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] * contrast;
                        if (vary) v += static_cast<float>(opt.noise * rng.normal());
                        img[(ch * h + y) * w + x] = std::clamp(v, 0.0f, 1.0f);
                    }
            if (s < n_train_pc) {
                train_imgs.push_back(std::move(img));
                train_labels.push_back(cls);
            } else {
                test_imgs.push_back(std::move(img));
                test_labels.push_back(cls);
            }
        }
    }
    auto assemble = [&](std::vector<std::vector<float>>& imgs, std::vector<int>& labels) {
        LabeledSplit split;
        std::vector<std::size_t> order(labels.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        std::vector<float> data;
        data.reserve(order.size() * px);
        for (auto i : order) {
            data.insert(data.end(), imgs[i].begin(), imgs[i].end());
            split.labels.push_back(labels[i]);
        }
        if (!order.empty()) split.images = Tensor(Shape{order.size(), c, h, w}, std::move(data));
        return split;
    };
    LabeledDataset d;
    d.train = assemble(train_imgs, train_labels);
    d.test = assemble(test_imgs, test_labels);
    d.classes = kClasses;
    d.provenance = Provenance{"synthetic:" + std::to_string(seed), "identity", seed};
    return d;
}

// ---------------------------------------------------------------------------
// Transforms.

inline LabeledSplit take(const LabeledSplit& s, const std::vector<std::size_t>& idx) {
    LabeledSplit out;
    if (idx.empty()) return out;
    const auto& sh = s.images.shape();
    const std::size_t px = s.images.size() / sh[0];
    std::vector<float> data;
    data.reserve(idx.size() * px);
    for (auto i : idx) {
        data.insert(data.end(), s.images.data().begin() + static_cast<std::ptrdiff_t>(i * px),
                    s.images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * px));
        out.labels.push_back(s.labels[i]);
    }
    Shape ns = sh;
    ns[0] = idx.size();
    out.images = Tensor(ns, std::move(data));
    return out;
}

/// Deterministic subset of at most `n_train` / `n_test` samples per split.
inline LabeledDataset subsample(const LabeledDataset& d, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
    auto pick = [&](const LabeledSplit& s, std::size_t n, std::string_view tag) {
        std::vector<std::size_t> idx(s.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (n >= idx.size()) return s;
        Rng rng(derive_seed(seed, tag));
        rng.shuffle(idx);
        idx.resize(n);
        std::sort(idx.begin(), idx.end());
        return take(s, idx);
    };
    LabeledDataset out = d;
    out.train = pick(d.train, n_train, "subsample-train");
    out.test = pick(d.test, n_test, "subsample-test");
    return out;
}

/// Fisher-Yates permutation of H*W pixel positions drawn from `seed`.
inline std::vector<std::size_t> pixel_permutation(std::size_t pixels, std::uint64_t seed) {
    std::vector<std::size_t> perm(pixels);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "pixel-permutation"));
    rng.shuffle(perm);
    return perm;
}

inline LabeledSplit permute_split(const LabeledSplit& s, const std::vector<std::size_t>& perm) {
    if (s.size() == 0) return s;
    LabeledSplit out = s;
    const auto& sh = s.images.shape();
    const std::size_t hw = sh[2] * sh[3], ch = sh[1];
    for (std::size_t n = 0; n < sh[0]; ++n)
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (n * ch + c) * hw;
            for (std::size_t p = 0; p < hw; ++p) out.images[base + p] = s.images[base + perm[p]];
        }
    return out;
}

/// Applies one seeded pixel permutation to every image of both splits.
inline LabeledDataset permuted_task(const LabeledDataset& base, std::uint64_t seed) {
    const auto shape = base.image_shape();
    if (shape.size() != 3) throw ShapeError("permuted_task: expected [C x H x W] images");
    const auto perm = pixel_permutation(shape[1] * shape[2], seed);
    LabeledDataset out = base;
    out.train = permute_split(base.train, perm);
    out.test = permute_split(base.test, perm);
    out.provenance.transform = "permute:" + std::to_string(seed);
    out.provenance.seed = seed;
    return out;
}

/// Domain 0 is the unpermuted base; domain i > 0 uses a permutation seeded
/// from (seed, i).
inline TaskStream permuted_stream(const LabeledDataset& base, std::size_t tasks, std::uint64_t seed) {
    TaskStream s;
    s.kind = StreamKind::domain_incremental;
    s.classes = base.classes;
    for (std::size_t i = 0; i < tasks; ++i) {
        if (i == 0) {
            s.tasks.push_back(base);
            s.tasks.back().provenance.transform = "identity";
        } else {
            s.tasks.push_back(permuted_task(base, derive_seed(seed, "domain", i)));
        }
    }
    return s;
}

inline LabeledSplit filter_classes(const LabeledSplit& s, const std::set<int>& keep) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (keep.count(s.labels[i])) idx.push_back(i);
    return take(s, idx);
}

/// One dataset per class group; labels keep their global indices so every
/// task shares one classifier head. Groups may overlap.
inline TaskStream class_incremental_split(const LabeledDataset& base, const std::vector<std::vector<int>>& groups) {
    std::set<int> present(base.train.labels.begin(), base.train.labels.end());
    present.insert(base.test.labels.begin(), base.test.labels.end());
    TaskStream s;
    s.kind = StreamKind::class_incremental;
    s.classes = base.classes;
    for (const auto& g : groups) {
        if (g.empty()) throw InputError("class group is empty");
        std::set<int> keep;
        std::string desc = "classes:";
        for (int c : g) {
            if (c < 0 || static_cast<std::size_t>(c) >= base.classes || !present.count(c))
                throw InputError("unknown class " + std::to_string(c));
            if (keep.insert(c).second) desc += (keep.size() > 1 ? "," : "") + std::to_string(c);
        }
        LabeledDataset d;
        d.train = filter_classes(base.train, keep);
        d.test = filter_classes(base.test, keep);
        d.classes = base.classes;
        d.provenance = base.provenance;
        d.provenance.transform = desc;
        s.tasks.push_back(std::move(d));
    }
    return s;
}

/// FNV-1a over labels and the exact float bits of every pixel.
inline std::uint64_t fingerprint(const LabeledDataset& d) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const LabeledSplit* s : {&d.train, &d.test}) {
        feed(s->images.data().data(), s->images.size() * sizeof(float));
        feed(s->labels.data(), s->labels.size() * sizeof(int));
    }
    return h;
}

} // namespace growlearn
