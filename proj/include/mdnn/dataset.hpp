#pragma once

// MNIST / Fashion-MNIST IDX ingestion and deterministic batching.

#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mdnn/errors.hpp"
#include "mdnn/field.hpp"

namespace mdnn {

struct LabeledImageSet {
    std::vector<Image> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }

    void validate(std::size_t classes) const {
        if (images.size() != labels.size()) throw ConfigError("image and label counts differ", "dataset");
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
                throw ConfigError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                      " outside [0, " + std::to_string(classes) + ")",
                                  "dataset");
    }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
    if (off + 4 > b.size())
        throw ParseError(path + ": truncated header at offset " + std::to_string(off), static_cast<long long>(off));
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

} // namespace detail

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

/// Reads an IDX image/label pair. Pixels are scaled by 1/255.
inline LabeledImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ib = detail::read_file(images_path);
    const auto lb = detail::read_file(labels_path);

    const auto imagic = detail::read_be32(ib, 0, images_path);
    if (imagic != idx_images_magic)
        throw ParseError(images_path + ": bad magic number at offset 0", 0);
    const auto count = detail::read_be32(ib, 4, images_path);
    const auto rows = detail::read_be32(ib, 8, images_path);
    const auto cols = detail::read_be32(ib, 12, images_path);
    if (rows != cols || rows == 0) throw ParseError(images_path + ": images must be square at offset 8", 8);
    const std::size_t px = std::size_t{rows} * cols;
    const std::size_t need = 16 + std::size_t{count} * px;
    if (ib.size() < need)
        throw ParseError(images_path + ": truncated pixel data at offset " + std::to_string(ib.size()),
                         static_cast<long long>(ib.size()));

    const auto lmagic = detail::read_be32(lb, 0, labels_path);
    if (lmagic != idx_labels_magic) throw ParseError(labels_path + ": bad magic number at offset 0", 0);
    const auto lcount = detail::read_be32(lb, 4, labels_path);
    if (lcount != count)
        throw ParseError("image count " + std::to_string(count) + " differs from label count " +
                             std::to_string(lcount) + " (offset 4)",
                         4);
    if (lb.size() < 8 + std::size_t{lcount})
        throw ParseError(labels_path + ": truncated label data at offset " + std::to_string(lb.size()),
                         static_cast<long long>(lb.size()));

    LabeledImageSet set;
    set.images.reserve(count);
    set.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Image img(rows, 0.0);
        const unsigned char* src = ib.data() + 16 + i * px;
        for (std::size_t p = 0; p < px; ++p) img[p] = static_cast<double>(src[p]) / 255.0;
        set.images.push_back(std::move(img));
        set.labels.push_back(lb[8 + i]);
    }
    return set;
}

/// Writes an IDX pair; pixels are quantized to bytes. Used for fixtures.
inline void save_idx(const LabeledImageSet& set, const std::string& images_path, const std::string& labels_path) {
    auto be32 = [](std::ofstream& o, std::uint32_t v) {
        const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
        o.write(b, 4);
    };
    const std::uint32_t side = set.images.empty() ? 28 : static_cast<std::uint32_t>(set.images.front().n);
    std::ofstream io(images_path, std::ios::binary), lo(labels_path, std::ios::binary);
    if (!io || !lo) throw IoError("cannot write IDX files");
    be32(io, idx_images_magic);
    be32(io, static_cast<std::uint32_t>(set.size()));
    be32(io, side);
    be32(io, side);
    for (const auto& img : set.images)
        for (double v : img.pixels) io.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    be32(lo, idx_labels_magic);
    be32(lo, static_cast<std::uint32_t>(set.size()));
    for (int l : set.labels) lo.put(static_cast<char>(l));
}

/// First `count` items (all when count == 0 or larger than the set).
inline LabeledImageSet take(const LabeledImageSet& set, std::size_t count) {
    if (count == 0 || count >= set.size()) return set;
    LabeledImageSet out;
    out.images.assign(set.images.begin(), set.images.begin() + static_cast<std::ptrdiff_t>(count));
    out.labels.assign(set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(count));
    return out;
}

/// Keeps items whose label is listed and renumbers labels to their position
/// in `keep` (e.g. {0, 1} or {0, 7} -> classes 0 and 1).
inline LabeledImageSet select_labels(const LabeledImageSet& set, const std::vector<int>& keep) {
    LabeledImageSet out;
    for (std::size_t i = 0; i < set.size(); ++i)
        for (std::size_t k = 0; k < keep.size(); ++k)
            if (set.labels[i] == keep[k]) {
                out.images.push_back(set.images[i]);
                out.labels.push_back(static_cast<int>(k));
            }
    return out;
}

/// Pixel >= threshold -> 1, else 0.
inline Image binarize(const Image& img, double threshold = 0.5) {
    Image out(img.n, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] >= threshold ? 1.0 : 0.0;
    return out;
}

inline LabeledImageSet binarize(const LabeledImageSet& set, double threshold = 0.5) {
    LabeledImageSet out = set;
    for (auto& img : out.images)
        for (auto& v : img.pixels) v = v >= threshold ? 1.0 : 0.0;
    return out;
}

/// Portable RNG helpers: the standard distributions are implementation
/// defined, these are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        engine_.seed(seq);
    }

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound), rejection sampled.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t v;
        do v = engine_();
        while (v >= limit);
        return v % bound;
    }

private:
    std::mt19937_64 engine_;
};

/// Seeded permutation of [0, size) split into batches; the last batch may be
/// short. Identical (seed, epoch) give identical batches.
inline std::vector<std::vector<std::size_t>> batches(std::size_t size, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch) {
    if (batch_size == 0) throw ConfigError("must be at least 1", "batch_size");
    std::vector<std::size_t> order(size);
    for (std::size_t i = 0; i < size; ++i) order[i] = i;
    Rng rng(seed, epoch);
    for (std::size_t i = size; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t lo = 0; lo < size; lo += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(size, lo + batch_size)));
    return out;
}

} // namespace mdnn
