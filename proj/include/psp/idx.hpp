#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "psp/errors.hpp"
#include "psp/rng.hpp"
#include "psp/tensor.hpp"

namespace psp {

/// Decoded IDX container: big-endian magic [0,0,type,rank], big-endian
/// 32-bit extents, then the raw row-major byte payload.
struct IdxHeader {
    std::uint32_t magic = 0;
    std::vector<int> dims;
};

struct IdxData {
    IdxHeader header;
    std::vector<std::uint8_t> payload;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // unsigned byte, rank 3
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // unsigned byte, rank 1

IdxData parse_idx(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_idx(const IdxData& data);
IdxData read_idx_file(const std::string& path);
void write_idx_file(const std::string& path, const IdxData& data);

/// Byte payload scaled by 1/255 into the IDX dims, values in [0,1].
template <typename T>
Tensor<T> normalize(const IdxData& data) {
    Tensor<T> out(data.header.dims);
    for (std::size_t i = 0; i < data.payload.size(); ++i) {
        out[i] = static_cast<T>(data.payload[i]) / T(255);
    }
    return out;
}

template <typename T>
struct Dataset {
    Tensor<T> images;          // [n x 1 x 28 x 28]
    std::vector<int> labels;   // length n, values 0..9

    int size() const { return images.extent(0); }
};

/// Loads an image/label file pair into normalized tensors, validating the
/// magics, the sample counts, and the label range.
template <typename T>
Dataset<T> load_dataset(const std::string& images_path, const std::string& labels_path) {
    IdxData images = read_idx_file(images_path);
    IdxData labels = read_idx_file(labels_path);
    if (images.header.magic != kIdxImagesMagic) {
        throw FormatError(images_path + ": expected image magic 0x803");
    }
    if (labels.header.magic != kIdxLabelsMagic) {
        throw FormatError(labels_path + ": expected label magic 0x801");
    }
    if (images.header.dims[0] != labels.header.dims[0]) {
        throw DataError("sample count mismatch: " + std::to_string(images.header.dims[0]) +
                        " images vs " + std::to_string(labels.header.dims[0]) + " labels");
    }
    Dataset<T> ds;
    Tensor<T> flat = normalize<T>(images);
    ds.images = flat.reshaped(
        {images.header.dims[0], 1, images.header.dims[1], images.header.dims[2]});
    ds.labels.reserve(labels.payload.size());
    for (std::size_t i = 0; i < labels.payload.size(); ++i) {
        const int lab = labels.payload[i];
        if (lab > 9) {
            throw DataError(labels_path + ": label " + std::to_string(lab) + " at index " +
                            std::to_string(i) + " outside [0,9]");
        }
        ds.labels.push_back(lab);
    }
    return ds;
}

/// One epoch's batches: a seeded permutation of [0,n) sliced into
/// batch_size chunks, final short chunk included.
inline std::vector<std::vector<int>> batch_iter(int n, int batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (n < 1) throw ConfigError("batch_iter needs a nonempty dataset");
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 g(seed);
    shuffle(order, g);
    std::vector<std::vector<int>> batches;
    batches.reserve(static_cast<std::size_t>((n + batch_size - 1) / batch_size));
    for (int at = 0; at < n; at += batch_size) {
        const int b = at + batch_size <= n ? batch_size : n - at;
        batches.emplace_back(order.begin() + at, order.begin() + at + b);
    }
    return batches;
}

/// Copies the indexed samples into a contiguous batch.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> gather_batch(const Tensor<T>& images,
                                                    const std::vector<int>& labels,
                                                    const std::vector<int>& indices) {
    const std::size_t sample = images.size() / static_cast<std::size_t>(images.extent(0));
    std::vector<int> shape = images.shape();
    shape[0] = static_cast<int>(indices.size());
    Tensor<T> batch(shape);
    std::vector<int> blabels;
    blabels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const T* src = images.data() + static_cast<std::size_t>(indices[i]) * sample;
        std::copy(src, src + sample, batch.data() + i * sample);
        blabels.push_back(labels[static_cast<std::size_t>(indices[i])]);
    }
    return {std::move(batch), std::move(blabels)};
}

}  // namespace psp
