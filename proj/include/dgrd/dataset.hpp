#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgrd/rng.hpp"
#include "dgrd/tensor.hpp"

namespace dgrd {

class DatasetFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Labelled images with pixels scaled to [0, 1].
struct Dataset {
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    std::string split;
    Shape image_shape;
    std::uint64_t checksum = 0;  // FNV-1a over the raw source bytes

    std::size_t size() const noexcept { return images.size(); }
    bool empty() const noexcept { return images.empty(); }
    /// First `count` examples (or all of them when count exceeds the size).
    Dataset head(std::size_t count) const;
    /// Throws DatasetFormatError if counts disagree or a pixel leaves [0, 1].
    void validate() const;
};

/// Big-endian IDX files: images with magic 0x00000803, labels with
/// 0x00000801. Pixels are divided by 255.
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path,
                       const std::string& split = "mnist");

Dataset parse_mnist_idx(const std::vector<unsigned char>& image_bytes,
                        const std::vector<unsigned char>& label_bytes,
                        const std::string& split = "mnist");

/// CIFAR-10 binary batches: 3073-byte records of one label byte followed by
/// 1024 red, 1024 green and 1024 blue bytes. Images come out as 32x32x3.
Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths,
                         const std::string& split = "cifar10");

Dataset parse_cifar10_bin(const std::vector<unsigned char>& bytes,
                          const std::string& split = "cifar10");

void write_mnist_idx(const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path, const Dataset& data);
void write_cifar10_bin(const std::filesystem::path& path, const Dataset& data);

/// Class-conditional colour/texture images in CIFAR-10 geometry, quantised to
/// bytes. Used to exercise the CIFAR pipeline when the real batches are not
/// available.
Dataset make_synthetic_cifar(std::size_t count, SeededRng& rng, const std::string& split = "synthetic");

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);

}  // namespace dgrd
