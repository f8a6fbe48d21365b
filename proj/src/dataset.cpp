#include "dgrd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string_view>

namespace dgrd {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPlane = kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarPlane;

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
           (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint64_t checksum_of(const std::vector<unsigned char>& a, const std::vector<unsigned char>& b = {}) {
    std::uint64_t h = fnv1a64(std::string_view(reinterpret_cast<const char*>(a.data()), a.size()));
    if (!b.empty()) h ^= fnv1a64(std::string_view(reinterpret_cast<const char*>(b.data()), b.size())) * 31;
    return h;
}

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetFormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Dataset Dataset::head(std::size_t count) const {
    Dataset out;
    out.split = split;
    out.image_shape = image_shape;
    out.checksum = checksum;
    const std::size_t n = std::min(count, size());
    out.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(n));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

void Dataset::validate() const {
    if (images.size() != labels.size()) {
        throw DatasetFormatError("image count " + std::to_string(images.size()) + " != label count " +
                                 std::to_string(labels.size()));
    }
    for (const auto& img : images) {
        for (double v : img.data()) {
            if (!(v >= 0.0 && v <= 1.0)) throw DatasetFormatError("pixel outside [0, 1]");
        }
    }
}

Dataset parse_mnist_idx(const std::vector<unsigned char>& image_bytes,
                        const std::vector<unsigned char>& label_bytes, const std::string& split) {
    if (image_bytes.size() < 16) throw DatasetFormatError("IDX image file truncated in header");
    if (label_bytes.size() < 8) throw DatasetFormatError("IDX label file truncated in header");
    const std::uint32_t image_magic = read_be32(image_bytes, 0);
    if (image_magic != kIdxImageMagic) {
        throw DatasetFormatError("IDX image file has bad magic " + std::to_string(image_magic) +
                                 " (expected 0x00000803)");
    }
    const std::uint32_t label_magic = read_be32(label_bytes, 0);
    if (label_magic != kIdxLabelMagic) {
        throw DatasetFormatError("IDX label file has bad magic " + std::to_string(label_magic) +
                                 " (expected 0x00000801)");
    }
    const std::size_t count = read_be32(image_bytes, 4);
    const std::size_t rows = read_be32(image_bytes, 8);
    const std::size_t cols = read_be32(image_bytes, 12);
    const std::size_t label_count = read_be32(label_bytes, 4);
    if (count != label_count) {
        throw DatasetFormatError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                                 std::to_string(label_count) + " labels");
    }
    if (rows == 0 || cols == 0) throw DatasetFormatError("IDX image extents must be positive");
    const std::size_t pixels = rows * cols;
    if (image_bytes.size() < 16 + count * pixels) throw DatasetFormatError("IDX image payload truncated");
    if (label_bytes.size() < 8 + count) throw DatasetFormatError("IDX label payload truncated");

    Dataset d;
    d.split = split;
    d.image_shape = {rows, cols, 1};
    d.checksum = checksum_of(image_bytes, label_bytes);
    d.images.reserve(count);
    d.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Tensor img(d.image_shape);
        const unsigned char* src = image_bytes.data() + 16 + i * pixels;
        for (std::size_t p = 0; p < pixels; ++p) img[p] = src[p] / 255.0;
        d.images.push_back(std::move(img));
        d.labels.push_back(label_bytes[8 + i]);
    }
    return d;
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       const std::string& split) {
    return parse_mnist_idx(read_file_bytes(images_path), read_file_bytes(labels_path), split);
}

Dataset parse_cifar10_bin(const std::vector<unsigned char>& bytes, const std::string& split) {
    if (bytes.size() % kCifarRecord != 0) {
        throw DatasetFormatError("CIFAR-10 batch size " + std::to_string(bytes.size()) +
                                 " is not a multiple of the 3073-byte record");
    }
    const std::size_t count = bytes.size() / kCifarRecord;
    Dataset d;
    d.split = split;
    d.image_shape = {kCifarSide, kCifarSide, 3};
    d.checksum = checksum_of(bytes);
    d.images.reserve(count);
    d.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* rec = bytes.data() + i * kCifarRecord;
        if (rec[0] > 9) throw DatasetFormatError("CIFAR-10 label byte out of range");
        Tensor img(d.image_shape);
        // channel-major planes -> H x W x C
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const unsigned char* plane = rec + 1 + ch * kCifarPlane;
            for (std::size_t p = 0; p < kCifarPlane; ++p) img[p * 3 + ch] = plane[p] / 255.0;
        }
        d.images.push_back(std::move(img));
        d.labels.push_back(rec[0]);
    }
    return d;
}

Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths, const std::string& split) {
    if (paths.empty()) throw DatasetFormatError("no CIFAR-10 batch files given");
    Dataset all;
    for (const auto& p : paths) {
        Dataset part = parse_cifar10_bin(read_file_bytes(p), split);
        all.split = split;
        all.image_shape = part.image_shape;
        all.checksum = all.checksum * 1099511628211ULL ^ part.checksum;
        std::move(part.images.begin(), part.images.end(), std::back_inserter(all.images));
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    }
    return all;
}

void write_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                     const Dataset& data) {
    if (data.image_shape.size() != 3 || data.image_shape[2] != 1) {
        throw DatasetFormatError("IDX export needs single-channel images");
    }
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw DatasetFormatError("cannot write IDX files");
    put_be32(img, kIdxImageMagic);
    put_be32(img, static_cast<std::uint32_t>(data.size()));
    put_be32(img, static_cast<std::uint32_t>(data.image_shape[0]));
    put_be32(img, static_cast<std::uint32_t>(data.image_shape[1]));
    put_be32(lab, kIdxLabelMagic);
    put_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.images[i].data()) img.put(static_cast<char>(to_byte(v)));
        lab.put(static_cast<char>(data.labels[i]));
    }
}

void write_cifar10_bin(const std::filesystem::path& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetFormatError("cannot write " + path.string());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Tensor& img = data.images[i];
        if (img.size() != 3 * kCifarPlane) throw DatasetFormatError("CIFAR-10 export needs 32x32x3 images");
        out.put(static_cast<char>(data.labels[i]));
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t p = 0; p < kCifarPlane; ++p) out.put(static_cast<char>(to_byte(img[p * 3 + ch])));
    }
}

Dataset make_synthetic_cifar(std::size_t count, SeededRng& rng, const std::string& split) {
    // Five colours x two stripe families; each class has its own stripe
    // orientation, so colour alone does not identify the class.
    static constexpr double palette[5][3] = {
        {0.85, 0.25, 0.20}, {0.20, 0.70, 0.30}, {0.25, 0.35, 0.85}, {0.80, 0.75, 0.20}, {0.60, 0.30, 0.70}};
    Dataset d;
    d.split = split;
    d.image_shape = {kCifarSide, kCifarSide, 3};
    d.images.reserve(count);
    d.labels.reserve(count);
    std::vector<unsigned char> raw;
    raw.reserve(count * kCifarRecord);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t label = rng.below(10);
        const double angle = static_cast<double>(label) * std::numbers::pi / 10.0 + (rng.uniform() - 0.5) * 0.12;
        const double freq = 3.0 + static_cast<double>(label % 3) + rng.uniform() * 0.5;
        const double phase = rng.uniform() * 2.0 * std::numbers::pi;
        const double brightness = 0.85 + 0.3 * rng.uniform();
        const double* colour = palette[label % 5];
        Tensor img(d.image_shape);
        for (std::size_t y = 0; y < kCifarSide; ++y) {
            for (std::size_t x = 0; x < kCifarSide; ++x) {
                const double u = (std::cos(angle) * x + std::sin(angle) * y) / kCifarSide;
                const double wave = std::sin(2.0 * std::numbers::pi * freq * u + phase);
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    const double v = brightness * (0.5 + 0.3 * wave * colour[ch] + 0.2 * (colour[ch] - 0.5)) +
                                     0.08 * rng.normal();
                    const unsigned char byte = to_byte(v);
                    img[(y * kCifarSide + x) * 3 + ch] = byte / 255.0;
                    raw.push_back(byte);
                }
            }
        }
        raw.push_back(static_cast<unsigned char>(label));
        d.images.push_back(std::move(img));
        d.labels.push_back(label);
    }
    d.checksum = fnv1a64(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()));
    return d;
}

}  // namespace dgrd
