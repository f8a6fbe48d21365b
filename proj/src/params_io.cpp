#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dgrd/dataset.hpp"
#include "dgrd/network.hpp"

namespace dgrd {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'R', 'D'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string text(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw ParamsFormatError(std::string("params file truncated in ") + what);
    }

    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_params(const ModelParams& params) {
    std::vector<unsigned char> out(kMagic, kMagic + 4);
    put_le<std::uint32_t>(out, kParamsFormatVersion);
    put_le<std::uint64_t>(out, params.fingerprint());
    const std::string desc = params.arch.descriptor();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(desc.size()));
    out.insert(out.end(), desc.begin(), desc.end());
    put_le<std::uint64_t>(out, params.parameter_count());
    for (const Tensor* t : params.tensors()) {
        for (double v : t->data()) put_le<double>(out, v);
    }
    return out;
}

ModelParams decode_params(const std::vector<unsigned char>& bytes) {
    Reader r(bytes);
    if (r.text(4, "magic") != std::string(kMagic, 4)) throw ParamsFormatError("not a DGRD params file (bad magic)");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kParamsFormatVersion) {
        throw ParamsFormatError("unsupported params format version " + std::to_string(version));
    }
    const auto fingerprint = r.get<std::uint64_t>("fingerprint");
    const auto desc_len = r.get<std::uint32_t>("descriptor length");
    const std::string desc = r.text(desc_len, "descriptor");

    Architecture arch;
    try {
        arch = Architecture::from_descriptor(desc);
    } catch (const std::exception& e) {
        throw ParamsFormatError(std::string("params file carries an invalid architecture: ") + e.what());
    }
    if (arch.fingerprint() != fingerprint) throw ParamsFormatError("params fingerprint does not match descriptor");

    ModelParams params{arch, zero_params(arch)};
    const auto count = r.get<std::uint64_t>("value count");
    if (count != params.parameter_count()) {
        throw ParamsFormatError("params value count " + std::to_string(count) + " does not match architecture (" +
                                std::to_string(params.parameter_count()) + ")");
    }
    if (r.remaining() != count * sizeof(double)) {
        throw ParamsFormatError(r.remaining() < count * sizeof(double) ? "params file truncated in values"
                                                                       : "trailing bytes after params values");
    }
    for (Tensor* t : params.tensors()) {
        for (double& v : t->data()) {
            v = r.get<double>("values");
            if (!std::isfinite(v)) throw ParamsFormatError("params file contains a non-finite value");
        }
    }
    return params;
}

ModelParams decode_params(const std::vector<unsigned char>& bytes, const Architecture& expected) {
    ModelParams params = decode_params(bytes);
    if (params.fingerprint() != expected.fingerprint()) {
        throw ParamsFormatError("params architecture '" + params.arch.descriptor() + "' does not match expected '" +
                                expected.descriptor() + "'");
    }
    params.arch.name = expected.name;
    return params;
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
    const auto bytes = encode_params(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParamsFormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParamsFormatError("write failed for " + path.string());
}

namespace {

std::vector<unsigned char> read_params_file(const std::filesystem::path& path) {
    try {
        return read_file_bytes(path);
    } catch (const DatasetFormatError&) {
        throw ParamsFormatError("cannot open " + path.string());
    }
}

}  // namespace

ModelParams load_params(const std::filesystem::path& path) {
    return decode_params(read_params_file(path));
}

ModelParams load_params(const std::filesystem::path& path, const Architecture& expected) {
    return decode_params(read_params_file(path), expected);
}

}  // namespace dgrd
