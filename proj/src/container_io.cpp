#include "jlcm/container_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "jlcm/errors.hpp"
#include "jlcm/half.hpp"

namespace jlcm {

namespace {

void append_u8(std::vector<std::uint8_t>& buf, std::uint8_t v) { buf.push_back(v); }

void append_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
    buf.push_back(std::uint8_t(v & 0xff));
    buf.push_back(std::uint8_t(v >> 8));
}

void append_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

void append_f32(std::vector<std::uint8_t>& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    append_u32(buf, bits);
}

// Bounds-checked little-endian reader.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::size_t remaining() const { return size_ - pos_; }

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    std::uint16_t u16() {
        need(2);
        std::uint16_t v = std::uint16_t(data_[pos_]) | (std::uint16_t(data_[pos_ + 1]) << 8);
        pos_ += 2;
        return v;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    void bytes(std::uint8_t* out, std::size_t n) {
        need(n);
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_)
            throw IoError(IoError::Kind::blob_mismatch, "blob length mismatch: file truncated");
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::io_failure, "cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(len), 0);
    if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
    if (!in) throw IoError(IoError::Kind::io_failure, "read failed for " + path);
    return buf;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::io_failure, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw IoError(IoError::Kind::io_failure, "write failed for " + path);
}

} // namespace

ModelContainer load_container(const std::string& path) {
    const std::vector<std::uint8_t> buf = read_file(path);
    ByteReader r(buf.data(), buf.size());

    char magic[4];
    r.bytes(reinterpret_cast<std::uint8_t*>(magic), 4);
    if (std::memcmp(magic, "JLCM", 4) != 0)
        throw IoError(IoError::Kind::bad_magic, "bad magic: not a JLCM container");
    const std::uint8_t version = r.u8();
    if (version != 1)
        throw IoError(IoError::Kind::bad_version,
                      "unsupported container version " + std::to_string(version));
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) throw IoError(IoError::Kind::bad_header, "unknown dtype tag");
    const std::uint32_t num_layers = r.u32();

    ModelContainer model;
    model.dtype_stored = dtype == 0 ? StorageType::f32 : StorageType::f16;
    model.name = std::filesystem::path(path).stem().string();
    model.layers.resize(num_layers);

    for (std::uint32_t l = 0; l < num_layers; ++l) {
        LinearLayer& layer = model.layers[l];
        const std::uint32_t n_o = r.u32();
        const std::uint32_t n_i = r.u32();
        const std::uint8_t act = r.u8();
        const std::uint8_t has_bias = r.u8();
        if (n_o == 0 || n_i == 0)
            throw IoError(IoError::Kind::bad_header,
                          "layer " + std::to_string(l) + " has an empty dimension");
        if (act > 2)
            throw IoError(IoError::Kind::bad_header,
                          "unknown activation tag at layer " + std::to_string(l));
        if (has_bias > 1)
            throw IoError(IoError::Kind::bad_header,
                          "bad bias flag at layer " + std::to_string(l));
        layer.weights = Matf(n_o, n_i);
        layer.activation = Activation(act);
        if (has_bias) layer.bias.resize(n_o);
    }

    const bool half = model.dtype_stored == StorageType::f16;
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        LinearLayer& layer = model.layers[l];
        for (float& v : layer.weights.data) v = half ? half_bits_to_float(r.u16()) : r.f32();
        for (float& v : layer.bias) v = half ? half_bits_to_float(r.u16()) : r.f32();
    }
    if (r.remaining() != 0)
        throw IoError(IoError::Kind::blob_mismatch, "blob length mismatch: trailing bytes");

    validate_model(model);
    return model;
}

void save_container(const ModelContainer& model, const std::string& path, StorageType dtype) {
    validate_model(model);
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'J', 'L', 'C', 'M'});
    append_u8(buf, 1);
    append_u8(buf, dtype == StorageType::f32 ? 0 : 1);
    append_u32(buf, std::uint32_t(model.layers.size()));
    for (const LinearLayer& layer : model.layers) {
        append_u32(buf, std::uint32_t(layer.n_out()));
        append_u32(buf, std::uint32_t(layer.n_in()));
        append_u8(buf, std::uint8_t(layer.activation));
        append_u8(buf, layer.has_bias() ? 1 : 0);
    }
    for (const LinearLayer& layer : model.layers) {
        if (dtype == StorageType::f32) {
            for (float v : layer.weights.data) append_f32(buf, v);
            for (float v : layer.bias) append_f32(buf, v);
        } else {
            for (float v : layer.weights.data) append_u16(buf, float_to_half_bits(v));
            for (float v : layer.bias) append_u16(buf, float_to_half_bits(v));
        }
    }
    write_file(path, buf);
}

CalibrationSet load_calibration(const std::string& path) {
    const std::vector<std::uint8_t> buf = read_file(path);
    ByteReader r(buf.data(), buf.size());

    char magic[4];
    r.bytes(reinterpret_cast<std::uint8_t*>(magic), 4);
    if (std::memcmp(magic, "JCAL", 4) != 0)
        throw IoError(IoError::Kind::bad_magic, "bad magic: not a JCAL calibration file");
    const std::uint32_t batch = r.u32();
    const std::uint32_t width = r.u32();
    if (batch == 0 || width == 0)
        throw IoError(IoError::Kind::bad_header, "empty calibration set");

    CalibrationSet calib;
    calib.inputs = Matf(batch, width);
    for (float& v : calib.inputs.data) v = r.f32();
    if (r.remaining() != 0)
        throw IoError(IoError::Kind::blob_mismatch, "blob length mismatch: trailing bytes");
    for (float v : calib.inputs.data)
        if (!std::isfinite(v))
            throw IoError(IoError::Kind::non_finite, "non-finite calibration value");
    return calib;
}

void save_calibration(const CalibrationSet& calib, const std::string& path) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'J', 'C', 'A', 'L'});
    append_u32(buf, std::uint32_t(calib.inputs.rows));
    append_u32(buf, std::uint32_t(calib.inputs.cols));
    for (float v : calib.inputs.data) append_f32(buf, v);
    write_file(path, buf);
}

} // namespace jlcm
