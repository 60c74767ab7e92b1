#include "jlcm/packfmt.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "jlcm/errors.hpp"
#include "jlcm/half.hpp"

namespace jlcm {

std::vector<std::uint8_t> pack_indices(const std::vector<std::int32_t>& indices, unsigned bits) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("index width must be 1..8 bits");
    const std::uint32_t limit = 1u << bits;
    std::vector<std::uint8_t> out((indices.size() * bits + 7) / 8, 0);
    std::size_t bit_pos = 0;
    for (std::int32_t idx : indices) {
        if (idx < 0 || std::uint32_t(idx) >= limit)
            throw std::invalid_argument("index out of range for the given bit width");
        // value straddles at most two bytes since bits <= 8
        const std::size_t byte = bit_pos >> 3;
        const unsigned shift = unsigned(bit_pos & 7);
        out[byte] |= std::uint8_t((std::uint32_t(idx) << shift) & 0xffu);
        if (shift + bits > 8) out[byte + 1] |= std::uint8_t(std::uint32_t(idx) >> (8 - shift));
        bit_pos += bits;
    }
    return out;
}

std::vector<std::int32_t> unpack_indices(const std::vector<std::uint8_t>& bytes, unsigned bits,
                                         std::size_t count) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("index width must be 1..8 bits");
    if (bytes.size() * 8 < count * bits)
        throw IoError(IoError::Kind::truncated, "insufficient bytes for the requested indices");
    const std::uint32_t mask = (1u << bits) - 1u;
    std::vector<std::int32_t> out(count);
    std::size_t bit_pos = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t byte = bit_pos >> 3;
        const unsigned shift = unsigned(bit_pos & 7);
        std::uint32_t v = std::uint32_t(bytes[byte]) >> shift;
        if (shift + bits > 8) v |= std::uint32_t(bytes[byte + 1]) << (8 - shift);
        out[i] = std::int32_t(v & mask);
        bit_pos += bits;
    }
    return out;
}

unsigned CompressedLayer::bits_per_index() const {
    unsigned bits = 0;
    while ((1u << bits) < codebook_size) bits++;
    return bits;
}

CompressedLayer compress_layer(const LinearLayer& layer, PlanMode mode,
                               const CodebookSet& finalized, const HardMapping& mapping) {
    CompressedLayer out;
    out.mode = mode;
    out.n_o = std::uint32_t(layer.n_out());
    out.n_i = std::uint32_t(layer.n_in());
    out.activation = layer.activation;
    out.has_bias = layer.has_bias();
    out.codebook_size = std::uint16_t(finalized.codebooks[0].size());
    if (mode == PlanMode::multi_codebook) {
        out.num_codebooks = std::uint16_t(finalized.codebooks.size());
        out.num_scales = 0;
    } else {
        out.num_codebooks = 1;
        out.num_scales = std::uint32_t(finalized.scales.size());
    }

    for (const auto& codebook : finalized.codebooks)
        for (double value : codebook) out.codewords.push_back(float_to_half_bits(float(value)));
    for (double s : finalized.scales) out.scales.push_back(float_to_half_bits(float(s)));
    for (float b : layer.bias) out.bias.push_back(float_to_half_bits(b));

    std::vector<std::int32_t> flat(mapping.indices.data.begin(), mapping.indices.data.end());
    out.packed_indices = pack_indices(flat, out.bits_per_index());
    return out;
}

Matf reconstruct_layer_weights(const CompressedLayer& layer) {
    const unsigned bits = layer.bits_per_index();
    const std::vector<std::int32_t> idx =
        unpack_indices(layer.packed_indices, bits, std::size_t(layer.n_o) * layer.n_i);
    const std::vector<std::size_t> bounds = group_boundaries(layer.n_o, layer.num_groups());

    Matf out(layer.n_o, layer.n_i);
    std::size_t group = 0;
    for (std::size_t r = 0; r < layer.n_o; ++r) {
        while (r >= bounds[group + 1]) group++;
        const std::size_t base =
            layer.mode == PlanMode::multi_codebook ? group * layer.codebook_size : 0;
        const double scale = layer.mode == PlanMode::multi_scale
                                 ? double(half_bits_to_float(layer.scales[group]))
                                 : 1.0;
        for (std::size_t c = 0; c < layer.n_i; ++c) {
            const std::size_t j = std::size_t(idx[r * layer.n_i + c]);
            out(r, c) = float(scale * double(half_bits_to_float(layer.codewords[base + j])));
        }
    }
    return out;
}

ModelContainer decompress_model(const CompressedModel& model) {
    ModelContainer out;
    out.dtype_stored = StorageType::f16;
    out.layers.reserve(model.layers.size());
    for (const CompressedLayer& cl : model.layers) {
        LinearLayer layer;
        layer.weights = reconstruct_layer_weights(cl);
        layer.activation = cl.activation;
        if (cl.has_bias) {
            layer.bias.resize(cl.n_o);
            for (std::size_t o = 0; o < cl.n_o; ++o) layer.bias[o] = half_bits_to_float(cl.bias[o]);
        }
        out.layers.push_back(std::move(layer));
    }
    return out;
}

Matf forward_compressed(const CompressedModel& model, const Matf& inputs) {
    Matf x = inputs;
    for (const CompressedLayer& cl : model.layers) {
        LinearLayer layer;
        layer.weights = reconstruct_layer_weights(cl);
        layer.activation = cl.activation;
        if (cl.has_bias) {
            layer.bias.resize(cl.n_o);
            for (std::size_t o = 0; o < cl.n_o; ++o) layer.bias[o] = half_bits_to_float(cl.bias[o]);
        }
        x = layer_forward(layer, x);
    }
    return x;
}

namespace {

std::uint64_t original_parameter_count(const ModelContainer& model) {
    std::uint64_t params = 0;
    for (const LinearLayer& layer : model.layers)
        params += std::uint64_t(layer.weights.size()) + layer.bias.size();
    return params;
}

std::uint64_t peak_activation_bits(std::size_t num_layers,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& shapes) {
    // sequential two-buffer execution: input and output live at once, f16
    std::uint64_t peak = 0;
    for (std::size_t l = 0; l < num_layers; ++l)
        peak = std::max<std::uint64_t>(peak, 16ull * (shapes[l].first + shapes[l].second));
    return peak;
}

FootprintReport assemble(std::uint64_t m_w, std::uint64_t m_a, std::uint64_t m_ref,
                         std::vector<LayerFootprint> per_layer) {
    FootprintReport rep;
    rep.m_w_bits = m_w;
    rep.m_a_bits = m_a;
    rep.m_ref_bits = m_ref;
    rep.m_total_bits = m_w + m_a;
    rep.alpha_achieved = double(m_ref) / double(rep.m_total_bits);
    rep.alpha_weights = double(m_ref) / double(m_w);
    rep.per_layer = std::move(per_layer);
    return rep;
}

} // namespace

FootprintReport measure_footprint(const CompressedModel& model, const ModelContainer& original) {
    if (model.layers.size() != original.layers.size())
        throw std::invalid_argument("layer count mismatch between compressed and original");

    std::uint64_t m_w = 0;
    std::vector<LayerFootprint> per_layer;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const CompressedLayer& cl = model.layers[l];
        LayerFootprint f;
        f.layer = l;
        f.codeword_bits = 16ull * cl.codewords.size();
        f.scale_bits = 16ull * cl.scales.size();
        f.bias_bits = 16ull * cl.bias.size();
        f.index_bits = std::uint64_t(cl.bits_per_index()) * cl.n_o * cl.n_i;
        f.weight_bits = f.codeword_bits + f.scale_bits + f.bias_bits + f.index_bits;
        m_w += f.weight_bits;
        per_layer.push_back(f);
        shapes.emplace_back(cl.n_i, cl.n_o);
    }
    const std::uint64_t m_a = peak_activation_bits(model.layers.size(), shapes);
    const std::uint64_t m_ref = 16ull * original_parameter_count(original);
    return assemble(m_w, m_a, m_ref, std::move(per_layer));
}

FootprintReport measure_footprint(const ModelContainer& original) {
    std::uint64_t m_w = 0;
    std::vector<LayerFootprint> per_layer;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    for (std::size_t l = 0; l < original.layers.size(); ++l) {
        const LinearLayer& layer = original.layers[l];
        LayerFootprint f;
        f.layer = l;
        f.index_bits = 16ull * layer.weights.size(); // raw f16 weights
        f.bias_bits = 16ull * layer.bias.size();
        f.weight_bits = f.index_bits + f.bias_bits;
        m_w += f.weight_bits;
        per_layer.push_back(f);
        shapes.emplace_back(layer.n_in(), layer.n_out());
    }
    const std::uint64_t m_a = peak_activation_bits(original.layers.size(), shapes);
    const std::uint64_t m_ref = 16ull * original_parameter_count(original);
    return assemble(m_w, m_a, m_ref, std::move(per_layer));
}

namespace {

void append_u8(std::vector<std::uint8_t>& buf, std::uint8_t v) { buf.push_back(v); }

void append_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
    buf.push_back(std::uint8_t(v & 0xff));
    buf.push_back(std::uint8_t(v >> 8));
}

void append_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
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
    void bytes(std::uint8_t* out, std::size_t n) {
        need(n);
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_)
            throw IoError(IoError::Kind::truncated, "compressed stream truncated");
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

bool power_of_two(std::uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

} // namespace

void serialize_compressed(const CompressedModel& model, const std::string& path) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), {'J', 'L', 'C', 'Z'});
    append_u8(buf, 1);
    append_u32(buf, std::uint32_t(model.layers.size()));
    for (const CompressedLayer& cl : model.layers) {
        append_u8(buf, std::uint8_t(cl.mode));
        append_u32(buf, cl.n_o);
        append_u32(buf, cl.n_i);
        append_u8(buf, std::uint8_t(cl.activation));
        append_u8(buf, cl.has_bias ? 1 : 0);
        append_u16(buf, cl.codebook_size);
        append_u16(buf, cl.num_codebooks);
        append_u32(buf, cl.num_scales);
        for (std::uint16_t w : cl.codewords) append_u16(buf, w);
        for (std::uint16_t s : cl.scales) append_u16(buf, s);
        for (std::uint16_t b : cl.bias) append_u16(buf, b);
        append_u32(buf, std::uint32_t(cl.packed_indices.size()));
        buf.insert(buf.end(), cl.packed_indices.begin(), cl.packed_indices.end());
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::io_failure, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw IoError(IoError::Kind::io_failure, "write failed for " + path);
}

CompressedModel deserialize_compressed(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::io_failure, "cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    Reader r(buf.data(), buf.size());

    char magic[4];
    r.bytes(reinterpret_cast<std::uint8_t*>(magic), 4);
    if (std::memcmp(magic, "JLCZ", 4) != 0)
        throw IoError(IoError::Kind::bad_magic, "bad magic: not a JLCZ file");
    const std::uint8_t version = r.u8();
    if (version != 1)
        throw IoError(IoError::Kind::bad_version,
                      "unsupported compressed version " + std::to_string(version));

    CompressedModel model;
    const std::uint32_t num_layers = r.u32();
    model.layers.resize(num_layers);
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        CompressedLayer& cl = model.layers[l];
        const std::uint8_t mode = r.u8();
        if (mode > 1)
            throw IoError(IoError::Kind::bad_header, "bad mode tag at layer " + std::to_string(l));
        cl.mode = PlanMode(mode);
        cl.n_o = r.u32();
        cl.n_i = r.u32();
        const std::uint8_t act = r.u8();
        if (act > 2)
            throw IoError(IoError::Kind::bad_header,
                          "unknown activation tag at layer " + std::to_string(l));
        cl.activation = Activation(act);
        cl.has_bias = r.u8() != 0;
        cl.codebook_size = r.u16();
        cl.num_codebooks = r.u16();
        cl.num_scales = r.u32();

        if (cl.n_o == 0 || cl.n_i == 0)
            throw IoError(IoError::Kind::bad_header,
                          "layer " + std::to_string(l) + " has an empty dimension");
        if (!power_of_two(cl.codebook_size) || cl.codebook_size < 2 || cl.codebook_size > 256)
            throw IoError(IoError::Kind::bad_header,
                          "codebook size must be a power of two in [2, 256]");
        if (cl.mode == PlanMode::multi_codebook &&
            (cl.num_scales != 0 || cl.num_codebooks == 0 || cl.num_codebooks > cl.n_o))
            throw IoError(IoError::Kind::bad_header, "bad multi-codebook group counts");
        if (cl.mode == PlanMode::multi_scale &&
            (cl.num_codebooks != 1 || cl.num_scales == 0 || cl.num_scales > cl.n_o))
            throw IoError(IoError::Kind::bad_header, "bad multi-scale group counts");

        cl.codewords.resize(std::size_t(cl.num_codebooks) * cl.codebook_size);
        for (auto& w : cl.codewords) w = r.u16();
        cl.scales.resize(cl.num_scales);
        for (auto& s : cl.scales) s = r.u16();
        if (cl.has_bias) {
            cl.bias.resize(cl.n_o);
            for (auto& b : cl.bias) b = r.u16();
        }

        const std::uint32_t stream_len = r.u32();
        const std::uint64_t expect =
            (std::uint64_t(cl.bits_per_index()) * cl.n_o * cl.n_i + 7) / 8;
        if (stream_len != expect)
            throw IoError(IoError::Kind::corrupt_payload,
                          "bitstream length mismatch at layer " + std::to_string(l));
        cl.packed_indices.resize(stream_len);
        r.bytes(cl.packed_indices.data(), stream_len);

        const std::uint64_t used_bits = std::uint64_t(cl.bits_per_index()) * cl.n_o * cl.n_i;
        if (stream_len * 8 > used_bits) {
            const unsigned pad = unsigned(stream_len * 8 - used_bits);
            if (cl.packed_indices.back() >> (8 - pad) != 0)
                throw IoError(IoError::Kind::corrupt_payload,
                              "nonzero padding bits at layer " + std::to_string(l));
        }
    }
    if (r.remaining() != 0)
        throw IoError(IoError::Kind::corrupt_payload, "trailing bytes after the last layer");
    return model;
}

} // namespace jlcm
