#include "csd/checkpoint.hpp"
#include "csd/tensor_io.hpp"

#include <fstream>
#include <sstream>

namespace csd {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'D', 'C'};
constexpr uint32_t kMaxName = 4096;

void put_string(std::ostream& os, const std::string& s) {
    le::put_u32(os, static_cast<uint32_t>(s.size()));
    le::put_bytes(os, s);
}

std::string get_string(std::istream& is, uint32_t limit) {
    const auto at = static_cast<uint64_t>(is.tellg());
    const uint32_t n = le::get_u32(is);
    if (n > limit) throw FormatError("string length " + std::to_string(n) + " exceeds limit", at);
    return le::get_bytes(is, n);
}

void copy_into(std::span<float> dst, const Checkpoint::NamedTensor& src) {
    if (src.values.size() != dst.size()) {
        throw FormatError("tensor '" + src.name + "' has " + std::to_string(src.values.size()) + " values, expected " +
                              std::to_string(dst.size()),
                          0);
    }
    std::copy(src.values.begin(), src.values.end(), dst.begin());
}

const Checkpoint::NamedTensor& require(const Checkpoint& ckpt, const std::string& name) {
    const auto* t = ckpt.find(name);
    if (!t) throw FormatError("checkpoint is missing tensor '" + name + "'", 0);
    return *t;
}

std::vector<uint64_t> extents_of(const Tensor& t) {
    const Shape& s = t.shape();
    return {static_cast<uint64_t>(s.n()), static_cast<uint64_t>(s.c()), static_cast<uint64_t>(s.h()),
            static_cast<uint64_t>(s.w())};
}

} // namespace

const Checkpoint::NamedTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const Checkpoint::Optimizer* Checkpoint::find_optimizer(const std::string& name) const {
    for (const auto& o : optimizers) {
        if (o.name == name) return &o;
    }
    return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::ostringstream os(std::ios::binary);
    os.write(kMagic, 4);
    le::put_u32(os, kCheckpointVersion);
    put_string(os, ckpt.config.to_text());
    le::put_u32(os, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        put_string(os, t.name);
        write_tensor(os, t.values, t.extents);
    }
    le::put_u32(os, static_cast<uint32_t>(ckpt.optimizers.size()));
    for (const auto& o : ckpt.optimizers) {
        put_string(os, o.name);
        le::put_u64(os, static_cast<uint64_t>(o.state.step));
        le::put_u32(os, static_cast<uint32_t>(o.state.m.size()));
        for (size_t k = 0; k < o.state.m.size(); ++k) {
            write_tensor(os, o.state.m[k], {o.state.m[k].size()});
            write_tensor(os, o.state.v[k], {o.state.v[k].size()});
        }
    }
    le::put_u64(os, ckpt.iteration);
    return os.str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    if (le::get_bytes(is, 4) != std::string(kMagic, 4)) throw FormatError("bad checkpoint magic", 0);
    const uint32_t version = le::get_u32(is);
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    Checkpoint ckpt;
    ckpt.config = KeyValues::parse(get_string(is, 1u << 20), "checkpoint config");
    const uint32_t tensors = le::get_u32(is);
    for (uint32_t k = 0; k < tensors; ++k) {
        Checkpoint::NamedTensor t;
        t.name = get_string(is, kMaxName);
        read_tensor_raw(is, t.extents, t.values);
        ckpt.tensors.push_back(std::move(t));
    }
    const uint32_t opts = le::get_u32(is);
    for (uint32_t k = 0; k < opts; ++k) {
        Checkpoint::Optimizer o;
        o.name = get_string(is, kMaxName);
        o.state.step = static_cast<int64_t>(le::get_u64(is));
        const uint32_t n = le::get_u32(is);
        o.state.m.resize(n);
        o.state.v.resize(n);
        std::vector<uint64_t> ext;
        for (uint32_t i = 0; i < n; ++i) {
            read_tensor_raw(is, ext, o.state.m[i]);
            read_tensor_raw(is, ext, o.state.v[i]);
        }
        ckpt.optimizers.push_back(std::move(o));
    }
    ckpt.iteration = le::get_u64(is);
    if (is.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after checkpoint", static_cast<uint64_t>(is.tellg()));
    }
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = encode_checkpoint(ckpt);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        return decode_checkpoint(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

void capture_model(Checkpoint& ckpt, EnhanceModel& model) {
    model.config().to_kv(ckpt.config);
    for (auto& [name, t] : model.named_parameters()) {
        ckpt.tensors.push_back({name, extents_of(t), std::vector<float>(t.data().begin(), t.data().end())});
    }
    for (auto& [name, buf] : model.named_buffers()) {
        ckpt.tensors.push_back({name, {buf->size()}, *buf});
    }
}

void capture_discriminator(Checkpoint& ckpt, const PatchDiscriminator& disc) {
    disc.config().to_kv(ckpt.config);
    for (auto& [name, t] : disc.named_parameters()) {
        ckpt.tensors.push_back({name, extents_of(t), std::vector<float>(t.data().begin(), t.data().end())});
    }
}

void restore_model(EnhanceModel& model, const Checkpoint& ckpt) {
    for (auto& [name, t] : model.named_parameters()) {
        Tensor handle = t;
        copy_into(handle.data(), require(ckpt, name));
    }
    for (auto& [name, buf] : model.named_buffers()) copy_into(*buf, require(ckpt, name));
}

void restore_discriminator(PatchDiscriminator& disc, const Checkpoint& ckpt) {
    for (auto& [name, t] : disc.named_parameters()) {
        Tensor handle = t;
        copy_into(handle.data(), require(ckpt, name));
    }
}

EnhanceModel load_model(const Checkpoint& ckpt) {
    EnhanceModel model(ModelConfig::from_kv(ckpt.config), 0);
    restore_model(model, ckpt);
    return model;
}

} // namespace csd
