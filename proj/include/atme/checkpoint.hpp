#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "atme/tensor.hpp"

namespace atme {

// Single-file checkpoint container: a JSON metadata document followed by raw
// named tensors. Tensors are written sorted by name and JSON objects are
// key-sorted, so saving the same logical state twice produces byte-identical
// files (the resume-fidelity contract leans on this).
//
// Layout, little-endian:
//   magic "ATMECKPT" | u32 version | u64 meta_len | meta bytes
//   u64 tensor_count | per tensor: u64 name_len, name, u8 dtype (0=f32,
//   1=f64), u32 ndim, i32 dims..., payload bytes
namespace ckpt_detail {

constexpr char kMagic[8] = {'A', 'T', 'M', 'E', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

}  // namespace ckpt_detail

class CheckpointWriter {
  public:
    nlohmann::json& meta() { return meta_; }

    void add_tensor(const std::string& name, const Tensor<float>& t) {
        add_raw(name, 0, t.shape(), reinterpret_cast<const char*>(t.data()),
                size_t(t.size()) * sizeof(float));
    }

    void add_tensor(const std::string& name, const Tensor<double>& t) {
        add_raw(name, 1, t.shape(), reinterpret_cast<const char*>(t.data()),
                size_t(t.size()) * sizeof(double));
    }

    void write(const std::string& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw CheckpointError("checkpoint: cannot open for writing: " + path);
        os.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
        ckpt_detail::write_pod<uint32_t>(os, ckpt_detail::kVersion);
        const std::string meta = meta_.dump();
        ckpt_detail::write_pod<uint64_t>(os, meta.size());
        os.write(meta.data(), std::streamsize(meta.size()));
        ckpt_detail::write_pod<uint64_t>(os, tensors_.size());
        for (const auto& [name, entry] : tensors_) {
            ckpt_detail::write_pod<uint64_t>(os, name.size());
            os.write(name.data(), std::streamsize(name.size()));
            ckpt_detail::write_pod<uint8_t>(os, entry.dtype);
            ckpt_detail::write_pod<uint32_t>(os, uint32_t(entry.shape.size()));
            for (int d : entry.shape) ckpt_detail::write_pod<int32_t>(os, d);
            os.write(entry.bytes.data(), std::streamsize(entry.bytes.size()));
        }
        if (!os) throw CheckpointError("checkpoint: write failed for " + path);
    }

  private:
    struct Entry {
        uint8_t dtype;
        std::vector<int> shape;
        std::vector<char> bytes;
    };

    void add_raw(const std::string& name, uint8_t dtype, const std::vector<int>& shape,
                 const char* data, size_t nbytes) {
        check(!name.empty(), "checkpoint: empty tensor name");
        check(tensors_.count(name) == 0, "checkpoint: duplicate tensor " + name);
        Entry e;
        e.dtype = dtype;
        e.shape = shape;
        e.bytes.assign(data, data + nbytes);
        tensors_.emplace(name, std::move(e));
    }

    nlohmann::json meta_ = nlohmann::json::object();
    std::map<std::string, Entry> tensors_;
};

class CheckpointReader {
  public:
    explicit CheckpointReader(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw CheckpointError("checkpoint: cannot open " + path);
        char magic[8];
        is.read(magic, sizeof(magic));
        if (!is || std::memcmp(magic, ckpt_detail::kMagic, sizeof(magic)) != 0)
            throw CheckpointError("checkpoint: bad magic in " + path);
        const auto version = ckpt_detail::read_pod<uint32_t>(is, "version");
        if (version != ckpt_detail::kVersion)
            throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
        const auto meta_len = ckpt_detail::read_pod<uint64_t>(is, "meta length");
        std::string meta(meta_len, '\0');
        is.read(meta.data(), std::streamsize(meta_len));
        if (!is) throw CheckpointError("checkpoint: truncated metadata in " + path);
        try {
            meta_ = nlohmann::json::parse(meta);
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(std::string("checkpoint: malformed metadata: ") + e.what());
        }
        const auto count = ckpt_detail::read_pod<uint64_t>(is, "tensor count");
        for (uint64_t i = 0; i < count; ++i) {
            const auto name_len = ckpt_detail::read_pod<uint64_t>(is, "name length");
            std::string name(name_len, '\0');
            is.read(name.data(), std::streamsize(name_len));
            const auto dtype = ckpt_detail::read_pod<uint8_t>(is, "dtype");
            const auto ndim = ckpt_detail::read_pod<uint32_t>(is, "ndim");
            Entry e;
            e.dtype = dtype;
            int64_t n = 1;
            for (uint32_t d = 0; d < ndim; ++d) {
                const auto dim = ckpt_detail::read_pod<int32_t>(is, "dim");
                e.shape.push_back(dim);
                n *= dim;
            }
            const size_t elem = dtype == 0 ? sizeof(float) : sizeof(double);
            e.bytes.resize(size_t(n) * elem);
            is.read(e.bytes.data(), std::streamsize(e.bytes.size()));
            if (!is) throw CheckpointError("checkpoint: truncated tensor " + name);
            tensors_.emplace(std::move(name), std::move(e));
        }
    }

    const nlohmann::json& meta() const { return meta_; }
    bool has(const std::string& name) const { return tensors_.count(name) > 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [name, e] : tensors_) out.push_back(name);
        return out;
    }

    Tensor<float> tensor_f32(const std::string& name) const { return typed<float>(name, 0); }
    Tensor<double> tensor_f64(const std::string& name) const { return typed<double>(name, 1); }

  private:
    struct Entry {
        uint8_t dtype;
        std::vector<int> shape;
        std::vector<char> bytes;
    };

    template <typename T>
    Tensor<T> typed(const std::string& name, uint8_t dtype) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw CheckpointError("checkpoint: missing tensor " + name);
        if (it->second.dtype != dtype)
            throw CheckpointError("checkpoint: dtype mismatch for " + name);
        Tensor<T> t(it->second.shape);
        std::memcpy(t.data(), it->second.bytes.data(), it->second.bytes.size());
        return t;
    }

    nlohmann::json meta_;
    std::map<std::string, Entry> tensors_;
};

}  // namespace atme
