#pragma once

// Named parameter store with per-parameter group tags (the encoder group gets
// a scaled learning rate), plus the "SEDC" checkpoint format:
//   magic "SEDC", version u32, count u32, then per record
//   name (u16 length + UTF-8), rank u8, extents u32[rank], values f32 LE.
// Values are stored as f32 regardless of compute precision; round-trips are
// bit-exact in f32 mode.

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sed/tensor.hpp"
#include "sed/wire.hpp"

namespace sed {

enum class ParamGroup { encoder, decoder, aux };

inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::encoder: return "encoder";
        case ParamGroup::decoder: return "decoder";
        default: return "aux";
    }
}

template <typename T>
class ParamSet {
public:
    struct Entry {
        std::string name;
        ParamGroup group;
        Tensor<T> tensor;
    };

    Tensor<T>& add(const std::string& name, ParamGroup group, Tensor<T> t) {
        if (index_.count(name))
            throw std::invalid_argument("ParamSet: duplicate parameter name \"" + name + "\"");
        if (!t.requires_grad())
            throw std::invalid_argument("ParamSet: parameter \"" + name +
                                        "\" must have requires_grad");
        index_[name] = entries_.size();
        entries_.push_back({name, group, std::move(t)});
        return entries_.back().tensor;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("ParamSet: unknown parameter \"" + name + "\"");
        return entries_[it->second].tensor;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("ParamSet: unknown parameter \"" + name + "\"");
        return entries_[it->second].tensor;
    }

    size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Extra records written next to parameters (optimizer state, step counter).
struct CheckpointExtra {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

namespace detail {

inline void write_record(std::ostream& os, const std::string& name, const Shape& shape,
                         const std::vector<float>& values) {
    if (name.size() > 65535) throw IoError("checkpoint: parameter name too long: " + name);
    wire::put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    wire::put_u8(os, static_cast<uint8_t>(shape.size()));
    for (int d : shape) wire::put_u32(os, static_cast<uint32_t>(d));
    for (float v : values) wire::put_f32(os, v);
}

}  // namespace detail

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const ParamSet<T>& params,
                     const std::vector<CheckpointExtra>& extras = {}) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    wire::put_magic(os, "SEDC");
    wire::put_u32(os, kCheckpointVersion);
    wire::put_u32(os, static_cast<uint32_t>(params.size() + extras.size()));
    std::vector<float> buf;
    for (const auto& e : params.entries()) {
        const auto& vals = e.tensor.values();
        buf.assign(vals.begin(), vals.end());
        detail::write_record(os, e.name, e.tensor.shape(), buf);
    }
    for (const auto& x : extras) detail::write_record(os, x.name, x.shape, x.values);
    if (!os) throw IoError("write failed: " + path);
}

// Raw read of every record in file order.
inline std::vector<CheckpointExtra> read_checkpoint_records(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    wire::expect_magic(is, "SEDC", path);
    const uint32_t version = wire::get_u32(is, path);
    if (version != kCheckpointVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = wire::get_u32(is, path);
    std::vector<CheckpointExtra> records;
    records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointExtra rec;
        const uint16_t len = wire::get_u16(is, path);
        rec.name.resize(len);
        is.read(rec.name.data(), len);
        if (is.gcount() != len) throw IoError(path + ": unexpected end of file");
        const uint8_t rank = wire::get_u8(is, path);
        rec.shape.resize(rank);
        int64_t n = 1;
        for (int d = 0; d < rank; ++d) {
            rec.shape[static_cast<size_t>(d)] = static_cast<int>(wire::get_u32(is, path));
            n *= rec.shape[static_cast<size_t>(d)];
        }
        rec.values.resize(static_cast<size_t>(n));
        for (auto& v : rec.values) v = wire::get_f32(is, path);
        records.push_back(std::move(rec));
    }
    return records;
}

// Loads parameter values into an already-built ParamSet (shapes must agree).
// Records that do not name a parameter are returned for the caller (optimizer
// state and the like).
template <typename T>
std::vector<CheckpointExtra> load_checkpoint(const std::string& path, ParamSet<T>& params) {
    auto records = read_checkpoint_records(path);
    std::vector<CheckpointExtra> extras;
    std::unordered_map<std::string, bool> filled;
    for (const auto& e : params.entries()) filled[e.name] = false;
    for (auto& rec : records) {
        if (!params.contains(rec.name)) {
            extras.push_back(std::move(rec));
            continue;
        }
        auto& t = params.at(rec.name);
        if (t.shape() != rec.shape)
            throw IoError(path + ": parameter \"" + rec.name + "\" has shape " +
                          shape_str(rec.shape) + ", model expects " + shape_str(t.shape()));
        auto& dst = t.mutable_values();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
        filled[rec.name] = true;
    }
    for (const auto& e : params.entries())
        if (!filled[e.name])
            throw IoError(path + ": missing parameter \"" + e.name + "\"");
    return extras;
}

}  // namespace sed
