#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dit/lora.hpp"

namespace dit {

// Named-tensor archive in the safetensors layout: an 8-byte little-endian
// header length, a JSON header mapping tensor names to dtype/shape/offsets,
// then the raw payload. Keys are stored sorted, offsets dense in key order,
// so archives are byte-deterministic.

struct TensorEntry {
    std::string dtype; // "F32" or "F64"
    std::vector<int64_t> shape;
    std::string bytes; // raw little-endian payload
};

using TensorMap = std::map<std::string, TensorEntry>;

void save_tensor_archive(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_tensor_archive(const std::filesystem::path& path);

template <typename T>
TensorEntry tensor_entry(const Mat<T>& m) {
    TensorEntry e;
    e.dtype = sizeof(T) == 4 ? "F32" : "F64";
    e.shape = {m.rows, m.cols};
    e.bytes.assign(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(T));
    return e;
}

template <typename T>
Mat<T> mat_from_entry(const TensorEntry& e, const std::string& name) {
    const std::string want = sizeof(T) == 4 ? "F32" : "F64";
    if (e.dtype != want) throw io_error("tensor '" + name + "' has dtype " + e.dtype + ", expected " + want);
    if (e.shape.size() != 2) throw io_error("tensor '" + name + "' is not 2-D");
    Mat<T> m(static_cast<int>(e.shape[0]), static_cast<int>(e.shape[1]));
    if (e.bytes.size() != m.size() * sizeof(T)) throw io_error("tensor '" + name + "' payload size mismatch");
    std::memcpy(m.data(), e.bytes.data(), e.bytes.size());
    return m;
}

// ---------------------------------------------------------------------------
// Diff / adapter archives: factors keyed `layers.{l}.{site}.{A|B}` (dense
// diffs use `.delta`), metadata in a `.json` sidecar next to the archive.
// ---------------------------------------------------------------------------

void save_diff(const WeightDiff& diff, const std::filesystem::path& path);

// Empty `expect_base_model_id` skips the strict base-model check.
WeightDiff load_diff(const std::filesystem::path& path, const std::string& expect_base_model_id = "");

inline void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path) {
    save_diff(WeightDiff::from_adapter(adapter), path);
}

LoraAdapter load_adapter(const std::filesystem::path& path, const std::string& expect_base_model_id = "");

} // namespace dit
