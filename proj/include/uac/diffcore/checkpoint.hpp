#pragma once

#include "uac/diffcore/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace uac::diffcore {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

// File layout:
//   "UACCKPT\n"
//   "manifest_bytes=<N>\n"
//   <N bytes of JSON manifest>
//   <blob: little-endian float64 arrays, row-major, at the manifest's byte offsets>
//
// The manifest lists networks (layer specs, input shape, Adam step, mode),
// tensors (name, shape, offset, count) and free-form metadata.
class CheckpointWriter {
public:
    void set_meta(const std::string& key, nlohmann::json value);
    void add_tensor(const std::string& name, const Tensor& tensor);
    // Parameters, Adam moments and batch-norm running statistics.
    void add_network(const std::string& name, const Network& net);

    std::string serialize() const;
    void write(const std::filesystem::path& path) const;

private:
    nlohmann::json meta_ = nlohmann::json::object();
    nlohmann::json networks_ = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors_;
};

class Checkpoint {
public:
    // Throws CheckpointError on bad magic, version mismatch, truncation, or
    // manifest/blob inconsistency.
    static Checkpoint parse(std::string_view bytes);
    static Checkpoint read(const std::filesystem::path& path);

    const nlohmann::json& meta() const { return meta_; }
    bool has_tensor(const std::string& name) const { return tensors_.count(name) != 0; }
    const Tensor& tensor(const std::string& name) const;
    bool has_network(const std::string& name) const { return networks_.contains(name); }
    Network network(const std::string& name) const;

private:
    nlohmann::json meta_;
    nlohmann::json networks_;
    std::map<std::string, Tensor> tensors_;
};

nlohmann::json layer_spec_to_json(const LayerSpec& spec);
LayerSpec layer_spec_from_json(const nlohmann::json& j);

}  // namespace uac::diffcore
