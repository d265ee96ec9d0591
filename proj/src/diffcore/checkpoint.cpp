#include "uac/diffcore/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace uac::diffcore {

namespace {

constexpr std::string_view kMagic = "UACCKPT\n";
constexpr std::string_view kSizeKey = "manifest_bytes=";

void append_le(std::string& out, double v)
{
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_le(const char* p)
{
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

std::string mode_name(Mode m)
{
    return m == Mode::train ? "train" : "eval";
}

}  // namespace

nlohmann::json layer_spec_to_json(const LayerSpec& s)
{
    return {{"kind", std::string(to_string(s.kind))},
            {"in", s.in_features},
            {"out", s.out_features},
            {"kernel", s.kernel},
            {"stride", s.stride},
            {"rate", s.rate},
            {"momentum", s.momentum},
            {"eps", s.eps}};
}

LayerSpec layer_spec_from_json(const nlohmann::json& j)
{
    LayerSpec s;
    s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    s.in_features = j.at("in").get<std::size_t>();
    s.out_features = j.at("out").get<std::size_t>();
    s.kernel = j.at("kernel").get<std::size_t>();
    s.stride = j.at("stride").get<std::size_t>();
    s.rate = j.at("rate").get<double>();
    s.momentum = j.at("momentum").get<double>();
    s.eps = j.at("eps").get<double>();
    return s;
}

void CheckpointWriter::set_meta(const std::string& key, nlohmann::json value)
{
    meta_[key] = std::move(value);
}

void CheckpointWriter::add_tensor(const std::string& name, const Tensor& tensor)
{
    for (const auto& [n, t] : tensors_)
        if (n == name)
            throw CheckpointError("duplicate tensor name '" + name + "'");
    tensors_.emplace_back(name, tensor);
}

void CheckpointWriter::add_network(const std::string& name, const Network& net)
{
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& s : net.specs())
        layers.push_back(layer_spec_to_json(s));
    nlohmann::json tensor_names = nlohmann::json::array();
    auto& mutable_net = const_cast<Network&>(net);
    for (auto* p : mutable_net.parameters()) {
        const std::string base = name + "/" + p->name;
        add_tensor(base, p->value);
        add_tensor(base + ".adam_m", p->adam_m);
        add_tensor(base + ".adam_v", p->adam_v);
        tensor_names.push_back(p->name);
    }
    for (auto& b : mutable_net.buffers()) {
        add_tensor(name + "/" + b.name, *b.tensor);
        tensor_names.push_back(b.name);
    }
    networks_[name] = {{"layers", layers},
                       {"input_shape", net.input_shape()},
                       {"output_shape", net.output_shape()},
                       {"step", net.step()},
                       {"mode", mode_name(net.mode())},
                       {"tensors", tensor_names}};
}

std::string CheckpointWriter::serialize() const
{
    std::string blob;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, t] : tensors_) {
        entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}});
        for (double v : t.values())
            append_le(blob, v);
    }
    const nlohmann::json manifest = {{"format", "uac-checkpoint"},
                                     {"version", kCheckpointVersion},
                                     {"meta", meta_},
                                     {"networks", networks_},
                                     {"tensors", entries},
                                     {"blob_bytes", blob.size()}};
    const std::string text = manifest.dump(1);
    std::string out;
    out.reserve(text.size() + blob.size() + 64);
    out += kMagic;
    out += kSizeKey;
    out += std::to_string(text.size());
    out += '\n';
    out += text;
    out += blob;
    return out;
}

void CheckpointWriter::write(const std::filesystem::path& path) const
{
    const std::string bytes = serialize();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw CheckpointError("cannot open '" + path.string() + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os)
        throw CheckpointError("failed writing '" + path.string() + "'");
}

Checkpoint Checkpoint::parse(std::string_view bytes)
{
    if (bytes.substr(0, kMagic.size()) != kMagic)
        throw CheckpointError("not a checkpoint file (bad magic)");
    std::size_t pos = kMagic.size();
    if (bytes.substr(pos, kSizeKey.size()) != kSizeKey)
        throw CheckpointError("checkpoint header missing manifest size");
    pos += kSizeKey.size();
    const auto eol = bytes.find('\n', pos);
    if (eol == std::string_view::npos)
        throw CheckpointError("truncated checkpoint header");
    std::size_t manifest_size = 0;
    try {
        manifest_size = std::stoull(std::string(bytes.substr(pos, eol - pos)));
    }
    catch (const std::exception&) {
        throw CheckpointError("malformed manifest size");
    }
    pos = eol + 1;
    if (bytes.size() - pos < manifest_size)
        throw CheckpointError("truncated checkpoint manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(pos, manifest_size));
    }
    catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    pos += manifest_size;

    Checkpoint ck;
    try {
        if (manifest.at("format") != "uac-checkpoint")
            throw CheckpointError("unexpected checkpoint format tag");
        const int version = manifest.at("version").get<int>();
        if (version != kCheckpointVersion)
            throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
        const auto blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
        const std::string_view blob = bytes.substr(pos);
        if (blob.size() < blob_bytes)
            throw CheckpointError("truncated checkpoint blob: expected " + std::to_string(blob_bytes) + " bytes, found " +
                                  std::to_string(blob.size()));
        if (blob.size() > blob_bytes)
            throw CheckpointError("trailing bytes after checkpoint blob");

        std::size_t expected_offset = 0;
        for (const auto& e : manifest.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            const auto shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::size_t>();
            const auto count = e.at("count").get<std::size_t>();
            if (shape_size(shape) != count || offset != expected_offset || offset + 8 * count > blob_bytes)
                throw CheckpointError("manifest entry '" + name + "' inconsistent with blob layout");
            std::vector<double> values(count);
            for (std::size_t i = 0; i < count; ++i)
                values[i] = read_le(blob.data() + offset + 8 * i);
            if (!ck.tensors_.emplace(name, Tensor(shape, std::move(values))).second)
                throw CheckpointError("duplicate tensor '" + name + "' in manifest");
            expected_offset = offset + 8 * count;
        }
        if (expected_offset != blob_bytes)
            throw CheckpointError("manifest does not account for the whole blob");
        ck.meta_ = manifest.at("meta");
        ck.networks_ = manifest.at("networks");
        for (const auto& [name, net] : ck.networks_.items())
            for (const auto& t : net.at("tensors"))
                if (!ck.has_tensor(name + "/" + t.get<std::string>()))
                    throw CheckpointError("network '" + name + "' references missing tensor '" + t.get<std::string>() +
                                          "'");
    }
    catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest missing or invalid field: ") + e.what());
    }
    catch (const ShapeError& e) {
        throw CheckpointError(std::string("checkpoint tensor shape invalid: ") + e.what());
    }
    return ck;
}

Checkpoint Checkpoint::read(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

const Tensor& Checkpoint::tensor(const std::string& name) const
{
    auto it = tensors_.find(name);
    if (it == tensors_.end())
        throw CheckpointError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

Network Checkpoint::network(const std::string& name) const
{
    if (!has_network(name))
        throw CheckpointError("checkpoint has no network '" + name + "'");
    const auto& j = networks_.at(name);
    try {
        std::vector<LayerSpec> specs;
        for (const auto& l : j.at("layers"))
            specs.push_back(layer_spec_from_json(l));
        Network net(std::move(specs), j.at("input_shape").get<Shape>(), 0);
        if (net.output_shape() != j.at("output_shape").get<Shape>())
            throw CheckpointError("network '" + name + "' output shape does not match its manifest");
        auto load = [&](const std::string& key, Tensor& dst) {
            const Tensor& src = tensor(name + "/" + key);
            if (src.shape() != dst.shape())
                throw CheckpointError("tensor '" + name + "/" + key + "' has shape " + shape_to_string(src.shape()) +
                                      ", network expects " + shape_to_string(dst.shape()));
            dst = src;
        };
        for (auto* p : net.parameters()) {
            load(p->name, p->value);
            load(p->name + ".adam_m", p->adam_m);
            load(p->name + ".adam_v", p->adam_v);
        }
        for (auto& b : net.buffers())
            load(b.name, *b.tensor);
        net.set_step(j.at("step").get<std::uint64_t>());
        net.set_mode(j.at("mode").get<std::string>() == "train" ? Mode::train : Mode::eval);
        return net;
    }
    catch (const nlohmann::json::exception& e) {
        throw CheckpointError("network '" + name + "' manifest invalid: " + e.what());
    }
    catch (const ShapeError& e) {
        throw CheckpointError("network '" + name + "' does not rebuild: " + e.what());
    }
}

}  // namespace uac::diffcore
