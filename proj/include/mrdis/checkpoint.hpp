#ifndef MRDIS_CHECKPOINT_HPP
#define MRDIS_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrdis/network.hpp"

namespace mrdis {

// Layout: "MRCK", u32 version, u32 length + JSON header, u32 tensor count,
// then per tensor: u16 name length, UTF-8 name, u8 rank, u32 extents, raw
// little-endian values in the header's dtype. The header holds the network
// spec, the dtype, the optimizer step counter and free-form metadata.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
    return std::is_same_v<T, float> ? "f32" : "f64";
}

template <typename T>
struct Checkpoint {
    Network<T> network;
    std::size_t optimizer_step = 0;
    nlohmann::json meta = nlohmann::json::object();
    Digest fingerprint{};  // SHA-256 of the serialized bytes
};

/// Stored tensors of a network (const or mutable) under their file names.
template <typename Net>
auto named_tensors(Net& net) {
    using Ptr = decltype(&net.states()[0].weight);
    std::vector<std::pair<std::string, Ptr>> out;
    auto add = [&](const std::string& name, Ptr t) {
        if (!t->empty()) out.emplace_back(name, t);
    };
    for (std::size_t i = 0; i < net.states().size(); ++i) {
        auto& st = net.states()[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        add(p + "weight", &st.weight);
        add(p + "bias", &st.bias);
        add(p + "running_mean", &st.running_mean);
        add(p + "running_var", &st.running_var);
    }
    if (net.has_aux()) {
        add("aux.weight", &net.aux_state().weight);
        add("aux.bias", &net.aux_state().bias);
    }
    return out;
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Network<T>& net, std::size_t optimizer_step,
                                               const nlohmann::json& meta = nlohmann::json::object()) {
    const nlohmann::json header{{"dtype", dtype_name<T>()},
                                {"network", to_json(net.spec())},
                                {"optimizer_step", optimizer_step},
                                {"meta", meta}};
    const std::string text = header.dump();
    ByteWriter w;
    w.put_magic("MRCK");
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
    w.put_magic(text);
    const auto tensors = named_tensors(net);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.put_magic(name);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t->rank()));
        for (auto e : t->shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
        for (T v : t->values()) w.put<T>(v);
    }
    return std::move(w).take();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, "checkpoint");
    r.expect_magic("MRCK");
    const auto version = r.get<std::uint32_t>();
    require(version == kCheckpointVersion, "bad_version", "unsupported checkpoint version " + std::to_string(version));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.get_string(r.get<std::uint32_t>()));
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad_checkpoint", std::string("checkpoint header: ") + e.what());
    }
    const std::string dtype = header.value("dtype", "");
    require(dtype == "f32" || dtype == "f64", "bad_checkpoint", "unknown dtype '" + dtype + "'");
    auto spec = network_spec_from_json(header.at("network"));

    std::map<std::string, Tensor<T>> stored;
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_string(r.get<std::uint16_t>());
        Shape shape(r.get<std::uint8_t>());
        for (auto& e : shape) e = r.get<std::uint32_t>();
        std::vector<T> values(shape_size(shape));
        for (auto& v : values) v = dtype == "f32" ? static_cast<T>(r.get<float>()) : static_cast<T>(r.get<double>());
        stored.emplace(std::move(name), Tensor<T>(std::move(shape), std::move(values)));
    }
    require(r.at_end(), "bad_checkpoint", "trailing bytes after checkpoint tensors");

    // Rebuild from a zero-seeded template so the expected shapes come from the
    // spec; every tensor must then be present in the file.
    Network<T> net(spec, 0);
    for (const auto& [name, expected] : named_tensors(net)) {
        auto it = stored.find(name);
        require(it != stored.end(), "bad_checkpoint", "checkpoint is missing tensor " + name);
        require_shape(it->second, expected->shape(), name.c_str());
        *expected = std::move(it->second);
        stored.erase(it);
    }
    require(stored.empty(), "bad_checkpoint", "checkpoint has unexpected tensor " +
                                                  (stored.empty() ? std::string() : stored.begin()->first));
    Checkpoint<T> ck{std::move(net), header.value("optimizer_step", std::size_t{0}),
                     header.value("meta", nlohmann::json::object())};
    ck.fingerprint = sha256(bytes);
    return ck;
}

template <typename T>
Digest save_checkpoint(const std::filesystem::path& path, const Network<T>& net, std::size_t optimizer_step,
                       const nlohmann::json& meta = nlohmann::json::object()) {
    const auto bytes = serialize_checkpoint(net, optimizer_step, meta);
    write_file_atomic(path, bytes);
    return sha256(bytes);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint<T>(read_file(path));
}

}  // namespace mrdis

#endif
