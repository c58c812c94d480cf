#include "nestsvd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "nestsvd/errors.hpp"

namespace nestsvd {

namespace {

constexpr char kMagic[8] = {'N', 'S', 'V', 'D', 'C', 'K', 'P', 'T'};

static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559);

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw InputError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

void put_doubles(std::ostream& os, const double* data, Index count) {
    for (Index i = 0; i < count; ++i) put_u64(os, std::bit_cast<std::uint64_t>(data[i]));
}

void get_doubles(std::istream& is, double* data, Index count) {
    for (Index i = 0; i < count; ++i) data[i] = std::bit_cast<double>(get_u64(is));
}

nlohmann::json describe(const ModelSpec& spec) {
    nlohmann::json j;
    j["input_dim"] = spec.input_dim;
    j["output_modes"] = spec.output_modes;
    j["head_mode"] = to_string(spec.head_mode);
    j["hidden_widths"] = spec.hidden_widths;
    j["activation"] = to_string(spec.activation);
    j["domain_size"] = spec.domain_size;
    if (spec.fourier) {
        j["fourier"] = {{"features", spec.fourier->feature_count()},
                        {"scale", spec.fourier->scale},
                        {"append_raw_input", spec.fourier->append_raw_input}};
    } else {
        j["fourier"] = nullptr;
    }
    j["parameter_count"] = spec.parameter_count();
    return j;
}

ModelSpec read_spec(const nlohmann::json& j) {
    ModelSpec spec;
    spec.input_dim = j.at("input_dim").get<Index>();
    spec.output_modes = j.at("output_modes").get<Index>();
    spec.head_mode = parse_head_mode(j.at("head_mode").get<std::string>());
    spec.hidden_widths = j.at("hidden_widths").get<std::vector<Index>>();
    spec.activation = parse_activation(j.at("activation").get<std::string>());
    spec.domain_size = j.at("domain_size").get<Index>();
    if (!j.at("fourier").is_null()) {
        FourierFeatureMap map;
        const auto& fj = j.at("fourier");
        map.projection.resize(fj.at("features").get<Index>(), spec.input_dim);
        map.scale = fj.at("scale").get<double>();
        map.append_raw_input = fj.at("append_raw_input").get<bool>();
        spec.fourier = std::move(map);
    }
    return spec;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
    nlohmann::json desc;
    desc["format"] = "nestsvd-checkpoint";
    desc["version"] = 1;
    desc["byte_order"] = "little";
    desc["models"] = nlohmann::json::array();
    std::uint64_t total = 0;
    for (const auto& e : entries) {
        if (e.params.values.size() != e.spec.parameter_count()) {
            throw InputError("checkpoint entry '" + e.name + "' has a parameter count mismatch");
        }
        nlohmann::json m = describe(e.spec);
        m["name"] = e.name;
        desc["models"].push_back(m);
        total += static_cast<std::uint64_t>(e.params.values.size());
        if (e.spec.fourier) total += static_cast<std::uint64_t>(e.spec.fourier->projection.size());
    }
    const std::string text = desc.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot open " + path.string() + " for writing");
    os.write(kMagic, 8);
    put_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_u64(os, total);
    for (const auto& e : entries) {
        put_doubles(os, e.params.values.data(), e.params.values.size());
        if (e.spec.fourier) {
            // column-major walk of the K x D projection
            put_doubles(os, e.spec.fourier->projection.data(), e.spec.fourier->projection.size());
        }
    }
    if (!os) throw InputError("failed writing " + path.string());
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw InputError(path.string() + " is not a nestsvd checkpoint");
    }
    const std::uint64_t len = get_u64(is);
    std::string text(len, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw InputError("checkpoint truncated");
    const nlohmann::json desc = nlohmann::json::parse(text);
    const std::uint64_t total = get_u64(is);

    std::vector<CheckpointEntry> entries;
    std::uint64_t consumed = 0;
    for (const auto& m : desc.at("models")) {
        CheckpointEntry e;
        e.name = m.at("name").get<std::string>();
        e.spec = read_spec(m);
        e.params.values.resize(e.spec.parameter_count());
        get_doubles(is, e.params.values.data(), e.params.values.size());
        consumed += static_cast<std::uint64_t>(e.params.values.size());
        if (e.spec.fourier) {
            get_doubles(is, e.spec.fourier->projection.data(), e.spec.fourier->projection.size());
            consumed += static_cast<std::uint64_t>(e.spec.fourier->projection.size());
        }
        e.spec.validate();
        entries.push_back(std::move(e));
    }
    if (consumed != total) throw InputError("checkpoint payload count does not match its descriptor");
    return entries;
}

}  // namespace nestsvd
