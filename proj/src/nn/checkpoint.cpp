#include "ctxlate/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ctxlate::nn {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'C', 'K', 'P', 'T', '1'};

std::uint32_t bswap32(std::uint32_t v) {
    return (v << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::uint64_t bswap64(std::uint64_t v) {
    return (std::uint64_t(bswap32(std::uint32_t(v))) << 32) | bswap32(std::uint32_t(v >> 32));
}

void write_floats(std::ofstream& out, const std::vector<float>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  std::streamsize(v.size() * sizeof(float)));
    } else {
        for (float f : v) {
            auto u = bswap32(std::bit_cast<std::uint32_t>(f));
            out.write(reinterpret_cast<const char*>(&u), 4);
        }
    }
}

void read_floats(std::ifstream& in, std::vector<float>& v) {
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
    if constexpr (std::endian::native == std::endian::big) {
        for (float& f : v) f = std::bit_cast<float>(bswap32(std::bit_cast<std::uint32_t>(f)));
    }
}

std::uint64_t to_le64(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) return bswap64(v);
    return v;
}

nlohmann::json describe(const CheckpointNet& net) {
    nlohmann::json params = nlohmann::json::array();
    std::uint64_t total = 0;
    for (const auto& p : net.params) {
        params.push_back({{"name", p.name}, {"count", p.value->size()}});
        total += p.value->size();
    }
    nlohmann::json j{{"name", net.name}, {"params", params}, {"total", total}};
    if (net.opt) j["adam_updates"] = net.opt->update_count();
    return j;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<CheckpointNet>& nets) {
    nlohmann::json header{{"format", "ctxlate-checkpoint"}, {"version", 1}, {"meta", meta}};
    header["networks"] = nlohmann::json::array();
    for (const auto& n : nets) header["networks"].push_back(describe(n));
    const std::string hs = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, 8);
    std::uint64_t len = to_le64(hs.size());
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& n : nets) {
        for (const auto& p : n.params) write_floats(out, *p.value);
        if (n.opt) {
            write_floats(out, n.opt->moment1());
            write_floats(out, n.opt->moment2());
        }
    }
    out.flush();
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::filesystem::path& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    len = to_le64(len);
    if (!in || len == 0 || len > (1ULL << 30))
        throw std::runtime_error("corrupt checkpoint header length: " + path.string());
    std::string hs(len, '\0');
    in.read(hs.data(), std::streamsize(len));
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path.string());
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "ctxlate-checkpoint" ||
        header.value("version", 0) != 1)
        throw std::runtime_error("unrecognized checkpoint header: " + path.string());
    return header;
}

}  // namespace

nlohmann::json load_checkpoint(const std::filesystem::path& path,
                               const std::vector<CheckpointNet>& nets) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    nlohmann::json header = read_header(in, path);

    const auto& jnets = header.at("networks");
    if (jnets.size() != nets.size())
        throw std::runtime_error("checkpoint holds " + std::to_string(jnets.size()) +
                                 " networks, expected " + std::to_string(nets.size()));
    for (size_t i = 0; i < nets.size(); ++i) {
        const auto& jn = jnets.at(i);
        const auto& net = nets[i];
        if (jn.at("name").get<std::string>() != net.name)
            throw std::runtime_error("checkpoint network '" + jn.at("name").get<std::string>() +
                                     "' does not match expected '" + net.name + "'");
        const auto& jp = jn.at("params");
        if (jp.size() != net.params.size())
            throw std::runtime_error("checkpoint parameter list mismatch for " + net.name);
        for (size_t k = 0; k < net.params.size(); ++k) {
            if (jp.at(k).at("name").get<std::string>() != net.params[k].name ||
                jp.at(k).at("count").get<std::uint64_t>() != net.params[k].value->size())
                throw std::runtime_error("checkpoint tensor mismatch at " + net.name + "/" +
                                         net.params[k].name);
        }
        for (const auto& p : net.params) read_floats(in, *p.value);
        const bool stored_opt = jn.contains("adam_updates");
        if (net.opt) {
            if (!stored_opt)
                throw std::runtime_error("checkpoint lacks optimizer state for " + net.name);
            read_floats(in, net.opt->moment1());
            read_floats(in, net.opt->moment2());
            net.opt->set_update_count(jn.at("adam_updates").get<std::int64_t>());
        } else if (stored_opt) {
            const auto total = jn.at("total").get<std::uint64_t>();
            in.seekg(std::streamoff(2 * total * sizeof(float)), std::ios::cur);
        }
        if (!in) throw std::runtime_error("truncated checkpoint payload: " + path.string());
    }
    in.peek();
    if (!in.eof())
        throw std::runtime_error("checkpoint has trailing bytes: " + path.string());
    return header.at("meta");
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    nlohmann::json header = read_header(in, path);
    nlohmann::json out = header.at("meta");
    out["networks"] = header.at("networks");
    return out;
}

}  // namespace ctxlate::nn
