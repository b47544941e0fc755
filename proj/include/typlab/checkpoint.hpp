#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "typlab/common.hpp"
#include "typlab/io.hpp"
#include "typlab/nn.hpp"

namespace typlab::checkpoint {

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), used for artifact and freeze-integrity hashes.
// ---------------------------------------------------------------------------

namespace sha {

inline constexpr std::array<std::uint32_t, 64> kK = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

}  // namespace sha

inline std::string sha256_hex(const std::string& input) {
    std::array<std::uint32_t, 8> h = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                      0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    std::string msg = input;
    const std::uint64_t bitlen = static_cast<std::uint64_t>(msg.size()) * 8;
    msg.push_back('\x80');
    while (msg.size() % 64 != 56) msg.push_back('\0');
    for (int i = 7; i >= 0; --i) msg.push_back(static_cast<char>((bitlen >> (8 * i)) & 0xff));

    std::array<std::uint32_t, 64> w{};
    for (std::size_t chunk = 0; chunk < msg.size(); chunk += 64) {
        for (int i = 0; i < 16; ++i)
            w[static_cast<std::size_t>(i)] =
                (static_cast<std::uint32_t>(static_cast<unsigned char>(msg[chunk + 4 * i])) << 24) |
                (static_cast<std::uint32_t>(static_cast<unsigned char>(msg[chunk + 4 * i + 1]))
                 << 16) |
                (static_cast<std::uint32_t>(static_cast<unsigned char>(msg[chunk + 4 * i + 2]))
                 << 8) |
                static_cast<std::uint32_t>(static_cast<unsigned char>(msg[chunk + 4 * i + 3]));
        for (int i = 16; i < 64; ++i) {
            const std::uint32_t s0 = sha::rotr(w[i - 15], 7) ^ sha::rotr(w[i - 15], 18) ^
                                     (w[i - 15] >> 3);
            const std::uint32_t s1 = sha::rotr(w[i - 2], 17) ^ sha::rotr(w[i - 2], 19) ^
                                     (w[i - 2] >> 10);
            w[static_cast<std::size_t>(i)] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        auto [a, b, c, d, e, f, g, hh] = h;
        for (int i = 0; i < 64; ++i) {
            const std::uint32_t s1 = sha::rotr(e, 6) ^ sha::rotr(e, 11) ^ sha::rotr(e, 25);
            const std::uint32_t ch = (e & f) ^ (~e & g);
            const std::uint32_t temp1 = hh + s1 + ch + sha::kK[static_cast<std::size_t>(i)] +
                                        w[static_cast<std::size_t>(i)];
            const std::uint32_t s0 = sha::rotr(a, 2) ^ sha::rotr(a, 13) ^ sha::rotr(a, 22);
            const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            const std::uint32_t temp2 = s0 + maj;
            hh = g;
            g = f;
            f = e;
            e = d + temp1;
            d = c;
            c = b;
            b = a;
            a = temp1 + temp2;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
        h[5] += f;
        h[6] += g;
        h[7] += hh;
    }
    std::string hex;
    hex.reserve(64);
    for (std::uint32_t v : h)
        for (int i = 7; i >= 0; --i) hex.push_back("0123456789abcdef"[(v >> (4 * i)) & 0xf]);
    return hex;
}

inline std::string file_sha256(const io::fs::path& path) {
    return sha256_hex(io::read_file(path));
}

// ---------------------------------------------------------------------------
// TYPC checkpoint container: magic, version, role/domain tags, config hash,
// tensor name/shape table, then flat little-endian float32 blobs in the
// declared order. A JSON sidecar lists tensor names and shapes.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::string role;
    std::string domain;
    std::string config_hash;
    std::vector<NamedTensor> tensors;

    const NamedTensor& find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return t;
        throw PersistenceError("checkpoint: missing tensor " + name);
    }
};

namespace detail {

inline void put_string(std::string& out, const std::string& s) {
    io::put_u32_le(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

inline std::string get_string(io::Reader& r) { return r.bytes(r.u32()); }

}  // namespace detail

template <typename T>
Checkpoint snapshot(const nn::ParamList<T>& params, const std::string& role,
                    const std::string& domain, const std::string& config_hash) {
    Checkpoint ckpt;
    ckpt.role = role;
    ckpt.domain = domain;
    ckpt.config_hash = config_hash;
    for (const auto& p : params) {
        NamedTensor t;
        t.name = p.name;
        t.shape = p.value->shape;
        t.data.reserve(p.value->numel());
        for (const auto& v : p.value->data) t.data.push_back(static_cast<float>(v));
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

inline std::string serialize(const Checkpoint& ckpt) {
    std::string out;
    out += "TYPC";
    io::put_u32_le(out, kCheckpointVersion);
    detail::put_string(out, ckpt.role);
    detail::put_string(out, ckpt.domain);
    detail::put_string(out, ckpt.config_hash);
    io::put_u32_le(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        detail::put_string(out, t.name);
        io::put_u32_le(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) io::put_u32_le(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& t : ckpt.tensors)
        for (float v : t.data) io::put_f32_le(out, v);
    return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
    io::Reader r(bytes);
    if (r.bytes(4) != "TYPC") throw PersistenceError("bad checkpoint magic");
    if (r.u32() != kCheckpointVersion) throw PersistenceError("unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.role = detail::get_string(r);
    ckpt.domain = detail::get_string(r);
    ckpt.config_hash = detail::get_string(r);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = detail::get_string(r);
        const std::uint32_t nd = r.u32();
        for (std::uint32_t d = 0; d < nd; ++d) t.shape.push_back(static_cast<int>(r.u32()));
        ckpt.tensors.push_back(std::move(t));
    }
    for (auto& t : ckpt.tensors) {
        std::size_t n = 1;
        for (int d : t.shape) n *= static_cast<std::size_t>(d);
        t.data.reserve(n);
        for (std::size_t i = 0; i < n; ++i) t.data.push_back(r.f32());
    }
    return ckpt;
}

inline void write(const io::fs::path& path, const Checkpoint& ckpt) {
    io::atomic_write_file(path, serialize(ckpt));
    nlohmann::json sidecar;
    sidecar["role"] = ckpt.role;
    sidecar["domain"] = ckpt.domain;
    sidecar["config_hash"] = ckpt.config_hash;
    sidecar["tensors"] = nlohmann::json::array();
    for (const auto& t : ckpt.tensors)
        sidecar["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
    io::atomic_write_file(path.string() + ".json", sidecar.dump(2) + "\n");
}

inline Checkpoint read(const io::fs::path& path) {
    if (!io::fs::exists(path))
        throw DependencyError("missing checkpoint: " + path.string());
    return deserialize(io::read_file(path));
}

/// Copies checkpoint tensors into live parameters, matching by name and
/// shape in order.
template <typename T>
void load_into(const Checkpoint& ckpt, nn::ParamList<T>& params) {
    if (ckpt.tensors.size() != params.size())
        throw ShapeError("checkpoint: tensor count mismatch (" +
                         std::to_string(ckpt.tensors.size()) + " vs " +
                         std::to_string(params.size()) + ")");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const NamedTensor& t = ckpt.tensors[i];
        if (t.name != params[i].name)
            throw ShapeError("checkpoint: tensor name mismatch at " + t.name + " vs " +
                             params[i].name);
        if (t.shape != params[i].value->shape)
            throw ShapeError("checkpoint: shape mismatch for " + t.name);
        for (std::size_t j = 0; j < t.data.size(); ++j)
            params[i].value->data[j] = static_cast<T>(t.data[j]);
    }
}

/// Content hash of the current parameter values (freeze-integrity checks).
template <typename T>
std::string params_sha256(const nn::ParamList<T>& params) {
    std::string blob;
    for (const auto& p : params) {
        blob += p.name;
        for (const auto& v : p.value->data) io::put_f32_le(blob, static_cast<float>(v));
    }
    return sha256_hex(blob);
}

}  // namespace typlab::checkpoint
