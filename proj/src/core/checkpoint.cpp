#include "checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace nforge {

namespace {
constexpr char kMagic[7] = {'N', 'F', 'O', 'R', 'G', 'E', '1'};

template <typename T>
void write_le(std::ostream& os, T v) {
    // Host is little-endian on every supported target.
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("tensor file: truncated record");
    return v;
}
}  // namespace

void write_tensor_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("tensor file: cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_le<uint64_t>(os, tensors.size());
    for (const auto& nt : tensors) {
        write_le<uint32_t>(os, static_cast<uint32_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        const Shape& sh = nt.tensor.shape();
        write_le<uint32_t>(os, static_cast<uint32_t>(sh.rank()));
        for (int64_t d : sh.dims) write_le<uint64_t>(os, static_cast<uint64_t>(d));
        os.write(reinterpret_cast<const char*>(nt.tensor.values().data()),
                 static_cast<std::streamsize>(nt.tensor.values().size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("tensor file: write failed: " + path);
}

std::map<std::string, Tensor> read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("tensor file: cannot open: " + path);
    char magic[7];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("tensor file: bad magic in " + path);
    uint64_t count = read_le<uint64_t>(is);
    std::map<std::string, Tensor> out;
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t name_len = read_le<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("tensor file: truncated name");
        uint32_t rank = read_le<uint32_t>(is);
        Shape sh;
        for (uint32_t r = 0; r < rank; ++r)
            sh.dims.push_back(static_cast<int64_t>(read_le<uint64_t>(is)));
        std::vector<double> vals(static_cast<size_t>(sh.numel()));
        is.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(vals.size() * sizeof(double)));
        if (!is) throw std::runtime_error("tensor file: truncated values for " + name);
        out.emplace(name, Tensor(sh, std::move(vals)));
    }
    return out;
}

void load_into(std::vector<NamedTensor>& params, const std::map<std::string, Tensor>& src) {
    for (auto& p : params) {
        auto it = src.find(p.name);
        if (it == src.end())
            throw std::runtime_error("checkpoint: missing tensor " + p.name);
        if (it->second.shape() != p.tensor.shape())
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name + ": " +
                                     it->second.shape().str() + " vs " +
                                     p.tensor.shape().str());
        p.tensor.mutable_values() = it->second.values();
    }
}

}  // namespace nforge
