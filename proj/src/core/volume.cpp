#include "volume.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace nforge {

static_assert(std::endian::native == std::endian::little,
              "raw volume payloads assume a little-endian host");

void VolumeHeader::validate() const {
    for (int64_t d : dims)
        if (d < 1) throw std::invalid_argument("VolumeHeader: dims must be >= 1");
    for (Scalar s : spacing)
        if (!(s > 0)) throw std::invalid_argument("VolumeHeader: spacing must be > 0");
    if (volume_id.empty()) throw std::invalid_argument("VolumeHeader: empty volume_id");
}

std::vector<Scalar> Volume::hu() const {
    std::vector<Scalar> out(sv.size());
    for (size_t i = 0; i < sv.size(); ++i)
        out[i] = rescale_to_hu(static_cast<Scalar>(sv[i]), header.rescale_slope,
                               header.rescale_intercept);
    return out;
}

Scalar rescale_to_hu(Scalar sv, Scalar m, Scalar b) { return m * sv + b; }

std::vector<Scalar> normalize(const std::vector<Scalar>& hu, Scalar lo, Scalar hi) {
    if (!(lo < hi)) throw std::invalid_argument("normalize: window lo must be < hi");
    std::vector<Scalar> out(hu.size());
    Scalar span = hi - lo;
    for (size_t i = 0; i < hu.size(); ++i)
        out[i] = (std::clamp(hu[i], lo, hi) - lo) / span;
    return out;
}

void write_volume(const std::string& base_path, const Volume& v) {
    v.header.validate();
    if (static_cast<int64_t>(v.sv.size()) != v.header.voxel_count())
        throw std::invalid_argument("write_volume: payload size does not match dims");
    std::string raw_name = base_path + ".raw";
    // header references the raw file by basename so the pair can move together
    size_t slash = raw_name.find_last_of('/');
    std::string raw_base = slash == std::string::npos ? raw_name : raw_name.substr(slash + 1);

    nlohmann::json j;
    j["volume_id"] = v.header.volume_id;
    j["dims"] = {v.header.dims[0], v.header.dims[1], v.header.dims[2]};
    j["spacing_mm"] = {v.header.spacing[2], v.header.spacing[1], v.header.spacing[0]};
    j["rescale_slope"] = v.header.rescale_slope;
    j["rescale_intercept"] = v.header.rescale_intercept;
    j["raw_file"] = raw_base;

    std::ofstream jf(base_path + ".json");
    if (!jf) throw std::runtime_error("write_volume: cannot open " + base_path + ".json");
    jf << j.dump(2) << "\n";
    jf.close();

    std::ofstream rf(raw_name, std::ios::binary);
    if (!rf) throw std::runtime_error("write_volume: cannot open " + raw_name);
    rf.write(reinterpret_cast<const char*>(v.sv.data()),
             static_cast<std::streamsize>(v.sv.size() * sizeof(int16_t)));
    if (!rf) throw std::runtime_error("write_volume: short write to " + raw_name);
}

Volume read_volume(const std::string& json_path) {
    std::ifstream jf(json_path);
    if (!jf) throw std::runtime_error("read_volume: cannot open " + json_path);
    nlohmann::json j;
    try {
        jf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_volume: bad header JSON in " + json_path + ": " +
                                 e.what());
    }
    for (const char* key :
         {"volume_id", "dims", "spacing_mm", "rescale_slope", "rescale_intercept", "raw_file"})
        if (!j.contains(key))
            throw std::runtime_error("read_volume: header missing field '" + std::string(key) +
                                     "'");

    Volume v;
    v.header.volume_id = j["volume_id"].get<std::string>();
    auto dims = j["dims"].get<std::vector<int64_t>>();
    auto sp = j["spacing_mm"].get<std::vector<Scalar>>();
    if (dims.size() != 3 || sp.size() != 3)
        throw std::runtime_error("read_volume: dims and spacing_mm must have 3 entries");
    v.header.dims = {dims[0], dims[1], dims[2]};
    v.header.spacing = {sp[2], sp[1], sp[0]};  // file order is [z,y,x]
    v.header.rescale_slope = j["rescale_slope"].get<Scalar>();
    v.header.rescale_intercept = j["rescale_intercept"].get<Scalar>();
    v.header.validate();

    size_t slash = json_path.find_last_of('/');
    std::string dir = slash == std::string::npos ? "" : json_path.substr(0, slash + 1);
    std::string raw_path = dir + j["raw_file"].get<std::string>();
    std::ifstream rf(raw_path, std::ios::binary | std::ios::ate);
    if (!rf) throw std::runtime_error("read_volume: cannot open " + raw_path);
    auto actual = static_cast<int64_t>(rf.tellg());
    int64_t expected = v.header.voxel_count() * static_cast<int64_t>(sizeof(int16_t));
    if (actual != expected)
        throw std::runtime_error("read_volume: raw payload is " + std::to_string(actual) +
                                 " bytes, header implies " + std::to_string(expected));
    rf.seekg(0);
    v.sv.resize(static_cast<size_t>(v.header.voxel_count()));
    rf.read(reinterpret_cast<char*>(v.sv.data()), expected);
    if (!rf) throw std::runtime_error("read_volume: short read from " + raw_path);
    return v;
}

}  // namespace nforge
