#include "rwkviml/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rwkviml/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace iml {

namespace {

constexpr char kMagic[] = "rwkviml-checkpoint v1";

std::string shape_token(const std::vector<int>& shape) {
    std::string s;
    for (size_t i = 0; i < shape.size(); ++i)
        s += (i ? "x" : "") + std::to_string(shape[i]);
    return s.empty() ? "scalar" : s;
}

std::vector<int> parse_shape(const std::string& tok) {
    std::vector<int> shape;
    std::istringstream is(tok);
    std::string part;
    while (std::getline(is, part, 'x')) shape.push_back(std::stoi(part));
    return shape;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ostringstream header;
    header << kMagic << "\n";
    header << "step " << data.step << "\n";

    std::uint64_t offset = 0;
    header << "config " << data.config_text.size() << " " << offset << "\n";
    offset += data.config_text.size();

    for (const auto& [name, t] : data.tensors) {
        if (name.find(' ') != std::string::npos || name.find('\n') != std::string::npos)
            throw DataError("tensor name '" + name + "' contains whitespace");
        const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
        header << "tensor " << name << " f32 " << shape_token(t.shape()) << " " << offset << " "
               << nbytes << "\n";
        offset += nbytes;
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    const std::string htext = header.str();
    const std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    out.write(data.config_text.data(), static_cast<std::streamsize>(data.config_text.size()));
    for (const auto& [name, t] : data.tensors)
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(float))));
    if (!out) throw DataError("short write while saving checkpoint " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint " + path);
    in.seekg(0, std::ios::end);
    const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    if (!in || hlen + sizeof hlen > file_size)
        throw DataError(path + " is not a checkpoint (bad length prefix)");
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError(path + " is not a checkpoint (truncated header)");

    std::istringstream header(htext);
    std::string line;
    if (!std::getline(header, line) || line != kMagic)
        throw DataError(path + " is not a checkpoint (bad magic line)");

    CheckpointData data;
    std::uint64_t config_size = 0, config_offset = 0;
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::uint64_t offset, nbytes;
    };
    std::vector<Entry> entries;
    while (std::getline(header, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "step") {
            ls >> data.step;
        } else if (kind == "config") {
            ls >> config_size >> config_offset;
        } else if (kind == "tensor") {
            Entry e;
            std::string dtype, shape;
            ls >> e.name >> dtype >> shape >> e.offset >> e.nbytes;
            if (!ls) throw DataError("malformed tensor line in " + path + ": " + line);
            if (dtype != "f32")
                throw DataError("unsupported dtype '" + dtype + "' in " + path);
            e.shape = shape == "scalar" ? std::vector<int>{} : parse_shape(shape);
            entries.push_back(std::move(e));
        } else {
            throw DataError("unknown header record '" + kind + "' in " + path);
        }
    }

    const std::streampos payload_start = in.tellg();
    data.config_text.resize(config_size);
    in.seekg(payload_start + static_cast<std::streamoff>(config_offset));
    in.read(data.config_text.data(), static_cast<std::streamsize>(config_size));
    for (const auto& e : entries) {
        Tensor<float> t(e.shape);
        if (static_cast<std::uint64_t>(t.numel()) * sizeof(float) != e.nbytes)
            throw DataError("size mismatch for tensor '" + e.name + "' in " + path);
        in.seekg(payload_start + static_cast<std::streamoff>(e.offset));
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(e.nbytes));
        if (!in) throw DataError("truncated payload for tensor '" + e.name + "' in " + path);
        data.tensors.emplace_back(e.name, std::move(t));
    }
    return data;
}

}  // namespace iml
