#include "dproto/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "dproto/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace dproto {

namespace {

using nlohmann::json;

constexpr char kMagic[7] = {'D', 'P', 'R', 'O', 'T', 'O', '1'};

// Name -> tensor, ordered by name; payload offsets follow this order.
std::map<std::string, Tensor> tensor_directory(const Model& m) {
    std::map<std::string, Tensor> dir;
    for (const auto& [name, t] : m.backbone.all_params()) dir.emplace(name, t);
    dir.emplace("masks", m.proto.masks());
    dir.emplace("prototypes", m.proto.prototypes());
    dir.emplace("head", m.proto.head());
    dir.emplace("proto_source_images", m.proto_source_images);
    dir.emplace("proto_provenance", m.proto_provenance);
    return dir;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
    const auto dir = tensor_directory(model);

    json jt = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : dir) {
        const std::uint64_t bytes = t.size() * sizeof(double);
        jt[name] = {{"shape", t.shape()}, {"offset", offset}, {"length", bytes}};
        offset += bytes;
    }
    json header = {{"format_version", 1},
                   {"config", model.cfg.to_json()},
                   {"class_names", model.class_names},
                   {"tensors", jt}};
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, t] : dir)
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out)
        throw DataError("short write to checkpoint: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open checkpoint: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());

    auto fail = [&](std::size_t offset, const std::string& what) -> void {
        throw DataError(path + ": " + what + " (byte " + std::to_string(offset) + ")");
    };

    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t))
        fail(bytes.size(), "file too short for checkpoint header");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        fail(0, "bad magic, not a checkpoint");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + sizeof(kMagic), sizeof(hlen));
    const std::size_t hstart = sizeof(kMagic) + sizeof(std::uint64_t);
    if (bytes.size() < hstart + hlen)
        fail(bytes.size(), "truncated header");

    json header;
    try {
        header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(hstart),
                             bytes.begin() + static_cast<std::ptrdiff_t>(hstart + hlen));
    } catch (const json::exception& e) {
        fail(hstart, std::string("invalid header JSON: ") + e.what());
    }
    if (header.value("format_version", 0) != 1)
        fail(hstart, "unsupported format_version");

    RunConfig cfg;
    std::vector<std::string> class_names;
    try {
        cfg = RunConfig::from_json(header.at("config"));
        class_names = header.at("class_names").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        fail(hstart, std::string("bad header contents: ") + e.what());
    }

    const std::size_t pstart = hstart + hlen;
    const std::size_t psize = bytes.size() - pstart;

    const json& jt = header.at("tensors");
    std::uint64_t expect = 0;  // ranges must tile the payload in name order
    std::map<std::string, Tensor> loaded;
    for (auto it = jt.begin(); it != jt.end(); ++it) {
        const json& entry = it.value();
        const auto shape = entry.at("shape").get<std::vector<int>>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const auto length = entry.at("length").get<std::uint64_t>();
        if (offset != expect)
            fail(pstart + offset, "tensor \"" + it.key() + "\" offset breaks payload tiling");
        if (numel(shape) * sizeof(double) != length)
            fail(pstart + offset, "tensor \"" + it.key() + "\" length does not match shape");
        if (offset + length > psize)
            fail(bytes.size(), "tensor \"" + it.key() + "\" extends past end of payload");
        std::vector<double> v(length / sizeof(double));
        std::memcpy(v.data(), bytes.data() + pstart + offset, length);
        loaded.emplace(it.key(), Tensor::from(shape, std::move(v)));
        expect += length;
    }
    if (expect != psize)
        fail(bytes.size(), "payload has " + std::to_string(psize - expect) + " trailing bytes");

    auto take = [&](const std::string& name) -> Tensor {
        auto it = loaded.find(name);
        if (it == loaded.end())
            throw DataError(path + ": missing tensor \"" + name + "\"");
        return it->second;
    };

    Model m = Model::build(cfg, class_names, 0);
    for (auto& [name, param] : m.backbone.all_params()) {
        Tensor t = take(name);
        if (t.shape() != param.shape())
            throw DataError(path + ": tensor \"" + name + "\" has shape " +
                            shape_str(t.shape()) + ", model expects " +
                            shape_str(param.shape()));
        param.values() = t.values();
    }
    Tensor masks = take("masks");
    Tensor prototypes = take("prototypes");
    prototypes.set_requires_grad(true);
    Tensor head = take("head");
    head.set_requires_grad(true);
    m.proto = ProtoLayer::from_tensors(cfg.protolayer, static_cast<int>(class_names.size()),
                                       std::move(masks), std::move(prototypes), std::move(head));

    Tensor src = take("proto_source_images");
    if (src.shape() != m.proto_source_images.shape())
        throw DataError(path + ": proto_source_images has wrong shape " + shape_str(src.shape()));
    m.proto_source_images = src;
    Tensor prov = take("proto_provenance");
    if (prov.shape() != m.proto_provenance.shape())
        throw DataError(path + ": proto_provenance has wrong shape " + shape_str(prov.shape()));
    m.proto_provenance = prov;
    return m;
}

}  // namespace dproto
