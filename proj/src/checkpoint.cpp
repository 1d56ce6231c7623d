#include "stgait/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace stgait {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'T', 'G', 'A', 'I', 'T', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("checkpoint truncated");
    return v;
}

void put_tensor(std::ostream& out, const std::string& name, const Shape& shape, const float* data) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (Index d : shape) put<std::int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(numel(shape) * sizeof(float)));
}

struct Stored {
    Shape shape;
    Vec<float> data;
};

// Every named tensor slot of the model, with its expected shape.
struct Slot {
    Shape shape;
    float* data;
};

std::map<std::string, Slot> slots(GaitClassifier& model, ParameterSet<float>& set, Vec<float>& mean, Vec<float>& stddev) {
    std::map<std::string, Slot> out;
    for (auto& [name, t] : set.params) out[name] = {t.shape(), t.mutable_data().data()};
    for (auto& [name, st] : set.stats) {
        out[name + ".running_mean"] = {{st->mean.size()}, st->mean.data()};
        out[name + ".running_var"] = {{st->var.size()}, st->var.data()};
    }
    if (model.config.affective_fusion) {
        out["affective.mean"] = {{kAffectiveWidth}, mean.data()};
        out["affective.std"] = {{kAffectiveWidth}, stddev.data()};
    }
    return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, GaitClassifier& model) {
    nlohmann::json header;
    header["train_config"] = format_train_config(model.config);
    header["skeleton"] = format_skeleton(model.graph);
    const std::string text = header.dump();

    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    auto set = model.net.parameters();
    Vec<float> mean = model.scaler.mean.cast<float>(), stddev = model.scaler.stddev.cast<float>();
    const auto all = slots(model, set, mean, stddev);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(all.size()));
    for (const auto& [name, slot] : all) put_tensor(out, name, slot.shape, slot.data);
    if (!out) throw ValidationError("failed writing checkpoint");
}

GaitClassifier read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw ValidationError("not a checkpoint file (bad magic)");
    }
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto header_len = get<std::uint64_t>(in);
    if (header_len > (1u << 24)) throw ValidationError("checkpoint header too large");
    std::string text(header_len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw ValidationError("checkpoint truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
    }
    std::istringstream cfg_text(header.at("train_config").get<std::string>());
    const TrainConfig cfg = parse_train_config(cfg_text);
    const SkeletonGraph graph = parse_skeleton(header.at("skeleton").get<std::string>());

    std::map<std::string, Stored> stored;
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name_len = get<std::uint32_t>(in);
        if (name_len > 4096) throw ValidationError("checkpoint tensor name too long");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw ValidationError("checkpoint truncated");
        Stored s;
        const auto ndim = get<std::uint32_t>(in);
        if (ndim > 8) throw ValidationError("checkpoint tensor '" + name + "' has too many dimensions");
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const auto extent = get<std::int64_t>(in);
            if (extent <= 0 || extent > (1 << 28)) throw ValidationError("bad extent in checkpoint tensor '" + name + "'");
            s.shape.push_back(extent);
        }
        s.data.resize(numel(s.shape));
        if (!in.read(reinterpret_cast<char*>(s.data.data()), static_cast<std::streamsize>(s.data.size() * sizeof(float)))) {
            throw ValidationError("checkpoint truncated");
        }
        stored[name] = std::move(s);
    }

    GaitClassifier model(cfg, graph, 0);
    auto set = model.net.parameters();
    Vec<float> mean(kAffectiveWidth), stddev(kAffectiveWidth);
    const auto all = slots(model, set, mean, stddev);
    if (all.size() != stored.size()) {
        throw ValidationError("checkpoint holds " + std::to_string(stored.size()) + " tensors, architecture needs " +
                              std::to_string(all.size()));
    }
    for (const auto& [name, slot] : all) {
        const auto it = stored.find(name);
        if (it == stored.end()) throw ValidationError("checkpoint is missing tensor '" + name + "'");
        if (it->second.shape != slot.shape) {
            throw ValidationError("checkpoint tensor '" + name + "' has shape " + to_string(it->second.shape) +
                                  ", expected " + to_string(slot.shape));
        }
        std::memcpy(slot.data, it->second.data.data(), it->second.data.size() * sizeof(float));
    }
    if (cfg.affective_fusion) {
        model.scaler.mean = mean.cast<double>();
        model.scaler.stddev = stddev.cast<double>();
    }
    return model;
}

void save_checkpoint(const std::filesystem::path& path, GaitClassifier& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint '" + path.string() + "'");
    write_checkpoint(out, model);
}

GaitClassifier load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint '" + path.string() + "'");
    return read_checkpoint(in);
}

}  // namespace stgait
