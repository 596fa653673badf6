#include "flashcast/checkpoint.hpp"

#include <fstream>

#include "flashcast/binary_io.hpp"

namespace flashcast {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "FCCKPT01";
constexpr int kVersion = 1;

struct Entry {
    std::string name;
    const Tensor4<float>* tensor;
};

Json dims_of(Shape4 s) { return Json::array({s.n, s.c, s.h, s.w}); }

}  // namespace

void save_checkpoint(const fs::path& path, ModelParams<float>& params, const AdamState<float>* optimizer,
                     const TrainingState& state, const Json& extra) {
    auto named = params.named_params();
    std::vector<Entry> entries;
    for (const auto& p : named) entries.push_back({p.name, &p.var.value()});
    if (optimizer && !optimizer->empty()) {
        if (optimizer->m.size() != named.size()) throw TrainingError("optimizer state does not match the model");
        for (std::size_t i = 0; i < named.size(); ++i) entries.push_back({"optimizer.m/" + named[i].name, &optimizer->m[i]});
        for (std::size_t i = 0; i < named.size(); ++i) entries.push_back({"optimizer.v/" + named[i].name, &optimizer->v[i]});
    }

    Json header;
    header["format"] = "flashcast-checkpoint";
    header["version"] = kVersion;
    header["model"] = to_json(params.config);
    Json manifest = Json::array();
    std::uint64_t offset = 0;
    for (const auto& e : entries) {
        const std::uint64_t nbytes = e.tensor->size() * sizeof(float);
        manifest.push_back({{"name", e.name},
                            {"dims", dims_of(e.tensor->shape())},
                            {"dtype", "float32"},
                            {"offset", offset},
                            {"nbytes", nbytes}});
        offset += nbytes;
    }
    header["tensors"] = std::move(manifest);
    header["payload_bytes"] = offset;
    header["state"] = {{"epochs_completed", state.epochs_completed},
                       {"step", state.step},
                       {"best_val", std::isfinite(state.best_val) ? Json(state.best_val) : Json(nullptr)},
                       {"best_epoch", state.best_epoch},
                       {"seed", state.seed},
                       {"optimizer_step", optimizer ? optimizer->t : 0},
                       {"has_optimizer", optimizer != nullptr && !optimizer->empty()}};
    header["extra"] = extra;

    const fs::path tmp = path.string() + ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + tmp.string());
        binary::write_frame_header(out, kMagic, header.dump());
        for (const auto& e : entries) binary::put_f32(out, e.tensor->values());
        out.close();
        if (!out) throw DataError("write failed on " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    const auto frame = binary::read_frame_header(in, kMagic, path.string());
    const std::uint64_t header_at = 16;
    Json h;
    try {
        h = Json::parse(frame.header);
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": checkpoint header is not JSON (" + e.what() + ")", header_at);
    }
    Checkpoint ck;
    try {
        if (h.at("version").get<int>() != kVersion) throw FormatError(path.string() + ": unsupported checkpoint version", header_at);
        ModelConfig cfg;
        from_json(h.at("model"), cfg, "checkpoint.model");
        ck.params = init_params<float>(cfg, 0);
        const auto& st = h.at("state");
        ck.state.epochs_completed = st.at("epochs_completed").get<std::size_t>();
        ck.state.step = st.at("step").get<std::uint64_t>();
        ck.state.best_val = st.at("best_val").is_null() ? std::numeric_limits<double>::infinity()
                                                         : st.at("best_val").get<double>();
        ck.state.best_epoch = st.at("best_epoch").get<std::size_t>();
        ck.state.seed = st.at("seed").get<std::uint64_t>();
        ck.extra = h.value("extra", Json::object());

        auto named = ck.params.named_params();
        const bool has_opt = st.at("has_optimizer").get<bool>();
        std::vector<std::pair<std::string, Tensor4<float>*>> targets;
        for (auto& p : named) targets.emplace_back(p.name, &p.var.mutable_value());
        if (has_opt) {
            ck.optimizer = AdamState<float>::zeros_like(named);
            ck.optimizer->t = st.at("optimizer_step").get<std::uint64_t>();
            for (std::size_t i = 0; i < named.size(); ++i) targets.emplace_back("optimizer.m/" + named[i].name, &ck.optimizer->m[i]);
            for (std::size_t i = 0; i < named.size(); ++i) targets.emplace_back("optimizer.v/" + named[i].name, &ck.optimizer->v[i]);
        }
        const auto& manifest = h.at("tensors");
        if (manifest.size() != targets.size()) {
            throw FormatError(path.string() + ": manifest lists " + std::to_string(manifest.size()) + " tensors, model needs " +
                                  std::to_string(targets.size()),
                              header_at);
        }
        const std::uint64_t payload = frame.file_size - frame.payload_offset;
        if (payload != h.at("payload_bytes").get<std::uint64_t>()) {
            throw FormatError(path.string() + ": payload size mismatch", frame.payload_offset);
        }
        std::vector<unsigned char> raw(payload);
        in.seekg(static_cast<std::streamoff>(frame.payload_offset));
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(payload));
        if (!in) throw FormatError(path.string() + ": truncated payload", frame.payload_offset);
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const auto& m = manifest[i];
            auto& [name, tensor] = targets[i];
            if (m.at("name").get<std::string>() != name) {
                throw FormatError(path.string() + ": expected tensor '" + name + "', found '" +
                                      m.at("name").get<std::string>() + "'",
                                  header_at);
            }
            if (m.at("dtype").get<std::string>() != "float32") throw FormatError(path.string() + ": " + name + " is not float32", header_at);
            const auto d = m.at("dims").get<std::vector<std::size_t>>();
            if (d.size() != 4 || Shape4{d[0], d[1], d[2], d[3]} != tensor->shape()) {
                throw DimensionError("tensor", path.string() + ": " + name + " has dims " +
                                                   Shape4{d.size() > 0 ? d[0] : 0, d.size() > 1 ? d[1] : 0,
                                                          d.size() > 2 ? d[2] : 0, d.size() > 3 ? d[3] : 0}
                                                       .str() +
                                                   ", model expects " + tensor->shape().str());
            }
            const auto off = m.at("offset").get<std::uint64_t>();
            const auto nbytes = m.at("nbytes").get<std::uint64_t>();
            if (nbytes != tensor->size() * sizeof(float) || off + nbytes > payload) {
                throw FormatError(path.string() + ": bad extent for " + name, frame.payload_offset + off);
            }
            binary::decode_f32(raw.data() + off, tensor->values());
        }
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": malformed checkpoint header (" + e.what() + ")", header_at);
    }
    return ck;
}

}  // namespace flashcast
