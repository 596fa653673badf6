#include "flashcast/run_config.hpp"

#include <fstream>

namespace flashcast {

namespace fs = std::filesystem;

Json to_json(const RegionBox& b) {
    Json j{{"name", b.name}, {"lat", {b.lat_min, b.lat_max}}, {"lon", {b.lon_min, b.lon_max}}};
    j["split"] = b.split ? Json(to_string(*b.split)) : Json(nullptr);
    return j;
}

namespace {

std::pair<double, double> read_range(const Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw ConfigError(where + " must be [min, max]");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::optional<int> read_year(StrictObject& o, const char* key) {
    const Json* y = o.sub(key);
    if (!y || y->is_null()) return std::nullopt;
    if (!y->is_number_integer()) throw ConfigError(o.where() + "." + key + " must be an integer or null");
    return y->get<int>();
}

}  // namespace

void from_json(const Json& j, RegionBox& b, const std::string& where) {
    StrictObject o(j, where);
    o.read("name", b.name);
    if (const Json* lat = o.sub("lat")) std::tie(b.lat_min, b.lat_max) = read_range(*lat, where + ".lat");
    if (const Json* lon = o.sub("lon")) std::tie(b.lon_min, b.lon_max) = read_range(*lon, where + ".lon");
    if (const Json* s = o.sub("split")) {
        if (s->is_null()) b.split.reset();
        else if (s->is_string()) b.split = parse_split_scheme(s->get<std::string>());
        else throw ConfigError(where + ".split must be a scheme name or null");
    }
    o.finish();
    b.validate();
}

Json to_json(const RunConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["model"] = to_json(c.model);
    j["optim"] = to_json(c.optim);
    j["loss"] = to_json(c.loss);
    j["split"] = to_json(c.split);
    j["grid"] = c.grid ? to_json(*c.grid) : Json(nullptr);
    j["paths"] = {{"dataset", c.paths.dataset.string()},
                  {"stats", c.paths.stats.string()},
                  {"checkpoint", c.paths.checkpoint.string()},
                  {"output_dir", c.paths.output_dir.string()},
                  {"predictions", c.paths.predictions.string()}};
    j["predict"] = {{"mode", to_string(c.predict.mode)},
                    {"threshold", c.predict.threshold},
                    {"year", c.predict.year ? Json(*c.predict.year) : Json(nullptr)}};
    Json regions = Json::array();
    for (const auto& r : c.evaluation.regions) regions.push_back(to_json(r));
    j["evaluation"] = {{"regions", regions},
                       {"cosine_weighting", c.evaluation.cosine_weighting},
                       {"year", c.evaluation_year ? Json(*c.evaluation_year) : Json(nullptr)}};
    j["synthetic"] = to_json(c.synthetic);
    return j;
}

RunConfig run_config_from_json(const Json& j, const fs::path& base) {
    RunConfig c;
    StrictObject o(j, "config");
    o.read("seed", c.seed);
    if (const Json* m = o.sub("model")) from_json(*m, c.model, "model");
    if (const Json* m = o.sub("optim")) from_json(*m, c.optim, "optim");
    if (const Json* m = o.sub("loss")) from_json(*m, c.loss, "loss");
    if (const Json* m = o.sub("split")) from_json(*m, c.split, "split");
    if (const Json* g = o.sub("grid"); g && !g->is_null()) {
        GridSpec grid;
        from_json(*g, grid, "grid");
        c.grid = grid;
    }
    if (const Json* p = o.sub("paths")) {
        StrictObject po(*p, "paths");
        std::string dataset, stats, checkpoint, output_dir, predictions;
        po.read("dataset", dataset);
        po.read("stats", stats);
        po.read("checkpoint", checkpoint);
        po.read("output_dir", output_dir);
        po.read("predictions", predictions);
        po.finish();
        c.paths = {resolve(base, dataset), resolve(base, stats), resolve(base, checkpoint), resolve(base, output_dir),
                   resolve(base, predictions)};
    }
    if (const Json* p = o.sub("predict")) {
        StrictObject po(*p, "predict");
        std::string mode = to_string(c.predict.mode);
        po.read("mode", mode);
        c.predict.mode = parse_density_mode(mode);
        po.read("threshold", c.predict.threshold);
        c.predict.year = read_year(po, "year");
        po.finish();
        if (!(c.predict.threshold > 0.0 && c.predict.threshold < 1.0)) throw ConfigError("predict.threshold must lie in (0, 1)");
    }
    if (const Json* e = o.sub("evaluation")) {
        StrictObject eo(*e, "evaluation");
        if (const Json* regions = eo.sub("regions")) {
            if (!regions->is_array()) throw ConfigError("evaluation.regions must be an array");
            c.evaluation.regions.clear();
            for (std::size_t i = 0; i < regions->size(); ++i) {
                RegionBox b;
                from_json((*regions)[i], b, "evaluation.regions[" + std::to_string(i) + "]");
                c.evaluation.regions.push_back(b);
            }
        }
        eo.read("cosine_weighting", c.evaluation.cosine_weighting);
        c.evaluation_year = read_year(eo, "year");
        eo.finish();
    }
    if (const Json* s = o.sub("synthetic")) from_json(*s, c.synthetic, "synthetic");
    o.finish();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    Json j;
    try {
        j = Json::parse(in, nullptr, true, true);
    } catch (const Json::exception& e) {
        throw ConfigError(path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

}  // namespace flashcast
