#include "flashcast/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "flashcast/version.hpp"

namespace flashcast {

namespace fs = std::filesystem;

namespace {

void require_input(const fs::path& p, const char* what) {
    if (p.empty()) throw UsageError(std::string("no ") + what + " given (set it in the config or on the command line)");
    if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

void guard_output(const fs::path& p, bool force) {
    if (fs::exists(p) && !force) throw UsageError(p.string() + " already exists; pass --force to overwrite");
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
    if (!out) throw DataError("write failed on " + p.string());
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Json audit_json(const AccessLog& log) {
    Json files = Json::array();
    for (const auto& f : log.files()) files.push_back(fs::path(f).filename().string());
    return {{"reads", log.size()}, {"years", log.years()}, {"files", files}};
}

void require_years_within(const AccessLog& log, const YearRange& range, const std::string& stage) {
    for (int y : log.years()) {
        if (!range.contains(y)) throw TrainingError(stage + " read a day of " + std::to_string(y) + ", outside its split");
    }
}

void check_channels(const NormStats& stats, const Dataset& ds) {
    if (stats.size() != ds.channels().size()) {
        throw ConfigError("statistics cover " + std::to_string(stats.size()) + " channels, dataset has " +
                          std::to_string(ds.channels().size()));
    }
    for (std::size_t c = 0; c < stats.size(); ++c) {
        if (stats.channels[c].name != ds.channels()[c].name) {
            throw ConfigError("statistics channel " + std::to_string(c) + " is '" + stats.channels[c].name + "', dataset has '" +
                              ds.channels()[c].name + "'");
        }
    }
}

std::vector<std::size_t> days_of_year(const Dataset& ds, int year) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.date(i).year == year) idx.push_back(i);
    return idx;
}

}  // namespace

fs::path default_stats_path(const RunConfig& c) {
    if (!c.paths.stats.empty()) return c.paths.stats;
    if (c.paths.output_dir.empty()) throw UsageError("no statistics path or output directory given");
    return c.paths.output_dir / "stats.json";
}

fs::path default_checkpoint_path(const RunConfig& c) {
    if (!c.paths.checkpoint.empty()) return c.paths.checkpoint;
    if (c.paths.output_dir.empty()) throw UsageError("no checkpoint or output directory given");
    return c.paths.output_dir / "best.ckpt";
}

fs::path default_predictions_path(const RunConfig& c, int year) {
    if (!c.paths.predictions.empty()) return c.paths.predictions;
    if (c.paths.output_dir.empty()) throw UsageError("no predictions path or output directory given");
    return c.paths.output_dir / ("predictions_" + std::to_string(year) + ".mgrid");
}

int default_predict_year(const RunConfig& c) { return c.predict.year.value_or(c.split.test.first); }
int default_evaluation_year(const RunConfig& c) { return c.evaluation_year.value_or(c.split.test.first); }

// ---- synth / convert-check ----------------------------------------------------------------------

std::vector<fs::path> cmd_synth(const SyntheticConfig& cfg, const fs::path& out_dir, bool force) {
    cfg.validate();
    if (out_dir.empty()) throw UsageError("no output directory given for synthetic data");
    for (int y = cfg.first_year; y <= cfg.last_year; ++y) guard_output(out_dir / ("synthetic_" + std::to_string(y) + ".mgrid"), force);
    auto files = write_synthetic_dataset(out_dir, cfg);
    write_text(out_dir / "synthetic_config.json", to_json(cfg).dump(2) + "\n");
    return files;
}

Json cmd_convert_check(const fs::path& dataset, const std::optional<GridSpec>& grid) {
    require_input(dataset, "dataset");
    const Dataset ds = Dataset::open(dataset, grid);
    const std::size_t n = ds.channels().size();
    std::vector<double> lo(n + 1, INFINITY), hi(n + 1, -INFINITY);
    std::uint64_t masked = 0, sanitized = 0, cells = 0;
    std::set<int> years;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        GridSample s = ds.sample(i);
        sanitized += sanitize(s);
        years.insert(s.date.year);
        for (std::size_t k = 0; k < s.cells(); ++k) {
            ++cells;
            if (s.mask[k] == 0.0f) {
                ++masked;
                continue;
            }
            for (std::size_t c = 0; c < n; ++c) {
                lo[c] = std::min(lo[c], double(s.predictors[c * s.cells() + k]));
                hi[c] = std::max(hi[c], double(s.predictors[c * s.cells() + k]));
            }
            lo[n] = std::min(lo[n], double(s.target[k]));
            hi[n] = std::max(hi[n], double(s.target[k]));
        }
    }
    Json channels = Json::array();
    for (std::size_t c = 0; c <= n; ++c) {
        const auto& info = c < n ? ds.channels()[c] : ds.target();
        channels.push_back({{"name", info.name},
                            {"unit", info.unit},
                            {"role", c < n ? "predictor" : "target"},
                            {"min", std::isfinite(lo[c]) ? Json(lo[c]) : Json(nullptr)},
                            {"max", std::isfinite(hi[c]) ? Json(hi[c]) : Json(nullptr)}});
    }
    Json files = Json::array();
    for (const auto& f : ds.files()) files.push_back(f.filename().string());
    return {{"files", files},
            {"days", ds.size()},
            {"first_date", ds.size() ? ds.dates().front().str() : ""},
            {"last_date", ds.size() ? ds.dates().back().str() : ""},
            {"years", years},
            {"grid", to_json(ds.grid())},
            {"channels", channels},
            {"cells", cells},
            {"masked_cells", masked},
            {"non_finite_values_masked", sanitized}};
}

// ---- stats ----------------------------------------------------------------------------------

StatsOutcome cmd_stats(const RunConfig& c, const fs::path& out, bool force) {
    require_input(c.paths.dataset, "dataset");
    const fs::path target = out.empty() ? default_stats_path(c) : out;
    guard_output(target, force);
    const Dataset ds = Dataset::open(c.paths.dataset, c.grid);
    const auto split = split_by_year(ds, c.split);
    ds.access_log().clear();
    StatsOutcome o;
    o.stats = compute_training_statistics(ds, split.train, c.loss.quantile, c.loss.threshold_positive_only);
    require_years_within(ds.access_log(), c.split.train, "statistics pass");
    o.years_read = ds.access_log().years();
    o.files_read = ds.access_log().files();
    o.path = target;
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    save_statistics(target, o.stats);
    return o;
}

// ---- train ----------------------------------------------------------------------------------

TrainOutcome cmd_train(const RunConfig& c, bool force, const std::optional<fs::path>& resume, std::ostream* progress) {
    require_input(c.paths.dataset, "dataset");
    if (c.paths.output_dir.empty()) throw UsageError("no output directory given");
    const fs::path run = c.paths.output_dir;
    if (resume) {
        require_input(*resume, "checkpoint to resume from");
    } else {
        for (const char* name : {"best.ckpt", "final.ckpt", "train_log.ndjson"}) guard_output(run / name, force);
        if (force) {
            for (const char* name : {"best.ckpt", "final.ckpt", "train_log.ndjson"}) fs::remove(run / name);
        }
    }
    fs::create_directories(run);

    // Separate handles so that the audit can tell training reads from validation reads.
    const Dataset train_ds = Dataset::open(c.paths.dataset, c.grid);
    const Dataset val_ds = Dataset::open(c.paths.dataset, c.grid);
    const auto split = split_by_year(train_ds, c.split);
    if (split.train.empty()) throw ConfigError("training split " + std::to_string(c.split.train.first) + "-" + std::to_string(c.split.train.last) + " holds no day");

    TrainingStatistics stats;
    fs::path stats_path = c.paths.stats;
    if (!stats_path.empty()) {
        require_input(stats_path, "statistics file");
        stats = load_statistics(stats_path);
    } else {
        stats_path = run / "stats.json";
        if (resume && fs::exists(stats_path)) {
            stats = load_statistics(stats_path);
        } else {
            stats = compute_training_statistics(train_ds, split.train, c.loss.quantile, c.loss.threshold_positive_only);
            save_statistics(stats_path, stats);
        }
    }
    check_channels(stats.norm, train_ds);

    RunConfig resolved = c;
    resolved.paths.stats = stats_path;
    if (!std::isfinite(resolved.loss.anomaly_threshold)) resolved.loss.anomaly_threshold = stats.anomaly_threshold;
    resolved.model.in_channels = train_ds.channels().size();
    if (resolved.model.in_channels != c.model.in_channels) {
        throw ConfigError("model.in_channels is " + std::to_string(c.model.in_channels) + " but the dataset has " +
                          std::to_string(resolved.model.in_channels) + " predictor channels");
    }
    write_text(run / "resolved_config.json", to_json(resolved).dump(2) + "\n");

    DatasetSource train_src(train_ds, split.train, stats.norm);
    DatasetSource val_src(val_ds, split.val, stats.norm);

    TrainerOptions opt;
    opt.model = resolved.model;
    opt.optim = resolved.optim;
    opt.loss = resolved.loss;
    opt.seed = resolved.seed;
    opt.out_dir = run;
    opt.resume_from = resume;
    opt.checkpoint_extra = {{"statistics", Json::parse(statistics_to_json(stats))},
                            {"loss", to_json(resolved.loss)},
                            {"split", to_json(resolved.split)},
                            {"grid", to_json(train_ds.grid())},
                            {"seed", resolved.seed}};
    if (progress) {
        opt.on_epoch = [progress](const EpochRecord& r) {
            *progress << "epoch " << r.epoch << "  train " << std::setprecision(6) << r.train.total;
            if (r.val) *progress << "  val " << r.val->total;
            *progress << (r.improved ? "  *" : "") << "  (" << std::setprecision(3) << r.wall_time_s << " s)\n";
            progress->flush();
        };
    }
    TrainOutcome outcome;
    outcome.result = train(opt, train_src, split.val.empty() ? nullptr : &val_src);
    outcome.run_dir = run;

    require_years_within(train_ds.access_log(), c.split.train, "training");
    require_years_within(val_ds.access_log(), c.split.val, "validation");
    outcome.audit = {{"training", audit_json(train_ds.access_log())},
                     {"validation", audit_json(val_ds.access_log())},
                     {"train_years", {c.split.train.first, c.split.train.last}},
                     {"val_years", {c.split.val.first, c.split.val.last}},
                     {"test_years", {c.split.test.first, c.split.test.last}}};
    write_text(run / "access_audit.json", outcome.audit.dump(2) + "\n");
    return outcome;
}

// ---- predict --------------------------------------------------------------------------------

PredictOutcome cmd_predict(const RunConfig& c, const fs::path& out, bool force) {
    require_input(c.paths.dataset, "dataset");
    const fs::path ckpt_path = default_checkpoint_path(c);
    require_input(ckpt_path, "checkpoint");
    const int year = default_predict_year(c);
    const fs::path target = out.empty() ? default_predictions_path(c, year) : out;
    guard_output(target, force);

    Checkpoint ck = load_checkpoint(ckpt_path);
    TrainingStatistics stats;
    if (ck.extra.contains("statistics")) {
        stats = statistics_from_json(ck.extra["statistics"].dump(), ckpt_path.string());
    } else {
        require_input(c.paths.stats, "statistics file");
        stats = load_statistics(c.paths.stats);
    }
    const Dataset ds = Dataset::open(c.paths.dataset, c.grid);
    check_channels(stats.norm, ds);
    const auto days = days_of_year(ds, year);
    if (days.empty()) throw DataError("dataset holds no day of " + std::to_string(year));

    MgridHeader header;
    header.grid = ds.grid();
    header.channels = {{"logit", "1"}, {"magnitude", ds.target().unit}};
    header.target = {"predicted_" + ds.target().name, ds.target().unit};
    for (std::size_t i : days) header.dates.push_back(ds.date(i));
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path partial = target.string() + ".partial";
    MgridWriter writer(partial, header);

    NoGradGuard no_grad;
    Rng unused(0);
    const std::size_t bs = std::max<std::size_t>(1, c.optim.batch_size);
    for (std::size_t first = 0; first < days.size(); first += bs) {
        const std::vector<std::size_t> chunk(days.begin() + first, days.begin() + std::min(days.size(), first + bs));
        const Batch b = make_batch(ds, chunk, stats.norm);
        const auto outp = forward(ck.params, Variable<float>::constant(b.x), false, unused);
        const Tensor4<float> density = predict_density(outp.logits.value(), outp.magnitudes.value(), c.predict.mode, c.predict.threshold);
        const std::size_t h = ds.height(), w = ds.width(), n = h * w;
        for (std::size_t k = 0; k < chunk.size(); ++k) {
            GridSample s = GridSample::zeros(ds.date(chunk[k]), 2, h, w);
            for (std::size_t i = 0; i < n; ++i) {
                s.predictors[i] = outp.logits.value().data()[k * n + i];
                s.predictors[n + i] = outp.magnitudes.value().data()[k * n + i];
                s.target[i] = density.data()[k * n + i];
                s.mask[i] = b.mask.data()[k * n + i];
            }
            writer.write(s);
        }
    }
    writer.finish();
    fs::rename(partial, target);
    return {target, days.size(), year};
}

// ---- evaluate / report ----------------------------------------------------------------

EvaluationReport cmd_evaluate(const RunConfig& c, const fs::path& out_dir, bool force) {
    const int year = default_evaluation_year(c);
    const fs::path preds = default_predictions_path(c, year);
    require_input(preds, "predictions");
    require_input(c.paths.dataset, "dataset");
    fs::path dir = out_dir;
    if (dir.empty()) {
        if (c.paths.output_dir.empty()) throw UsageError("no output directory given");
        dir = c.paths.output_dir / "evaluation";
    }
    guard_output(dir / "summary.json", force);
    const Dataset pred_ds = Dataset::open(preds);
    const Dataset obs_ds = Dataset::open(c.paths.dataset, c.grid);
    if (!(pred_ds.grid() == obs_ds.grid())) throw DimensionError("grid", "prediction and observation grids differ");
    const EvaluationReport rep = evaluate(daily_fields(pred_ds, year), daily_fields(obs_ds, year), obs_ds.grid(), c.evaluation);
    write_report(rep, dir);
    return rep;
}

fs::path cmd_report(const fs::path& run, bool force) {
    require_input(run, "run directory");
    const fs::path target = run / "report.md";
    guard_output(target, force);
    std::ostringstream md;
    md << "# Run report\n\n";
    if (fs::exists(run / "resolved_config.json")) {
        const Json cfg = Json::parse(read_text(run / "resolved_config.json"));
        md << "- seed: " << cfg.value("seed", 0) << "\n";
        md << "- epochs: " << cfg["optim"].value("epochs", 0) << ", batch size " << cfg["optim"].value("batch_size", 0)
           << ", learning rate " << cfg["optim"].value("lr", 0.0) << "\n";
        const auto& w = cfg["model"]["stage_widths"];
        const auto& d = cfg["model"]["stage_depths"];
        md << "- model widths " << w.dump() << ", depths " << d.dump() << "\n\n";
    }
    if (fs::exists(run / "train_log.ndjson")) {
        md << "## Training\n\n| epoch | train total | train cls | train reg | val total | best |\n|---|---|---|---|---|---|\n";
        std::istringstream log(read_text(run / "train_log.ndjson"));
        std::string line;
        while (std::getline(log, line)) {
            if (line.empty()) continue;
            const Json r = Json::parse(line);
            md << "| " << r["epoch"] << " | " << r["train"]["total"] << " | " << r["train"]["cls"] << " | " << r["train"]["reg"] << " | "
               << (r["val"].is_null() ? std::string("-") : r["val"]["total"].dump()) << " | " << (r["improved"].get<bool>() ? "yes" : "")
               << " |\n";
        }
        md << "\n";
    }
    const fs::path summary = run / "evaluation" / "summary.json";
    if (fs::exists(summary)) {
        const Json s = Json::parse(read_text(summary));
        auto r = [](const Json& score) { return score["r"].is_null() ? std::string("undefined") : score["r"].dump(); };
        md << "## Evaluation (" << s["year"] << ")\n\n";
        md << "- annual mean r, log1p fields: " << r(s["global"]["log1p"]) << "\n";
        md << "- annual mean r, raw fields: " << r(s["global"]["raw"]) << "\n";
        md << "- latitude profile r: " << r(s["profiles"]["lat"]) << ", RMSE " << s["profiles"]["lat"]["rmse"] << "\n";
        md << "- tropical longitude profile r: " << r(s["profiles"]["lon_tropics"]) << "\n";
        md << "- extratropical longitude profile r: " << r(s["profiles"]["lon_extratropics"]) << "\n";
        md << "- hemispheres r: north " << r(s["hemispheres"]["north"]) << ", south " << r(s["hemispheres"]["south"]) << "\n\n";
        md << "| region | cells | r |\n|---|---|---|\n";
        for (const auto& reg : s["regions"]) {
            md << "| " << reg["name"].get<std::string>() << " | " << reg["cells"] << " | " << r(reg["score"]) << " |\n";
            for (const auto& sub : reg["subregions"]) {
                md << "| " << reg["name"].get<std::string>() << " " << sub["name"].get<std::string>() << " | " << sub["cells"] << " | "
                   << r(sub["score"]) << " |\n";
            }
        }
    }
    write_text(target, md.str());
    return target;
}

// ---- command line ---------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    const bool quiet = [] {
        const char* v = std::getenv("FLASHCAST_QUIET");
        return v && std::string(v) != "0" && std::string(v) != "";
    }();

    CLI::App app{"Gridded lightning-density modelling: data checks, training, prediction and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(version()));

    std::string config_path, dataset, out_path, stats_path, checkpoint, predictions, resume, mode, run_dir;
    std::optional<int> year;
    std::optional<double> threshold;
    bool force = false;

    auto common = [&](CLI::App* sub, bool with_dataset = true) {
        sub->add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
        if (with_dataset) sub->add_option("--dataset", dataset, "MGRID file or directory (overrides paths.dataset)");
        sub->add_flag("-f,--force", force, "Overwrite existing outputs");
    };
    auto* synth = app.add_subcommand("synth", "Write a synthetic multi-year dataset");
    common(synth, false);
    synth->add_option("-o,--out", out_path, "Output directory (default paths.dataset)");
    auto* check = app.add_subcommand("convert-check", "Validate MGRID containers and summarize them");
    common(check);
    auto* stats = app.add_subcommand("stats", "Normalization statistics and anomaly threshold over the training years");
    common(stats);
    stats->add_option("-o,--out", out_path, "Statistics file (default paths.stats or <output_dir>/stats.json)");
    auto* trn = app.add_subcommand("train", "Train a model");
    common(trn);
    trn->add_option("--stats", stats_path, "Statistics file (overrides paths.stats)");
    trn->add_option("-o,--out", out_path, "Run directory (overrides paths.output_dir)");
    trn->add_option("--resume", resume, "Continue from a checkpoint written by an earlier run");
    auto* pred = app.add_subcommand("predict", "Predict daily density fields for one year");
    common(pred);
    pred->add_option("--checkpoint", checkpoint, "Checkpoint (default <output_dir>/best.ckpt)");
    pred->add_option("-o,--out", out_path, "Output MGRID file");
    pred->add_option("--year", year, "Year to predict (default: first test year)");
    pred->add_option("--mode", mode, "Density mode: gated or expected")->check(CLI::IsMember({"gated", "expected"}));
    pred->add_option("--threshold", threshold, "Gating probability threshold");
    auto* ev = app.add_subcommand("evaluate", "Compare predictions with observations");
    common(ev);
    ev->add_option("--predictions", predictions, "Predictions MGRID (default <output_dir>/predictions_<year>.mgrid)");
    ev->add_option("-o,--out", out_path, "Report directory (default <output_dir>/evaluation)");
    ev->add_option("--year", year, "Evaluation year (default: first test year)");
    auto* rep = app.add_subcommand("report", "Summarize a run directory as Markdown");
    common(rep, false);
    rep->add_option("--run", run_dir, "Run directory (default paths.output_dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (!dataset.empty()) cfg.paths.dataset = dataset;
        if (year) cfg.predict.year = cfg.evaluation_year = *year;

        if (synth->parsed()) {
            const fs::path dir = out_path.empty() ? cfg.paths.dataset : fs::path(out_path);
            const auto files = cmd_synth(cfg.synthetic, dir, force);
            if (!quiet) out << "wrote " << files.size() << " files to " << dir.string() << "\n";
        } else if (check->parsed()) {
            out << cmd_convert_check(cfg.paths.dataset, cfg.grid).dump(2) << "\n";
        } else if (stats->parsed()) {
            const auto o = cmd_stats(cfg, out_path, force);
            if (!quiet) {
                out << "statistics over " << o.stats.days << " training days written to " << o.path.string() << "\n";
                out << "anomaly threshold " << std::setprecision(10) << o.stats.anomaly_threshold << "\n";
            }
        } else if (trn->parsed()) {
            if (!stats_path.empty()) cfg.paths.stats = stats_path;
            if (!out_path.empty()) cfg.paths.output_dir = out_path;
            std::optional<fs::path> from;
            if (!resume.empty()) from = fs::path(resume);
            const auto o = cmd_train(cfg, force, from, quiet ? nullptr : &out);
            if (!quiet) {
                out << "best epoch " << o.result.state.best_epoch << " (loss " << std::setprecision(6) << o.result.state.best_val
                    << "), outputs in " << o.run_dir.string() << "\n";
            }
        } else if (pred->parsed()) {
            if (!checkpoint.empty()) cfg.paths.checkpoint = checkpoint;
            if (!mode.empty()) cfg.predict.mode = parse_density_mode(mode);
            if (threshold) {
                if (!(*threshold > 0.0 && *threshold < 1.0)) throw ConfigError("--threshold must lie in (0, 1)");
                cfg.predict.threshold = *threshold;
            }
            const auto o = cmd_predict(cfg, out_path, force);
            if (!quiet) out << "predicted " << o.days << " days of " << o.year << " into " << o.path.string() << "\n";
        } else if (ev->parsed()) {
            if (!predictions.empty()) cfg.paths.predictions = predictions;
            const auto r = cmd_evaluate(cfg, out_path, force);
            if (!quiet) {
                out << "annual mean r (log1p) " << (r.global_log1p.r ? std::to_string(*r.global_log1p.r) : "undefined") << ", raw "
                    << (r.global_raw.r ? std::to_string(*r.global_raw.r) : "undefined") << "\n";
            }
        } else if (rep->parsed()) {
            const fs::path dir = run_dir.empty() ? cfg.paths.output_dir : fs::path(run_dir);
            const auto p = cmd_report(dir, force);
            if (!quiet) out << "wrote " << p.string() << "\n";
        }
        return 0;
    } catch (const UsageError& e) {
        err << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << e.what() << "\n";
        return 1;
    }
}

}  // namespace flashcast
