#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <fstream>
#include <sstream>

#include "flashcast/checkpoint.hpp"
#include "flashcast/commands.hpp"
#include "test_support.hpp"

using namespace flashcast;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("flashcast_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

struct Cli {
    int code = -1;
    std::string out, err;
};

Cli run(std::vector<std::string> args) {
    args.insert(args.begin(), "flashcast");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Cli r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

// Four thinned years on a 10-degree grid: 2010-2011 train, 2012 val, 2013 test.
Json small_config(unsigned days_per_month = 2) {
    return Json::parse(R"({
        "seed": 11,
        "model": {"stage_widths": [4, 8, 8, 8], "stage_depths": [1, 1, 2, 1]},
        "optim": {"epochs": 2, "batch_size": 4},
        "split": {"train": [2010, 2011], "val": [2012, 2012], "test": [2013, 2013]},
        "synthetic": {"grid": {"resolution": 10}, "first_year": 2010, "last_year": 2013, "seed": 4,
                      "days_per_month": )" + std::to_string(days_per_month) + R"(},
        "paths": {"dataset": "data", "output_dir": "run"}
    })");
}

fs::path write_config(const fs::path& dir, const Json& j, const std::string& name = "cfg.json") {
    const fs::path p = dir / name;
    spit(p, j.dump(2));
    return p;
}

struct Project {
    TempDir dir;
    fs::path cfg;
    explicit Project(const std::string& tag, const Json& j = small_config()) : dir(tag) {
        cfg = write_config(dir.path, j);
        const Cli r = run({"synth", "-c", cfg.string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
    }
    fs::path operator/(const std::string& s) const { return dir.path / s; }
};

void quiet() { ::setenv("FLASHCAST_QUIET", "1", 1); }

}  // namespace

TEST_CASE("config: unknown keys and bad values exit 2 with the offending key named") {
    quiet();
    TempDir dir("badcfg");
    Json j = small_config();
    j["optim"]["learning_rat"] = 0.1;
    auto r = run({"stats", "-c", write_config(dir.path, j).string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("learning_rat") != std::string::npos);

    j = small_config();
    j["predict"] = {{"threshold", 1.5}};
    r = run({"stats", "-c", write_config(dir.path, j).string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("threshold") != std::string::npos);

    spit(dir.path / "broken.json", "{ \"seed\": ");
    r = run({"stats", "-c", (dir.path / "broken.json").string()});
    CHECK(r.code == 2);

    r = run({"frobnicate"});
    CHECK(r.code == 2);
    r = run({"predict", "--mode", "maximal"});
    CHECK(r.code == 2);
}

TEST_CASE("config: JSON round trip and relative path resolution") {
    Json j = small_config();
    j["evaluation"] = {{"regions", Json::array({{{"name", "Box"}, {"lat", {-10, 10}}, {"lon", {170, -170}}, {"split", "equator_ns"}}})},
                       {"cosine_weighting", true},
                       {"year", 2013}};
    const RunConfig c = run_config_from_json(j, "/base");
    CHECK(c.paths.dataset == fs::path("/base/data"));
    CHECK(c.paths.output_dir == fs::path("/base/run"));
    CHECK(c.paths.stats.empty());
    REQUIRE(c.evaluation.regions.size() == 1);
    CHECK(c.evaluation.regions[0].lon_min == 170);
    CHECK(c.evaluation.regions[0].split == SplitScheme::EquatorNS);
    CHECK(c.evaluation.cosine_weighting);
    CHECK(c.evaluation_year == 2013);
    CHECK(c.split.train.first == 2010);
    CHECK(c.synthetic.days_per_month == 2);

    const RunConfig back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
}

TEST_CASE("stats: deterministic, audited to the training years, refuses overwrite") {
    quiet();
    Project p("stats");
    auto r = run({"stats", "-c", p.cfg.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const std::string first = slurp(p / "run/stats.json");

    r = run({"stats", "-c", p.cfg.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("--force") != std::string::npos);
    CHECK(slurp(p / "run/stats.json") == first);

    r = run({"stats", "-c", p.cfg.string(), "--force", "-o", (p / "again.json").string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(p / "again.json") == first);

    const RunConfig cfg = load_run_config(p.cfg);
    const StatsOutcome o = cmd_stats(cfg, p / "third.json", false);
    CHECK(o.years_read == std::set<int>{2010, 2011});
    for (const auto& f : o.files_read) {
        CHECK(f.find("2012") == std::string::npos);
        CHECK(f.find("2013") == std::string::npos);
    }
    CHECK(o.stats.days == 48);
    CHECK(std::isfinite(o.stats.anomaly_threshold));

    r = run({"stats", "-c", p.cfg.string(), "--dataset", (p / "missing").string(), "--force"});
    CHECK(r.code == 2);
    CHECK(r.err.find("not found") != std::string::npos);
}

TEST_CASE("convert-check summarizes every container") {
    quiet();
    Project p("check");
    const auto r = run({"convert-check", "-c", p.cfg.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const Json j = Json::parse(r.out);
    CHECK(j["days"] == 96);
    CHECK(j["files"].size() == 4);
    CHECK(j["channels"].size() == 10);
    CHECK(j["channels"][9]["role"] == "target");
    CHECK(j["first_date"] == "2010-01-01");
    CHECK(j["last_date"] == "2013-12-02");
}

TEST_CASE("train: loss decreases, outputs written, audit confined, resume matches") {
    quiet();
    Json j = small_config();
    j["optim"]["epochs"] = 3;
    Project p("train", j);
    auto r = run({"train", "-c", p.cfg.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char* f : {"best.ckpt", "final.ckpt", "train_log.ndjson", "resolved_config.json", "access_audit.json", "stats.json"})
        CHECK_MESSAGE(fs::exists(p / "run" / f), f);

    std::vector<Json> log;
    {
        std::istringstream in(slurp(p / "run/train_log.ndjson"));
        for (std::string line; std::getline(in, line);) log.push_back(Json::parse(line));
    }
    REQUIRE(log.size() == 3);
    CHECK(log.back()["train"]["total"].get<double>() < log.front()["train"]["total"].get<double>());

    const Json audit = Json::parse(slurp(p / "run/access_audit.json"));
    CHECK(audit["training"]["years"] == Json::array({2010, 2011}));
    CHECK(audit["validation"]["years"] == Json::array({2012}));
    CHECK(audit["training"]["reads"].get<int>() == 48 + 3 * 48);  // statistics pass, then three epochs

    const Json resolved = Json::parse(slurp(p / "run/resolved_config.json"));
    CHECK(std::isfinite(resolved["loss"]["anomaly_threshold"].get<double>()));

    r = run({"train", "-c", p.cfg.string()});
    CHECK(r.code == 2);

    // Interrupted after one epoch, then resumed: identical to the uninterrupted run.
    RunConfig cfg = load_run_config(p.cfg);
    cfg.paths.output_dir = p / "short";
    cfg.optim.epochs = 1;
    cmd_train(cfg, false, std::nullopt);
    cfg.optim.epochs = 3;
    cmd_train(cfg, false, p / "short/final.ckpt");
    Checkpoint a = load_checkpoint(p / "run/final.ckpt");
    Checkpoint b = load_checkpoint(p / "short/final.ckpt");
    auto pa = a.params.named_params();
    auto pb = b.params.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK_MESSAGE(bit_equal(pa[i].var.value(), pb[i].var.value()), pa[i].name);
    CHECK(a.state.step == b.state.step);
}

TEST_CASE("train: statistics file with mismatched channels is rejected") {
    quiet();
    Project p("mismatch");
    TrainingStatistics s;
    s.norm.channels = {{"only", 0.0, 1.0, 1}};
    s.anomaly_threshold = 1.0;
    s.days = 1;
    save_statistics(p / "bad_stats.json", s);
    const auto r = run({"train", "-c", p.cfg.string(), "--stats", (p / "bad_stats.json").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("channels") != std::string::npos);
}

TEST_CASE("predict: dims, non-negative density and exact gating") {
    quiet();
    Project p("predict");
    REQUIRE(run({"train", "-c", p.cfg.string()}).code == 0);
    const double tau = 0.3;
    auto r = run({"predict", "-c", p.cfg.string(), "--threshold", "0.3"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const fs::path out = p / "run/predictions_2013.mgrid";
    REQUIRE(fs::exists(out));
    CHECK_FALSE(fs::exists(out.string() + ".partial"));

    const Dataset obs = Dataset::open(p / "data");
    const Dataset pred = Dataset::open(out);
    CHECK(pred.grid() == obs.grid());
    CHECK(pred.size() == 24);
    REQUIRE(pred.channels().size() == 2);
    CHECK(pred.channels()[0].name == "logit");
    std::size_t above = 0, below = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const GridSample s = pred.sample(i);
        const GridSample o = obs.sample(*obs.find(s.date));
        CHECK(s.date.year == 2013);
        for (std::size_t k = 0; k < s.cells(); ++k) {
            CHECK(s.mask[k] == o.mask[k]);
            CHECK(s.target[k] >= 0.0f);
            const double prob = 1.0 / (1.0 + std::exp(-double(s.predictors[k])));
            const float mag = std::max(0.0f, s.predictors[s.cells() + k]);
            if (prob > tau) {
                ++above;
                CHECK(s.target[k] == mag);
            } else {
                ++below;
                CHECK(s.target[k] == 0.0f);
            }
        }
    }
    CHECK(above + below == 24 * obs.grid().cells());

    r = run({"predict", "-c", p.cfg.string()});
    CHECK(r.code == 2);
    r = run({"predict", "-c", p.cfg.string(), "--force", "--mode", "expected", "--year", "2012", "-o", (p / "e.mgrid").string()});
    REQUIRE(r.code == 0);
    const Dataset e = Dataset::open(p / "e.mgrid");
    CHECK(e.size() == 24);
    CHECK(e.date(0).year == 2012);
    for (std::size_t i = 0; i < e.size(); ++i) {
        const GridSample s = e.sample(i);
        for (std::size_t k = 0; k < s.cells(); ++k) {
            const double prob = 1.0 / (1.0 + std::exp(-double(s.predictors[k])));
            CHECK(s.target[k] == doctest::Approx(prob * std::max(0.0f, s.predictors[s.cells() + k])).epsilon(1e-6));
        }
    }
    r = run({"predict", "-c", p.cfg.string(), "--force", "--threshold", "1"});
    CHECK(r.code == 2);
    r = run({"predict", "-c", p.cfg.string(), "--force", "--year", "1999", "-o", (p / "none.mgrid").string()});
    CHECK(r.code == 1);
}

TEST_CASE("evaluate: self-comparison is perfect and re-runs are byte-identical") {
    quiet();
    Json j = small_config(0);
    j["synthetic"]["first_year"] = 2013;
    j["synthetic"]["last_year"] = 2013;
    j["paths"]["predictions"] = "data/synthetic_2013.mgrid";
    Project p("evaluate", j);
    auto r = run({"evaluate", "-c", p.cfg.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const Json s = Json::parse(slurp(p / "run/evaluation/summary.json"));
    CHECK(s["year"] == 2013);
    CHECK(s["days"] == 365);
    CHECK(s["global"]["log1p"]["r"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s["global"]["log1p"]["rmse"].get<double>() == 0.0);
    for (const auto& reg : s["regions"]) {
        CHECK(reg["score"]["r"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(reg["score"]["rmse"].get<double>() == 0.0);
        for (const auto& sub : reg["subregions"]) CHECK(sub["score"]["rmse"].get<double>() == 0.0);
    }

    r = run({"evaluate", "-c", p.cfg.string()});
    CHECK(r.code == 2);
    r = run({"evaluate", "-c", p.cfg.string(), "-o", (p / "again").string()});
    REQUIRE(r.code == 0);
    for (const auto& e : fs::recursive_directory_iterator(p / "run/evaluation")) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), p / "run/evaluation");
        CHECK_MESSAGE(slurp(e.path()) == slurp(p / "again" / rel), rel.string());
    }

    r = run({"report", "-c", p.cfg.string()});
    REQUIRE(r.code == 0);
    const std::string md = slurp(p / "run/report.md");
    CHECK(md.find("Maritime Continent") != std::string::npos);
    CHECK(md.find("annual mean r, log1p fields: 1") != std::string::npos);
}

TEST_CASE("evaluate: incomplete test year fails with a coverage error") {
    quiet();
    Json j = small_config();
    j["paths"]["predictions"] = "data/synthetic_2013.mgrid";
    Project p("coverage", j);
    const auto r = run({"evaluate", "-c", p.cfg.string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("missing day") != std::string::npos);
}
