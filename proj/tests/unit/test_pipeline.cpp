#include "helpers.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "kforge/dataset_builder.hpp"
#include "kforge/jsonl.hpp"
#include "kforge/pipeline.hpp"
#include "kforge/qa_forge.hpp"

using namespace kforge;
namespace fs = std::filesystem;

namespace {

struct Run {
    int rc;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int rc = run_cli(args, out, err);
    return {rc, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files[e.path().filename().string()] = slurp(e.path());
    return files;
}

// Runs the offline pipeline into `out` and returns its files.
std::map<std::string, std::string> full_pipeline(const fs::path& out, const std::string& jobs) {
    const auto docs = (kt::source_dir() / "tests/data/docs").string();
    const std::vector<std::string> g{"--mock-llm", (out / "no-fixtures").string(), "--seed", "7", "-j", jobs,
                                     "-o", out.string()};
    auto step = [&](std::vector<std::string> a) {
        a.insert(a.begin(), g.begin(), g.end());
        const auto r = cli(a);
        INFO(a.back() << ": " << r.err);
        REQUIRE(r.rc == 0);
    };
    step({"ingest", docs, "-T", "200"});
    step({"generate-qa"});
    step({"augment-answers"});
    step({"split"});
    step({"index", "build", "--passage-tokens", "60"});
    step({"build-dataset", "--identifier", "StorageDocs"});

    std::string preds;
    for (const auto& p : from_jsonl<QAPair>(read_jsonl(out / outputs::kQASplit)))
        preds += nlohmann::json{{"question_id", p.id}, {"prediction", p.canonical()}}.dump() + "\n";
    write_file(out / "preds.jsonl", preds);
    step({"evaluate", "--predictions", (out / "preds.jsonl").string(), "--judge", "--csv"});
    return tree(out);
}

struct EpochGuard {
    EpochGuard() { ::setenv("SOURCE_DATE_EPOCH", "0", 1); }
    ~EpochGuard() { ::unsetenv("SOURCE_DATE_EPOCH"); }
};

}  // namespace

TEST_CASE("build timestamp honors SOURCE_DATE_EPOCH") {
    EpochGuard g;
    CHECK(build_timestamp() == "1970-01-01T00:00:00Z");
}

TEST_CASE("offline pipeline is reproducible") {
    EpochGuard g;
    kt::TempDir a, b;
    const auto ra = full_pipeline(a.path(), "1");
    const auto rb = full_pipeline(b.path(), "4");
    REQUIRE(ra.size() == rb.size());
    for (const auto& [name, bytes] : ra) {
        if (name == outputs::kManifest || name == "preds.jsonl") continue;
        INFO(name);
        CHECK(bytes == rb.at(name));
    }
    for (const char* f : {outputs::kCorpus, outputs::kQA, outputs::kQAAug, outputs::kQASplit, outputs::kIndex,
                          outputs::kDataset, outputs::kEvalReport, outputs::kEvalCsv, outputs::kManifest})
        CHECK(ra.count(f) == 1);

    const auto report = nlohmann::json::parse(ra.at(outputs::kEvalReport));
    CHECK(report["overall"]["token_recall"] == 1.0);
    CHECK(report["overall"]["judge_accuracy"] == 1.0);
    CHECK(report["missing_count"] == 0);

    const auto manifest = nlohmann::json::parse(ra.at(outputs::kManifest));
    CHECK(manifest["seed"] == 7);
    for (const char* stage : {"ingest", "generate-qa", "augment-answers", "split", "index build", "build-dataset",
                              "evaluate"}) {
        INFO(stage);
        REQUIRE(manifest["stages"].contains(stage));
        CHECK(manifest["stages"][stage]["finished_at"] == "1970-01-01T00:00:00Z");
    }
    CHECK(manifest["stages"]["build-dataset"]["outputs"].contains(outputs::kDataset));

    const auto rows = read_jsonl(a.path() / outputs::kDataset);
    REQUIRE_FALSE(rows.empty());
    for (const auto& r : rows) {
        CHECK(r["completion"].get<std::string>().rfind("<response>", 0) == 0);
        if (r["meta"]["origin"] == "domain") {
            CHECK(r["prompt"].get<std::string>().find("StorageDocs") != std::string::npos);
            CHECK(r["meta"]["passage_ids"].size() == 5);
        }
    }

    // corruption_p sweep
    const auto grid = cli({"--mock-llm", a.path().string(), "-o", a.path().string(), "build-dataset", "--p-grid"});
    REQUIRE(grid.rc == 0);
    for (double p : kCorruptionGrid) CHECK(fs::exists(a.path() / grid_file_name(p)));
    CHECK(grid_file_name(0.4) == "dataset_p0.4.jsonl");
    for (const auto& r : read_jsonl(a.path() / "dataset_p0.0.jsonl"))
        if (r["meta"]["origin"] == "domain") CHECK(r["meta"]["bucket"] == "success");
    for (const auto& r : read_jsonl(a.path() / "dataset_p1.0.jsonl"))
        if (r["meta"]["origin"] == "domain") CHECK(r["meta"]["bucket"] == "failure");

    // coverage and search on the finished tree
    const auto cov = cli({"-o", a.path().string(), "coverage"});
    REQUIRE(cov.rc == 0);
    const auto c = nlohmann::json::parse(slurp(a.path() / outputs::kCoverage));
    CHECK(c["overall"].get<double>() >= 0.0);
    CHECK(c["overall"].get<double>() <= 1.0);
    const auto s = cli({"-o", a.path().string(), "index", "search", "REST API port", "-k", "3"});
    REQUIRE(s.rc == 0);
    CHECK(s.out.find("passage_id") != std::string::npos);
}

TEST_CASE("stage errors and exit codes") {
    kt::TempDir d;
    const auto o = d.path().string();
    const auto docs = (kt::source_dir() / "tests/data/docs").string();

    SUBCASE("missing upstream stage names the command to run") {
        const auto r = cli({"-o", o, "build-dataset"});
        CHECK(r.rc == kExitStage);
        const auto e = nlohmann::json::parse(r.err.substr(0, r.err.find('\n')));
        CHECK(e["error"] == "StageMissing");
        CHECK(e["stage"] == "build-dataset");
        const auto msg = e["message"].get<std::string>();
        CHECK(msg.find(outputs::kQASplit) != std::string::npos);
        CHECK(msg.find("kforge split") != std::string::npos);
    }
    SUBCASE("dataset without an index") {
        REQUIRE(cli({"--mock-llm", o, "-o", o, "ingest", docs, "-T", "200"}).rc == 0);
        REQUIRE(cli({"--mock-llm", o, "-o", o, "generate-qa"}).rc == 0);
        REQUIRE(cli({"--mock-llm", o, "-o", o, "split"}).rc == 0);
        const auto r = cli({"-o", o, "build-dataset"});
        CHECK(r.rc == kExitStage);
        CHECK(r.err.find("index build") != std::string::npos);
        const auto dsf = cli({"-o", o, "build-dataset", "--strategy", "dsf"});
        CHECK(dsf.rc == kExitOk);
    }
    SUBCASE("usage errors") {
        CHECK(cli({"--no-such-flag"}).rc == kExitUsage);
        CHECK(cli({"-o", o, "build-dataset", "--corruption-p", "1.5"}).rc == kExitUsage);
        CHECK(cli({"-o", o, "build-dataset", "--strategy", "nonsense"}).rc == kExitUsage);
        CHECK(cli({"--help"}).rc == kExitOk);
    }
    SUBCASE("regression command") {
        write_file(d / "scores.json", R"({"mmlu":60,"gsm8k_flexible":40,"gsm8k_strict":20,"hellaswag":80,
                                         "tqa_mc1":50,"tqa_mc2":30,"tqa_gen_rougel":45})");
        REQUIRE(cli({"-o", o, "regression", "--scores", (d / "scores.json").string()}).rc == 0);
        CHECK(nlohmann::json::parse(slurp(d / outputs::kRegression))["average"] == 51.0);
        write_file(d / "bad.json", R"({"mmlu":60})");
        CHECK(cli({"-o", o, "regression", "--scores", (d / "bad.json").string()}).rc == kExitStage);
    }
    SUBCASE("no endpoint configured") {
        REQUIRE(cli({"--mock-llm", o, "-o", o, "ingest", docs}).rc == 0);
        ::unsetenv("KF_MOCK_LLM");
        const auto r = cli({"-o", o, "generate-qa"});
        CHECK(r.rc == kExitUsage);
        CHECK(r.err.find("ConfigError") != std::string::npos);
    }
}

TEST_CASE("settings precedence: flag over env over config") {
    kt::TempDir d;
    const auto docs = (kt::source_dir() / "tests/data/docs").string();
    const auto from_config = d / "cfg-out";
    const auto from_env = d / "env-out";
    const auto from_flag = d / "flag-out";
    write_file(d / "cfg.json", nlohmann::json{{"out_dir", from_config.string()}, {"seed", 3}}.dump());
    const auto cfg = (d / "cfg.json").string();

    REQUIRE(cli({"--config", cfg, "ingest", docs}).rc == 0);
    CHECK(fs::exists(from_config / outputs::kCorpus));
    CHECK(nlohmann::json::parse(slurp(from_config / outputs::kManifest))["seed"] == 3);

    ::setenv("KF_OUT_DIR", from_env.string().c_str(), 1);
    ::setenv("KF_SEED", "5", 1);
    REQUIRE(cli({"--config", cfg, "ingest", docs}).rc == 0);
    CHECK(fs::exists(from_env / outputs::kCorpus));
    CHECK(nlohmann::json::parse(slurp(from_env / outputs::kManifest))["seed"] == 5);

    REQUIRE(cli({"--config", cfg, "-o", from_flag.string(), "--seed", "9", "ingest", docs}).rc == 0);
    CHECK(nlohmann::json::parse(slurp(from_flag / outputs::kManifest))["seed"] == 9);
    ::unsetenv("KF_OUT_DIR");
    ::unsetenv("KF_SEED");

    write_file(d / "broken.json", "{not json");
    CHECK(cli({"--config", (d / "broken.json").string(), "ingest", docs}).rc == kExitUsage);
}
