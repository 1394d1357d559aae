#include "kforge/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "kforge/corpus.hpp"
#include "kforge/dataset_builder.hpp"
#include "kforge/evaluator.hpp"
#include "kforge/jsonl.hpp"
#include "kforge/llm_gateway.hpp"
#include "kforge/openai.hpp"
#include "kforge/qa_forge.hpp"
#include "kforge/retriever.hpp"
#include "kforge/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kforge {
namespace {

const char* env(const char* name) {
    const char* v = std::getenv(name);
    return v && *v ? v : nullptr;
}

const json& section(const json& cfg, const char* name) {
    static const json empty = json::object();
    auto it = cfg.find(name);
    return it != cfg.end() && it->is_object() ? *it : empty;
}

// Value of a setting under flags > environment > config file > default.
template <typename T>
T resolve(const CLI::Option* flag, const T& flag_value, const char* env_name, const json& cfg, const char* key,
          T fallback) {
    if (flag && flag->count() > 0) return flag_value;
    if (env_name) {
        if (const char* v = env(env_name)) {
            try {
                if constexpr (std::is_same_v<T, std::string>) return std::string(v);
                else return json::parse(v).get<T>();
            } catch (const std::exception& e) {
                throw Error(ErrorCode::ConfigError, std::string("bad value for ") + env_name + ": " + e.what());
            }
        }
    }
    if (auto it = cfg.find(key); it != cfg.end() && !it->is_null()) {
        try {
            return it->get<T>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ConfigError, std::string("bad config value for \"") + key + "\": " + e.what());
        }
    }
    return fallback;
}

void stage_missing(const std::string& stage, const fs::path& path) {
    throw Error(ErrorCode::StageMissing,
                "missing stage '" + stage + "': expected " + path.string() + "; run `kforge " + stage + "` first");
}

struct Options {
    // global flag storage
    std::uint64_t seed = 0;
    std::string config_path;
    std::string mock_llm;
    std::string templates_dir;
    std::size_t jobs = 1;
    std::string out_dir;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* mock_opt = nullptr;
    CLI::Option* templates_opt = nullptr;
    CLI::Option* jobs_opt = nullptr;
    CLI::Option* out_opt = nullptr;

    // stage flag storage
    std::vector<std::string> paths;
    std::string domain = "default";
    std::size_t threshold = 8000;
    std::size_t calls = 3;
    double early_stop = 0.0;
    std::size_t max_answers = 5;
    std::string qa_path;
    double train = 0.8, val = 0.1, test = 0.1;
    std::size_t max_words = 8;
    std::size_t passage_tokens = 512;
    std::string query;
    std::size_t k = 5;
    std::string strategy;
    double corruption_p = 0.4;
    std::size_t k_passages = 5;
    std::size_t max_paraphrases = 5;
    std::string policy;
    std::string identifier;
    double replay_ratio = 0.1;
    std::string chapter_map_path;
    std::string replay_path;
    std::string inputs_path;
    std::string predictions_path;
    bool judge = false;
    bool factoid = false;
    bool csv = false;
    bool p_grid = false;
    std::string scores_path;
};

class Runner {
public:
    Runner(Options& o, std::ostream& out, std::ostream& err) : o_(o), out_(out), err_(err) {}

    void init() {
        if (!o_.config_path.empty()) {
            try {
                config_ = json::parse(read_file(o_.config_path));
            } catch (const json::exception& e) {
                throw Error(ErrorCode::ConfigError, "config " + o_.config_path + ": " + e.what());
            } catch (const Error& e) {
                throw Error(ErrorCode::ConfigError, e.what());
            }
            if (!config_.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
        } else {
            config_ = json::object();
        }
        seed_ = resolve<std::uint64_t>(o_.seed_opt, o_.seed, "KF_SEED", config_, "seed", 0);
        jobs_ = std::max<std::size_t>(1, resolve<std::size_t>(o_.jobs_opt, o_.jobs, "KF_JOBS", config_, "jobs", 1));
        out_dir_ = resolve<std::string>(o_.out_opt, o_.out_dir, "KF_OUT_DIR", config_, "out_dir", "kforge-out");
        mock_ = resolve<std::string>(o_.mock_opt, o_.mock_llm, "KF_MOCK_LLM", config_, "mock_llm", "");
        templates_dir_ = resolve<std::string>(o_.templates_opt, o_.templates_dir, "KF_TEMPLATES", config_,
                                              "templates", "");
        effective_ = {{"seed", seed_}, {"jobs", jobs_}, {"mock_llm", mock_.empty() ? json() : json(mock_)}};
    }

    fs::path out(const std::string& name) const {
        const fs::path p(name);
        if (p.is_absolute() || p.has_parent_path() || name == ".." || name == ".")
            throw Error(ErrorCode::InvalidArgument, "output name escapes the output directory: " + name);
        return out_dir_ / p;
    }

    fs::path require(const std::string& name, const std::string& stage) const {
        auto p = out(name);
        if (!fs::exists(p)) stage_missing(stage, p);
        return p;
    }

    // Explicit input path, else the first existing standard output.
    fs::path input_or(const std::string& flag_value, const std::vector<const char*>& names,
                      const std::string& stage) const {
        if (!flag_value.empty()) {
            if (!fs::exists(flag_value)) throw Error(ErrorCode::IoError, "input not found: " + flag_value);
            return flag_value;
        }
        for (const auto* n : names)
            if (fs::exists(out(n))) return out(n);
        stage_missing(stage, out(names.back()));
        return {};
    }

    TemplateSet templates() const {
        return templates_dir_.empty() ? TemplateSet::builtin() : TemplateSet::with_overrides(templates_dir_);
    }

    Sampling sampling() const {
        const auto& s = section(config_, "sampling");
        Sampling out;
        out.temperature = s.value("temperature", out.temperature);
        out.top_p = s.value("top_p", out.top_p);
        out.max_tokens = s.value("max_tokens", out.max_tokens);
        out.seed = seed_;
        return out;
    }

    std::unique_ptr<Gateway> gateway(bool judge) {
        std::shared_ptr<ChatBackend> backend;
        GatewayOptions opts;
        opts.max_in_flight = jobs_;
        if (!mock_.empty()) {
            backend = std::make_shared<MockBackend>(mock_);
            opts.retry.max_retries = 0;
        } else {
            const auto& llm = section(config_, judge ? "judge" : "llm");
            auto cfg = EndpointConfig::from_env(judge);
            if (cfg.endpoint.empty()) cfg.endpoint = llm.value("endpoint", std::string());
            if (cfg.model.empty()) cfg.model = llm.value("model", std::string());
            if (cfg.api_key.empty()) cfg.api_key = llm.value("api_key", std::string());
            if (cfg.endpoint.empty())
                throw Error(ErrorCode::ConfigError, "no LLM endpoint: set KF_LLM_ENDPOINT, the config \"llm\" "
                                                    "section, or pass --mock-llm <dir>");
            opts.model = cfg.model;
            backend = std::make_shared<OpenAIBackend>(cfg);
        }
        return std::make_unique<Gateway>(backend, templates(), opts);
    }

    void warn(const std::vector<Warning>& warnings) {
        for (const auto& w : warnings) err_ << json{{"warning", w.code}, {"detail", w.detail}}.dump() << '\n';
    }

    void write(const std::string& name, const std::string& contents) {
        const auto p = out(name);
        write_file(p, contents);
        written_[name] = sha256_hex(contents);
    }

    void record_input(const fs::path& p) { inputs_[p.string()] = sha256_hex(read_file(p)); }

    // Writes the stage entry of manifest.json.
    void finish(const std::string& stage, json stage_config) {
        json manifest = json::object();
        const auto path = out(outputs::kManifest);
        if (fs::exists(path)) {
            try {
                manifest = json::parse(read_file(path));
            } catch (const json::exception&) {
                manifest = json::object();
            }
        }
        auto effective = effective_;
        effective["stage"] = std::move(stage_config);
        const auto hash = sha256_hex(effective.dump());
        manifest["format"] = "kforge-manifest";
        manifest["version"] = 1;
        manifest["seed"] = seed_;
        manifest["stages"][stage] = {{"config", effective},
                                     {"config_hash", hash},
                                     {"inputs", inputs_},
                                     {"outputs", written_},
                                     {"finished_at", build_timestamp()}};
        json all = json::object();
        for (const auto& [name, entry] : manifest["stages"].items()) all[name] = entry.value("config_hash", "");
        manifest["config_hash"] = sha256_hex(all.dump());
        write_file(path, manifest.dump(2) + "\n");
        out_ << json{{"stage", stage}, {"outputs", written_}}.dump() << '\n';
    }

    Corpus load_corpus() {
        const auto p = require(outputs::kCorpus, "ingest");
        record_input(p);
        return Corpus::from_json(json::parse(read_file(p)));
    }

    Index load_index() {
        const auto p = require(outputs::kIndex, "index build");
        record_input(p);
        return Index::load(p);
    }

    std::vector<QAPair> load_pairs(const fs::path& p) {
        record_input(p);
        return from_jsonl<QAPair>(read_jsonl(p));
    }

    // ---- stages ----

    void ingest(const CLI::App& cmd) {
        const auto& c = section(config_, "ingest");
        const auto domain = resolve<std::string>(cmd.get_option("--domain"), o_.domain, nullptr, c, "domain", "default");
        const auto threshold = resolve<std::size_t>(cmd.get_option("--threshold"), o_.threshold, nullptr,
                                                    section(config_, "dataset"), "T", 8000);
        std::vector<fs::path> files;
        for (const auto& arg : o_.paths) {
            const fs::path p(arg);
            if (fs::is_directory(p)) {
                for (const auto& e : fs::recursive_directory_iterator(p)) {
                    const auto ext = e.path().extension().string();
                    if (e.is_regular_file() && (ext == ".txt" || ext == ".md")) files.push_back(e.path());
                }
            } else if (fs::is_regular_file(p)) {
                files.push_back(p);
            } else {
                throw Error(ErrorCode::IoError, "input not found: " + arg);
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw Error(ErrorCode::EmptyCorpus, "no .txt or .md documents under the given paths");
        std::vector<Document> docs;
        for (const auto& f : files) {
            docs.push_back(ingest_file(f, domain));
            record_input(f);
        }
        std::vector<Warning> warnings;
        const auto corpus = Corpus::build(std::move(docs), threshold, &warnings);
        warn(warnings);
        write(outputs::kCorpus, corpus.to_json().dump(1) + "\n");
        finish("ingest", {{"domain", domain}, {"T", threshold}});
    }

    void generate_qa(const CLI::App& cmd) {
        const auto& c = section(config_, "generate_qa");
        const auto corpus = load_corpus();
        GenerateOptions opts;
        opts.calls = resolve<std::size_t>(cmd.get_option("--calls"), o_.calls, nullptr, c, "calls",
                                          section(config_, "dataset").value("N_c", std::size_t{3}));
        if (opts.calls == 0) throw Error(ErrorCode::InvalidArgument, "--calls must be >= 1");
        const auto early = resolve<double>(cmd.get_option("--early-stop"), o_.early_stop, nullptr, c,
                                           "early_stop_coverage", 0.0);
        if (early > 0.0) opts.early_stop_coverage = early;
        opts.sampling = sampling();
        auto gw = gateway(false);
        auto result = generate_corpus_qa(*gw, corpus, opts, jobs_);
        warn(result.warnings);
        write(outputs::kQA, to_jsonl(result.pairs));
        finish("generate-qa", {{"calls", opts.calls}, {"early_stop_coverage", early}, {"sampling", sampling_json()}});
    }

    void augment(const CLI::App& cmd) {
        const auto corpus = load_corpus();
        const auto pairs = load_pairs(input_or(o_.qa_path, {outputs::kQA}, "generate-qa"));
        const auto max_answers = resolve<std::size_t>(cmd.get_option("--max-answers"), o_.max_answers, nullptr,
                                                      section(config_, "dataset"), "max_paraphrases", 5);
        auto gw = gateway(false);
        auto result = add_multiplicity_all(*gw, corpus, pairs, max_answers, sampling(), jobs_);
        warn(result.warnings);
        write(outputs::kQAAug, to_jsonl(result.pairs));
        finish("augment-answers", {{"max_answers", max_answers}, {"sampling", sampling_json()}});
    }

    void coverage_stage() {
        const auto corpus = load_corpus();
        const auto pairs = load_pairs(input_or(o_.qa_path, {outputs::kQAAug, outputs::kQA}, "generate-qa"));
        json report = coverage(corpus, corpus.chunks(), pairs);
        write(outputs::kCoverage, report.dump(2) + "\n");
        out_ << json{{"overall", report["overall"]}}.dump() << '\n';
        finish("coverage", json::object());
    }

    void split_stage(const CLI::App& cmd) {
        const auto& c = section(config_, "split");
        SplitRatios r;
        r.train = resolve<double>(cmd.get_option("--train"), o_.train, nullptr, c, "train", 0.8);
        r.val = resolve<double>(cmd.get_option("--val"), o_.val, nullptr, c, "val", 0.1);
        r.test = resolve<double>(cmd.get_option("--test"), o_.test, nullptr, c, "test", 0.1);
        auto pairs = load_pairs(input_or(o_.qa_path, {outputs::kQAAug, outputs::kQA}, "generate-qa"));
        const auto result = assign_splits(std::move(pairs), r, seed_);
        write(outputs::kQASplit, to_jsonl(result));
        finish("split", {{"train", r.train}, {"val", r.val}, {"test", r.test}});
    }

    void filter_stage() {
        const auto path = require(outputs::kQASplit, "split");
        const auto pairs = load_pairs(path);
        std::vector<QAPair> test;
        for (const auto& p : pairs)
            if (p.split == Split::Test) test.push_back(p);
        auto gw = gateway(false);
        auto result = filter_test(*gw, test, sampling());
        warn(result.warnings);
        std::set<std::string> removed;
        for (const auto& p : result.removed) removed.insert(p.id);
        std::vector<QAPair> kept;
        for (const auto& p : pairs)
            if (!removed.count(p.id)) kept.push_back(p);
        write(outputs::kQASplit, to_jsonl(kept));
        write(outputs::kFilteredOut, to_jsonl(result.removed));
        finish("filter-test", {{"sampling", sampling_json()}});
    }

    void factoid_stage(const CLI::App& cmd) {
        const auto pairs = load_pairs(input_or(o_.qa_path, {outputs::kQASplit}, "split"));
        const auto max_words = resolve<std::size_t>(cmd.get_option("--max-words"), o_.max_words, nullptr,
                                                    section(config_, "evaluate"), "factoid_max_words", 8);
        std::vector<QAPair> test;
        for (const auto& p : pairs)
            if (!p.split || p.split == Split::Test) test.push_back(p);
        write(outputs::kFactoid, to_jsonl(extract_factoid(test, max_words)));
        finish("factoid", {{"max_words", max_words}});
    }

    void index_build(const CLI::App& cmd) {
        const auto corpus = load_corpus();
        const auto tokens = resolve<std::size_t>(cmd.get_option("--passage-tokens"), o_.passage_tokens, nullptr,
                                                 section(config_, "index"), "passage_tokens", 512);
        if (tokens == 0) throw Error(ErrorCode::InvalidArgument, "--passage-tokens must be >= 1");
        const auto index = Index::build(corpus.documents(), tokens);
        write(outputs::kIndex, index.serialize());
        finish("index build", {{"passage_tokens", tokens}});
    }

    void index_search(const CLI::App& cmd) {
        const auto p = require(outputs::kIndex, "index build");
        const auto index = Index::load(p);
        const auto k = resolve<std::size_t>(cmd.get_option("-k"), o_.k, nullptr, section(config_, "evaluate"), "k", 5);
        json rows = json::array();
        for (const auto& r : index.search(o_.query, k)) {
            json row = r;
            row["doc_id"] = index.at(r.passage_id).doc_id;
            rows.push_back(row);
        }
        out_ << rows.dump() << '\n';
    }

    void build_dataset_stage(const CLI::App& cmd) {
        DatasetConfig cfg = section(config_, "dataset").get<DatasetConfig>();
        if (cmd.get_option("--strategy")->count()) cfg.strategy = strategy_from_string(o_.strategy);
        if (cmd.get_option("--corruption-p")->count()) cfg.corruption_p = o_.corruption_p;
        if (cmd.get_option("--k-passages")->count()) cfg.k_passages = o_.k_passages;
        if (cmd.get_option("--max-paraphrases")->count()) cfg.max_paraphrases = o_.max_paraphrases;
        if (cmd.get_option("--policy")->count()) cfg.assignment_policy = policy_from_string(o_.policy);
        if (cmd.get_option("--identifier")->count()) {
            if (o_.identifier.empty()) cfg.domain_identifier.reset();
            else cfg.domain_identifier = o_.identifier;
        }
        if (cmd.get_option("--replay-ratio")->count()) cfg.replay_ratio = o_.replay_ratio;
        if (!o_.chapter_map_path.empty()) {
            cfg.chapter_map.clear();
            for (const auto& [k, v] : json::parse(read_file(o_.chapter_map_path)).items())
                cfg.chapter_map[k] = bucket_from_string(v.get<std::string>());
            record_input(o_.chapter_map_path);
        }
        cfg.seed = seed_;
        cfg.validate();

        const auto pairs = load_pairs(input_or(o_.qa_path, {outputs::kQASplit}, "split"));
        const auto corpus = load_corpus();
        Index index;
        if (cfg.strategy != Strategy::DSF) index = load_index();

        std::vector<ReplayItem> replay;
        fs::path replay_path = o_.replay_path;
        if (replay_path.empty() && fs::exists(out(outputs::kReplay))) replay_path = out(outputs::kReplay);
        if (!replay_path.empty()) {
            if (!fs::exists(replay_path)) throw Error(ErrorCode::IoError, "replay buffer not found: " + replay_path.string());
            record_input(replay_path);
            replay = from_jsonl<ReplayItem>(read_jsonl(replay_path));
        }

        const auto tmpl = templates();
        auto emit = [&](const DatasetConfig& c, const std::string& name) {
            auto result = build_dataset(pairs, c, index, corpus, replay, jobs_);
            warn(result.warnings);
            std::string body;
            for (const auto& ex : result.examples) body += to_record(ex, tmpl).dump() + "\n";
            write(name, body);
        };
        if (!o_.p_grid) {
            emit(cfg, outputs::kDataset);
            finish("build-dataset", cfg);
            return;
        }
        if (cfg.strategy == Strategy::DSF) throw Error(ErrorCode::InvalidArgument, "--p-grid needs a RAFT-style strategy");
        json grid = json::array();
        for (double p : kCorruptionGrid) {
            auto c = cfg;
            c.corruption_p = p;
            emit(c, grid_file_name(p));
            grid.push_back(p);
        }
        json stage = cfg;
        stage["corruption_p"] = grid;
        finish("build-dataset", stage);
    }

    void build_replay_stage() {
        if (!fs::exists(o_.inputs_path)) throw Error(ErrorCode::IoError, "replay inputs not found: " + o_.inputs_path);
        record_input(o_.inputs_path);
        const auto inputs = from_jsonl<ReplayInput>(read_jsonl(o_.inputs_path));
        auto gw = gateway(false);
        auto result = build_replay(inputs, *gw, sampling());
        warn(result.warnings);
        write(outputs::kReplay, to_jsonl(result.items));
        finish("build-replay", {{"sampling", sampling_json()}});
    }

    void evaluate_stage(const CLI::App& cmd) {
        const auto& c = section(config_, "evaluate");
        EvalConfig cfg;
        cfg.k = resolve<std::size_t>(cmd.get_option("-k"), o_.k, nullptr, c, "k", 5);
        cfg.use_judge = resolve<bool>(cmd.get_option("--judge"), o_.judge, nullptr, c, "judge", false);
        cfg.factoid = resolve<bool>(cmd.get_option("--factoid"), o_.factoid, nullptr, c, "factoid", false);
        cfg.factoid_max_words = c.value("factoid_max_words", cfg.factoid_max_words);
        cfg.judge_sampling = sampling();
        const bool csv = resolve<bool>(cmd.get_option("--csv"), o_.csv, nullptr, c, "csv", false);

        if (!fs::exists(o_.predictions_path))
            throw Error(ErrorCode::IoError, "predictions not found: " + o_.predictions_path);
        record_input(o_.predictions_path);
        const auto predictions = from_jsonl<Prediction>(read_jsonl(o_.predictions_path));
        const auto pairs = load_pairs(input_or(o_.qa_path, {outputs::kQASplit}, "split"));
        const auto corpus = load_corpus();
        const auto index = load_index();
        std::unique_ptr<Gateway> gw;
        if (cfg.use_judge) gw = gateway(true);
        const auto report = evaluate_run(predictions, pairs, index, corpus, cfg, gw.get());
        warn(report.warnings);
        write(outputs::kEvalReport, json(report).dump(2) + "\n");
        if (csv) write(outputs::kEvalCsv, report_csv(report));
        out_ << json{{"overall", report.overall},
                     {"no_overlap", report.no_overlap},
                     {"some_overlap", report.some_overlap},
                     {"missing_count", report.missing_predictions.size()}}
                    .dump()
             << '\n';
        finish("evaluate", {{"k", cfg.k}, {"judge", cfg.use_judge}, {"factoid", cfg.factoid}});
    }

    void regression_stage() {
        if (!fs::exists(o_.scores_path)) throw Error(ErrorCode::IoError, "scores not found: " + o_.scores_path);
        record_input(o_.scores_path);
        json scores;
        try {
            scores = json::parse(read_file(o_.scores_path));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::FormatError, o_.scores_path + ": " + e.what());
        }
        const json report = regression_average(scores);
        write(outputs::kRegression, report.dump(2) + "\n");
        out_ << report.dump() << '\n';
        finish("regression", json::object());
    }

private:
    json sampling_json() const {
        const auto s = sampling();
        return {{"temperature", s.temperature}, {"top_p", s.top_p}, {"max_tokens", s.max_tokens}, {"seed", seed_}};
    }

    Options& o_;
    std::ostream& out_;
    std::ostream& err_;
    json config_;
    json effective_;
    std::uint64_t seed_ = 0;
    std::size_t jobs_ = 1;
    fs::path out_dir_;
    std::string mock_;
    std::string templates_dir_;
    std::map<std::string, std::string> written_;
    std::map<std::string, std::string> inputs_;
};

int exit_code_for(const Error& e) {
    if (e.is_upstream()) return kExitUpstream;
    switch (e.code()) {
        case ErrorCode::ConfigError:
        case ErrorCode::InvalidArgument:
            return kExitUsage;
        default:
            return kExitStage;
    }
}

}  // namespace

std::string build_timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* sde = env("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"kforge: build retrieval-augmented fine-tuning data from documents and evaluate the result"};
    app.require_subcommand(1);
    app.fallthrough();
    o.seed_opt = app.add_option("--seed", o.seed, "Random seed (default 0)");
    app.add_option("--config", o.config_path, "JSON config file");
    o.mock_opt = app.add_option("--mock-llm", o.mock_llm, "Use the offline mock model with fixtures from DIR");
    o.templates_opt = app.add_option("--templates", o.templates_dir, "Directory of prompt template overrides");
    o.jobs_opt = app.add_option("--jobs,-j", o.jobs, "Parallel workers");
    o.out_opt = app.add_option("--out-dir,-o", o.out_dir, "Output directory (default kforge-out)");

    auto* ingest = app.add_subcommand("ingest", "Read documents and chunk them into corpus.json");
    ingest->add_option("paths", o.paths, "Files or directories (.txt, .md)")->required();
    ingest->add_option("--domain", o.domain, "Domain name stored on each document");
    ingest->add_option("--threshold,-T", o.threshold, "Chunking token threshold");

    auto* gen = app.add_subcommand("generate-qa", "Generate QA pairs per chunk into qa.jsonl");
    gen->add_option("--calls", o.calls, "Completions per chunk");
    gen->add_option("--early-stop", o.early_stop, "Stop a chunk once its coverage reaches this value");

    auto* aug = app.add_subcommand("augment-answers", "Add paraphrased answers into qa_aug.jsonl");
    aug->add_option("--max-answers", o.max_answers, "Answers per question including the canonical one");
    aug->add_option("--qa", o.qa_path, "Input QA file");

    auto* cov = app.add_subcommand("coverage", "Report token coverage of the QA set");
    cov->add_option("--qa", o.qa_path, "Input QA file");

    auto* split = app.add_subcommand("split", "Assign train/val/test splits into qa_split.jsonl");
    split->add_option("--train", o.train);
    split->add_option("--val", o.val);
    split->add_option("--test", o.test);
    split->add_option("--qa", o.qa_path, "Input QA file");

    auto* filter = app.add_subcommand("filter-test", "Drop test questions judged context-dependent");

    auto* factoid = app.add_subcommand("factoid", "Extract the short-answer test subset into factoid.jsonl");
    factoid->add_option("--max-words", o.max_words);
    factoid->add_option("--qa", o.qa_path, "Input QA file");

    auto* index = app.add_subcommand("index", "Passage index");
    index->require_subcommand(1);
    index->fallthrough();
    auto* ibuild = index->add_subcommand("build", "Build index.json from corpus.json");
    ibuild->add_option("--passage-tokens", o.passage_tokens, "Tokens per passage");
    auto* isearch = index->add_subcommand("search", "Query index.json");
    isearch->add_option("query", o.query)->required();
    isearch->add_option("-k", o.k, "Results to return");

    auto* ds = app.add_subcommand("build-dataset", "Assemble dataset.jsonl");
    ds->add_option("--strategy", o.strategy, "dsf | raft | ca_raft | pa_rag");
    ds->add_option("--corruption-p", o.corruption_p, "Probability of the retriever-failure bucket");
    ds->add_option("--k-passages", o.k_passages);
    ds->add_option("--max-paraphrases", o.max_paraphrases);
    ds->add_option("--policy", o.policy, "per_qa | per_question | per_chapter");
    ds->add_option("--identifier", o.identifier, "Domain identifier prepended to questions");
    ds->add_option("--replay-ratio", o.replay_ratio);
    ds->add_option("--chapter-map", o.chapter_map_path, "JSON object: chapter -> success|failure");
    ds->add_option("--replay", o.replay_path, "Replay buffer (default: replay.jsonl in the output directory)");
    ds->add_option("--qa", o.qa_path, "Input QA file");
    ds->add_flag("--p-grid", o.p_grid, "Write one dataset_p<p>.jsonl per corruption_p in {0.0,0.2,...,1.0}");

    auto* rep = app.add_subcommand("build-replay", "Collect the target model's own outputs into replay.jsonl");
    rep->add_option("--inputs", o.inputs_path, "JSON lines {category, input}")->required();

    auto* ev = app.add_subcommand("evaluate", "Score predictions into eval_report.json");
    ev->add_option("--predictions", o.predictions_path, "JSON lines {question_id, prediction}")->required();
    ev->add_option("-k", o.k, "Passages retrieved per question");
    ev->add_flag("--judge", o.judge, "Also score with the judge model");
    ev->add_flag("--factoid", o.factoid, "Report the short-answer subset");
    ev->add_flag("--csv", o.csv, "Write eval_summary.csv");
    ev->add_option("--qa", o.qa_path, "Input QA file");

    auto* reg = app.add_subcommand("regression", "Average external benchmark scores");
    reg->add_option("--scores", o.scores_path, "JSON object of the seven raw scores")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    std::string stage;
    try {
        Runner r(o, out, err);
        r.init();
        if (ingest->parsed()) stage = "ingest", r.ingest(*ingest);
        else if (gen->parsed()) stage = "generate-qa", r.generate_qa(*gen);
        else if (aug->parsed()) stage = "augment-answers", r.augment(*aug);
        else if (cov->parsed()) stage = "coverage", r.coverage_stage();
        else if (split->parsed()) stage = "split", r.split_stage(*split);
        else if (filter->parsed()) stage = "filter-test", r.filter_stage();
        else if (factoid->parsed()) stage = "factoid", r.factoid_stage(*factoid);
        else if (ibuild->parsed()) stage = "index build", r.index_build(*ibuild);
        else if (isearch->parsed()) stage = "index search", r.index_search(*isearch);
        else if (ds->parsed()) stage = "build-dataset", r.build_dataset_stage(*ds);
        else if (rep->parsed()) stage = "build-replay", r.build_replay_stage();
        else if (ev->parsed()) stage = "evaluate", r.evaluate_stage(*ev);
        else if (reg->parsed()) stage = "regression", r.regression_stage();
        return kExitOk;
    } catch (const Error& e) {
        err << json{{"error", to_string(e.code())}, {"stage", stage}, {"message", e.what()}}.dump() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << json{{"error", "Internal"}, {"stage", stage}, {"message", e.what()}}.dump() << '\n';
        return kExitStage;
    }
}

}  // namespace kforge
