#include "kforge/evaluator.hpp"

#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace kforge {

double token_recall(std::string_view gold, std::string_view prediction) {
    const auto g = tokenize(gold);
    if (g.empty()) return 1.0;
    std::unordered_map<std::string, std::size_t> pred;
    for (auto& t : tokenize(prediction)) ++pred[std::move(t)];
    std::size_t hit = 0;
    for (const auto& t : g) {
        auto it = pred.find(t);
        if (it != pred.end() && it->second > 0) {
            --it->second;
            ++hit;
        }
    }
    return static_cast<double>(hit) / static_cast<double>(g.size());
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(std::string_view gold, std::string_view prediction) {
    const auto g = tokenize(gold);
    const auto p = tokenize(prediction);
    if (g.empty() || p.empty()) return g.empty() && p.empty() ? 1.0 : 0.0;
    // 2PR/(P+R) with P = l/|p| and R = l/|g| reduces to 2l/(|g|+|p|).
    const auto l = lcs_length(g, p);
    return 2.0 * static_cast<double>(l) / static_cast<double>(g.size() + p.size());
}

JudgeVerdict parse_judge(std::string_view raw) {
    const auto scores = parse_tagged(raw, "score");
    if (scores.spans.empty()) throw Error(ErrorCode::JudgeParseError, "judge reply has no <score> span");
    const auto& body = scores.spans.front().body;
    JudgeVerdict v;
    if (body == "0") v.score = 0;
    else if (body == "1") v.score = 1;
    else throw Error(ErrorCode::JudgeParseError, "judge score must be 0 or 1, got \"" + body + "\"");
    const auto expl = parse_tagged(raw, "explanation");
    if (!expl.spans.empty()) v.explanation = expl.spans.front().body;
    return v;
}

JudgeVerdict judge(std::string_view question, std::string_view gold, std::string_view prediction,
                   const Gateway& gateway, const Sampling& sampling) {
    ChatRequest req{"judge",
                    {{"question", std::string(question)},
                     {"gold_response", std::string(gold)},
                     {"predicted_response", std::string(prediction)}},
                    sampling};
    return parse_judge(gateway.complete(req));
}

Aggregate aggregate(const std::vector<const EvalRecord*>& records) {
    Aggregate a;
    a.count = records.size();
    double recall = 0.0, judged = 0.0;
    for (const auto* r : records) {
        recall += r->token_recall;
        if (r->judge_score) {
            ++a.judged;
            judged += *r->judge_score;
        }
        if (r->judge_flagged) ++a.judge_flagged;
    }
    if (a.count) a.token_recall = recall / static_cast<double>(a.count);
    if (a.judged) a.judge_accuracy = judged / static_cast<double>(a.judged);
    return a;
}

EvalReport evaluate_run(const std::vector<Prediction>& predictions, const std::vector<QAPair>& test_pairs,
                        const Index& index, const Corpus& corpus, const EvalConfig& cfg,
                        const Gateway* judge_gateway) {
    if (cfg.use_judge && !judge_gateway)
        throw Error(ErrorCode::ConfigError, "judge scoring requested without a judge endpoint");
    if (!index.built()) throw Error(ErrorCode::IndexNotBuilt, "index has not been built or loaded");
    EvalReport report;

    std::map<std::string, const Prediction*> by_id;
    for (const auto& p : predictions) {
        if (!by_id.emplace(p.question_id, &p).second)
            report.warnings.push_back({"duplicate_prediction", p.question_id});
    }

    const auto factoid_ids = [&] {
        std::set<std::string> ids;
        for (const auto& p : extract_factoid(test_pairs, cfg.factoid_max_words)) ids.insert(p.id);
        return ids;
    }();

    for (const auto& pair : test_pairs) {
        if (pair.split && *pair.split != Split::Test) continue;
        auto it = by_id.find(pair.id);
        if (it == by_id.end()) {
            report.missing_predictions.push_back(pair.id);
            continue;
        }
        EvalRecord r;
        r.question_id = pair.id;
        r.question = pair.question;
        r.gold = pair.canonical();
        r.prediction = it->second->prediction;
        r.retrieved = index.search(pair.question, cfg.k);
        r.overlap = overlap_class(index, r.retrieved, corpus.chunk(pair.source_chunk_id));
        r.token_recall = token_recall(r.gold, r.prediction);
        r.factoid = factoid_ids.count(pair.id) > 0;
        report.records.push_back(std::move(r));
    }
    if (!report.missing_predictions.empty())
        report.warnings.push_back({"missing_prediction", std::to_string(report.missing_predictions.size()) +
                                                             " test questions have no prediction"});

    if (cfg.use_judge) {
        std::vector<ChatRequest> requests;
        for (const auto& r : report.records)
            requests.push_back({"judge",
                                {{"question", r.question}, {"gold_response", r.gold}, {"predicted_response", r.prediction}},
                                cfg.judge_sampling});
        const auto replies = judge_gateway->complete_batch(requests);
        for (std::size_t i = 0; i < replies.size(); ++i) {
            auto& r = report.records[i];
            if (!replies[i].ok()) {
                r.judge_flagged = true;
                report.warnings.push_back({"judge_failed", r.question_id + ": " + replies[i].error->what()});
                continue;
            }
            try {
                const auto v = parse_judge(replies[i].text);
                r.judge_score = v.score;
                r.judge_explanation = v.explanation;
            } catch (const Error& e) {
                r.judge_flagged = true;
                report.warnings.push_back({"judge_unparseable", r.question_id + ": " + e.what()});
            }
        }
    }

    std::vector<const EvalRecord*> all, none, some, factoid;
    for (const auto& r : report.records) {
        all.push_back(&r);
        (r.overlap == OverlapClass::NoOverlap ? none : some).push_back(&r);
        if (r.factoid) factoid.push_back(&r);
    }
    report.overall = aggregate(all);
    report.no_overlap = aggregate(none);
    report.some_overlap = aggregate(some);
    if (cfg.factoid) report.factoid = aggregate(factoid);
    return report;
}

std::string report_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "subset,count,token_recall,judged,judge_accuracy,judge_flagged\n";
    auto row = [&](const char* name, const Aggregate& a) {
        char buf[64];
        out << name << ',' << a.count << ',';
        std::snprintf(buf, sizeof buf, "%.6f", a.token_recall);
        out << buf << ',' << a.judged << ',';
        if (a.judge_accuracy) {
            std::snprintf(buf, sizeof buf, "%.6f", *a.judge_accuracy);
            out << buf;
        }
        out << ',' << a.judge_flagged << '\n';
    };
    row("overall", report.overall);
    row("no_overlap", report.no_overlap);
    row("some_overlap", report.some_overlap);
    if (report.factoid) row("factoid", *report.factoid);
    return out.str();
}

RegressionReport regression_average(const nlohmann::json& scores) {
    auto get = [&](const char* key) {
        auto it = scores.find(key);
        if (it == scores.end() || !it->is_number())
            throw Error(ErrorCode::MissingScore, std::string("score file lacks numeric \"") + key + "\"");
        return it->get<double>();
    };
    RegressionReport r;
    r.mmlu = get("mmlu");
    r.gsm8k_flexible = get("gsm8k_flexible");
    r.gsm8k_strict = get("gsm8k_strict");
    r.hellaswag = get("hellaswag");
    r.tqa_mc1 = get("tqa_mc1");
    r.tqa_mc2 = get("tqa_mc2");
    r.tqa_gen_rougel = get("tqa_gen_rougel");
    const double gsm8k = (r.gsm8k_flexible + r.gsm8k_strict) / 2.0;
    const double tqa = (r.tqa_mc1 + r.tqa_mc2) / 2.0;
    r.average = (r.mmlu + gsm8k + r.hellaswag + tqa + r.tqa_gen_rougel) / 5.0;
    return r;
}

void to_json(nlohmann::json& j, const Prediction& p) {
    j = {{"question_id", p.question_id}, {"prediction", p.prediction}};
}

void from_json(const nlohmann::json& j, Prediction& p) {
    p.question_id = j.at("question_id").get<std::string>();
    p.prediction = j.at("prediction").get<std::string>();
}

void to_json(nlohmann::json& j, const EvalRecord& r) {
    j = {{"question_id", r.question_id},
         {"gold", r.gold},
         {"prediction", r.prediction},
         {"retrieved", r.retrieved},
         {"overlap", to_string(r.overlap)},
         {"token_recall", r.token_recall},
         {"judge_score", r.judge_score ? nlohmann::json(*r.judge_score) : nlohmann::json()},
         {"judge_explanation", r.judge_explanation ? nlohmann::json(*r.judge_explanation) : nlohmann::json()},
         {"judge_flagged", r.judge_flagged},
         {"factoid", r.factoid}};
}

void to_json(nlohmann::json& j, const Aggregate& a) {
    j = {{"count", a.count},
         {"token_recall", a.token_recall},
         {"judged", a.judged},
         {"judge_accuracy", a.judge_accuracy ? nlohmann::json(*a.judge_accuracy) : nlohmann::json()},
         {"judge_flagged", a.judge_flagged}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    j = {{"overall", r.overall},
         {"strata", {{"no_overlap", r.no_overlap}, {"some_overlap", r.some_overlap}}},
         {"factoid", r.factoid ? nlohmann::json(*r.factoid) : nlohmann::json()},
         {"missing_predictions", r.missing_predictions},
         {"missing_count", r.missing_predictions.size()},
         {"records", r.records}};
}

void to_json(nlohmann::json& j, const RegressionReport& r) {
    j = {{"mmlu", r.mmlu},
         {"gsm8k_flexible", r.gsm8k_flexible},
         {"gsm8k_strict", r.gsm8k_strict},
         {"hellaswag", r.hellaswag},
         {"tqa_mc1", r.tqa_mc1},
         {"tqa_mc2", r.tqa_mc2},
         {"tqa_gen_rougel", r.tqa_gen_rougel},
         {"average", r.average}};
}

}  // namespace kforge
