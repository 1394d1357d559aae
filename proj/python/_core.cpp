#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kforge/corpus.hpp"
#include "kforge/dataset_builder.hpp"
#include "kforge/evaluator.hpp"
#include "kforge/pipeline.hpp"
#include "kforge/qa_forge.hpp"
#include "kforge/retriever.hpp"

namespace py = pybind11;
using nlohmann::json;

// Structured values cross the boundary as JSON text; the Python side wraps them.
namespace {

std::vector<kforge::Document> parse_docs(const std::string& docs_json) {
    return json::parse(docs_json).get<std::vector<kforge::Document>>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "kforge native core";

    static py::exception<kforge::Error> error(m, "KforgeError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const kforge::Error& e) {
            PyErr_SetString(error.ptr(), (std::string(kforge::to_string(e.code())) + ": " + e.what()).c_str());
        }
    });

    m.def("run_cli", [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int rc;
        {
            py::gil_scoped_release release;
            rc = kforge::run_cli(args, out, err);
        }
        return py::make_tuple(rc, out.str(), err.str());
    }, py::arg("args"));

    m.def("tokenize", [](const std::string& text) { return kforge::tokenize(text); }, py::arg("text"));

    m.def("ingest_text", [](const std::string& text, const std::string& domain) {
        return json(kforge::ingest(text, domain)).dump();
    }, py::arg("text"), py::arg("domain") = "default");

    m.def("build_corpus", [](const std::string& docs_json, std::size_t threshold) {
        return kforge::Corpus::build(parse_docs(docs_json), threshold).to_json().dump();
    }, py::arg("docs_json"), py::arg("threshold") = 8000);

    m.def("coverage", [](const std::string& corpus_json, const std::string& pairs_json) {
        const auto corpus = kforge::Corpus::from_json(json::parse(corpus_json));
        const auto pairs = json::parse(pairs_json).get<std::vector<kforge::QAPair>>();
        return json(kforge::coverage(corpus, corpus.chunks(), pairs)).dump();
    }, py::arg("corpus_json"), py::arg("pairs_json"));

    py::class_<kforge::Index>(m, "Index")
        .def_static("build", [](const std::string& docs_json, std::size_t passage_tokens) {
            return kforge::Index::build(parse_docs(docs_json), passage_tokens);
        }, py::arg("docs_json"), py::arg("passage_tokens") = 512)
        .def_static("load", [](const std::string& path) { return kforge::Index::load(path); }, py::arg("path"))
        .def("search", [](const kforge::Index& ix, const std::string& query, std::size_t k) {
            return json(ix.search(query, k)).dump();
        }, py::arg("query"), py::arg("k") = 5)
        .def("__len__", [](const kforge::Index& ix) { return ix.passages().size(); })
        .def("passage_text", [](const kforge::Index& ix, const std::string& id) { return ix.at(id).text; });

    m.def("assign_bucket", [](const std::string& question_id, std::size_t answer_index, const std::string& cfg_json) {
        const auto cfg = json::parse(cfg_json).get<kforge::DatasetConfig>();
        return std::string(kforge::to_string(kforge::assign_bucket({question_id, answer_index, "", ""}, cfg)));
    }, py::arg("question_id"), py::arg("answer_index"), py::arg("cfg_json"));

    m.def("build_dataset", [](const std::string& pairs_json, const std::string& cfg_json, const kforge::Index& index,
                              const std::string& corpus_json, std::size_t jobs) {
        const auto pairs = json::parse(pairs_json).get<std::vector<kforge::QAPair>>();
        const auto cfg = json::parse(cfg_json).get<kforge::DatasetConfig>();
        const auto corpus = kforge::Corpus::from_json(json::parse(corpus_json));
        const auto result = kforge::build_dataset(pairs, cfg, index, corpus, {}, jobs);
        const auto templates = kforge::TemplateSet::builtin();
        json rows = json::array();
        for (const auto& e : result.examples) rows.push_back(kforge::to_record(e, templates));
        return rows.dump();
    }, py::arg("pairs_json"), py::arg("cfg_json"), py::arg("index"), py::arg("corpus_json"), py::arg("jobs") = 1);

    m.def("token_recall", &kforge::token_recall, py::arg("gold"), py::arg("prediction"));
    m.def("rouge_l", &kforge::rouge_l, py::arg("gold"), py::arg("prediction"));
    m.def("parse_judge", [](const std::string& raw) {
        const auto v = kforge::parse_judge(raw);
        return py::make_tuple(v.score, v.explanation);
    }, py::arg("raw"));
    m.def("regression_average", [](const std::string& scores_json) {
        return json(kforge::regression_average(json::parse(scores_json))).dump();
    }, py::arg("scores_json"));
}
