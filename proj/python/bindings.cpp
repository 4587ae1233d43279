#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "simt/corpus.hpp"
#include "simt/decoding.hpp"
#include "simt/error.hpp"
#include "simt/experiments.hpp"
#include "simt/metrics.hpp"
#include "simt/model.hpp"
#include "simt/policy.hpp"
#include "simt/training.hpp"
#include "simt/transformer.hpp"

namespace py = pybind11;
using namespace simt;

namespace {

using Ids = std::vector<int>;
using PairList = std::vector<std::pair<Ids, Ids>>;

std::vector<EncodedPair> to_pairs(const PairList& pairs) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& [s, t] : pairs) out.push_back({s, t});
  return out;
}

PairList from_pairs(const std::vector<EncodedPair>& pairs) {
  PairList out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.emplace_back(p.source, p.target);
  return out;
}

py::list epochs_to_list(const TrainLog& log) {
  py::list out;
  for (const auto& e : log.epochs) {
    py::dict d;
    d["epoch"] = e.epoch;
    d["train_ce"] = e.train_ce;
    d["val_ce"] = e.val_ce;
    d["mean_risk"] = e.mean_risk;
    d["mean_cand_bleu"] = e.mean_cand_bleu;
    d["mean_cand_al"] = e.mean_cand_al;
    d["candidates_generated"] = e.candidates_generated;
    out.append(d);
  }
  return out;
}

DecodeConfig decode_cfg(const std::string& method, int n, int beam_width, double top_p, int max_len,
                        std::uint64_t seed) {
  DecodeConfig c;
  c.method = parse_decode_method(method);
  c.n = n;
  c.beam_width = beam_width;
  c.top_p = top_p;
  c.max_len = max_len;
  c.seed = seed;
  return c;
}

}  // namespace

PYBIND11_MODULE(_simt, m) {
  m.doc() = "Wait-k simultaneous translation core";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IngestError>(m, "IngestError", PyExc_IOError);
  py::register_exception<CorruptionError>(m, "CorruptionError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // Policy and metrics.
  m.def("waitk_lag", &waitk_lag, py::arg("step"), py::arg("k"), py::arg("src_len"));
  m.def(
      "g_trace", [](int k, int src_len, int tgt_len) { return make_g_trace(PolicySpec::wait_k(k), src_len, tgt_len); },
      py::arg("k"), py::arg("src_len"), py::arg("tgt_len"));
  m.def(
      "average_lagging", [](const Ids& g, int src_len, int hyp_len) { return average_lagging(g, src_len, hyp_len); },
      py::arg("g_trace"), py::arg("src_len"), py::arg("hyp_len"));
  m.def(
      "sentence_bleu",
      [](const Ids& ref, const Ids& hyp, int max_order, bool smooth) {
        return sentence_bleu(ref, hyp, {max_order, smooth});
      },
      py::arg("reference"), py::arg("hypothesis"), py::arg("max_order") = 4, py::arg("smooth") = true);
  m.def(
      "corpus_bleu",
      [](const PairList& pairs) {
        std::vector<BleuPair> bp(pairs.begin(), pairs.end());
        return corpus_bleu(bp);
      },
      py::arg("pairs"), "BLEU over (reference, hypothesis) pairs");
  m.def(
      "pearson_abs", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson_abs(x, y); });
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); });
  m.def(
      "expected_cost",
      [](const std::vector<double>& lp, const std::vector<double>& costs, double sharpness) {
        return expected_cost(lp, costs, sharpness);
      },
      py::arg("log_probs"), py::arg("costs"), py::arg("sharpness") = 1.0);

  // Data.
  py::class_<SyntheticTaskSpec>(m, "SyntheticTaskSpec")
      .def(py::init<>())
      .def_readwrite("vocab_size", &SyntheticTaskSpec::vocab_size)
      .def_readwrite("min_len", &SyntheticTaskSpec::min_len)
      .def_readwrite("max_len", &SyntheticTaskSpec::max_len)
      .def_readwrite("swap_prob", &SyntheticTaskSpec::swap_prob)
      .def_readwrite("mapping_seed", &SyntheticTaskSpec::mapping_seed)
      .def_readwrite("size", &SyntheticTaskSpec::size);
  m.def(
      "generate_synthetic",
      [](const SyntheticTaskSpec& spec, std::uint64_t seed) {
        std::vector<std::pair<Sentence, Sentence>> out;
        for (const auto& p : generate_synthetic(spec, seed).pairs()) out.emplace_back(p.source, p.target);
        return out;
      },
      py::arg("spec"), py::arg("seed"), "list of (source tokens, target tokens)");

  // Model.
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_ffn", &ModelConfig::d_ffn)
      .def_readwrite("n_enc_layers", &ModelConfig::n_enc_layers)
      .def_readwrite("n_dec_layers", &ModelConfig::n_dec_layers)
      .def_readwrite("max_len", &ModelConfig::max_len)
      .def_readwrite("src_vocab", &ModelConfig::src_vocab)
      .def_readwrite("tgt_vocab", &ModelConfig::tgt_vocab)
      .def_readwrite("dropout", &ModelConfig::dropout)
      .def("validate", &ModelConfig::validate)
      .def("to_dict", [](const ModelConfig& c) { return c.to_kv(); })
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; });

  py::class_<Model>(m, "Model")
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("parameter_count", [](const Model& mdl) { return mdl.params().scalar_count(); })
      .def("parameter_names",
           [](const Model& mdl) {
             std::vector<std::string> names;
             for (std::size_t i = 0; i < mdl.params().size(); ++i) names.push_back(mdl.params().name(i));
             return names;
           })
      .def("copy", [](const Model& mdl) { return Model(mdl); })
      .def("to_bytes", [](const Model& mdl) { return py::bytes(serialize_checkpoint(mdl)); })
      .def_static("from_bytes", [](const py::bytes& b) { return deserialize_checkpoint(std::string(b)); })
      .def("save", [](const Model& mdl, const std::string& path) { save_checkpoint(mdl, path); });
  m.def("init_model", &init_model, py::arg("config"), py::arg("seed"));
  m.def("load_checkpoint", py::overload_cast<const std::string&>(&load_checkpoint), py::arg("path"));

  // Decoding.
  py::class_<Hypothesis>(m, "Hypothesis")
      .def_readonly("tokens", &Hypothesis::tokens)
      .def_readonly("g_trace", &Hypothesis::g_trace)
      .def_readonly("step_log_probs", &Hypothesis::step_log_probs)
      .def_readonly("total_log_prob", &Hypothesis::total_log_prob)
      .def("content", &Hypothesis::content)
      .def("latency_trace", &Hypothesis::latency_trace)
      .def("finished", &Hypothesis::finished)
      .def("__repr__", [](const Hypothesis& h) {
        return "<Hypothesis len=" + std::to_string(h.tokens.size()) + " logp=" + format_real(h.total_log_prob) + ">";
      });

  m.def(
      "greedy_decode",
      [](const Model& mdl, const Ids& src, int k, int max_len) {
        return greedy_decode(mdl, PolicySpec::wait_k(k), src, max_len);
      },
      py::arg("model"), py::arg("source"), py::arg("k"), py::arg("max_len") = 0);
  m.def(
      "decode",
      [](const Model& mdl, const Ids& src, int k, const std::string& method, int n, int beam_width, double top_p,
         int max_len, std::uint64_t seed) {
        return generate_candidates(mdl, PolicySpec::wait_k(k), src,
                                   decode_cfg(method, n, beam_width, top_p, max_len, seed));
      },
      py::arg("model"), py::arg("source"), py::arg("k"), py::arg("method") = "top_p", py::arg("n") = 5,
      py::arg("beam_width") = 5, py::arg("top_p") = 0.8, py::arg("max_len") = 0, py::arg("seed") = 1);
  m.def(
      "prefix_constrained_decode",
      [](const Model& mdl, const Ids& src, const Ids& prefix, int k, int max_len) {
        return prefix_constrained_decode(mdl, PolicySpec::wait_k(k), src, prefix, max_len);
      },
      py::arg("model"), py::arg("source"), py::arg("prefix"), py::arg("k"), py::arg("max_len") = 0);
  m.def(
      "sequence_log_prob",
      [](const Model& mdl, const Ids& src, const Ids& tokens, const Ids& g) {
        const auto s = sequence_log_prob(mdl, src, tokens, g);
        return py::make_tuple(s.total, s.steps);
      },
      py::arg("model"), py::arg("source"), py::arg("tokens"), py::arg("g_trace"));

  // Training.
  m.def(
      "corpus_ce", [](const Model& mdl, const PairList& data, int k) { return corpus_ce(mdl, to_pairs(data), k); },
      py::arg("model"), py::arg("pairs"), py::arg("k"));
  m.def(
      "train_ce",
      [](Model& mdl, const PairList& train, int test_k, const std::string& mode, int train_k, std::vector<int> k_set,
         int epochs, std::size_t batch_size, double lr, std::uint64_t seed, const PairList& valid) {
        CeTrainConfig c;
        c.mode = parse_ce_mode(mode);
        c.train_k = train_k;
        c.k_set = std::move(k_set);
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.adam.lr = lr;
        c.seed = seed;
        const auto v = to_pairs(valid);
        const auto log = train_ce(mdl, to_pairs(train), test_k, c, v);
        return epochs_to_list(log);
      },
      py::arg("model"), py::arg("pairs"), py::arg("test_k"), py::arg("mode") = "consistent", py::arg("train_k") = 1,
      py::arg("k_set") = std::vector<int>{1, 3, 5, 7, 9}, py::arg("epochs") = 20, py::arg("batch_size") = 32,
      py::arg("lr") = 5e-4, py::arg("seed") = 1, py::arg("valid") = PairList{},
      "Stage-1 training in place; returns per-epoch logs");
  m.def(
      "finetune_mrt",
      [](Model& mdl, const PairList& train, int test_k, double gamma, int n, const std::string& generation,
         double top_p, int epochs, std::size_t batch_size, double lr, std::uint64_t seed, const PairList& valid) {
        MrtConfig c;
        c.gamma = gamma;
        c.n = n;
        c.generation = parse_decode_method(generation);
        c.top_p = top_p;
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.adam.lr = lr;
        c.seed = seed;
        const auto v = to_pairs(valid);
        return epochs_to_list(finetune_mrt(mdl, to_pairs(train), test_k, c, v));
      },
      py::arg("model"), py::arg("pairs"), py::arg("test_k"), py::arg("gamma") = 0.4, py::arg("n") = 5,
      py::arg("generation") = "top_p", py::arg("top_p") = 0.8, py::arg("epochs") = 5, py::arg("batch_size") = 16,
      py::arg("lr") = 5e-4, py::arg("seed") = 1, py::arg("valid") = PairList{},
      "Stage-2 minimum-risk fine-tuning in place; returns per-epoch logs");

  // Experiments.
  m.def(
      "synthetic_data",
      [](const SyntheticTaskSpec& spec, std::uint64_t data_seed, int valid_size, std::uint64_t valid_seed) {
        ExperimentConfig c;
        c.task = spec;
        c.data_seed = data_seed;
        c.valid_size = valid_size;
        c.valid_seed = valid_seed;
        const auto d = prepare_data(c);
        py::dict out;
        out["src_vocab"] = std::vector<std::string>(d.src_vocab.tokens().begin(), d.src_vocab.tokens().end());
        out["tgt_vocab"] = std::vector<std::string>(d.tgt_vocab.tokens().begin(), d.tgt_vocab.tokens().end());
        out["train"] = from_pairs(d.train);
        out["valid"] = from_pairs(d.valid);
        return out;
      },
      py::arg("spec") = SyntheticTaskSpec{}, py::arg("data_seed") = 11, py::arg("valid_size") = 200,
      py::arg("valid_seed") = 12, "encoded synthetic train/valid split with vocabularies");
  m.def(
      "evaluate",
      [](const Model& mdl, const PairList& data, int test_k, int max_len) {
        const auto r = evaluate_model(mdl, to_pairs(data), test_k, max_len);
        py::dict d;
        d["bleu"] = 100.0 * r.bleu;
        d["al"] = r.al;
        d["ce"] = r.ce;
        return d;
      },
      py::arg("model"), py::arg("pairs"), py::arg("test_k"), py::arg("max_len") = 0,
      "greedy corpus BLEU (x100), mean AL and teacher-forced CE");
}
