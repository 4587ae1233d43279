// simt: command-line driver for data generation, training, decoding,
// evaluation and the experiment reproductions.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "simt/corpus.hpp"
#include "simt/decoding.hpp"
#include "simt/error.hpp"
#include "simt/experiments.hpp"
#include "simt/kvtext.hpp"
#include "simt/metrics.hpp"
#include "simt/model.hpp"
#include "simt/random.hpp"
#include "simt/training.hpp"

namespace fs = std::filesystem;
using namespace simt;

namespace {

struct Options {
  ExperimentConfig exp;
  std::string mode = "consistent";
  std::string generation = "top_p";
  int test_k = 1;
  int k_test = 0;  // prefix-bias lag; 0 = test_k
  int bucket_len = 10;
  int bucket_size = 200;
  std::string b_mode = "multipath";

  std::string out, out_src, out_tgt, init, checkpoint, checkpoint_a, checkpoint_b;
  std::string src, ref, hyp;
  std::string method = "greedy";
  int n = 1, beam_width = 5, max_len = 0;
  double top_p = 0.8;
  std::uint64_t seed = 1;
  bool nbest = false;
};

void add_data(CLI::App* app, Options& o) {
  auto& e = o.exp;
  app->add_option("--vocab_size", e.task.vocab_size, "synthetic vocabulary size");
  app->add_option("--min_len", e.task.min_len, "synthetic minimum length");
  app->add_option("--max_len", e.task.max_len, "synthetic maximum length");
  app->add_option("--swap_prob", e.task.swap_prob, "adjacent swap probability");
  app->add_option("--mapping_seed", e.task.mapping_seed, "seed of the token mapping");
  app->add_option("--size", e.task.size, "synthetic corpus size");
  app->add_option("--data_seed", e.data_seed);
  app->add_option("--valid_size", e.valid_size);
  app->add_option("--valid_seed", e.valid_seed);
  app->add_option("--train_src", e.train_src, "training source file (instead of synthetic data)");
  app->add_option("--train_tgt", e.train_tgt);
  app->add_option("--valid_src", e.valid_src);
  app->add_option("--valid_tgt", e.valid_tgt);
  app->add_option("--eval_split", e.eval_split, "valid | train");
  app->add_option("--eval_seed", e.eval_seed);
  app->add_option("--decode_max_len", e.decode_max_len, "evaluation decode cap, 0 = auto");
}

void add_model(CLI::App* app, Options& o) {
  auto& m = o.exp.model;
  app->add_option("--d_model", m.d_model);
  app->add_option("--n_heads", m.n_heads);
  app->add_option("--d_ffn", m.d_ffn);
  app->add_option("--n_enc_layers", m.n_enc_layers);
  app->add_option("--n_dec_layers", m.n_dec_layers);
  app->add_option("--model_max_len", m.max_len, "positional table size");
  app->add_option("--dropout", m.dropout);
  app->add_option("--init_seed", o.exp.init_seed);
}

void add_ce(CLI::App* app, Options& o) {
  auto& c = o.exp.ce;
  app->add_option("--mode", o.mode, "consistent | inconsistent | multipath");
  app->add_option("--train_k", c.train_k, "training lag in inconsistent mode");
  app->add_option("--k_set", c.k_set, "multipath lags")->delimiter(',');
  app->add_option("--ce_epochs", c.epochs);
  app->add_option("--ce_batch_size", c.batch_size);
  app->add_option("--ce_lr", c.adam.lr);
  app->add_option("--ce_beta1", c.adam.beta1);
  app->add_option("--ce_beta2", c.adam.beta2);
  app->add_option("--ce_eps", c.adam.eps);
  app->add_option("--ce_seed", c.seed);
}

void add_mrt(CLI::App* app, Options& o) {
  auto& r = o.exp.mrt;
  app->add_option("--gamma", r.gamma, "latency weight in the cost");
  app->add_option("--mrt_n", r.n, "candidates per sentence");
  app->add_option("--generation", o.generation, "top_p | beam | greedy");
  app->add_option("--mrt_top_p", r.top_p);
  app->add_option("--mrt_beam_width", r.beam_width);
  app->add_option("--mrt_max_len", r.max_len);
  app->add_option("--mrt_epochs", r.epochs);
  app->add_option("--mrt_batch_size", r.batch_size);
  app->add_option("--mrt_lr", r.adam.lr);
  app->add_option("--mrt_beta1", r.adam.beta1);
  app->add_option("--mrt_beta2", r.adam.beta2);
  app->add_option("--mrt_eps", r.adam.eps);
  app->add_option("--mrt_seed", r.seed);
  app->add_option("--sharpness", r.sharpness);
  app->add_flag("--include_reference", r.include_reference);
  app->add_flag("--normalize_al", r.normalize_al);
}

void add_sweep(CLI::App* app, Options& o) {
  app->add_option("--train_ks", o.exp.train_ks)->delimiter(',');
  app->add_option("--test_ks", o.exp.test_ks)->delimiter(',');
  app->add_option("--gammas", o.exp.gammas)->delimiter(',');
  app->add_option("--metric", o.exp.metric, "bleu | ce");
  app->add_option("--output_dir", o.exp.output_dir);
}

void finish(Options& o) {
  o.exp.ce.mode = parse_ce_mode(o.mode);
  o.exp.mrt.generation = parse_decode_method(o.generation);
  o.exp.validate();
}

// --config FILE supplies key=value defaults; explicit flags win. Keys the
// chosen subcommand does not take are skipped so one file can serve several.
std::vector<std::string> expand_config(const CLI::App& app, int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> out;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (path.empty() || out.empty()) return out;
  std::set<std::string> given;
  for (const auto& a : out) {
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos
                                                                                          : a.find('=') - 2));
  }
  const CLI::App* sub = nullptr;
  for (const auto* s : app.get_subcommands({})) {
    if (s->get_name() == out.front()) sub = s;
  }
  if (sub == nullptr) return out;
  std::vector<std::string> merged{out.front()};
  for (const auto& [key, value] : parse_kv_text(read_text_file(path))) {
    if (sub->get_option_no_throw("--" + key) == nullptr) {
      bool known = false;
      for (const auto* s : app.get_subcommands({})) known = known || s->get_option_no_throw("--" + key) != nullptr;
      if (!known) throw ConfigError(path + ": unknown key '" + key + "'");
      continue;
    }
    if (!given.count(key)) merged.push_back("--" + key + "=" + value);
  }
  merged.insert(merged.end(), out.begin() + 1, out.end());
  return merged;
}

KeyValues run_meta(const Options& o, const std::string& command) {
  KeyValues meta = o.exp.to_kv();
  meta["command"] = command;
  meta["config_hash"] = o.exp.hash();
  return meta;
}

std::string vocab_path(const std::string& ckpt, const char* side) { return ckpt + "." + side + ".vocab"; }

void save_run(const Model& model, const PreparedData& data, const TrainLog& log, bool mrt, const Options& o,
              const std::string& command) {
  if (o.out.empty()) throw ConfigError("--out is required");
  save_checkpoint(model, o.out);
  data.src_vocab.save(vocab_path(o.out, "src"));
  data.tgt_vocab.save(vocab_path(o.out, "tgt"));
  KeyValues meta = run_meta(o, command);
  meta["test_k"] = std::to_string(o.test_k);
  meta["parameters"] = std::to_string(model.params().scalar_count());
  for (std::size_t i = 0; i < log.warnings.size(); ++i) meta["warning." + std::to_string(i)] = log.warnings[i];
  write_text_file(o.out + ".meta", to_kv_text(meta));
  write_csv_with_meta(o.out + ".log.csv", train_log_csv(log, mrt), meta);
  for (const auto& w : log.warnings) std::cerr << "warning: " << w << '\n';
}

struct Loaded {
  Model model;
  Vocabulary src, tgt;
};

Loaded load_run(const std::string& ckpt) {
  return {load_checkpoint(ckpt), Vocabulary::load(vocab_path(ckpt, "src")),
          Vocabulary::load(vocab_path(ckpt, "tgt"))};
}

std::string out_path(const Options& o, const std::string& name) {
  fs::create_directories(o.exp.output_dir);
  return (fs::path(o.exp.output_dir) / name).string();
}

Model train_stage1(const ModelConfig& mc, const PreparedData& data, const Options& o, int test_k, CeMode mode) {
  Model m = init_model(mc, o.exp.init_seed);
  CeTrainConfig ce = o.exp.ce;
  ce.mode = mode;
  train_ce(m, data.train, test_k, ce);
  return m;
}

int cmd_gen_data(Options& o) {
  o.exp.task.validate();
  if (o.out_src.empty() || o.out_tgt.empty()) throw ConfigError("--out_src and --out_tgt are required");
  write_parallel(generate_synthetic(o.exp.task, o.exp.data_seed), o.out_src, o.out_tgt);
  return 0;
}

int cmd_train(Options& o) {
  finish(o);
  const PreparedData data = prepare_data(o.exp);
  Model model = init_model(sized_model_config(o.exp, data), o.exp.init_seed);
  const TrainLog log = train_ce(model, data.train, o.test_k, o.exp.ce, data.valid);
  save_run(model, data, log, false, o, "train");
  return 0;
}

int cmd_finetune(Options& o) {
  finish(o);
  if (o.init.empty()) throw ConfigError("--init (Stage-1 checkpoint) is required");
  Loaded run = load_run(o.init);
  const PreparedData data = prepare_data(o.exp, run.src, run.tgt);
  const TrainLog log = finetune_mrt(run.model, data.train, o.test_k, o.exp.mrt, data.valid);
  save_run(run.model, data, log, true, o, "finetune-mrt");
  return 0;
}

int cmd_decode(Options& o) {
  if (o.checkpoint.empty() || o.src.empty()) throw ConfigError("--checkpoint and --src are required");
  const Loaded run = load_run(o.checkpoint);
  DecodeConfig dc;
  dc.method = parse_decode_method(o.method);
  dc.n = o.n;
  dc.beam_width = o.beam_width;
  dc.top_p = o.top_p;
  dc.max_len = o.max_len;
  dc.seed = o.seed;
  dc.validate();
  const PolicySpec policy = PolicySpec::wait_k(o.test_k);
  std::ifstream in(o.src);
  if (!in) throw IngestError("cannot open " + o.src);
  std::string text, line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const Sentence tokens = split_tokens(line);
    if (tokens.empty()) throw IngestError(o.src + ": blank line " + std::to_string(lineno));
    const auto source = run.src.encode(tokens);
    DecodeConfig per = dc;
    per.seed = Rng::mix(dc.seed, lineno);
    const auto hyps = generate_candidates(run.model, policy, source, per);
    const std::size_t keep = o.nbest ? hyps.size() : std::min<std::size_t>(1, hyps.size());
    for (std::size_t i = 0; i < keep; ++i) text += format_hypothesis_line(hyps[i], run.tgt) + '\n';
  }
  if (o.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(o.out, text);
  }
  return 0;
}

int cmd_eval(Options& o) {
  if (o.src.empty() || o.ref.empty() || o.hyp.empty()) throw ConfigError("--src, --ref and --hyp are required");
  const ParallelCorpus refs = load_parallel(o.src, o.ref);
  const auto hyps = read_hypothesis_file(o.hyp);
  if (hyps.size() != refs.size()) {
    throw IngestError("hypothesis count " + std::to_string(hyps.size()) + " does not match " +
                      std::to_string(refs.size()) + " references");
  }
  Vocabulary vocab;
  std::string csv = "sentence_id,bleu,al\n";
  double bleu_sum = 0.0, al_sum = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    for (const auto& t : refs[i].target) vocab.add(t);
    for (const auto& t : hyps[i].tokens) vocab.add(t);
    const auto r = vocab.encode(refs[i].target);
    const auto h = vocab.encode(hyps[i].tokens);
    const int src_len = static_cast<int>(refs[i].source.size());
    const double bleu = 100.0 * sentence_bleu(r, h);
    const double al = average_lagging(hyps[i].g_trace, src_len, static_cast<int>(hyps[i].g_trace.size()));
    bleu_sum += bleu;
    al_sum += al;
    csv += std::to_string(i) + ',' + format_fixed(bleu, 6) + ',' + format_fixed(al, 6) + '\n';
  }
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    write_csv_with_meta(o.out, csv, {{"command", "eval"}, {"src", o.src}, {"ref", o.ref}, {"hyp", o.hyp}});
  }
  const double n = static_cast<double>(refs.size());
  std::cerr << "mean sentence BLEU " << format_fixed(bleu_sum / n, 2) << ", mean AL " << format_fixed(al_sum / n, 3)
            << '\n';
  return 0;
}

int cmd_grid(Options& o) {
  finish(o);
  const GridResult g = run_grid(o.exp);
  const KeyValues meta = run_meta(o, "grid");
  write_csv_with_meta(out_path(o, "grid.csv"), grid_csv(g), meta);
  write_csv_with_meta(out_path(o, "grid_report.csv"), grid_report_csv(g), meta);
  for (const auto& c : g.columns) {
    std::cout << "test_k=" << c.test_k << " diagonal CE rank " << c.diagonal_ce_rank << " BLEU rank "
              << c.diagonal_bleu_rank << " CE delta " << format_fixed(c.ce_delta, 4)
              << (c.ce_top2 ? "" : "  [flag: diagonal outside top 2]") << '\n';
  }
  return 0;
}

int cmd_correlate(Options& o) {
  finish(o);
  std::map<int, Model> models;
  PreparedData data;
  if (!o.checkpoint.empty()) {
    Loaded run = load_run(o.checkpoint);
    data = prepare_data(o.exp, run.src, run.tgt);
    for (int k : o.exp.test_ks) models.emplace(k, run.model);
  } else {
    data = prepare_data(o.exp);
    const ModelConfig mc = sized_model_config(o.exp, data);
    for (int k : o.exp.test_ks) models.emplace(k, train_stage1(mc, data, o, k, CeMode::consistent));
  }
  std::map<int, const Model*> per_k;
  for (const auto& [k, m] : models) per_k.emplace(k, &m);
  const auto rows = correlation_report(per_k, data.eval);
  write_csv_with_meta(out_path(o, "correlation.csv"), correlation_csv(rows), run_meta(o, "correlate"));
  return 0;
}

int cmd_prefix_bias(Options& o) {
  finish(o);
  const int k = o.k_test > 0 ? o.k_test : o.test_k;
  PreparedData data = prepare_data(o.exp);
  const ModelConfig mc = sized_model_config(o.exp, data);
  const Model a = o.checkpoint_a.empty() ? train_stage1(mc, data, o, k, CeMode::consistent)
                                         : load_checkpoint(o.checkpoint_a, mc);
  const Model b = o.checkpoint_b.empty() ? train_stage1(mc, data, o, k, parse_ce_mode(o.b_mode))
                                         : load_checkpoint(o.checkpoint_b, mc);
  std::vector<EncodedPair> bucket;
  if (o.exp.train_src.empty()) {
    SyntheticTaskSpec spec = o.exp.task;
    spec.min_len = spec.max_len = o.bucket_len;
    spec.size = o.bucket_size;
    bucket = encode_corpus(generate_synthetic(spec, o.exp.eval_seed), data.src_vocab, data.tgt_vocab);
  } else {
    for (const auto& p : data.eval) {
      if (static_cast<int>(p.target.size()) == o.bucket_len) bucket.push_back(p);
    }
  }
  const PrefixBiasReport rep = prefix_bias_report(a, b, bucket, k, o.exp.decode_max_len);
  KeyValues meta = run_meta(o, "prefix-bias");
  meta["k_test"] = std::to_string(k);
  meta["bucket_len"] = std::to_string(o.bucket_len);
  meta["bucket_size"] = std::to_string(bucket.size());
  meta["model_b_mode"] = o.checkpoint_b.empty() ? o.b_mode : "checkpoint";
  meta["slope_a"] = format_fixed(rep.slope_a, 6);
  meta["slope_b"] = format_fixed(rep.slope_b, 6);
  write_csv_with_meta(out_path(o, "prefix_bias.csv"), prefix_bias_csv(rep), meta);
  std::cout << "slope a " << format_fixed(rep.slope_a, 4) << ", slope b " << format_fixed(rep.slope_b, 4) << '\n';
  return 0;
}

int cmd_curve(Options& o) {
  finish(o);
  const auto rows = run_curve(o.exp, prepare_data(o.exp));
  write_csv_with_meta(out_path(o, "curve.csv"), curve_csv(rows), run_meta(o, "curve"));
  return 0;
}

int cmd_gamma(Options& o) {
  finish(o);
  std::optional<Model> stage1;
  PreparedData data;
  if (!o.init.empty()) {
    Loaded run = load_run(o.init);
    data = prepare_data(o.exp, run.src, run.tgt);
    stage1.emplace(std::move(run.model));
  } else {
    data = prepare_data(o.exp);
    stage1.emplace(train_stage1(sized_model_config(o.exp, data), data, o, o.test_k, o.exp.ce.mode));
  }
  const GammaSweepResult r =
      gamma_sweep(*stage1, data.train, data.eval, o.exp.gammas, o.test_k, o.exp.mrt, o.exp.decode_max_len);
  KeyValues meta = run_meta(o, "gamma-sweep");
  meta["test_k"] = std::to_string(o.test_k);
  meta["spearman_gamma_al"] = format_real(r.spearman_gamma_al);
  write_csv_with_meta(out_path(o, "gamma.csv"), gamma_csv(r), meta);
  std::cout << "spearman(gamma, AL) = " << format_fixed(r.spearman_gamma_al, 4) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simultaneous translation with wait-k policies"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  Options o;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic parallel corpus");
  add_data(gen, o);
  gen->add_option("--out_src", o.out_src);
  gen->add_option("--out_tgt", o.out_tgt);

  auto* train = app.add_subcommand("train", "Stage 1: prefix-to-prefix cross-entropy training");
  add_data(train, o);
  add_model(train, o);
  add_ce(train, o);
  train->add_option("--test_k", o.test_k, "lag for consistent training and validation");
  train->add_option("--out", o.out, "checkpoint path");

  auto* ft = app.add_subcommand("finetune-mrt", "Stage 2: minimum-risk fine-tuning");
  add_data(ft, o);
  add_mrt(ft, o);
  ft->add_option("--init", o.init, "Stage-1 checkpoint");
  ft->add_option("--test_k", o.test_k);
  ft->add_option("--out", o.out, "checkpoint path");

  auto* dec = app.add_subcommand("decode", "decode a source file under wait-k");
  dec->add_option("--checkpoint", o.checkpoint);
  dec->add_option("--src", o.src);
  dec->add_option("--test_k", o.test_k);
  dec->add_option("--method", o.method, "greedy | beam | top_p");
  dec->add_option("--n", o.n);
  dec->add_option("--beam_width", o.beam_width);
  dec->add_option("--top_p", o.top_p);
  dec->add_option("--max_len", o.max_len);
  dec->add_option("--seed", o.seed);
  dec->add_flag("--nbest", o.nbest, "write every candidate, not just the best");
  dec->add_option("--out", o.out, "hypothesis file (stdout if omitted)");

  auto* ev = app.add_subcommand("eval", "per-sentence BLEU and AL of a hypothesis file");
  ev->add_option("--src", o.src);
  ev->add_option("--ref", o.ref);
  ev->add_option("--hyp", o.hyp);
  ev->add_option("--out", o.out, "CSV path (stdout if omitted)");

  auto* grid = app.add_subcommand("grid", "train-k by test-k grid");
  auto* corr = app.add_subcommand("correlate", "CE loss versus BLEU correlation");
  auto* pb = app.add_subcommand("prefix-bias", "suffix quality under gold-prefix constraints");
  auto* curve = app.add_subcommand("curve", "latency/quality curves of the training methods");
  auto* gamma = app.add_subcommand("gamma-sweep", "Stage-2 fine-tuning across gamma values");
  for (auto* sub : {grid, corr, pb, curve, gamma}) {
    add_data(sub, o);
    add_model(sub, o);
    add_ce(sub, o);
    add_mrt(sub, o);
    add_sweep(sub, o);
  }
  corr->add_option("--checkpoint", o.checkpoint, "evaluate one model at every test_k");
  pb->add_option("--test_k", o.test_k);
  pb->add_option("--k_test", o.k_test, "alias of --test_k");
  pb->add_option("--checkpoint_a", o.checkpoint_a);
  pb->add_option("--checkpoint_b", o.checkpoint_b);
  pb->add_option("--bucket_len", o.bucket_len);
  pb->add_option("--bucket_size", o.bucket_size);
  pb->add_option("--b_mode", o.b_mode, "training mode of model b when no checkpoint is given");
  gamma->add_option("--test_k", o.test_k);
  gamma->add_option("--init", o.init, "Stage-1 checkpoint (trained here if omitted)");

  try {
    std::vector<std::string> args = expand_config(app, argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train(o);
    if (*ft) return cmd_finetune(o);
    if (*dec) return cmd_decode(o);
    if (*ev) return cmd_eval(o);
    if (*grid) return cmd_grid(o);
    if (*corr) return cmd_correlate(o);
    if (*pb) return cmd_prefix_bias(o);
    if (*curve) return cmd_curve(o);
    if (*gamma) return cmd_gamma(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
