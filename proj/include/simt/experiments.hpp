#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "simt/corpus.hpp"
#include "simt/decoding.hpp"
#include "simt/kvtext.hpp"
#include "simt/model.hpp"
#include "simt/training.hpp"

namespace simt {

struct ExperimentConfig {
  // Data: synthetic unless train_src/train_tgt are given.
  SyntheticTaskSpec task;
  std::uint64_t data_seed = 11;
  int valid_size = 200;
  std::uint64_t valid_seed = 12;
  std::string train_src, train_tgt, valid_src, valid_tgt;
  /// "valid", or "train" for a uniform train subset the size of the
  /// validation set.
  std::string eval_split = "valid";
  std::uint64_t eval_seed = 13;

  ModelConfig model;
  std::uint64_t init_seed = 3;
  CeTrainConfig ce;
  MrtConfig mrt;

  std::vector<int> train_ks{1, 3, 5, 7, 9};
  std::vector<int> test_ks{1, 3, 5, 7, 9};
  std::vector<double> gammas{0.0, 0.2, 0.4, 0.6};
  std::string metric = "bleu";  // bleu | ce, the grid's headline metric
  int decode_max_len = 0;
  std::string output_dir = ".";

  void validate() const;
  /// Canonical description (every field), hashed into CSV metadata.
  KeyValues to_kv() const;
  std::string hash() const;
};

struct PreparedData {
  Vocabulary src_vocab, tgt_vocab;
  std::vector<EncodedPair> train, valid, eval;
};

PreparedData prepare_data(const ExperimentConfig& config);
/// Same data, encoded with existing vocabularies (e.g. a checkpoint's).
PreparedData prepare_data(const ExperimentConfig& config, const Vocabulary& src_vocab,
                          const Vocabulary& tgt_vocab);

/// Model sized for the prepared vocabularies.
ModelConfig sized_model_config(const ExperimentConfig& config, const PreparedData& data);

struct EvalResult {
  double bleu = 0.0;  // corpus BLEU in [0, 1]
  double al = 0.0;    // mean sentence AL, tokens
  double ce = 0.0;    // token-weighted teacher-forced NLL
  std::vector<Hypothesis> hypotheses;
};

/// Greedy wait-k decoding of every pair plus teacher-forced CE.
EvalResult evaluate_model(const Model& model, std::span<const EncodedPair> data, int test_k, int max_len = 0);

struct GridRow {
  std::string train_mode;
  int train_k = 0;
  int test_k = 0;
  double bleu = 0.0;  // x100
  double al = 0.0;
  double ce_loss = 0.0;
  bool diagonal = false;
};

struct GridColumnReport {
  int test_k = 0;
  int diagonal_ce_rank = 0;    // 1 = lowest CE in the column
  int diagonal_bleu_rank = 0;  // 1 = highest BLEU in the column
  double ce_delta = 0.0;       // diagonal CE minus best off-diagonal CE
  bool ce_top2 = false;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::vector<GridColumnReport> columns;  // only for test_k that is also a train_k
};

/// Trains one Stage-1 model per train_k (lag k' for every batch) and evaluates
/// each under every test_k.
GridResult run_grid(const ExperimentConfig& config, const PreparedData& data);
GridResult run_grid(const ExperimentConfig& config);

struct CorrelationRow {
  int k = 0;
  std::string subset;  // Entire | Low | High
  std::size_t size = 0;
  std::optional<double> abs_pearson;  // nullopt when undefined
};

/// Per-sentence mean CE versus sentence BLEU of the greedy output; subsets
/// split at the mean loss (Low: loss <= mean).
std::vector<CorrelationRow> correlation_from_scores(int k, std::span<const double> losses,
                                                    std::span<const double> bleus);
std::vector<CorrelationRow> correlation_report(const std::map<int, const Model*>& model_per_k,
                                               std::span<const EncodedPair> data);

struct PrefixBiasRow {
  int prefix_len = 0;
  double bleu_a = 0.0;  // mean suffix sentence BLEU x100
  double bleu_b = 0.0;
  double acc_a = 0.0;   // first suffix token correct, fraction
  double acc_b = 0.0;
};

struct PrefixBiasReport {
  int target_len = 0;
  std::vector<PrefixBiasRow> rows;
  double slope_a = 0.0;  // least-squares d(bleu)/d(prefix_len)
  double slope_b = 0.0;
};

/// Suffix quality under gold-prefix constraints for m = 0..L-1. Every pair in
/// `bucket` must have a target of the same length L.
PrefixBiasReport prefix_bias_report(const Model& model_a, const Model& model_b,
                                    std::span<const EncodedPair> bucket, int k_test, int max_len = 0);

struct CurveModel {
  std::string label;
  const Model* shared = nullptr;          // used for every test_k ...
  std::map<int, const Model*> per_k;      // ... unless a model is given for that k
};

struct CurveRow {
  std::string label;
  int test_k = 0;
  double al = 0.0;
  double bleu = 0.0;  // x100
};

std::vector<CurveRow> latency_quality_curve(std::span<const CurveModel> models,
                                            std::span<const EncodedPair> data, std::span<const int> test_ks,
                                            int max_len = 0);

/// Trains the five compared methods and returns their curves.
std::vector<CurveRow> run_curve(const ExperimentConfig& config, const PreparedData& data);

struct GammaRow {
  double gamma = 0.0;
  double bleu = 0.0;  // x100
  double al = 0.0;
};

struct GammaSweepResult {
  std::vector<GammaRow> rows;
  double spearman_gamma_al = 0.0;  // NaN when undefined
};

/// Fine-tunes a copy of `stage1` per gamma and evaluates at test_k.
GammaSweepResult gamma_sweep(const Model& stage1, std::span<const EncodedPair> train,
                             std::span<const EncodedPair> eval, std::span<const double> gammas, int test_k,
                             const MrtConfig& base, int max_len = 0);

// CSV rendering (header row first, fixed-precision numbers).
std::string grid_csv(const GridResult& r);
std::string grid_report_csv(const GridResult& r);
std::string correlation_csv(std::span<const CorrelationRow> rows);
std::string prefix_bias_csv(const PrefixBiasReport& r);
std::string curve_csv(std::span<const CurveRow> rows);
std::string gamma_csv(const GammaSweepResult& r);
std::string train_log_csv(const TrainLog& log, bool mrt);

/// Writes `csv` to `path` and the metadata sidecar `path + ".meta"`.
void write_csv_with_meta(const std::string& path, const std::string& csv, const KeyValues& metadata);

/// Implementation choices recorded in every metadata sidecar.
KeyValues decision_metadata();

}  // namespace simt
