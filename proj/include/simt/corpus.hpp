#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace simt {

using Sentence = std::vector<std::string>;

/// Token <-> id mapping with a fixed reserved prefix.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kFirstContent = 4;

  Vocabulary();

  /// Returns the id of `token`, inserting it if new. Reserved spellings map
  /// to their reserved ids.
  int add(std::string_view token);

  std::optional<int> find(std::string_view token) const;
  /// Unknown tokens map to kUnk.
  int id(std::string_view token) const;
  /// Throws std::out_of_range for ids outside [0, size).
  const std::string& token(int id) const;

  std::size_t size() const { return id_to_token_.size(); }
  std::span<const std::string> tokens() const { return id_to_token_; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  Sentence decode(std::span<const int> ids) const;

  static bool is_reserved(int id) { return id >= 0 && id < kFirstContent; }

  /// One token per line in id order, reserved entries included.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

struct SentencePair {
  Sentence source;
  Sentence target;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

/// Aligned sentence pairs; neither side of any pair is empty.
class ParallelCorpus {
 public:
  ParallelCorpus() = default;
  explicit ParallelCorpus(std::vector<SentencePair> pairs);

  const std::vector<SentencePair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const SentencePair& operator[](std::size_t i) const { return pairs_[i]; }

  /// Pairs whose target has exactly `target_len` tokens.
  ParallelCorpus filter_target_length(std::size_t target_len) const;
  /// First `n` pairs (or all of them).
  ParallelCorpus head(std::size_t n) const;
  /// Uniform sample of `n` pairs without replacement, original order kept.
  ParallelCorpus sample(std::size_t n, std::uint64_t seed) const;

  friend bool operator==(const ParallelCorpus&, const ParallelCorpus&) = default;

 private:
  std::vector<SentencePair> pairs_;
};

/// Lexical-mapping translation task: target = bijective token mapping of the
/// source followed by random adjacent swaps.
struct SyntheticTaskSpec {
  int vocab_size = 20;
  int min_len = 5;
  int max_len = 15;
  double swap_prob = 0.25;
  std::uint64_t mapping_seed = 7;
  int size = 2000;

  void validate() const;
};

ParallelCorpus generate_synthetic(const SyntheticTaskSpec& spec, std::uint64_t seed);

ParallelCorpus load_parallel(const std::string& src_path, const std::string& tgt_path);
void write_parallel(const ParallelCorpus& corpus, const std::string& src_path,
                    const std::string& tgt_path);

enum class VocabSide { source, target, shared };

Vocabulary build_vocab(const ParallelCorpus& corpus, VocabSide side);

/// Id-level pair. The target carries neither bos nor eos.
struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
};

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab);

struct Batch {
  std::vector<std::size_t> indices;          // positions in the encoded corpus
  std::vector<std::vector<int>> source;      // padded to max source length
  std::vector<std::vector<int>> target;      // [bos, y..., eos], padded
  std::vector<int> source_lengths;
  std::vector<int> target_lengths;           // |y| + 1 predicted positions

  std::size_t size() const { return indices.size(); }
};

/// Shuffles with `seed` and cuts consecutive batches; every pair appears in
/// exactly one batch.
std::vector<Batch> make_batches(std::span<const EncodedPair> data, std::size_t batch_size,
                                std::uint64_t seed);

Sentence split_tokens(std::string_view line);
std::string join_tokens(std::span<const std::string> tokens);

}  // namespace simt
