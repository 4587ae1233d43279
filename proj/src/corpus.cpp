#include "simt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "simt/error.hpp"
#include "simt/random.hpp"

namespace simt {

namespace {

const char* const kReserved[] = {"<pad>", "<s>", "</s>", "<unk>"};

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* t : kReserved) add(t);
}

int Vocabulary::add(std::string_view token) {
  if (auto it = token_to_id_.find(std::string(token)); it != token_to_id_.end()) {
    return it->second;
  }
  const int id = static_cast<int>(id_to_token_.size());
  id_to_token_.emplace_back(token);
  token_to_id_.emplace(id_to_token_.back(), id);
  return id;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  if (auto it = token_to_id_.find(std::string(token)); it != token_to_id_.end()) {
    return it->second;
  }
  return std::nullopt;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(id_to_token_.size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Sentence Vocabulary::decode(std::span<const int> ids) const {
  Sentence out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& t : id_to_token_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.size() < kFirstContent) throw IngestError(path + ": vocabulary lacks reserved ids");
  for (int i = 0; i < kFirstContent; ++i) {
    if (lines[static_cast<std::size_t>(i)] != kReserved[i]) {
      throw IngestError(path + ": reserved id " + std::to_string(i) + " must be " + kReserved[i]);
    }
  }
  Vocabulary v;
  for (std::size_t i = kFirstContent; i < lines.size(); ++i) {
    if (lines[i].empty()) throw IngestError(path + ": blank token at line " + std::to_string(i + 1));
    if (v.add(lines[i]) != static_cast<int>(i)) {
      throw IngestError(path + ": duplicate token '" + lines[i] + "'");
    }
  }
  return v;
}

ParallelCorpus::ParallelCorpus(std::vector<SentencePair> pairs) : pairs_(std::move(pairs)) {
  for (std::size_t i = 0; i < pairs_.size(); ++i) {
    if (pairs_[i].source.empty() || pairs_[i].target.empty()) {
      throw IngestError("pair " + std::to_string(i + 1) + " has an empty side");
    }
  }
}

ParallelCorpus ParallelCorpus::filter_target_length(std::size_t target_len) const {
  std::vector<SentencePair> kept;
  std::copy_if(pairs_.begin(), pairs_.end(), std::back_inserter(kept),
               [&](const SentencePair& p) { return p.target.size() == target_len; });
  return ParallelCorpus(std::move(kept));
}

ParallelCorpus ParallelCorpus::head(std::size_t n) const {
  n = std::min(n, pairs_.size());
  return ParallelCorpus({pairs_.begin(), pairs_.begin() + static_cast<std::ptrdiff_t>(n)});
}

ParallelCorpus ParallelCorpus::sample(std::size_t n, std::uint64_t seed) const {
  if (n >= pairs_.size()) return *this;
  std::vector<std::size_t> idx(pairs_.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<SentencePair> out;
  out.reserve(n);
  for (auto i : idx) out.push_back(pairs_[i]);
  return ParallelCorpus(std::move(out));
}

void SyntheticTaskSpec::validate() const {
  if (vocab_size < 4) throw ConfigError("synthetic vocab_size must be >= 4");
  if (min_len < 2) throw ConfigError("synthetic min_len must be >= 2");
  if (max_len < min_len) throw ConfigError("synthetic max_len must be >= min_len");
  if (!(swap_prob >= 0.0 && swap_prob <= 1.0)) throw ConfigError("swap_prob must lie in [0,1]");
  if (size < 1) throw ConfigError("synthetic size must be >= 1");
}

ParallelCorpus generate_synthetic(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<int> mapping(static_cast<std::size_t>(spec.vocab_size));
  std::iota(mapping.begin(), mapping.end(), 0);
  Rng map_rng(spec.mapping_seed);
  map_rng.shuffle(mapping.begin(), mapping.end());

  Rng rng(seed);
  std::vector<SentencePair> pairs;
  pairs.reserve(static_cast<std::size_t>(spec.size));
  for (int n = 0; n < spec.size; ++n) {
    const int len = rng.between(spec.min_len, spec.max_len);
    SentencePair p;
    std::vector<int> tgt;
    for (int i = 0; i < len; ++i) {
      const int s = rng.between(0, spec.vocab_size - 1);
      p.source.push_back("s" + std::to_string(s));
      tgt.push_back(mapping[static_cast<std::size_t>(s)]);
    }
    // Non-overlapping swaps: a swapped pair is skipped so no token moves by
    // more than one position.
    for (int i = 0; i + 1 < len; ++i) {
      if (rng.bernoulli(spec.swap_prob)) {
        std::swap(tgt[static_cast<std::size_t>(i)], tgt[static_cast<std::size_t>(i + 1)]);
        ++i;
      }
    }
    for (int t : tgt) p.target.push_back("t" + std::to_string(t));
    pairs.push_back(std::move(p));
  }
  return ParallelCorpus(std::move(pairs));
}

Sentence split_tokens(std::string_view line) {
  Sentence out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

ParallelCorpus load_parallel(const std::string& src_path, const std::string& tgt_path) {
  const auto src = read_lines(src_path);
  const auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size()) {
    throw IngestError("line count mismatch: " + src_path + " has " + std::to_string(src.size()) +
                      " lines, " + tgt_path + " has " + std::to_string(tgt.size()));
  }
  std::vector<SentencePair> pairs;
  pairs.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    SentencePair p{split_tokens(src[i]), split_tokens(tgt[i])};
    if (p.source.empty()) throw IngestError(src_path + ": blank line " + std::to_string(i + 1));
    if (p.target.empty()) throw IngestError(tgt_path + ": blank line " + std::to_string(i + 1));
    pairs.push_back(std::move(p));
  }
  return ParallelCorpus(std::move(pairs));
}

void write_parallel(const ParallelCorpus& corpus, const std::string& src_path,
                    const std::string& tgt_path) {
  std::ofstream src(src_path), tgt(tgt_path);
  if (!src || !tgt) throw std::runtime_error("cannot open output corpus files");
  for (const auto& p : corpus.pairs()) {
    src << join_tokens(p.source) << '\n';
    tgt << join_tokens(p.target) << '\n';
  }
}

Vocabulary build_vocab(const ParallelCorpus& corpus, VocabSide side) {
  if (corpus.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");
  Vocabulary v;
  for (const auto& p : corpus.pairs()) {
    if (side != VocabSide::target) {
      for (const auto& t : p.source) v.add(t);
    }
    if (side != VocabSide::source) {
      for (const auto& t : p.target) v.add(t);
    }
  }
  return v;
}

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs()) {
    out.push_back({src_vocab.encode(p.source), tgt_vocab.encode(p.target)});
  }
  return out;
}

std::vector<Batch> make_batches(std::span<const EncodedPair> data, std::size_t batch_size,
                                std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    std::size_t max_src = 0, max_tgt = 0;
    for (std::size_t k = start; k < end; ++k) {
      const auto& p = data[order[k]];
      max_src = std::max(max_src, p.source.size());
      max_tgt = std::max(max_tgt, p.target.size() + 2);
    }
    for (std::size_t k = start; k < end; ++k) {
      const auto& p = data[order[k]];
      b.indices.push_back(order[k]);
      std::vector<int> src = p.source;
      src.resize(max_src, Vocabulary::kPad);
      std::vector<int> tgt;
      tgt.reserve(max_tgt);
      tgt.push_back(Vocabulary::kBos);
      tgt.insert(tgt.end(), p.target.begin(), p.target.end());
      tgt.push_back(Vocabulary::kEos);
      tgt.resize(max_tgt, Vocabulary::kPad);
      b.source.push_back(std::move(src));
      b.target.push_back(std::move(tgt));
      b.source_lengths.push_back(static_cast<int>(p.source.size()));
      b.target_lengths.push_back(static_cast<int>(p.target.size() + 1));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace simt
