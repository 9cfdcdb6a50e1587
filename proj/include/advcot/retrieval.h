#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "advcot/corpus.h"
#include "json.hpp"

namespace advcot {

enum class Backend { lexical_bm25, hashed_embedding, remote_embedding };

std::string_view to_string(Backend backend);
Backend parse_backend(std::string_view name);

/// Source of dense vectors for the remote_embedding backend. Implementations
/// need not normalize; the index does.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct IndexParams {
  Bm25Params bm25;
  std::size_t hashed_dim = 256;
  std::shared_ptr<EmbeddingProvider> embedder;  // required for remote_embedding
};

struct Hit {
  std::string doc_id;
  double score = 0.0;
  int rank = 0;  // 1-based

  bool operator==(const Hit&) const = default;
};

struct RetrievalResult {
  std::string query;
  int k = 0;
  std::vector<Hit> hits;

  bool contains(std::string_view doc_id) const;
  /// 1-based rank of doc_id, or 0 when absent.
  int rank_of(std::string_view doc_id) const;

  bool operator==(const RetrievalResult&) const = default;
};

/// L2-normalized bag-of-tokens vector: each token adds 1.0 at
/// fnv1a64(token) % dim.
std::vector<double> hashed_embedding(std::string_view text, std::size_t dim);

/// Immutable index over the active documents of one corpus snapshot.
class RetrievalIndex {
 public:
  static RetrievalIndex build(const Corpus& corpus, Backend backend,
                              const IndexParams& params = {});

  /// BM25 for the lexical backend, cosine similarity for embedding backends.
  double score(std::string_view query, std::string_view doc_id) const;

  /// The k best documents by (score desc, doc_id asc); documents with
  /// non-positive score never appear.
  RetrievalResult retrieve_top_k(std::string_view query, int k = 5) const;

  Backend backend() const { return backend_; }
  std::size_t size() const { return doc_ids_.size(); }
  const std::string& corpus_id() const { return corpus_id_; }
  std::size_t document_frequency(std::string_view term) const;
  double average_length() const { return avgdl_; }

 private:
  RetrievalIndex() = default;

  std::size_t position_of(std::string_view doc_id) const;
  std::vector<double> all_scores(std::string_view query) const;
  std::vector<double> query_vector(std::string_view query) const;
  double bm25_term(double idf, double tf, double length) const;

  Backend backend_ = Backend::lexical_bm25;
  IndexParams params_;
  std::string corpus_id_;
  std::vector<std::string> doc_ids_;
  std::unordered_map<std::string, std::size_t> position_;

  // lexical
  struct Posting {
    std::size_t doc;
    double tf;
  };
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::vector<double> lengths_;
  double avgdl_ = 0.0;

  // embedding
  std::vector<std::vector<double>> vectors_;
};

void to_json(nlohmann::json& j, const Hit& h);
void from_json(const nlohmann::json& j, Hit& h);
void to_json(nlohmann::json& j, const RetrievalResult& r);
void from_json(const nlohmann::json& j, RetrievalResult& r);

}  // namespace advcot
