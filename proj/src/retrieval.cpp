#include "advcot/retrieval.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "advcot/errors.h"
#include "advcot/text.h"

namespace advcot {

using nlohmann::json;

namespace {

void normalize_l2(std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq <= 0.0) return;
  double norm = std::sqrt(sq);
  for (double& x : v) x /= norm;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) sum += a[i] * b[i];
  return sum;
}

// Distinct query terms in first-occurrence order.
std::vector<std::string> query_terms(std::string_view query) {
  std::vector<std::string> terms;
  std::unordered_set<std::string> seen;
  for (auto& token : tokenize(query)) {
    if (seen.insert(token).second) terms.push_back(std::move(token));
  }
  return terms;
}

}  // namespace

std::string_view to_string(Backend backend) {
  switch (backend) {
    case Backend::lexical_bm25: return "lexical_bm25";
    case Backend::hashed_embedding: return "hashed_embedding";
    case Backend::remote_embedding: return "remote_embedding";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  if (name == "lexical_bm25" || name == "bm25") return Backend::lexical_bm25;
  if (name == "hashed_embedding") return Backend::hashed_embedding;
  if (name == "remote_embedding") return Backend::remote_embedding;
  throw Error(ErrorCode::UnsupportedBackend, std::string(name));
}

bool RetrievalResult::contains(std::string_view doc_id) const {
  return rank_of(doc_id) != 0;
}

int RetrievalResult::rank_of(std::string_view doc_id) const {
  for (const auto& hit : hits) {
    if (hit.doc_id == doc_id) return hit.rank;
  }
  return 0;
}

std::vector<double> hashed_embedding(std::string_view text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  if (dim == 0) return v;
  for (const auto& token : tokenize(text)) {
    v[fnv1a64(token) % dim] += 1.0;
  }
  normalize_l2(v);
  return v;
}

RetrievalIndex RetrievalIndex::build(const Corpus& corpus, Backend backend,
                                     const IndexParams& params) {
  auto docs = corpus.active_documents();
  if (docs.empty()) throw Error(ErrorCode::EmptyCorpus, corpus.id());

  RetrievalIndex index;
  index.backend_ = backend;
  index.params_ = params;
  index.corpus_id_ = corpus.id();
  index.doc_ids_.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    index.doc_ids_.push_back(docs[i]->doc_id);
    index.position_.emplace(docs[i]->doc_id, i);
  }

  switch (backend) {
    case Backend::lexical_bm25: {
      index.lengths_.resize(docs.size());
      double total = 0.0;
      for (std::size_t i = 0; i < docs.size(); ++i) {
        auto tokens = tokenize(docs[i]->text);
        index.lengths_[i] = static_cast<double>(tokens.size());
        total += index.lengths_[i];
        std::unordered_map<std::string, double> counts;
        for (auto& t : tokens) counts[t] += 1.0;
        for (auto& [term, tf] : counts) index.postings_[term].push_back({i, tf});
      }
      index.avgdl_ = total / static_cast<double>(docs.size());
      break;
    }
    case Backend::hashed_embedding: {
      if (params.hashed_dim == 0) {
        throw Error(ErrorCode::UnsupportedBackend, "hashed_embedding with dim 0");
      }
      index.vectors_.reserve(docs.size());
      for (const auto& doc : docs) {
        index.vectors_.push_back(hashed_embedding(doc->text, params.hashed_dim));
      }
      break;
    }
    case Backend::remote_embedding: {
      if (!params.embedder) {
        throw Error(ErrorCode::UnsupportedBackend, "remote_embedding without a provider");
      }
      std::vector<std::string> texts;
      texts.reserve(docs.size());
      for (const auto& doc : docs) texts.push_back(doc->text);
      index.vectors_ = params.embedder->embed(texts);
      if (index.vectors_.size() != docs.size()) {
        throw Error(ErrorCode::MalformedModelOutput, "embedding count mismatch");
      }
      for (auto& v : index.vectors_) normalize_l2(v);
      break;
    }
  }
  return index;
}

std::size_t RetrievalIndex::position_of(std::string_view doc_id) const {
  auto it = position_.find(std::string(doc_id));
  if (it == position_.end()) throw Error(ErrorCode::UnknownDocId, std::string(doc_id));
  return it->second;
}

std::size_t RetrievalIndex::document_frequency(std::string_view term) const {
  auto it = postings_.find(std::string(term));
  return it == postings_.end() ? 0 : it->second.size();
}

double RetrievalIndex::bm25_term(double idf, double tf, double length) const {
  const double k1 = params_.bm25.k1;
  const double b = params_.bm25.b;
  return idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * length / avgdl_));
}

std::vector<double> RetrievalIndex::query_vector(std::string_view query) const {
  if (backend_ == Backend::hashed_embedding) {
    return hashed_embedding(query, params_.hashed_dim);
  }
  auto vectors = params_.embedder->embed({std::string(query)});
  if (vectors.size() != 1) {
    throw Error(ErrorCode::MalformedModelOutput, "embedding count mismatch");
  }
  normalize_l2(vectors.front());
  return vectors.front();
}

std::vector<double> RetrievalIndex::all_scores(std::string_view query) const {
  std::vector<double> scores(doc_ids_.size(), 0.0);
  if (backend_ == Backend::lexical_bm25) {
    const double n = static_cast<double>(doc_ids_.size());
    for (const auto& term : query_terms(query)) {
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double df = static_cast<double>(it->second.size());
      const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
      for (const auto& posting : it->second) {
        scores[posting.doc] += bm25_term(idf, posting.tf, lengths_[posting.doc]);
      }
    }
  } else {
    const auto q = query_vector(query);
    for (std::size_t i = 0; i < vectors_.size(); ++i) scores[i] = dot(q, vectors_[i]);
  }
  return scores;
}

double RetrievalIndex::score(std::string_view query, std::string_view doc_id) const {
  const std::size_t pos = position_of(doc_id);
  return all_scores(query)[pos];
}

RetrievalResult RetrievalIndex::retrieve_top_k(std::string_view query, int k) const {
  if (k < 0) throw Error(ErrorCode::PreconditionViolation, "k must be >= 0");
  RetrievalResult result;
  result.query = std::string(query);
  result.k = k;
  if (k == 0) return result;

  const auto scores = all_scores(query);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > 0.0) candidates.push_back(i);
  }
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return doc_ids_[a] < doc_ids_[b];
  };
  const std::size_t take = std::min(candidates.size(), static_cast<std::size_t>(k));
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), better);
  for (std::size_t r = 0; r < take; ++r) {
    const std::size_t i = candidates[r];
    result.hits.push_back({doc_ids_[i], scores[i], static_cast<int>(r + 1)});
  }
  return result;
}

void to_json(json& j, const Hit& h) {
  j = json{{"doc_id", h.doc_id}, {"score", h.score}, {"rank", h.rank}};
}

void from_json(const json& j, Hit& h) {
  h.doc_id = j.at("doc_id").get<std::string>();
  h.score = j.at("score").get<double>();
  h.rank = j.at("rank").get<int>();
}

void to_json(json& j, const RetrievalResult& r) {
  j = json{{"query", r.query}, {"k", r.k}, {"hits", r.hits}};
}

void from_json(const json& j, RetrievalResult& r) {
  r.query = j.at("query").get<std::string>();
  r.k = j.at("k").get<int>();
  r.hits = j.at("hits").get<std::vector<Hit>>();
}

}  // namespace advcot
