#pragma once

// Independent reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "advcot/attack.h"
#include "advcot/retrieval.h"
#include "advcot/text.h"

namespace oracles {

struct Doc {
  std::string id;
  std::string text;
};

struct Scored {
  std::string id;
  double score;
};

// Okapi BM25 scored document by document, straight from the definition.
inline std::vector<double> bm25_scores(const std::vector<Doc>& docs, const std::string& query,
                                       double k1 = 1.2, double b = 0.75) {
  std::vector<std::vector<std::string>> tokens;
  double total = 0;
  for (const auto& d : docs) {
    tokens.push_back(advcot::tokenize(d.text));
    total += static_cast<double>(tokens.back().size());
  }
  const double n = static_cast<double>(docs.size());
  const double avgdl = total / n;
  std::vector<std::string> terms;
  for (const auto& t : advcot::tokenize(query)) {
    if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(t);
  }
  std::vector<double> scores(docs.size(), 0.0);
  for (const auto& term : terms) {
    double df = 0;
    for (const auto& doc_tokens : tokens) {
      if (std::find(doc_tokens.begin(), doc_tokens.end(), term) != doc_tokens.end()) df += 1;
    }
    if (df == 0) continue;
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const double tf =
          static_cast<double>(std::count(tokens[i].begin(), tokens[i].end(), term));
      if (tf == 0) continue;
      const double len = static_cast<double>(tokens[i].size());
      scores[i] += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len / avgdl));
    }
  }
  return scores;
}

inline std::vector<double> hashed_vector(const std::string& text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  for (const auto& t : advcot::tokenize(text)) v[advcot::fnv1a64(t) % dim] += 1.0;
  double sq = 0;
  for (double x : v) sq += x * x;
  if (sq > 0) {
    const double norm = std::sqrt(sq);
    for (double& x : v) x /= norm;
  }
  return v;
}

inline std::vector<double> cosine_scores(const std::vector<Doc>& docs, const std::string& query,
                                         std::size_t dim) {
  const auto q = hashed_vector(query, dim);
  std::vector<double> scores;
  for (const auto& d : docs) {
    const auto v = hashed_vector(d.text, dim);
    double s = 0;
    for (std::size_t i = 0; i < dim; ++i) s += q[i] * v[i];
    scores.push_back(s);
  }
  return scores;
}

// Full sort of every positive score, ties by id.
inline std::vector<Scored> top_k(const std::vector<Doc>& docs, const std::vector<double>& scores,
                                 int k) {
  std::vector<Scored> all;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (scores[i] > 0) all.push_back({docs[i].id, scores[i]});
  }
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
  return all;
}

// Zipf-ish vocabulary so document frequencies and lengths vary.
inline std::vector<Doc> synthetic_docs(std::mt19937_64& rng, std::size_t count,
                                       std::size_t vocab = 400) {
  std::vector<Doc> docs;
  std::uniform_int_distribution<int> length(3, 60);
  for (std::size_t i = 0; i < count; ++i) {
    std::string text;
    const int n = length(rng);
    for (int w = 0; w < n; ++w) {
      const double u = std::uniform_real_distribution<double>(0, 1)(rng);
      const auto word = static_cast<std::size_t>(std::pow(u, 2.5) * static_cast<double>(vocab));
      text += (w ? " " : "") + std::string("w") + std::to_string(word);
      if (rng() % 11 == 0) text += ",";
    }
    char id[32];
    std::snprintf(id, sizeof id, "doc%05zu", i);
    docs.push_back({id, text});
  }
  return docs;
}

inline std::string synthetic_query(std::mt19937_64& rng, std::size_t vocab = 400) {
  std::string q;
  const int n = 1 + static_cast<int>(rng() % 6);
  for (int w = 0; w < n; ++w) q += (w ? " " : "") + std::string("w") + std::to_string(rng() % vocab);
  return q;
}

// Random attack records with a consistent outcome trajectory.
inline std::vector<advcot::AttackRecord> random_records(std::mt19937_64& rng, std::size_t n,
                                                        int max_rounds) {
  using advcot::OutcomeKind;
  std::vector<advcot::AttackRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    advcot::AttackRecord r;
    r.qid = "q" + std::to_string(i);
    r.max_rounds = max_rounds;
    const int rounds = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_rounds + 1));
    const auto final_kind = static_cast<OutcomeKind>(rng() % 3);
    for (int t = 0; t < rounds; ++t) {
      advcot::AttackRound round;
      round.round_index = t;
      const bool last = t == rounds - 1;
      round.outcome.kind = last ? final_kind
                                : (rng() % 2 ? OutcomeKind::NotRetrieved
                                             : OutcomeKind::RetrievedNotMisled);
      if (round.outcome.kind != OutcomeKind::NotRetrieved) round.outcome.rank = 1;
      r.rounds.push_back(round);
      if (round.outcome.kind == OutcomeKind::Success) break;
    }
    r.final_outcome = r.rounds.back().outcome;
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace oracles
