#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace advcot {

enum class Provenance { original, adversarial };

struct Document {
  std::string doc_id;
  std::optional<std::string> title;
  std::string text;
  Provenance provenance = Provenance::original;
  std::optional<std::string> strategy_tag;
  int version = 0;
  // Set for adversarial documents: the query whose namespace owns the document.
  std::optional<std::string> owner_qid;

  bool operator==(const Document&) const = default;
};

/// Fresh id for a revision of a query's adversarial document: "<qid>.adv.v<n>".
std::string adversarial_doc_id(std::string_view qid, int version);

Document make_adversarial(std::string_view qid, int version, std::string text,
                          std::string strategy_tag);

struct QueryCase {
  std::string qid;
  std::string question;
  std::string correct_answer;
  std::string target_answer;

  bool operator==(const QueryCase&) const = default;
};

/// Append-only knowledge base.
///
/// Once a document is added its (doc_id -> text) binding is fixed. Original
/// documents can never be retired. An adversarial document is retired only
/// when a newer version for the same query is injected; retired versions stay
/// in the store for trace export but are excluded from active_documents().
///
/// Reads may happen from any number of threads; inject() takes an exclusive
/// lock so readers see either the old or the new state.
class Corpus {
 public:
  using DocumentPtr = std::shared_ptr<const Document>;

  Corpus(std::string corpus_id, std::string created_from);
  Corpus(const Corpus& other);
  Corpus& operator=(const Corpus& other);
  Corpus(Corpus&& other) noexcept;
  Corpus& operator=(Corpus&& other) noexcept;
  ~Corpus() = default;

  /// Reads line-delimited JSON records {doc_id, text, title?}. Blank lines are
  /// skipped. Line numbers in errors are 1-based.
  static Corpus ingest(std::istream& source, std::string corpus_id,
                       std::string created_from = "stream");
  static Corpus ingest_file(const std::filesystem::path& path, std::string corpus_id);

  /// Writes the original documents in ingestion order, one JSON record per line.
  void serialize(std::ostream& out) const;

  /// Adds an adversarial document. Any active adversarial document owned by the
  /// same query is retired in the same step.
  DocumentPtr inject(Document doc);

  /// Retires an adversarial document from the active set. Originals are
  /// immutable and raise AttemptedMutation.
  void retire(std::string_view doc_id);

  Document get(std::string_view doc_id) const;
  Document get_adversarial(std::string_view qid, int version) const;
  std::optional<Document> active_adversarial(std::string_view qid) const;
  std::vector<Document> adversarial_history(std::string_view qid) const;
  bool contains(std::string_view doc_id) const;
  bool is_active(std::string_view doc_id) const;

  /// Snapshot of active documents in insertion order.
  std::vector<DocumentPtr> active_documents() const;

  std::size_t size() const;
  std::size_t active_size() const;
  std::size_t original_count() const;
  std::size_t active_adversarial_count() const;

  const std::string& id() const { return corpus_id_; }
  const std::string& created_from() const { return created_from_; }

 private:
  struct Entry {
    DocumentPtr doc;
    bool active = true;
  };

  void add_original(Document doc, std::size_t line_no);
  const Entry& entry_locked(std::string_view doc_id) const;

  std::string corpus_id_;
  std::string created_from_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_owner_;
  std::size_t original_count_ = 0;
  std::size_t active_adversarial_ = 0;
  mutable std::shared_mutex mutex_;
};

/// Reads line-delimited JSON records {qid, question, correct_answer,
/// target_answer}. Cases whose target and correct answers normalize to the
/// same string are rejected with DegenerateCase.
std::vector<QueryCase> load_queries(std::istream& source);
std::vector<QueryCase> load_queries_file(const std::filesystem::path& path);

void validate_case(const QueryCase& c);

std::string_view to_string(Provenance p);

void to_json(nlohmann::json& j, const Document& d);
void from_json(const nlohmann::json& j, Document& d);
void to_json(nlohmann::json& j, const QueryCase& c);
void from_json(const nlohmann::json& j, QueryCase& c);

}  // namespace advcot
