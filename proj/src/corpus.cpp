#include "advcot/corpus.h"

#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>

#include "advcot/errors.h"
#include "advcot/text.h"

namespace advcot {

using nlohmann::json;

std::string adversarial_doc_id(std::string_view qid, int version) {
  return std::string(qid) + ".adv.v" + std::to_string(version);
}

Document make_adversarial(std::string_view qid, int version, std::string text,
                          std::string strategy_tag) {
  Document doc;
  doc.doc_id = adversarial_doc_id(qid, version);
  doc.text = std::move(text);
  doc.provenance = Provenance::adversarial;
  doc.strategy_tag = std::move(strategy_tag);
  doc.version = version;
  doc.owner_qid = std::string(qid);
  return doc;
}

std::string_view to_string(Provenance p) {
  return p == Provenance::original ? "original" : "adversarial";
}

Corpus::Corpus(std::string corpus_id, std::string created_from)
    : corpus_id_(std::move(corpus_id)), created_from_(std::move(created_from)) {}

Corpus::Corpus(const Corpus& other) {
  std::shared_lock lock(other.mutex_);
  corpus_id_ = other.corpus_id_;
  created_from_ = other.created_from_;
  entries_ = other.entries_;
  by_id_ = other.by_id_;
  by_owner_ = other.by_owner_;
  original_count_ = other.original_count_;
  active_adversarial_ = other.active_adversarial_;
}

Corpus& Corpus::operator=(const Corpus& other) {
  if (this == &other) return *this;
  Corpus copy(other);
  *this = std::move(copy);
  return *this;
}

Corpus::Corpus(Corpus&& other) noexcept
    : corpus_id_(std::move(other.corpus_id_)),
      created_from_(std::move(other.created_from_)),
      entries_(std::move(other.entries_)),
      by_id_(std::move(other.by_id_)),
      by_owner_(std::move(other.by_owner_)),
      original_count_(other.original_count_),
      active_adversarial_(other.active_adversarial_) {}

Corpus& Corpus::operator=(Corpus&& other) noexcept {
  if (this == &other) return *this;
  std::unique_lock lock(mutex_);
  corpus_id_ = std::move(other.corpus_id_);
  created_from_ = std::move(other.created_from_);
  entries_ = std::move(other.entries_);
  by_id_ = std::move(other.by_id_);
  by_owner_ = std::move(other.by_owner_);
  original_count_ = other.original_count_;
  active_adversarial_ = other.active_adversarial_;
  return *this;
}

void Corpus::add_original(Document doc, std::size_t line_no) {
  if (doc.doc_id.empty()) {
    throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no) + ": empty doc_id");
  }
  if (doc.text.empty()) {
    throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no) + ": empty text");
  }
  if (by_id_.count(doc.doc_id) != 0) {
    throw Error(ErrorCode::DuplicateDocId, doc.doc_id);
  }
  doc.provenance = Provenance::original;
  doc.version = 0;
  doc.strategy_tag.reset();
  doc.owner_qid.reset();
  by_id_.emplace(doc.doc_id, entries_.size());
  entries_.push_back({std::make_shared<const Document>(std::move(doc)), true});
  ++original_count_;
}

Corpus Corpus::ingest(std::istream& source, std::string corpus_id, std::string created_from) {
  Corpus corpus(std::move(corpus_id), std::move(created_from));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error&) {
      throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no));
    }
    if (!record.is_object() || !record.contains("doc_id") || !record["doc_id"].is_string() ||
        !record.contains("text") || !record["text"].is_string()) {
      throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no));
    }
    Document doc;
    doc.doc_id = record["doc_id"].get<std::string>();
    doc.text = record["text"].get<std::string>();
    if (auto it = record.find("title"); it != record.end() && !it->is_null()) {
      if (!it->is_string()) {
        throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no) + ": title");
      }
      doc.title = it->get<std::string>();
    }
    corpus.add_original(std::move(doc), line_no);
  }
  if (corpus.entries_.empty()) {
    throw Error(ErrorCode::EmptyStream, "no documents in " + corpus.created_from_);
  }
  return corpus;
}

Corpus Corpus::ingest_file(const std::filesystem::path& path, std::string corpus_id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return ingest(in, std::move(corpus_id), path.string());
}

void Corpus::serialize(std::ostream& out) const {
  std::shared_lock lock(mutex_);
  for (const auto& entry : entries_) {
    const Document& doc = *entry.doc;
    if (doc.provenance != Provenance::original) continue;
    json record{{"doc_id", doc.doc_id}, {"text", doc.text}};
    if (doc.title) record["title"] = *doc.title;
    out << record.dump() << '\n';
  }
}

Corpus::DocumentPtr Corpus::inject(Document doc) {
  if (doc.provenance != Provenance::adversarial) {
    throw Error(ErrorCode::InvalidDocument, "only adversarial documents can be injected");
  }
  if (!doc.owner_qid || doc.owner_qid->empty()) {
    throw Error(ErrorCode::InvalidDocument, doc.doc_id + ": missing owner qid");
  }
  if (doc.text.empty()) {
    throw Error(ErrorCode::InvalidDocument, doc.doc_id + ": empty text");
  }
  if (doc.version < 0 || doc.doc_id != adversarial_doc_id(*doc.owner_qid, doc.version)) {
    throw Error(ErrorCode::InvalidDocument, doc.doc_id + ": id must be <qid>.adv.v<version>");
  }

  std::unique_lock lock(mutex_);
  if (by_id_.count(doc.doc_id) != 0) {
    throw Error(ErrorCode::DuplicateDocId, doc.doc_id);
  }
  auto& owned = by_owner_[*doc.owner_qid];
  for (std::size_t idx : owned) {
    if (entries_[idx].doc->version >= doc.version) {
      throw Error(ErrorCode::InvalidDocument,
                  doc.doc_id + ": version must exceed " + entries_[idx].doc->doc_id);
    }
  }
  for (std::size_t idx : owned) {
    if (entries_[idx].active) {
      entries_[idx].active = false;
      --active_adversarial_;
    }
  }
  auto ptr = std::make_shared<const Document>(std::move(doc));
  by_id_.emplace(ptr->doc_id, entries_.size());
  owned.push_back(entries_.size());
  entries_.push_back({ptr, true});
  ++active_adversarial_;
  return ptr;
}

void Corpus::retire(std::string_view doc_id) {
  std::unique_lock lock(mutex_);
  auto it = by_id_.find(std::string(doc_id));
  if (it == by_id_.end()) throw Error(ErrorCode::UnknownDocId, std::string(doc_id));
  Entry& entry = entries_[it->second];
  if (entry.doc->provenance == Provenance::original) {
    throw Error(ErrorCode::AttemptedMutation, "original document " + std::string(doc_id));
  }
  if (entry.active) {
    entry.active = false;
    --active_adversarial_;
  }
}

const Corpus::Entry& Corpus::entry_locked(std::string_view doc_id) const {
  auto it = by_id_.find(std::string(doc_id));
  if (it == by_id_.end()) throw Error(ErrorCode::UnknownDocId, std::string(doc_id));
  return entries_[it->second];
}

Document Corpus::get(std::string_view doc_id) const {
  std::shared_lock lock(mutex_);
  return *entry_locked(doc_id).doc;
}

Document Corpus::get_adversarial(std::string_view qid, int version) const {
  return get(adversarial_doc_id(qid, version));
}

std::optional<Document> Corpus::active_adversarial(std::string_view qid) const {
  std::shared_lock lock(mutex_);
  auto it = by_owner_.find(qid);
  if (it == by_owner_.end()) return std::nullopt;
  for (std::size_t idx : it->second) {
    if (entries_[idx].active) return *entries_[idx].doc;
  }
  return std::nullopt;
}

std::vector<Document> Corpus::adversarial_history(std::string_view qid) const {
  std::shared_lock lock(mutex_);
  std::vector<Document> out;
  auto it = by_owner_.find(qid);
  if (it == by_owner_.end()) return out;
  for (std::size_t idx : it->second) out.push_back(*entries_[idx].doc);
  return out;
}

bool Corpus::contains(std::string_view doc_id) const {
  std::shared_lock lock(mutex_);
  return by_id_.count(std::string(doc_id)) != 0;
}

bool Corpus::is_active(std::string_view doc_id) const {
  std::shared_lock lock(mutex_);
  return entry_locked(doc_id).active;
}

std::vector<Corpus::DocumentPtr> Corpus::active_documents() const {
  std::shared_lock lock(mutex_);
  std::vector<DocumentPtr> out;
  out.reserve(original_count_ + active_adversarial_);
  for (const auto& entry : entries_) {
    if (entry.active) out.push_back(entry.doc);
  }
  return out;
}

std::size_t Corpus::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::size_t Corpus::active_size() const {
  std::shared_lock lock(mutex_);
  return original_count_ + active_adversarial_;
}

std::size_t Corpus::original_count() const {
  std::shared_lock lock(mutex_);
  return original_count_;
}

std::size_t Corpus::active_adversarial_count() const {
  std::shared_lock lock(mutex_);
  return active_adversarial_;
}

void validate_case(const QueryCase& c) {
  if (c.qid.empty()) throw Error(ErrorCode::MalformedLine, "empty qid");
  if (trim(c.question).empty()) {
    throw Error(ErrorCode::MalformedLine, c.qid + ": empty question");
  }
  const std::string target = normalize_answer(c.target_answer);
  if (target.empty()) {
    throw Error(ErrorCode::DegenerateCase, c.qid + ": target answer normalizes to empty");
  }
  if (target == normalize_answer(c.correct_answer)) {
    throw Error(ErrorCode::DegenerateCase, c.qid + ": target equals correct answer");
  }
}

std::vector<QueryCase> load_queries(std::istream& source) {
  std::vector<QueryCase> cases;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    QueryCase c;
    try {
      c = json::parse(line).get<QueryCase>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no));
    }
    validate_case(c);
    if (!seen.emplace(c.qid, line_no).second) {
      throw Error(ErrorCode::DuplicateQid, c.qid);
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<QueryCase> load_queries_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return load_queries(in);
}

void to_json(json& j, const Document& d) {
  j = json{{"doc_id", d.doc_id},
           {"text", d.text},
           {"provenance", to_string(d.provenance)},
           {"version", d.version}};
  if (d.title) j["title"] = *d.title;
  if (d.strategy_tag) j["strategy_tag"] = *d.strategy_tag;
  if (d.owner_qid) j["owner_qid"] = *d.owner_qid;
}

void from_json(const json& j, Document& d) {
  d.doc_id = j.at("doc_id").get<std::string>();
  d.text = j.at("text").get<std::string>();
  d.provenance = j.value("provenance", std::string("original")) == "adversarial"
                     ? Provenance::adversarial
                     : Provenance::original;
  d.version = j.value("version", 0);
  d.title.reset();
  d.strategy_tag.reset();
  d.owner_qid.reset();
  if (j.contains("title") && !j["title"].is_null()) d.title = j["title"].get<std::string>();
  if (j.contains("strategy_tag")) d.strategy_tag = j["strategy_tag"].get<std::string>();
  if (j.contains("owner_qid")) d.owner_qid = j["owner_qid"].get<std::string>();
}

void to_json(json& j, const QueryCase& c) {
  j = json{{"qid", c.qid},
           {"question", c.question},
           {"correct_answer", c.correct_answer},
           {"target_answer", c.target_answer}};
}

void from_json(const json& j, QueryCase& c) {
  c.qid = j.at("qid").get<std::string>();
  c.question = j.at("question").get<std::string>();
  c.correct_answer = j.at("correct_answer").get<std::string>();
  c.target_answer = j.at("target_answer").get<std::string>();
}

}  // namespace advcot
