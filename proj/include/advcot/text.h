#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace advcot {

/// NFKC-normalizes and lowercases UTF-8 text. Invalid UTF-8 sequences are
/// replaced with U+FFFD.
std::string nfkc_lower(std::string_view text);

/// Retrieval tokenizer: NFKC, lowercase, split on every run of
/// non-alphanumeric code points, drop empty tokens. No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view text);

struct TokenSpan {
  std::string token;  // normalized form
  std::size_t begin;  // byte offsets into the original text
  std::size_t end;
};

/// Same token stream as tokenize() for ordinary text, but each token keeps the
/// byte range it came from in the unnormalized input.
std::vector<TokenSpan> tokenize_with_offsets(std::string_view text);

/// Answer normalization: NFKC, lowercase, punctuation removed, whitespace runs
/// collapsed to one space, trimmed.
std::string normalize_answer(std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);

std::string sha256_hex(std::string_view bytes);

/// Deterministic token estimate used when a backend reports no usage.
std::int64_t estimate_tokens(std::string_view text);

std::string ascii_lower(std::string_view text);

std::string_view trim(std::string_view text);

bool starts_with_icase(std::string_view text, std::string_view prefix);

}  // namespace advcot
