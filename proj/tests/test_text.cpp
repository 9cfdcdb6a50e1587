#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "advcot/text.h"

using namespace advcot;

TEST_CASE("tokenize normalizes and splits on non-alphanumerics") {
  CHECK(tokenize("Which river flows through Vienna?") ==
        std::vector<std::string>{"which", "river", "flows", "through", "vienna"});
  CHECK(tokenize("  --  ").empty());
  CHECK(tokenize("ＰＡＲＩＳ is ﬁne") == std::vector<std::string>{"paris", "is", "fine"});
  CHECK(tokenize("Zürich's 2nd-largest") ==
        std::vector<std::string>{"zürich", "s", "2nd", "largest"});
}

TEST_CASE("token offsets point into the original text") {
  const std::string text = "Hello, Wörld! x";
  auto spans = tokenize_with_offsets(text);
  REQUIRE(spans.size() == 3);
  CHECK(text.substr(spans[0].begin, spans[0].end - spans[0].begin) == "Hello");
  CHECK(text.substr(spans[1].begin, spans[1].end - spans[1].begin) == "Wörld");
  CHECK(spans[1].token == "wörld");
  CHECK(spans[2].token == "x");
  std::vector<std::string> tokens;
  for (const auto& s : spans) tokens.push_back(s.token);
  CHECK(tokens == tokenize(text));
}

TEST_CASE("answer normalization") {
  CHECK(normalize_answer("Paris.") == "paris");
  CHECK(normalize_answer("  The   Capital,  is PARIS!  ") == "the capital is paris");
  CHECK(normalize_answer("") == "");
}

TEST_CASE("hash functions match published vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("string helpers") {
  CHECK(estimate_tokens("") == 0);
  CHECK(estimate_tokens("abcd") == 1);
  CHECK(estimate_tokens("abcde") == 2);
  CHECK(trim("  a b \n") == "a b");
  CHECK(starts_with_icase("Let me think", "let ME"));
  CHECK_FALSE(starts_with_icase("Le", "let"));
}
