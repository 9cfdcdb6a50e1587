#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace advcot {

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// POSTs a JSON body to <endpoint><path>. Connection-level failures throw
/// Error(TransportError); HTTP status codes are returned, not thrown.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(std::string_view path, const std::string& body,
                            std::chrono::milliseconds timeout) = 0;
};

/// cpp-httplib client for http:// and https:// endpoints. The endpoint may
/// carry a path prefix, e.g. "https://api.example.com/v1".
class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string endpoint, std::optional<std::string> bearer_token);
  HttpResponse post(std::string_view path, const std::string& body,
                    std::chrono::milliseconds timeout) override;

 private:
  std::string origin_;
  std::string prefix_;
  std::optional<std::string> bearer_token_;
};

/// Passes requests through and appends each exchange to a JSONL transcript.
class RecordingTransport final : public Transport {
 public:
  RecordingTransport(std::shared_ptr<Transport> inner, std::filesystem::path transcript);
  HttpResponse post(std::string_view path, const std::string& body,
                    std::chrono::milliseconds timeout) override;

 private:
  std::shared_ptr<Transport> inner_;
  std::filesystem::path transcript_;
  std::mutex mutex_;
};

/// Serves responses from a recorded transcript. Identical requests are
/// answered in recording order; an unrecorded request is a TransportError.
class ReplayTransport final : public Transport {
 public:
  explicit ReplayTransport(const std::filesystem::path& transcript);
  HttpResponse post(std::string_view path, const std::string& body,
                    std::chrono::milliseconds timeout) override;

 private:
  std::map<std::string, std::deque<HttpResponse>> exchanges_;
  std::mutex mutex_;
};

}  // namespace advcot
