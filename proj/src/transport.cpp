#include "advcot/transport.h"

#include <fstream>

#include "advcot/errors.h"
#include "httplib.h"
#include "json.hpp"

namespace advcot {

using nlohmann::json;

HttpTransport::HttpTransport(std::string endpoint, std::optional<std::string> bearer_token)
    : bearer_token_(std::move(bearer_token)) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::InvalidConfig, "endpoint needs a scheme: " + endpoint);
  }
  const auto path_begin = endpoint.find('/', scheme_end + 3);
  if (path_begin == std::string::npos) {
    origin_ = endpoint;
  } else {
    origin_ = endpoint.substr(0, path_begin);
    prefix_ = endpoint.substr(path_begin);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
}

HttpResponse HttpTransport::post(std::string_view path, const std::string& body,
                                 std::chrono::milliseconds timeout) {
  httplib::Client client(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), static_cast<time_t>(usecs.count()));
  client.set_read_timeout(secs.count(), static_cast<time_t>(usecs.count()));
  client.set_write_timeout(secs.count(), static_cast<time_t>(usecs.count()));
  httplib::Headers headers;
  if (bearer_token_) headers.emplace("Authorization", "Bearer " + *bearer_token_);

  auto result = client.Post(prefix_ + std::string(path), headers, body, "application/json");
  if (!result) {
    throw Error(ErrorCode::TransportError,
                origin_ + prefix_ + std::string(path) + ": " + httplib::to_string(result.error()));
  }
  return {result->status, result->body};
}

RecordingTransport::RecordingTransport(std::shared_ptr<Transport> inner,
                                       std::filesystem::path transcript)
    : inner_(std::move(inner)), transcript_(std::move(transcript)) {}

HttpResponse RecordingTransport::post(std::string_view path, const std::string& body,
                                      std::chrono::milliseconds timeout) {
  HttpResponse response = inner_->post(path, body, timeout);
  std::lock_guard lock(mutex_);
  std::ofstream out(transcript_, std::ios::app);
  out << json{{"path", path}, {"request", body}, {"status", response.status},
              {"response", response.body}}
             .dump()
      << '\n';
  return response;
}

ReplayTransport::ReplayTransport(const std::filesystem::path& transcript) {
  std::ifstream in(transcript);
  if (!in) throw Error(ErrorCode::IoError, "cannot open transcript " + transcript.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    exchanges_[j.at("path").get<std::string>() + '\n' + j.at("request").get<std::string>()]
        .push_back({j.at("status").get<int>(), j.at("response").get<std::string>()});
  }
}

HttpResponse ReplayTransport::post(std::string_view path, const std::string& body,
                                   std::chrono::milliseconds) {
  std::lock_guard lock(mutex_);
  auto it = exchanges_.find(std::string(path) + '\n' + body);
  if (it == exchanges_.end() || it->second.empty()) {
    throw Error(ErrorCode::TransportError, "no recorded exchange for " + std::string(path));
  }
  HttpResponse response = it->second.front();
  it->second.pop_front();
  return response;
}

}  // namespace advcot
