#pragma once

// In-process completion endpoint for scorer tests. Each prompt maps to a raw
// logit vector over a small vocabulary; responses report log-softmax values
// of the top-L tokens, as a real inference server would.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

namespace ivapcal::testing {

class StubLogprobServer {
 public:
  using Vocabulary = std::map<std::string, double>;  // token -> raw logit

  StubLogprobServer() {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubLogprobServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  StubLogprobServer(const StubLogprobServer&) = delete;
  StubLogprobServer& operator=(const StubLogprobServer&) = delete;

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/completions"; }

  void set_logits(const std::string& prompt, Vocabulary logits) {
    std::lock_guard lock(mu_);
    logits_[prompt] = std::move(logits);
  }
  void set_default_logits(Vocabulary logits) {
    std::lock_guard lock(mu_);
    default_ = std::move(logits);
  }

  // The next `count` requests answer 503.
  void fail_next(int count) { failures_ = count; }
  // Artificial latency per request.
  void set_delay(std::chrono::milliseconds d) { delay_ = d; }
  // Return a body that is not JSON.
  void set_garbage(bool on) { garbage_ = on; }

  int requests() const { return requests_; }
  int max_concurrent() const { return max_concurrent_; }

  std::vector<nlohmann::json> bodies() const {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

  static double log_softmax(const Vocabulary& v, const std::string& token) {
    double top = -INFINITY;
    for (const auto& [t, u] : v) top = std::max(top, u);
    double z = 0.0;
    for (const auto& [t, u] : v) z += std::exp(u - top);
    return v.at(token) - top - std::log(z);
  }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    const int now = ++in_flight_;
    {
      int seen = max_concurrent_;
      while (now > seen && !max_concurrent_.compare_exchange_weak(seen, now)) {
      }
    }
    ++requests_;
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    auto body = nlohmann::json::parse(req.body);
    Vocabulary vocab;
    {
      std::lock_guard lock(mu_);
      bodies_.push_back(body);
      auth_.push_back(req.get_header_value("Authorization"));
      const auto it = logits_.find(body.at("prompt").get<std::string>());
      vocab = it != logits_.end() ? it->second : default_;
    }
    if (failures_ > 0) {
      --failures_;
      res.status = 503;
      res.set_content("busy", "text/plain");
      --in_flight_;
      return;
    }
    if (garbage_) {
      res.set_content("<html>not json", "text/html");
      --in_flight_;
      return;
    }
    const int top_l = body.at("logprobs").get<int>();
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& [t, u] : vocab) ranked.emplace_back(log_softmax(vocab, t), t);
    std::sort(ranked.rbegin(), ranked.rend());
    nlohmann::json top = nlohmann::json::object();
    for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < top_l; ++i) top[ranked[i].second] = ranked[i].first;
    nlohmann::json out = {
        {"choices",
         {{{"text", ranked.empty() ? "" : ranked[0].second},
           {"logprobs", {{"tokens", {ranked.empty() ? "" : ranked[0].second}}, {"top_logprobs", {top}}}}}}}};
    res.set_content(out.dump(), "application/json");
    --in_flight_;
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::map<std::string, Vocabulary> logits_;
  Vocabulary default_;
  std::vector<nlohmann::json> bodies_;
  std::vector<std::string> auth_;
  std::atomic<int> failures_{0};
  std::atomic<int> requests_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_concurrent_{0};
  std::atomic<bool> garbage_{false};
  std::chrono::milliseconds delay_{0};
};

}  // namespace ivapcal::testing
