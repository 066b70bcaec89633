#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "instructir/model.hpp"

namespace httplib {
class Server;
}

namespace instructir {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds an ephemeral port
  std::int64_t max_side = 2048;
  int workers = 2;  // simultaneous restorations
  int http_threads = 8;
  std::size_t max_payload = 64u << 20;
};

struct RestoreRequest {
  std::vector<std::uint8_t> image;
  std::vector<std::string> instructions;  // one entry unless chained
  bool chain = false;
  bool return_intent = true;
};

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

// Wire format. JSON: {"image": base64, "instruction": str | "chain": [str...],
// "return_intent": bool}. Multipart: file field "image", text field
// "instruction" or repeated "chain" fields, optional "return_intent".
// Throws ParseError on malformed input.
RestoreRequest parse_restore_json(const std::string& body);

// Holds one model, read-only, for the service lifetime.
class RestoreService {
 public:
  RestoreService(InstructIRModel model, ServiceOptions options, std::string checkpoint_id);
  ~RestoreService();
  RestoreService(const RestoreService&) = delete;
  RestoreService& operator=(const RestoreService&) = delete;

  // Transport-free handlers.
  HttpReply restore(const RestoreRequest& request);
  HttpReply health() const;
  HttpReply tasks() const;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Blocks serving on the calling thread.
  void listen();
  void stop();

  int in_flight() const { return in_flight_.load(); }
  const ServiceOptions& options() const { return options_; }

 private:
  void install_routes();
  bool bind();

  InstructIRModel model_;
  ServiceOptions options_;
  std::string checkpoint_id_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<int> in_flight_{0};
  struct Gate;
  std::unique_ptr<Gate> gate_;
  int bound_port_ = 0;
};

}  // namespace instructir
