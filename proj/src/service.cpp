#include "instructir/service.hpp"

#include <chrono>
#include <semaphore>

#include <httplib.h>

#include "instructir/image_io.hpp"

namespace instructir {

namespace {

HttpReply error_reply(int status, std::string_view kind, std::string_view message) {
  nlohmann::ordered_json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  return {status, j.dump()};
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ParseError("return_intent must be true or false");
}

}  // namespace

struct RestoreService::Gate {
  explicit Gate(int n) : slots(n) {}
  std::counting_semaphore<1024> slots;
};

RestoreRequest parse_restore_json(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("request body is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("request body must be a JSON object");
  RestoreRequest r;
  try {
    if (!j.contains("image") || !j["image"].is_string()) throw ParseError("missing base64 field 'image'");
    r.image = base64_decode(j["image"].get<std::string>());
    const bool has_instruction = j.contains("instruction");
    const bool has_chain = j.contains("chain");
    if (has_instruction == has_chain) throw ParseError("exactly one of 'instruction' or 'chain' is required");
    if (has_instruction) {
      r.instructions.push_back(j["instruction"].get<std::string>());
    } else {
      r.chain = true;
      r.instructions = j["chain"].get<std::vector<std::string>>();
      if (r.instructions.empty()) throw ParseError("'chain' must list at least one instruction");
    }
    if (j.contains("return_intent")) r.return_intent = j["return_intent"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed request: ") + e.what());
  }
  return r;
}

RestoreService::RestoreService(InstructIRModel model, ServiceOptions options, std::string checkpoint_id)
    : model_(std::move(model)),
      options_(std::move(options)),
      checkpoint_id_(std::move(checkpoint_id)),
      gate_(std::make_unique<Gate>(std::max(1, options_.workers))) {
  if (options_.workers < 1 || options_.workers > 1024) throw ConfigError("workers must be in [1, 1024]");
  if (options_.max_side < 1) throw ConfigError("max_side must be positive");
  for (auto& p : model_.trainable_parameters()) p.requires_grad_(false);
}

RestoreService::~RestoreService() { stop(); }

HttpReply RestoreService::restore(const RestoreRequest& request) {
  const auto t0 = std::chrono::steady_clock::now();
  if (request.instructions.empty()) return error_reply(400, "parse", "no instruction given");
  for (std::size_t i = 0; i < request.instructions.size(); ++i) {
    if (normalize_text(request.instructions[i]).empty()) {
      return error_reply(422, "config", request.chain ? "chain step " + std::to_string(i) + " is empty"
                                                       : std::string("instruction is empty"));
    }
  }
  torch::Tensor image;
  try {
    image = decode_image(request.image);
  } catch (const Error& e) {
    return error_reply(400, e.kind(), e.what());
  }
  if (image.size(1) > options_.max_side || image.size(2) > options_.max_side) {
    return error_reply(413, "shape",
                       "image " + std::to_string(image.size(2)) + "x" + std::to_string(image.size(1)) +
                           " exceeds the " + std::to_string(options_.max_side) + " pixel limit per side");
  }

  ++in_flight_;
  gate_->slots.acquire();
  nlohmann::ordered_json out;
  out["images"] = nlohmann::ordered_json::array();
  std::vector<std::string> tasks;
  std::vector<double> confidences;
  HttpReply reply;
  try {
    torch::Tensor current = image;
    for (const auto& instruction : request.instructions) {
      auto r = model_.restore(current, instruction);
      const auto png = encode_png(r.image);
      out["images"].push_back(base64_encode(png));
      tasks.emplace_back(task_name(r.task));
      confidences.push_back(r.confidence);
      current = quantize_8bit(r.image);  // as if the step had gone through a PNG file
    }
  } catch (const Error& e) {
    reply = error_reply(e.kind() == std::string_view("config") ? 422 : 400, e.kind(), e.what());
  } catch (const std::exception& e) {
    reply = error_reply(500, "internal", e.what());
  }
  gate_->slots.release();
  --in_flight_;
  if (!reply.body.empty()) return reply;

  if (request.return_intent) {
    out["predicted_task"] = tasks;
    out["confidence"] = confidences;
  }
  out["timing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {200, out.dump()};
}

HttpReply RestoreService::health() const {
  nlohmann::ordered_json j;
  j["status"] = "ok";
  j["checkpoint"] = checkpoint_id_;
  j["task_set"] = model_.tasks().name();
  j["in_flight"] = in_flight_.load();
  return {200, j.dump()};
}

HttpReply RestoreService::tasks() const {
  nlohmann::ordered_json j;
  j["task_set"] = model_.tasks().name();
  j["tasks"] = nlohmann::ordered_json::array();
  for (auto t : model_.tasks().tasks()) j["tasks"].push_back(task_name(t));
  return {200, j.dump()};
}

void RestoreService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  const int threads = std::max(options_.http_threads, options_.workers + 2);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  server_->set_payload_max_length(options_.max_payload);
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server_->Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  server_->Get("/tasks", [this, send](const httplib::Request&, httplib::Response& res) { send(res, tasks()); });
  server_->Post("/restore", [this, send](const httplib::Request& req, httplib::Response& res) {
    RestoreRequest r;
    try {
      if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) throw ParseError("multipart request needs an 'image' part");
        const auto& content = req.get_file_value("image").content;
        r.image.assign(content.begin(), content.end());
        const bool has_instruction = req.has_file("instruction");
        const bool has_chain = req.has_file("chain");
        if (has_instruction == has_chain) throw ParseError("exactly one of 'instruction' or 'chain' is required");
        if (has_instruction) {
          r.instructions.push_back(req.get_file_value("instruction").content);
        } else {
          r.chain = true;
          for (const auto& part : req.get_file_values("chain")) r.instructions.push_back(part.content);
        }
        if (req.has_file("return_intent")) r.return_intent = parse_bool(req.get_file_value("return_intent").content);
      } else {
        r = parse_restore_json(req.body);
      }
    } catch (const Error& e) {
      send(res, error_reply(400, e.kind(), e.what()));
      return;
    }
    send(res, restore(r));
  });
}

bool RestoreService::bind() {
  install_routes();
  if (options_.port == 0) {
    bound_port_ = server_->bind_to_any_port(options_.host);
    return bound_port_ > 0;
  }
  bound_port_ = options_.port;
  return server_->bind_to_port(options_.host, options_.port);
}

int RestoreService::start() {
  if (server_) throw ConfigError("service already started");
  if (!bind()) throw IoError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound_port_;
}

void RestoreService::listen() {
  if (server_) throw ConfigError("service already started");
  if (!bind()) throw IoError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  server_->listen_after_bind();
}

void RestoreService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace instructir
