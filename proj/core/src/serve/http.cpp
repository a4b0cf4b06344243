// Copyright 2026 The focrefine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <httplib.h>

#include <thread>

#include <nlohmann/json.hpp>

#include "focrefine/serve/service.hpp"

namespace focrefine::serve {

namespace {

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

void send_error(httplib::Response& res, int status, const std::string& msg) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
}

Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, std::string("bad request body: ") + e.what());
    } catch (const std::out_of_range& e) {
      send_error(res, 400, e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

bool parse_label(const nlohmann::json& j) {
  if (j.contains("positive")) return j.at("positive").get<bool>();
  if (j.contains("label")) {
    const auto& l = j.at("label");
    if (l.is_boolean()) return l.get<bool>();
    if (l.is_number_integer()) {
      const int v = l.get<int>();
      if (v != 0 && v != 1) throw ServiceError(400, "label must be 0 or 1");
      return v == 1;
    }
    const auto s = l.get<std::string>();
    if (s == "positive" || s == "pos") return true;
    if (s == "negative" || s == "neg") return false;
    throw ServiceError(400, "label must be positive or negative");
  }
  return true;
}

CreateRequest parse_create(const httplib::Request& req) {
  CreateRequest c;
  const std::string type = req.get_header_value("Content-Type");
  if (req.is_multipart_form_data()) {
    if (req.has_file("image")) c.image_png = req.get_file_value("image").content;
    if (req.has_file("gt")) c.gt_png = req.get_file_value("gt").content;
    if (req.has_file("corpus_id")) c.corpus_id = req.get_file_value("corpus_id").content;
    if (req.has_file("split")) c.split = req.get_file_value("split").content;
    if (req.has_file("gt_objidx")) c.gt_objidx = std::stoi(req.get_file_value("gt_objidx").content);
  } else if (type.rfind("application/json", 0) == 0) {
    const auto j = nlohmann::json::parse(req.body);
    if (j.contains("corpus_id")) c.corpus_id = j.at("corpus_id").get<std::string>();
    if (j.contains("split")) c.split = j.at("split").get<std::string>();
    if (j.contains("gt_objidx") && !j.at("gt_objidx").is_null()) c.gt_objidx = j.at("gt_objidx").get<int>();
  } else {
    c.image_png = req.body;
  }
  return c;
}

}  // namespace

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;

  Impl(Service& s, int threads) : service(s) {
    server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(std::max(1, threads))); };
    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  res.set_content(to_json(service.create_session(parse_create(req))), "application/json");
                }));
    server.Post(R"(/sessions/([0-9a-f]+)/clicks)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto j = nlohmann::json::parse(req.body);
                  ClickRequest c{j.at("x").get<int>(), j.at("y").get<int>(), parse_label(j)};
                  const auto r = service.click(req.matches[1], c);
                  if (req.has_param("png") && req.get_param_value("png") == "1") {
                    auto out = nlohmann::json::parse(to_json(r));
                    out["png_base64"] = httplib::detail::base64_encode(service.mask_png(req.matches[1]));
                    res.set_content(out.dump(), "application/json");
                  } else {
                    res.set_content(to_json(r), "application/json");
                  }
                }));
    server.Post(R"(/sessions/([0-9a-f]+)/undo)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  res.set_content(to_json(service.undo(req.matches[1])), "application/json");
                }));
    server.Get(R"(/sessions/([0-9a-f]+)/mask\.png)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 res.set_content(service.mask_png(req.matches[1]), "image/png");
               }));
    server.Get(R"(/sessions/([0-9a-f]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 res.set_content(to_json(service.info(req.matches[1])), "application/json");
               }));
    server.Get("/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
                 res.set_content(to_json(service.stats()), "application/json");
               }));
  }
};

HttpServer::HttpServer(Service& service, int threads) : impl_(std::make_unique<Impl>(service, threads)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) throw std::logic_error("server already running");
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    if (!impl_->server.bind_to_port(host, port)) port_ = -1;
    else port_ = port;
  }
  if (port_ < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpServer::run(const std::string& host, int port) {
  port_ = port;
  if (!impl_->server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace focrefine::serve
