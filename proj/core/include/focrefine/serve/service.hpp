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

#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "focrefine/interact/session.hpp"
#include "focrefine/samlite/image.hpp"
#include "focrefine/samlite/model.hpp"

namespace focrefine::serve {

/// Error carrying the HTTP status it maps to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ServiceOptions {
  std::string state_dir;    // empty: no persistence
  std::string corpus_root;  // root holding <split>/images and <split>/masks
  int refine_step = 2;
  bool use_refiner = true;
};

struct CreateRequest {
  std::optional<std::string> image_png;  // uploaded bytes
  std::optional<std::string> gt_png;     // optional uploaded ground truth
  std::optional<std::string> corpus_id;  // alternative to an upload
  std::string split = "eval";
  std::optional<int> gt_objidx;  // ground truth from the corpus
};

struct ImageMeta {
  int width = 0;
  int height = 0;
  int input_size = 0;
  double scale = 1.0;
  std::string key;  // content hash used by the embedding cache
};

struct CreateResponse {
  std::string session_id;
  ImageMeta image;
  bool cache_hit = false;
  bool has_gt = false;
};

struct ClickRequest {
  int x = 0;  // original-image pixels
  int y = 0;
  bool positive = true;
};

struct ClickResponse {
  BinaryMask mask;  // original resolution
  std::string rle;
  std::optional<double> iou;  // when ground truth is attached
  int click_index = 0;
  bool refined = false;
};

struct SessionInfo {
  std::string session_id;
  std::string image_key;
  std::vector<ClickRequest> clicks;
  bool refined = false;
  std::string created;
  std::string updated;
};

struct Stats {
  std::size_t sessions = 0;
  std::size_t cache_entries = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t encoder_passes = 0;
  std::uint64_t clicks = 0;
};

/// Interactive segmentation sessions over a shared model. Different sessions
/// run concurrently; calls on one session are serialized.
class Service {
 public:
  Service(std::shared_ptr<const samlite::Model> model, ServiceOptions opts);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  CreateResponse create_session(const CreateRequest& req);
  ClickResponse click(const std::string& id, const ClickRequest& req);
  /// Drops the last click and replays the rest from the cached embedding.
  ClickResponse undo(const std::string& id);
  /// Current mask as a PNG (all zero before the first click).
  std::string mask_png(const std::string& id);
  SessionInfo info(const std::string& id);
  Stats stats() const;

  /// Rebuilds sessions from the on-disk log. Returns the number restored.
  std::size_t restore();

  const ServiceOptions& options() const { return opts_; }

 private:
  struct Entry;
  struct CacheSlot;
  std::shared_ptr<Entry> find(const std::string& id) const;
  std::shared_ptr<const CacheSlot> embed(const RgbImage& img, bool* hit);
  std::shared_ptr<Entry> open_session(const std::string& id, const RgbImage& img, std::optional<BinaryMask> gt,
                                      bool* hit);
  ClickResponse respond(Entry& e) const;
  void replay(Entry& e) const;
  void append_log(const std::string& line);
  std::string new_id();

  std::shared_ptr<const samlite::Model> model_;
  ServiceOptions opts_;

  mutable std::shared_mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;

  mutable std::shared_mutex cache_mu_;
  std::map<std::string, std::shared_ptr<CacheSlot>> cache_;
  std::atomic<std::uint64_t> cache_hits_{0}, cache_misses_{0}, encoder_passes_{0}, clicks_{0};

  std::mutex log_mu_;
  std::mutex id_mu_;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;
  bool restoring_ = false;
};

/// Serialization of service replies to JSON text.
std::string to_json(const CreateResponse& r);
std::string to_json(const ClickResponse& r);
std::string to_json(const Stats& s);
std::string to_json(const SessionInfo& s);

/// HTTP front end: POST /sessions, POST /sessions/{id}/clicks,
/// POST /sessions/{id}/undo, GET /sessions/{id}, GET /sessions/{id}/mask.png,
/// GET /stats.
class HttpServer {
 public:
  explicit HttpServer(Service& service, int threads = 4);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace focrefine::serve
