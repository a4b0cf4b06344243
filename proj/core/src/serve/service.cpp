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

#include "focrefine/serve/service.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>

#include <nlohmann/json.hpp>

#include "focrefine/evalbench/metrics.hpp"
#include "focrefine/serve/rle.hpp"
#include "focrefine/synthdata/png.hpp"

namespace focrefine::serve {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Service::CacheSlot {
  std::shared_future<Tensor> embedding;
  samlite::InputFrame frame;
};

struct Service::Entry {
  std::mutex mu;
  std::string id;
  std::string image_key;
  std::shared_ptr<const CacheSlot> slot;
  std::optional<BinaryMask> gt;
  std::vector<ClickRequest> clicks;
  std::unique_ptr<interact::Session> session;
  BinaryMask mask;
  std::string created, updated;
};

namespace {

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string content_key(int h, int w, const std::vector<std::uint8_t>& data) {
  std::uint64_t x = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    x ^= v;
    x *= 1099511628211ULL;
  };
  mix(static_cast<std::uint64_t>(h));
  mix(static_cast<std::uint64_t>(w));
  for (auto b : data) mix(b);
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

bool safe_component(const std::string& s) {
  if (s.empty() || s.size() > 64) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

}  // namespace

Service::Service(std::shared_ptr<const samlite::Model> model, ServiceOptions opts)
    : model_(std::move(model)), opts_(std::move(opts)) {
  if (opts_.refine_step < 1) throw std::invalid_argument("refine step must be >= 1");
  std::random_device rd;
  id_salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  if (!opts_.state_dir.empty()) fs::create_directories(fs::path(opts_.state_dir) / "blobs");
}

Service::~Service() = default;

std::string Service::new_id() {
  std::lock_guard lock(id_mu_);
  std::mt19937_64 g(id_salt_ ^ (++id_counter_ * 0x9e3779b97f4a7c15ULL));
  char buf[40];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(g()),
                static_cast<unsigned long long>(g()));
  return buf;
}

void Service::append_log(const std::string& line) {
  if (opts_.state_dir.empty() || restoring_) return;
  std::lock_guard lock(log_mu_);
  std::ofstream out(fs::path(opts_.state_dir) / "sessions.jsonl", std::ios::app);
  out << line << '\n' << std::flush;
  if (!out) throw ServiceError(500, "cannot append to the session log");
}

std::shared_ptr<const Service::CacheSlot> Service::embed(const RgbImage& img, bool* hit) {
  const std::string key = content_key(img.height, img.width, img.data);
  {
    std::shared_lock lock(cache_mu_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      ++cache_hits_;
      *hit = true;
      return it->second;
    }
  }
  const auto pre = samlite::preprocess(img, model_->config().image_size);
  std::promise<Tensor> promise;
  std::shared_ptr<CacheSlot> slot;
  {
    std::unique_lock lock(cache_mu_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      ++cache_hits_;
      *hit = true;
      return it->second;
    }
    slot = std::make_shared<CacheSlot>();
    slot->frame = pre.frame;
    slot->embedding = promise.get_future().share();
    cache_.emplace(key, slot);
    ++cache_misses_;
  }
  *hit = false;
  try {
    NoGradScope ng;
    Tensor F = samlite::encode_image(*model_, pre.image);
    ++encoder_passes_;
    promise.set_value(std::move(F));
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::unique_lock lock(cache_mu_);
    cache_.erase(key);
    throw;
  }
  return slot;
}

std::shared_ptr<Service::Entry> Service::open_session(const std::string& id, const RgbImage& img,
                                                      std::optional<BinaryMask> gt, bool* hit) {
  if (gt && (gt->height != img.height || gt->width != img.width)) {
    throw ServiceError(400, "ground truth size does not match the image");
  }
  auto e = std::make_shared<Entry>();
  e->id = id;
  e->image_key = content_key(img.height, img.width, img.data);
  e->slot = embed(img, hit);
  e->gt = std::move(gt);
  e->session = std::make_unique<interact::Session>(model_, e->slot->embedding.get(),
                                                   interact::SessionOptions{opts_.refine_step, opts_.use_refiner});
  e->mask = BinaryMask(img.height, img.width);
  e->created = e->updated = now_iso();
  std::unique_lock lock(sessions_mu_);
  if (!sessions_.emplace(id, e).second) throw ServiceError(409, "session id already exists: " + id);
  return e;
}

CreateResponse Service::create_session(const CreateRequest& req) {
  if (!model_) throw ServiceError(503, "no model checkpoint loaded");
  RgbImage img;
  std::optional<BinaryMask> gt;
  ordered_json ev;
  ev["event"] = "create";
  try {
    if (req.image_png) {
      if (req.corpus_id) throw ServiceError(400, "give either an image upload or a corpus id, not both");
      img = synthdata::decode_png(bytes_of(*req.image_png));
      if (req.gt_png) gt = synthdata::decode_mask_png(bytes_of(*req.gt_png));
      if (!opts_.state_dir.empty()) {
        const std::string key = content_key(img.height, img.width, img.data);
        const auto blob = fs::path(opts_.state_dir) / "blobs" / (key + ".png");
        if (!fs::exists(blob)) synthdata::write_png(blob.string(), img);
        ev["image"] = {{"blob", key}};
        if (gt) {
          const std::string gkey = content_key(gt->height, gt->width, gt->data);
          const auto gblob = fs::path(opts_.state_dir) / "blobs" / (gkey + ".mask.png");
          if (!fs::exists(gblob)) synthdata::write_mask_png(gblob.string(), *gt);
          ev["gt"] = {{"blob", gkey}};
        }
      }
    } else if (req.corpus_id) {
      if (opts_.corpus_root.empty()) throw ServiceError(400, "no corpus configured for corpus-id sessions");
      if (!safe_component(*req.corpus_id) || !safe_component(req.split)) {
        throw ServiceError(400, "invalid corpus id or split");
      }
      const auto dir = fs::path(opts_.corpus_root) / req.split;
      const auto path = dir / "images" / (*req.corpus_id + ".png");
      if (!fs::exists(path)) throw ServiceError(404, "unknown corpus image " + req.split + "/" + *req.corpus_id);
      img = synthdata::read_png(path.string());
      ev["image"] = {{"corpus", *req.corpus_id}, {"split", req.split}};
      if (req.gt_objidx) {
        const auto mpath = dir / "masks" / (*req.corpus_id + "_" + std::to_string(*req.gt_objidx) + ".png");
        if (!fs::exists(mpath)) throw ServiceError(404, "unknown corpus mask " + mpath.filename().string());
        gt = synthdata::read_mask_png(mpath.string());
        ev["gt"] = {{"corpus", *req.corpus_id}, {"split", req.split}, {"objidx", *req.gt_objidx}};
      }
    } else {
      throw ServiceError(400, "request needs an image upload or a corpus id");
    }
  } catch (const synthdata::PngError& e) {
    throw ServiceError(400, std::string("undecodable image: ") + e.what());
  }
  if (img.height < 1 || img.width < 1) throw ServiceError(400, "empty image");
  CreateResponse res;
  res.session_id = new_id();
  auto e = open_session(res.session_id, img, std::move(gt), &res.cache_hit);
  res.has_gt = e->gt.has_value();
  const auto& f = e->slot->frame;
  res.image = {img.width, img.height, f.input_size, f.scale, e->image_key};
  ev["id"] = res.session_id;
  ev["t"] = e->created;
  append_log(ev.dump());
  return res;
}

std::shared_ptr<Service::Entry> Service::find(const std::string& id) const {
  std::shared_lock lock(sessions_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session " + id);
  return it->second;
}

ClickResponse Service::respond(Entry& e) const {
  ClickResponse r;
  r.mask = e.mask;
  r.rle = encode_rle(e.mask);
  if (e.gt) r.iou = evalbench::iou(e.mask, *e.gt);
  r.click_index = static_cast<int>(e.clicks.size());
  r.refined = e.session->refine_done();
  return r;
}

ClickResponse Service::click(const std::string& id, const ClickRequest& req) {
  auto e = find(id);
  std::lock_guard lock(e->mu);
  const auto& f = e->slot->frame;
  if (req.x < 0 || req.y < 0 || req.x >= f.orig_w || req.y >= f.orig_h) {
    throw ServiceError(400, "click (" + std::to_string(req.x) + ", " + std::to_string(req.y) + ") outside the " +
                                std::to_string(f.orig_w) + "x" + std::to_string(f.orig_h) + " image");
  }
  const auto step = e->session->step(f.to_model(req.x, req.y, req.positive));
  e->clicks.push_back(req);
  e->mask = interact::prediction_mask(step.logits, f);
  e->updated = now_iso();
  ++clicks_;
  ordered_json ev{{"event", "click"}, {"id", id}, {"x", req.x}, {"y", req.y}, {"positive", req.positive}};
  append_log(ev.dump());
  return respond(*e);
}

void Service::replay(Entry& e) const {
  e.session = std::make_unique<interact::Session>(model_, e.slot->embedding.get(),
                                                  interact::SessionOptions{opts_.refine_step, opts_.use_refiner});
  const auto& f = e.slot->frame;
  e.mask = BinaryMask(f.orig_h, f.orig_w);
  for (const auto& c : e.clicks) {
    const auto step = e.session->step(f.to_model(c.x, c.y, c.positive));
    e.mask = interact::prediction_mask(step.logits, f);
  }
}

ClickResponse Service::undo(const std::string& id) {
  auto e = find(id);
  std::lock_guard lock(e->mu);
  if (e->clicks.empty()) throw ServiceError(409, "nothing to undo");
  e->clicks.pop_back();
  replay(*e);
  e->updated = now_iso();
  append_log(ordered_json{{"event", "undo"}, {"id", id}}.dump());
  return respond(*e);
}

std::string Service::mask_png(const std::string& id) {
  auto e = find(id);
  std::lock_guard lock(e->mu);
  const auto bytes = synthdata::encode_mask_png(e->mask);
  return {bytes.begin(), bytes.end()};
}

SessionInfo Service::info(const std::string& id) {
  auto e = find(id);
  std::lock_guard lock(e->mu);
  return {e->id, e->image_key, e->clicks, e->session->refine_done(), e->created, e->updated};
}

Stats Service::stats() const {
  Stats s;
  {
    std::shared_lock lock(sessions_mu_);
    s.sessions = sessions_.size();
  }
  {
    std::shared_lock lock(cache_mu_);
    s.cache_entries = cache_.size();
  }
  s.cache_hits = cache_hits_;
  s.cache_misses = cache_misses_;
  s.encoder_passes = encoder_passes_;
  s.clicks = clicks_;
  return s;
}

std::size_t Service::restore() {
  if (opts_.state_dir.empty() || !model_) return 0;
  const auto log = fs::path(opts_.state_dir) / "sessions.jsonl";
  if (!fs::exists(log)) return 0;
  std::ifstream in(log);
  restoring_ = true;
  std::size_t restored = 0;
  std::string line;
  int n = 0;
  try {
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      const auto ev = nlohmann::json::parse(line);
      const std::string kind = ev.at("event");
      const std::string id = ev.at("id");
      if (kind == "create") {
        RgbImage img;
        std::optional<BinaryMask> gt;
        const auto& im = ev.at("image");
        if (im.contains("blob")) {
          img = synthdata::read_png((fs::path(opts_.state_dir) / "blobs" / (im.at("blob").get<std::string>() + ".png")).string());
        } else {
          img = synthdata::read_png((fs::path(opts_.corpus_root) / im.at("split").get<std::string>() / "images" /
                                     (im.at("corpus").get<std::string>() + ".png"))
                                        .string());
        }
        if (ev.contains("gt")) {
          const auto& g = ev.at("gt");
          if (g.contains("blob")) {
            gt = synthdata::read_mask_png(
                (fs::path(opts_.state_dir) / "blobs" / (g.at("blob").get<std::string>() + ".mask.png")).string());
          } else {
            gt = synthdata::read_mask_png((fs::path(opts_.corpus_root) / g.at("split").get<std::string>() / "masks" /
                                           (g.at("corpus").get<std::string>() + "_" +
                                            std::to_string(g.at("objidx").get<int>()) + ".png"))
                                              .string());
          }
        }
        bool hit = false;
        auto e = open_session(id, img, std::move(gt), &hit);
        e->created = e->updated = ev.value("t", e->created);
        ++restored;
      } else if (kind == "click") {
        click(id, {ev.at("x").get<int>(), ev.at("y").get<int>(), ev.at("positive").get<bool>()});
      } else if (kind == "undo") {
        undo(id);
      } else {
        throw std::runtime_error("unknown event " + kind);
      }
    }
  } catch (const std::exception& e) {
    restoring_ = false;
    throw std::runtime_error("session log " + log.string() + ":" + std::to_string(n) + ": " + e.what());
  }
  restoring_ = false;
  return restored;
}

// ----------------------------------------------------------------------------

std::string to_json(const CreateResponse& r) {
  ordered_json j;
  j["session_id"] = r.session_id;
  j["image_meta"] = {{"width", r.image.width},
                     {"height", r.image.height},
                     {"input_size", r.image.input_size},
                     {"scale", r.image.scale},
                     {"key", r.image.key}};
  j["cache_hit"] = r.cache_hit;
  j["has_gt"] = r.has_gt;
  return j.dump();
}

std::string to_json(const ClickResponse& r) {
  ordered_json j;
  j["mask"] = {{"height", r.mask.height}, {"width", r.mask.width}, {"rle", r.rle}};
  j["iou_if_gt"] = r.iou ? ordered_json(*r.iou) : ordered_json(nullptr);
  j["click_index"] = r.click_index;
  j["refined"] = r.refined;
  return j.dump();
}

std::string to_json(const Stats& s) {
  ordered_json j;
  j["sessions"] = s.sessions;
  j["cache_entries"] = s.cache_entries;
  j["cache_hits"] = s.cache_hits;
  j["cache_misses"] = s.cache_misses;
  j["encoder_passes"] = s.encoder_passes;
  j["clicks"] = s.clicks;
  return j.dump();
}

std::string to_json(const SessionInfo& s) {
  ordered_json j;
  j["session_id"] = s.session_id;
  j["image_key"] = s.image_key;
  j["clicks"] = ordered_json::array();
  for (const auto& c : s.clicks) j["clicks"].push_back({{"x", c.x}, {"y", c.y}, {"positive", c.positive}});
  j["refined"] = s.refined;
  j["created"] = s.created;
  j["updated"] = s.updated;
  return j.dump();
}

}  // namespace focrefine::serve
