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

#include "focrefine/evalbench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "focrefine/interact/session.hpp"
#include "focrefine/samlite/image.hpp"

namespace focrefine::evalbench {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct RunTiming {
  double total = 0.0;
  double decoder_only = 0.0;
  double encoder = 0.0;
  double refiner = 0.0;
  int invocations = 0;
};

RunTiming timed_run(const std::shared_ptr<const samlite::Model>& model, const Tensor& image,
                    const std::vector<Click>& clicks, int refine_step, bool use_refiner) {
  NoGradScope ng;
  RunTiming r;
  const auto t0 = Clock::now();
  const Tensor F = samlite::encode_image(*model, image);
  r.encoder = seconds_since(t0);
  interact::Session s(model, F, {refine_step, use_refiner});
  double steps = 0.0, tail = 0.0;
  int tail_n = 0;
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    const auto t1 = Clock::now();
    const auto res = s.step(clicks[i]);
    const double dt = seconds_since(t1);
    steps += dt;
    r.refiner += res.refine_seconds;
    if (static_cast<int>(i) + 1 > refine_step) {
      tail += dt;
      ++tail_n;
    }
  }
  r.total = (r.encoder + steps) / static_cast<double>(clicks.size());
  r.decoder_only = tail_n > 0 ? tail / tail_n : steps / static_cast<double>(clicks.size());
  r.invocations = s.refiner_invocations();
  return r;
}

SpcFigures summarize(const std::vector<std::vector<RunTiming>>& per_image) {
  SpcFigures f;
  for (const auto& runs : per_image) {
    std::vector<double> total, dec, enc, ref;
    for (const auto& r : runs) {
      total.push_back(r.total);
      dec.push_back(r.decoder_only);
      enc.push_back(r.encoder);
      ref.push_back(r.refiner);
      f.refiner_invocations = std::max(f.refiner_invocations, r.invocations);
    }
    f.spc_total += median(total);
    f.spc_decoder_only += median(dec);
    f.encoder_seconds += median(enc);
    f.refiner_seconds += median(ref);
  }
  const double n = static_cast<double>(per_image.size());
  f.spc_total /= n;
  f.spc_decoder_only /= n;
  f.encoder_seconds /= n;
  f.refiner_seconds /= n;
  return f;
}

}  // namespace

std::string fingerprint(const samlite::Model& model, const EvalOptions& opts) {
  const auto& c = model.config();
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s-%s-S%d-K%d-%s-%s-%08llx", c.preset.c_str(),
                refiner::to_string(c.refiner.variant).c_str(), c.refiner.window, opts.refine_step,
                opts.use_refiner ? "refined" : "baseline", interact::to_string(opts.mode).c_str(),
                static_cast<unsigned long long>(model.params().checksum() & 0xffffffffULL));
  return buf;
}

std::vector<MetricsRecord> evaluate(const std::shared_ptr<const samlite::Model>& model,
                                    const synthdata::Dataset& data, const EvalOptions& opts) {
  if (!model) throw std::invalid_argument("evaluate needs a model");
  const std::string fp = fingerprint(*model, opts);
  interact::SimulationOptions so;
  so.max_clicks = opts.max_clicks;
  so.mode = opts.mode;
  so.session = {opts.refine_step, opts.use_refiner};
  std::vector<MetricsRecord> out;
  std::size_t cached_image = static_cast<std::size_t>(-1);
  Tensor F;
  samlite::InputFrame frame;
  NoGradScope ng;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    if (s.image != cached_image) {
      const auto pre = samlite::preprocess(data.images.at(s.image), model->config().image_size);
      F = samlite::encode_image(*model, pre.image);
      frame = pre.frame;
      cached_image = s.image;
    }
    so.seed = opts.seed + i;
    auto rec = interact::run_simulation(model, F, frame, s.gt, so,
                                        data.image_ids.at(s.image) + "_" + std::to_string(s.objidx));
    rec.fingerprint = fp;
    out.push_back(std::move(rec));
  }
  return out;
}

SpcReport spc_benchmark(const std::shared_ptr<const samlite::Model>& model, const std::vector<RgbImage>& images,
                        const SpcOptions& opts) {
  if (!model) throw std::invalid_argument("spc_benchmark needs a model");
  if (opts.repetitions < 3) {
    throw std::invalid_argument("spc_benchmark needs at least 3 timed repetitions, got " +
                                std::to_string(opts.repetitions));
  }
  if (images.empty()) throw std::invalid_argument("spc_benchmark needs at least one image");
  if (opts.clicks_per_image < 1) throw std::invalid_argument("clicks_per_image must be >= 1");
  if (opts.refine_step < 1) throw std::invalid_argument("refine step must be >= 1");
  const int S = model->config().image_size;
  Rng rng(opts.seed);
  std::uniform_int_distribution<int> coord(0, S - 1);
  std::vector<std::vector<RunTiming>> refined, baseline;
  for (const auto& img : images) {
    const auto pre = samlite::preprocess(img, S);
    std::vector<Click> clicks;
    for (int i = 0; i < opts.clicks_per_image; ++i) clicks.push_back({coord(rng), coord(rng), i % 2 == 0});
    for (int w = 0; w < opts.warmup; ++w) {
      timed_run(model, pre.image, clicks, opts.refine_step, true);
      timed_run(model, pre.image, clicks, opts.refine_step, false);
    }
    refined.emplace_back();
    baseline.emplace_back();
    for (int r = 0; r < opts.repetitions; ++r) {
      // Alternate which pipeline runs first in each repetition.
      const bool refined_first = r % 2 == 0;
      if (refined_first) refined.back().push_back(timed_run(model, pre.image, clicks, opts.refine_step, true));
      baseline.back().push_back(timed_run(model, pre.image, clicks, opts.refine_step, false));
      if (!refined_first) refined.back().push_back(timed_run(model, pre.image, clicks, opts.refine_step, true));
    }
  }
  SpcReport rep;
  rep.refined = summarize(refined);
  rep.baseline = summarize(baseline);
  rep.repetitions = opts.repetitions;
  rep.clicks_per_image = opts.clicks_per_image;
  rep.images = images.size();
  return rep;
}

std::string spc_to_json(const SpcReport& r) {
  auto fig = [](const SpcFigures& f) {
    nlohmann::ordered_json j;
    j["spc_total"] = f.spc_total;
    j["spc_decoder_only"] = f.spc_decoder_only;
    j["encoder_seconds"] = f.encoder_seconds;
    j["refiner_seconds"] = f.refiner_seconds;
    j["refiner_invocations"] = f.refiner_invocations;
    return j;
  };
  nlohmann::ordered_json j;
  j["refined"] = fig(r.refined);
  j["baseline"] = fig(r.baseline);
  j["ratio"] = r.ratio();
  j["repetitions"] = r.repetitions;
  j["clicks_per_image"] = r.clicks_per_image;
  j["images"] = r.images;
  return j.dump(2);
}

// ----------------------------------------------------------------------------

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "table") return ReportFormat::kTable;
  if (s == "json-lines") return ReportFormat::kJsonLines;
  if (s == "histogram-tsv") return ReportFormat::kHistogramTsv;
  throw std::invalid_argument("unknown report format '" + s + "' (table, json-lines, histogram-tsv)");
}

std::string to_string(ReportFormat f) {
  switch (f) {
    case ReportFormat::kTable: return "table";
    case ReportFormat::kJsonLines: return "json-lines";
    case ReportFormat::kHistogramTsv: return "histogram-tsv";
  }
  throw std::invalid_argument("unknown report format");
}

namespace {

std::string fingerprints(const std::vector<MetricsRecord>& records) {
  std::vector<std::string> seen;
  for (const auto& r : records)
    if (std::find(seen.begin(), seen.end(), r.fingerprint) == seen.end()) seen.push_back(r.fingerprint);
  std::string out;
  for (const auto& s : seen) out += (out.empty() ? "" : ",") + (s.empty() ? std::string("-") : s);
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string render_table(const std::vector<MetricsRecord>& records, const ReportOptions& opts) {
  std::ostringstream os;
  os << "# fingerprint: " << fingerprints(records) << '\n';
  if (!opts.label.empty()) os << "# label: " << opts.label << '\n';
  os << "# samples: " << records.size() << '\n';
  os << "metric\tvalue\n";
  for (double q : opts.noc_thresholds) {
    os << "NoC@" << fmt("%.0f", q * 100.0) << '\t' << fmt("%.4f", noc_at(records, q, opts.cap)) << '\n';
  }
  for (int k : {1, 3, 5, 10, 20}) {
    if (k > opts.cap) break;
    os << "mIoU@" << k << "(%)\t" << fmt("%.2f", 100.0 * mean_iou_at(records, k)) << '\n';
  }
  const auto st = delta_iou_stability(records);
  os << "stability_events\t" << st.events.size() << '\n';
  os << "total_deltas\t" << st.total_deltas << '\n';
  return os.str();
}

std::string render_json_lines(const std::vector<MetricsRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["sample_id"] = r.sample_id;
    j["fingerprint"] = r.fingerprint;
    j["refine_step"] = r.refine_step;
    j["ious"] = r.ious;
    j["seconds"] = r.seconds;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::string render_histogram(const std::vector<MetricsRecord>& records) {
  const auto st = delta_iou_stability(records);
  std::ostringstream os;
  os << "# fingerprint: " << fingerprints(records) << '\n';
  os << "# delta IoU in percent; events " << st.events.size() << " of " << st.total_deltas << '\n';
  os << "bin_left\tbin_right\tcount\n";
  const auto& h = st.histogram;
  for (std::size_t i = 0; i < h.left.size(); ++i) {
    if (h.count[i] == 0) continue;
    os << fmt("%.2f", 100.0 * h.left[i]) << '\t' << fmt("%.2f", 100.0 * (h.left[i] + h.bin_width)) << '\t'
       << h.count[i] << '\n';
  }
  return os.str();
}

}  // namespace

std::string render_report(const std::vector<MetricsRecord>& records, ReportFormat format, const ReportOptions& opts) {
  if (records.empty()) throw std::invalid_argument("report needs at least one record");
  switch (format) {
    case ReportFormat::kTable: return render_table(records, opts);
    case ReportFormat::kJsonLines: return render_json_lines(records);
    case ReportFormat::kHistogramTsv: return render_histogram(records);
  }
  throw std::invalid_argument("unknown report format");
}

void report_emit(const std::vector<MetricsRecord>& records, ReportFormat format, const std::string& path,
                 const ReportOptions& opts) {
  const std::string text = render_report(records, format, opts);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing report " + path);
}

std::vector<MetricsRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read records " + path);
  std::vector<MetricsRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MetricsRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.fingerprint = j.value("fingerprint", std::string());
      r.refine_step = j.value("refine_step", 0);
      r.ious = j.at("ious").get<std::vector<double>>();
      r.seconds = j.value("seconds", std::vector<double>{});
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace focrefine::evalbench
