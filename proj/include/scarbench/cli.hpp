#pragma once

// Batch front end. run() is the whole program; tools/scarbench.cpp only
// forwards argv to it.
//
// Exit codes: 0 success, 1 internal error, 2 bad arguments or missing
// input file, 3 manifest validation failure, 4 every case failed.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "scarbench/augment.hpp"
#include "scarbench/augment_spec.hpp"
#include "scarbench/error.hpp"
#include "scarbench/fwhm.hpp"
#include "scarbench/io.hpp"
#include "scarbench/metrics.hpp"
#include "scarbench/morphology.hpp"
#include "scarbench/resample.hpp"
#include "scarbench/rng.hpp"
#include "scarbench/soft_loss.hpp"
#include "scarbench/stats.hpp"
#include "scarbench/types.hpp"

namespace scarbench::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kManifestInvalid = 3,
  kAllFailed = 4,
};

/// Raised for anything that should end the run with a specific exit code.
class Exit : public std::runtime_error {
 public:
  Exit(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

/// Six significant digits, trailing zeros dropped.
inline std::string fmt_real(double v) {
  if (v == 0.0) v = 0.0;  // no "-0"
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_real(*v) : ""; }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) text_ += ',';
      text_ += csv_field(fields[i]);
    }
    text_ += '\n';
  }
  const std::string& text() const noexcept { return text_; }

 private:
  std::string text_;
};

// ---------------------------------------------------------------------------
// Run bookkeeping
// ---------------------------------------------------------------------------

struct Skipped {
  std::string case_label;
  std::string reason;
};

struct RunReport {
  std::string subcommand;
  std::size_t n_cases_processed = 0;
  std::vector<Skipped> skipped;
  std::vector<std::string> outputs;
  double wall_time_s = 0.0;
  std::optional<std::uint64_t> seed;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["subcommand"] = subcommand;
    j["n_cases_processed"] = n_cases_processed;
    j["n_cases_skipped"] = skipped.size();
    auto arr = nlohmann::json::array();
    for (const auto& s : skipped) arr.push_back({{"case", s.case_label}, {"reason", s.reason}});
    j["skipped"] = std::move(arr);
    j["outputs"] = outputs;
    j["wall_time_s"] = wall_time_s;
    if (seed) j["seed"] = *seed;
    return j;
  }
};

inline std::string case_label(const CaseRecord& c) {
  return c.cohort_id + "/" + c.patient_id + "/" + std::to_string(c.slice_index);
}

inline std::string describe(const std::exception& e) { return e.what(); }

/// Runs fn(i) for i in [0, n) on up to `workers` threads. fn must not throw.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  workers = static_cast<unsigned>(std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

inline unsigned resolve_workers(std::optional<unsigned> flag) {
  if (flag && *flag > 0) return *flag;
  if (const char* env = std::getenv("SCARBENCH_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw Exit(kUsage, "SCARBENCH_WORKERS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline std::vector<CaseRecord> load_manifest_or_exit(const fs::path& path) {
  std::vector<CaseRecord> cases;
  try {
    cases = io::load_manifest(path);
  } catch (const Error& e) {
    if (e.code() == Errc::FileMissing) throw Exit(kUsage, "manifest not found: " + path.string());
    throw Exit(kManifestInvalid, "manifest validation failed: " + std::string(e.what()));
  }
  if (cases.empty()) throw Exit(kManifestInvalid, "manifest has no entries");
  return cases;
}

inline void ensure_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Exit(kUsage, "cannot create output directory " + dir.string());
}

inline loss::LossConfig parse_weights(const std::string& text, loss::LossConfig base) {
  std::vector<double> w;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      w.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Exit(kUsage, "--weights expects three numbers: w_dice,w_ce,w_kl");
    }
  }
  if (w.size() != 3) throw Exit(kUsage, "--weights expects three numbers: w_dice,w_ce,w_kl");
  base.w_dice = w[0];
  base.w_ce = w[1];
  base.w_kl = w[2];
  return base;
}

/// Loss settings from an optional JSON file ({"loss": {...}} or the bare
/// object) overridden by flags.
struct LossFlags {
  std::string config_path;
  std::string weights;
  std::optional<double> sigma;
  std::optional<double> eps_dice;
  std::optional<double> eps_log;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file with a \"loss\" block");
    app->add_option("--weights", weights, "w_dice,w_ce,w_kl (default 0.2,0.2,0.6)");
    app->add_option("--sigma", sigma, "soft-label Gaussian sigma in pixels (default 2)");
    app->add_option("--eps-dice", eps_dice, "Dice smoothing constant (default 1e-6)");
    app->add_option("--eps-log", eps_log, "log clamp floor (default 1e-12)");
  }

  loss::LossConfig resolve() const {
    loss::LossConfig c;
    if (!config_path.empty()) {
      nlohmann::json j;
      try {
        const auto bytes = io::read_file(config_path);
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
      } catch (const Error&) {
        throw Exit(kUsage, "config not found: " + config_path);
      } catch (const nlohmann::json::exception& e) {
        throw Exit(kUsage, "config is not valid JSON: " + std::string(e.what()));
      }
      const auto& block = j.contains("loss") ? j["loss"] : j;
      try {
        c.w_dice = block.value("w_dice", c.w_dice);
        c.w_ce = block.value("w_ce", c.w_ce);
        c.w_kl = block.value("w_kl", c.w_kl);
        c.sigma = block.value("sigma", c.sigma);
        c.eps_dice = block.value("eps_dice", c.eps_dice);
        c.eps_log = block.value("eps_log", c.eps_log);
      } catch (const nlohmann::json::exception& e) {
        throw Exit(kUsage, "bad loss config: " + std::string(e.what()));
      }
    }
    if (!weights.empty()) c = parse_weights(weights, c);
    if (sigma) c.sigma = *sigma;
    if (eps_dice) c.eps_dice = *eps_dice;
    if (eps_log) c.eps_log = *eps_log;
    try {
      c.validate();
    } catch (const Error& e) {
      throw Exit(kUsage, e.what());
    }
    return c;
  }
};

// Outcome of one manifest entry: CSV fields on success or a skip reason.
struct CaseOutcome {
  std::vector<std::string> fields;
  std::string status = "ok";
  bool skipped = false;
};

template <typename Fn>
std::vector<CaseOutcome> process_cases(const std::vector<CaseRecord>& cases, unsigned workers,
                                       Fn&& per_case) {
  std::vector<CaseOutcome> out(cases.size());
  parallel_for(cases.size(), workers, [&](std::size_t i) {
    try {
      out[i] = per_case(cases[i], i);
    } catch (const std::exception& e) {
      out[i].skipped = true;
      out[i].status = "skipped: " + describe(e);
    }
  });
  return out;
}

inline void log_cases(const std::vector<CaseRecord>& cases, const std::vector<CaseOutcome>& res,
                      std::ostream& err) {
  for (std::size_t i = 0; i < cases.size(); ++i) {
    err << "[" << (i + 1) << "/" << cases.size() << "] " << case_label(cases[i]) << ": "
        << res[i].status << "\n";
  }
}

inline void fill_report(RunReport& rep, const std::vector<CaseRecord>& cases,
                        const std::vector<CaseOutcome>& res) {
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (res[i].skipped) {
      rep.skipped.push_back({case_label(cases[i]), res[i].status});
    } else {
      ++rep.n_cases_processed;
    }
  }
}

inline std::vector<std::string> id_fields(const CaseRecord& c) {
  return {c.patient_id, c.cohort_id, std::to_string(c.slice_index)};
}

inline std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  return out.empty() ? "_" : out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline const std::vector<std::string> kEvaluateColumns = {
    "patient_id", "cohort_id", "slice_index", "dsc", "hd_mm", "area_similarity",
    "perimeter_similarity", "status"};
inline const std::vector<std::string> kAggregateColumns = {
    "group", "n_cases", "dsc_mean", "dsc_sd", "hd_mm_mean", "hd_mm_sd", "n_hd",
    "as_mean", "as_sd", "ps_mean", "ps_sd"};
inline const std::vector<std::string> kFeatureColumns = {
    "patient_id", "cohort_id", "slice_index", "scar_size_px", "scar_area_mm2", "n_components",
    "solidity", "circularity", "perimeter_mm", "status"};
inline const std::vector<std::string> kPatientFeatureColumns = {
    "patient_id", "cohort_id", "n_slices", "scar_size_px", "scar_area_mm2", "n_components",
    "perimeter_mm", "solidity", "circularity", "scar_mass_g"};
inline const std::vector<std::string> kLossColumns = {
    "patient_id", "cohort_id", "slice_index", "dice", "bce", "kl", "combined", "status"};

inline int finish(RunReport& rep, std::chrono::steady_clock::time_point t0, std::ostream& out) {
  rep.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << rep.to_json().dump(2) << "\n";
  if (rep.n_cases_processed == 0) return kAllFailed;
  return kOk;
}

inline int cmd_evaluate(const fs::path& manifest, const fs::path& out_dir, unsigned workers,
                        std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = load_manifest_or_exit(manifest);
  ensure_out_dir(out_dir);

  std::vector<metrics::MetricReport> reports(cases.size());
  auto res = process_cases(cases, workers, [&](const CaseRecord& c, std::size_t i) {
    if (!c.pred_path) throw Error(Errc::ParseError, "no \"pred\" entry in the manifest");
    const Mask gt = io::load_mask(c.mask_path);
    const Mask pred = io::load_mask(*c.pred_path);
    auto rep = metrics::evaluate(pred, gt, c.geometry);
    rep.case_record = &c;
    reports[i] = rep;
    CaseOutcome o;
    o.fields = id_fields(c);
    o.fields.push_back(fmt_real(rep.dsc));
    o.fields.push_back(fmt_opt(rep.hd_mm));
    o.fields.push_back(fmt_real(rep.area_similarity));
    o.fields.push_back(fmt_real(rep.perimeter_similarity));
    if (!rep.hd_mm) o.status = "hd_undefined: empty mask";
    return o;
  });
  log_cases(cases, res, err);

  CsvWriter per_case(kEvaluateColumns);
  std::vector<metrics::MetricReport> ok;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto fields = res[i].skipped ? id_fields(cases[i]) : res[i].fields;
    if (res[i].skipped) fields.insert(fields.end(), 4, "");
    fields.push_back(res[i].status);
    per_case.row(fields);
    if (!res[i].skipped) ok.push_back(reports[i]);
  }

  RunReport rep;
  rep.subcommand = "evaluate";
  fill_report(rep, cases, res);
  const auto metrics_path = out_dir / "metrics.csv";
  io::write_file_atomic(metrics_path, per_case.text());
  rep.outputs.push_back(metrics_path.string());

  if (!ok.empty()) {
    CsvWriter agg(kAggregateColumns);
    for (const auto& row : stats::aggregate(ok)) {
      agg.row({row.group, std::to_string(row.n_cases), fmt_real(row.dsc.mean),
               fmt_real(row.dsc.sd), row.hd_mm ? fmt_real(row.hd_mm->mean) : "",
               row.hd_mm ? fmt_real(row.hd_mm->sd) : "", std::to_string(row.n_hd),
               fmt_real(row.area_similarity.mean), fmt_real(row.area_similarity.sd),
               fmt_real(row.perimeter_similarity.mean), fmt_real(row.perimeter_similarity.sd)});
    }
    const auto agg_path = out_dir / "aggregate.csv";
    io::write_file_atomic(agg_path, agg.text());
    rep.outputs.push_back(agg_path.string());
  }
  return finish(rep, t0, out);
}

inline int cmd_features(const fs::path& manifest, const fs::path& out_dir, unsigned workers,
                        const std::string& source, int connectivity, double density,
                        std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!(density > 0.0)) throw Exit(kUsage, "--density must be positive");
  const auto conn = [&] {
    try {
      return morphology::connectivity_from_int(connectivity);
    } catch (const Error& e) {
      throw Exit(kUsage, e.what());
    }
  }();
  const auto cases = load_manifest_or_exit(manifest);
  ensure_out_dir(out_dir);

  std::vector<std::optional<Mask>> masks(cases.size());
  std::vector<morphology::FeatureVector> feats(cases.size());
  auto res = process_cases(cases, workers, [&](const CaseRecord& c, std::size_t i) {
    fs::path path = c.mask_path;
    if (source == "pred") {
      if (!c.pred_path) throw Error(Errc::ParseError, "no \"pred\" entry in the manifest");
      path = *c.pred_path;
    }
    Mask m = io::load_mask(path);
    const auto f = morphology::feature_vector(m, c.geometry, conn);
    feats[i] = f;
    masks[i] = std::move(m);
    CaseOutcome o;
    o.fields = id_fields(c);
    o.fields.insert(o.fields.end(),
                    {std::to_string(f.scar_size_px), fmt_real(f.scar_area_mm2),
                     std::to_string(f.n_components), fmt_opt(f.solidity), fmt_opt(f.circularity),
                     fmt_real(f.perimeter_mm)});
    return o;
  });
  log_cases(cases, res, err);

  CsvWriter per_slice(kFeatureColumns);
  struct PatientAcc {
    std::size_t n_slices = 0, size_px = 0;
    long long components = 0;
    double area = 0.0, perimeter = 0.0, sol_w = 0.0, circ_w = 0.0, weight = 0.0;
    std::vector<morphology::SliceMask> slices;
  };
  std::map<std::pair<std::string, std::string>, PatientAcc> patients;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto fields = res[i].skipped ? id_fields(cases[i]) : res[i].fields;
    if (res[i].skipped) fields.insert(fields.end(), 6, "");
    fields.push_back(res[i].status);
    per_slice.row(fields);
    if (res[i].skipped) continue;
    auto& acc = patients[{cases[i].cohort_id, cases[i].patient_id}];
    const auto& f = feats[i];
    ++acc.n_slices;
    acc.size_px += f.scar_size_px;
    acc.area += f.scar_area_mm2;
    acc.components += f.n_components;
    acc.perimeter += f.perimeter_mm;
    if (f.solidity) {
      acc.sol_w += *f.solidity * f.scar_area_mm2;
      acc.circ_w += *f.circularity * f.scar_area_mm2;
      acc.weight += f.scar_area_mm2;
    }
    acc.slices.push_back({&*masks[i], cases[i].geometry});
  }

  CsvWriter per_patient(kPatientFeatureColumns);
  for (const auto& [key, acc] : patients) {
    const double mass = morphology::scar_mass(acc.slices, density);
    const bool shaped = acc.weight > 0.0;
    per_patient.row({key.second, key.first, std::to_string(acc.n_slices),
                     std::to_string(acc.size_px), fmt_real(acc.area),
                     std::to_string(acc.components), fmt_real(acc.perimeter),
                     shaped ? fmt_real(acc.sol_w / acc.weight) : "",
                     shaped ? fmt_real(acc.circ_w / acc.weight) : "", fmt_real(mass)});
  }

  RunReport rep;
  rep.subcommand = "features";
  fill_report(rep, cases, res);
  const auto slice_path = out_dir / "features.csv";
  const auto patient_path = out_dir / "features_patient.csv";
  io::write_file_atomic(slice_path, per_slice.text());
  io::write_file_atomic(patient_path, per_patient.text());
  rep.outputs = {slice_path.string(), patient_path.string()};
  return finish(rep, t0, out);
}

inline int cmd_loss(const fs::path& manifest, const fs::path& out_dir, unsigned workers,
                    const loss::LossConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = load_manifest_or_exit(manifest);
  ensure_out_dir(out_dir);
  auto res = process_cases(cases, workers, [&](const CaseRecord& c, std::size_t) {
    if (!c.scores_path) throw Error(Errc::ParseError, "no \"scores\" entry in the manifest");
    const Mask t = io::load_mask(c.mask_path);
    const ScoreMap s = io::load_scores(*c.scores_path, t.width(), t.height());
    const auto terms = loss::loss_terms(s, t, cfg);
    CaseOutcome o;
    o.fields = id_fields(c);
    o.fields.insert(o.fields.end(), {fmt_real(terms.dice), fmt_real(terms.bce),
                                     fmt_real(terms.kl), fmt_real(terms.combined)});
    return o;
  });
  log_cases(cases, res, err);
  CsvWriter csv(kLossColumns);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto fields = res[i].skipped ? id_fields(cases[i]) : res[i].fields;
    if (res[i].skipped) fields.insert(fields.end(), 4, "");
    fields.push_back(res[i].status);
    csv.row(fields);
  }
  RunReport rep;
  rep.subcommand = "loss";
  fill_report(rep, cases, res);
  const auto path = out_dir / "loss.csv";
  io::write_file_atomic(path, csv.text());
  rep.outputs.push_back(path.string());
  return finish(rep, t0, out);
}

inline int cmd_augment(const fs::path& manifest, const fs::path& out_dir, unsigned workers,
                       const fs::path& spec_path, std::optional<std::uint64_t> seed_override,
                       int size, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  augment::AugmentSpec spec;
  try {
    const auto bytes = io::read_file(spec_path);
    spec = augment::spec_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const Error& e) {
    if (e.code() == Errc::FileMissing) throw Exit(kUsage, "spec not found: " + spec_path.string());
    throw Exit(kUsage, "invalid augment spec: " + std::string(e.what()));
  } catch (const nlohmann::json::exception& e) {
    throw Exit(kUsage, "augment spec is not valid JSON: " + std::string(e.what()));
  }
  if (seed_override) spec.seed = *seed_override;
  if (size < 0) throw Exit(kUsage, "--size must be >= 0");
  const auto cases = load_manifest_or_exit(manifest);
  ensure_out_dir(out_dir);

  std::vector<nlohmann::json> entries(cases.size());
  auto res = process_cases(cases, workers, [&](const CaseRecord& c, std::size_t) {
    Image img = io::load_image(c.image_path);
    Mask m = io::load_mask(c.mask_path);
    PixelGeometry g = c.geometry;
    if (size > 0) {
      std::tie(img, g) = resample(img, c.geometry, size, size);
      m = resample(m, c.geometry, size, size).first;
    }
    // Each case gets its own seed derived from the augmentation seed and its key.
    augment::AugmentSpec case_spec = spec;
    case_spec.seed = splitmix64(spec.seed ^ stats::detail::fnv1a(case_label(c)));
    const auto r = augment::apply(case_spec, img, m);

    const std::string stem =
        sanitize(c.cohort_id) + "_" + sanitize(c.patient_id) + "_s" + std::to_string(c.slice_index);
    const auto img_path = out_dir / (stem + "_image.pgm");
    const auto mask_path = out_dir / (stem + "_mask.pgm");
    io::save_image(r.image, img_path);
    io::save_mask(r.mask, mask_path);

    CaseOutcome o;
    o.fields = id_fields(c);
    o.fields.insert(o.fields.end(), {img_path.filename().string(), mask_path.filename().string()});
    for (int v : r.bbox ? std::vector<int>{r.bbox->x_min, r.bbox->y_min, r.bbox->x_max,
                                           r.bbox->y_max}
                        : std::vector<int>{}) {
      o.fields.push_back(std::to_string(v));
    }
    if (!r.bbox) o.fields.insert(o.fields.end(), 4, "");
    nlohmann::json e = {{"patient_id", c.patient_id},
                        {"cohort_id", c.cohort_id},
                        {"slice_index", c.slice_index},
                        {"image", img_path.filename().string()},
                        {"mask", mask_path.filename().string()},
                        {"spacing_x_mm", g.spacing_x},
                        {"spacing_y_mm", g.spacing_y},
                        {"slice_thickness_mm", g.slice_thickness}};
    entries[&c - cases.data()] = std::move(e);
    return o;
  });
  log_cases(cases, res, err);

  CsvWriter csv({"patient_id", "cohort_id", "slice_index", "image_out", "mask_out", "bbox_x_min",
                 "bbox_y_min", "bbox_x_max", "bbox_y_max", "status"});
  auto out_manifest = nlohmann::json::array();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto fields = res[i].skipped ? id_fields(cases[i]) : res[i].fields;
    if (res[i].skipped) fields.insert(fields.end(), 6, "");
    fields.push_back(res[i].status);
    csv.row(fields);
    if (!res[i].skipped) out_manifest.push_back(entries[i]);
  }
  RunReport rep;
  rep.subcommand = "augment";
  rep.seed = spec.seed;
  fill_report(rep, cases, res);
  const auto csv_path = out_dir / "augment.csv";
  const auto manifest_path = out_dir / "manifest.json";
  io::write_file_atomic(csv_path, csv.text());
  io::write_file_atomic(manifest_path, out_manifest.dump(2) + "\n");
  rep.outputs = {csv_path.string(), manifest_path.string()};
  return finish(rep, t0, out);
}

inline int cmd_split(const fs::path& manifest, const fs::path& out_dir, unsigned workers,
                     std::uint64_t seed, int bins, const std::string& ratios_text,
                     std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  stats::SplitRatios ratios;
  if (!ratios_text.empty()) {
    double a = 0, b = 0, c = 0;
    char tail = 0;
    if (std::sscanf(ratios_text.c_str(), "%lf,%lf,%lf%c", &a, &b, &c, &tail) != 3) {
      throw Exit(kUsage, "--ratios expects train,valid,test");
    }
    ratios = {a, b, c};
  }
  if (bins < 1) throw Exit(kUsage, "--bins must be >= 1");
  const auto cases = load_manifest_or_exit(manifest);

  std::map<std::string, std::string> cohort_of;
  for (const auto& c : cases) {
    auto [it, inserted] = cohort_of.emplace(c.patient_id, c.cohort_id);
    if (!inserted && it->second != c.cohort_id) {
      throw Exit(kManifestInvalid, "patient " + c.patient_id +
                                       " appears in several cohorts; split output is keyed by "
                                       "patient_id");
    }
  }
  ensure_out_dir(out_dir);

  std::vector<std::size_t> counts(cases.size(), 0);
  auto res = process_cases(cases, workers, [&](const CaseRecord& c, std::size_t i) {
    counts[i] = io::load_mask(c.mask_path).count();
    return CaseOutcome{};
  });
  log_cases(cases, res, err);

  std::map<std::pair<std::string, std::string>, std::uint64_t> burden;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    // A patient is split even when some slices failed to load; their burden
    // counts only the readable slices.
    burden[{cases[i].cohort_id, cases[i].patient_id}] += counts[i];
  }
  std::vector<stats::PatientBurden> burdens;
  for (const auto& [key, px] : burden) burdens.push_back({key.second, key.first, px});

  stats::SplitAssignment assignment;
  try {
    assignment = stats::stratified_split(burdens, ratios, bins, seed);
  } catch (const Error& e) {
    throw Exit(kUsage, e.what());
  }
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, subset] : assignment) j[key.second] = std::string(to_string(subset));

  RunReport rep;
  rep.subcommand = "split";
  rep.seed = seed;
  fill_report(rep, cases, res);
  const auto path = out_dir / "split.json";
  io::write_file_atomic(path, j.dump(2) + "\n");
  rep.outputs.push_back(path.string());
  return finish(rep, t0, out);
}

inline int cmd_gradcheck(std::uint64_t seed, int trials, int size, double step, double tolerance,
                         const loss::LossConfig& base, bool sweep, std::ostream& out) {
  if (trials < 1 || size < 1) throw Exit(kUsage, "--trials and --size must be positive");
  std::vector<loss::LossConfig> configs;
  if (!sweep) {
    configs.push_back(base);
  } else {
    for (auto [wd, wc, wk] : {std::tuple{1.0, 0.0, 0.0}, std::tuple{0.0, 1.0, 0.0},
                              std::tuple{0.0, 0.0, 1.0}, std::tuple{0.2, 0.2, 0.6}}) {
      loss::LossConfig c = base;
      c.w_dice = wd;
      c.w_ce = wc;
      c.w_kl = wk;
      configs.push_back(c);
    }
  }
  double overall = 0.0;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const auto& cfg = configs[k];
    CounterRng rng(seed, k);
    const auto r = loss::gradient_check(cfg, rng, trials, size, step);
    overall = std::max(overall, r.relative_error);
    out << "weights (" << fmt_real(cfg.w_dice) << "," << fmt_real(cfg.w_ce) << ","
        << fmt_real(cfg.w_kl) << ") sigma " << fmt_real(cfg.sigma) << ": max relative error "
        << fmt_real(r.relative_error) << " (worst single pixel "
        << fmt_real(r.elementwise_relative_error) << ")\n";
  }
  const bool pass = overall <= tolerance;
  out << "seed " << seed << ", " << trials << " trials, step " << fmt_real(step)
      << ": max relative error " << fmt_real(overall) << (pass ? " <= " : " > ")
      << fmt_real(tolerance) << (pass ? " PASS" : " FAIL") << "\n";
  return pass ? kOk : kInternal;
}

inline int cmd_fwhm(const fs::path& image, const fs::path& myo, const fs::path& roi,
                    const fs::path& out_path, double fraction, std::ostream& out) {
  fwhm::LabelingInputs in{Image(1, 1), Mask(1, 1), Mask(1, 1)};
  try {
    in = {io::load_image(image), io::load_mask(myo), io::load_mask(roi)};
  } catch (const Error& e) {
    if (e.code() == Errc::FileMissing) throw Exit(kUsage, e.what());
    throw Exit(kAllFailed, e.what());
  }
  Mask scar(1, 1);
  try {
    scar = fwhm::fwhm_segment(in, fraction);
  } catch (const Error& e) {
    if (e.code() == Errc::InvalidParameter) throw Exit(kUsage, e.what());
    throw Exit(kAllFailed, e.what());
  }
  io::save_mask(scar, out_path);
  out << nlohmann::json{{"subcommand", "fwhm"},
                        {"output", out_path.string()},
                        {"scar_pixels", scar.count()},
                        {"threshold_fraction", fraction}}
             .dump(2)
      << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Segmentation scoring, soft-label loss and cohort statistics for scar masks",
               "scarbench"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all");

  std::string manifest, out_dir;
  std::optional<unsigned> workers;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--manifest", manifest, "JSON case manifest")->required();
    sub->add_option("--out-dir", out_dir, "output directory")->required();
    sub->add_option("--workers", workers, "worker threads (env SCARBENCH_WORKERS)");
  };

  auto* evaluate = app.add_subcommand("evaluate", "DSC, HD, AS and PS per case plus cohort aggregates");
  add_common(evaluate);

  auto* features = app.add_subcommand("features", "morphological lesion features and scar mass");
  add_common(features);
  std::string source = "pred";
  int connectivity = 8;
  double density = morphology::kMyocardialDensity;
  features->add_option("--source", source, "mask to characterize: pred or mask")
      ->check(CLI::IsMember({"pred", "mask"}));
  features->add_option("--connectivity", connectivity, "lesion connectivity, 4 or 8");
  features->add_option("--density", density, "myocardial density in g/mL");

  auto* augment_cmd = app.add_subcommand("augment", "apply a seeded augmentation spec");
  add_common(augment_cmd);
  std::string spec_path;
  std::optional<std::uint64_t> aug_seed;
  int size = 0;
  augment_cmd->add_option("--spec", spec_path, "augmentation spec (JSON)")->required();
  augment_cmd->add_option("--seed", aug_seed, "override the seed in the augmentation file");
  augment_cmd->add_option("--size", size, "resample to size x size first (0 = keep)");

  auto* split = app.add_subcommand("split", "patient-level stratified train/valid/test split");
  add_common(split);
  std::uint64_t seed = 0;
  int bins = 4;
  std::string ratios;
  split->add_option("--seed", seed, "shuffle seed");
  split->add_option("--bins", bins, "quantile bins per cohort");
  split->add_option("--ratios", ratios, "train,valid,test (default 0.7,0.15,0.15)");

  auto* loss_cmd = app.add_subcommand("loss", "combined soft-label loss per case");
  add_common(loss_cmd);
  LossFlags loss_flags;
  loss_flags.attach(loss_cmd);

  auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference loss gradient");
  std::uint64_t gc_seed = 0;
  int trials = 20, gc_size = 8;
  double step = 1e-3, tolerance = 1e-4;
  LossFlags gc_flags;
  gradcheck->add_option("--seed", gc_seed, "instance seed");
  gradcheck->add_option("--trials", trials, "random instances per weight configuration");
  gradcheck->add_option("--size", gc_size, "instance side length");
  gradcheck->add_option("--step", step, "central-difference step");
  gradcheck->add_option("--tolerance", tolerance, "maximum accepted relative error");
  gc_flags.attach(gradcheck);

  auto* fwhm_cmd = app.add_subcommand("fwhm", "half-maximum scar labeling of one slice");
  std::string image, myo, roi, fwhm_out;
  double fraction = 0.5;
  fwhm_cmd->add_option("--image", image, "LGE slice")->required();
  fwhm_cmd->add_option("--myocardium", myo, "myocardium mask")->required();
  fwhm_cmd->add_option("--roi", roi, "scar-core ROI mask")->required();
  fwhm_cmd->add_option("--out", fwhm_out, "output scar mask (PGM)")->required();
  fwhm_cmd->add_option("--threshold-fraction", fraction, "fraction of the ROI maximum");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  if (!argv_rev.empty()) argv_rev.pop_back();  // program name
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "scarbench: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (evaluate->parsed()) {
      return cmd_evaluate(manifest, out_dir, resolve_workers(workers), out, err);
    }
    if (features->parsed()) {
      return cmd_features(manifest, out_dir, resolve_workers(workers), source, connectivity,
                          density, out, err);
    }
    if (augment_cmd->parsed()) {
      return cmd_augment(manifest, out_dir, resolve_workers(workers), spec_path, aug_seed, size,
                         out, err);
    }
    if (split->parsed()) {
      return cmd_split(manifest, out_dir, resolve_workers(workers), seed, bins, ratios, out, err);
    }
    if (loss_cmd->parsed()) {
      return cmd_loss(manifest, out_dir, resolve_workers(workers), loss_flags.resolve(), out, err);
    }
    if (gradcheck->parsed()) {
      // Without explicit weights, sweep the pure and the default weightings
      // at the requested sigma and epsilons.
      const bool sweep = gc_flags.weights.empty() && gc_flags.config_path.empty();
      return cmd_gradcheck(gc_seed, trials, gc_size, step, tolerance, gc_flags.resolve(), sweep,
                           out);
    }
    if (fwhm_cmd->parsed()) return cmd_fwhm(image, myo, roi, fwhm_out, fraction, out);
  } catch (const Exit& e) {
    err << "scarbench: " << e.what() << "\n";
    return e.code();
  } catch (const std::exception& e) {
    err << "scarbench: internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace scarbench::cli
