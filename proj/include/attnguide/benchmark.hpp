#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "attnguide/codec.hpp"
#include "attnguide/experiments.hpp"
#include "attnguide/guidance.hpp"
#include "attnguide/preprocess.hpp"

namespace attnguide {

/// One saliency setting. `loss` may use the word "label" in place of a class
/// index, e.g. "single:label" or "diff:label,0".
struct BenchConfig {
  Scheme scheme = Scheme::complete;
  std::string loss = "single:label";
};

inline LossSpec resolve_loss(const std::string& pattern, std::size_t label) {
  std::string s = pattern;
  for (std::size_t pos; (pos = s.find("label")) != std::string::npos;) s.replace(pos, 5, std::to_string(label));
  return LossSpec::parse(s);
}

struct LabelledImage {
  std::string path;
  std::size_t label = 0;
};

/// Directory-per-class listing. A class directory whose name starts with an
/// integer uses it as the label; otherwise labels follow sorted name order.
inline std::vector<LabelledImage> list_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("dataset directory not found: " + root);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<LabelledImage> out;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const std::string name = dirs[i].filename().string();
    std::size_t label = i;
    if (!name.empty() && std::isdigit(static_cast<unsigned char>(name[0]))) label = std::stoul(name);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dirs[i]))
      if (e.is_regular_file() && !e.path().string().ends_with(".manifest.json")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back({f.string(), label});
  }
  return out;
}

template <std::floating_point Real>
struct BenchRow {
  std::string path;
  std::size_t label = 0;
  std::string scheme, loss;
  Real pos_auc = 0, neg_auc = 0;
};

template <std::floating_point Real>
struct BenchReport {
  std::vector<BenchRow<Real>> rows;
  struct Mean { std::string scheme, loss; Real pos_auc = 0, neg_auc = 0; std::size_t n = 0; };
  std::vector<Mean> means;  // one per config, in config order
  std::vector<std::pair<std::string, std::string>> skipped;  // path, reason
  std::size_t K = 0;
};

struct BenchGuide {
  RawImage image;
  CompositeLayout layout;
};

template <std::floating_point Real>
BenchReport<Real> perturb_benchmark(const ModelWeights<Real>& w, const std::string& dataset_dir,
                                    const std::vector<BenchConfig>& configs, const std::optional<BenchGuide>& guide,
                                    std::size_t K = 0) {
  const ModelConfig& c = w.config;
  if (configs.empty()) throw PreconditionError("benchmark needs at least one config");
  const auto items = list_dataset(dataset_dir);
  if (items.empty()) throw DataError("dataset is empty: " + dataset_dir);
  BenchReport<Real> rep;
  rep.K = K ? K : c.num_patches();
  std::optional<Tensor<Real>> guide_t;
  if (guide) guide_t = normalize_channels(to_unit<Real>(guide->image), {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
  for (const auto& cfg : configs) rep.means.push_back({to_string(cfg.scheme), cfg.loss, 0, 0, 0});

  for (const auto& item : items) {
    Tensor<Real> x;
    try {
      x = preprocess<Real>(decode_image(item.path), c).data;
    } catch (const Error& e) {
      rep.skipped.emplace_back(item.path, e.what());
      continue;
    }
    if (item.label >= c.num_classes) {
      rep.skipped.emplace_back(item.path, "label " + std::to_string(item.label) + " out of range");
      continue;
    }
    if (guide_t) x = composite_guide(x, *guide_t, guide->layout, c).image;
    for (std::size_t k = 0; k < configs.size(); ++k) {
      const LossSpec spec = resolve_loss(configs[k].loss, item.label);
      const auto s = interpret(w, x, spec, configs[k].scheme);
      BenchRow<Real> row{item.path, item.label, to_string(configs[k].scheme), spec.str(), 0, 0};
      row.pos_auc = auc(perturbation_curve(w, x, s, Direction::positive, rep.K, item.label));
      row.neg_auc = auc(perturbation_curve(w, x, s, Direction::negative, rep.K, item.label));
      auto& m = rep.means[k];
      m.pos_auc += row.pos_auc;
      m.neg_auc += row.neg_auc;
      ++m.n;
      rep.rows.push_back(std::move(row));
    }
  }
  if (rep.means.front().n == 0) throw DataError("no readable images in " + dataset_dir);
  for (auto& m : rep.means) {
    m.pos_auc /= Real(m.n);
    m.neg_auc /= Real(m.n);
  }
  return rep;
}

namespace detail {
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char ch : s) o += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return o + "\"";
}
template <std::floating_point Real>
std::string fmt(Real v) {
  std::ostringstream os;
  os.precision(17);
  os << double(v);
  return os.str();
}
}  // namespace detail

template <std::floating_point Real>
std::string bench_csv(const BenchReport<Real>& r) {
  std::string out = "path,label,scheme,loss,pos_auc,neg_auc\n";
  for (const auto& row : r.rows)
    out += detail::csv_field(row.path) + "," + std::to_string(row.label) + "," + row.scheme + "," +
           detail::csv_field(row.loss) + "," + detail::fmt(row.pos_auc) + "," + detail::fmt(row.neg_auc) + "\n";
  return out;
}

template <std::floating_point Real>
nlohmann::json bench_json(const BenchReport<Real>& r) {
  nlohmann::json j;
  j["K"] = r.K;
  j["means"] = nlohmann::json::array();
  for (const auto& m : r.means)
    j["means"].push_back({{"scheme", m.scheme}, {"loss", m.loss}, {"pos_auc", m.pos_auc}, {"neg_auc", m.neg_auc}, {"images", m.n}});
  j["skipped"] = nlohmann::json::array();
  for (const auto& [p, why] : r.skipped) j["skipped"].push_back({{"path", p}, {"reason", why}});
  j["rows"] = r.rows.size();
  return j;
}

}  // namespace attnguide
