#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "attnguide/benchmark.hpp"
#include "attnguide/codec.hpp"
#include "attnguide/experiments.hpp"
#include "attnguide/guidance.hpp"
#include "attnguide/manifest.hpp"
#include "attnguide/planted.hpp"
#include "attnguide/render.hpp"
#include "attnguide/synth.hpp"
#include "attnguide/weights_io.hpp"

namespace attnguide {

namespace cli_detail {

using json = nlohmann::json;
using R = double;

struct Common {
  std::string weights, image, scheme = "complete", loss, out, json_out, manifest, upsample = "nearest";
  double alpha = 0.5;
};

struct Options {
  Common c;
  // guide
  std::string guide_image, placement = "right";
  double fraction = 0.5;
  // detail
  std::size_t c1 = 0, c2 = 1;
  std::string form = "ndiff";
  // transfer
  double lr = 0.0004;
  std::size_t steps = 10, snapshot_every = 0;
  // rewrite
  std::size_t target = 0, max_steps = 500;
  double step_size = 0.01, eps = -1;
  std::string stop = "flip";
  // perturb
  std::string dataset, configs = "complete=single:label;positive=single:label", csv;
  std::size_t K = 0;
  // plant-model / synth-image
  std::string config;
  std::uint64_t seed = 0;
  std::size_t image_size = 32, patch = 4;
  std::vector<std::string> objects;
  double background = 0.0, noise = 0.02;
};

inline json pred_json(const Prediction<R>& p) { return {{"class", p.cls}, {"probability", p.probability}, {"logit", p.logit}}; }

inline LoadedWeights<R> load(const std::string& path, std::ostream& err) {
  auto lw = load_weights<R>(path);
  for (const auto& w : lw.warnings) err << "warning: " << w << "\n";
  return lw;
}

inline Tensor<R> load_model_image(const std::string& path, const ModelConfig& cfg) {
  return preprocess<R>(decode_image(path), cfg, {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}, path).data;
}

inline RawImage model_to_raw(const Tensor<R>& x) { return from_unit(model_to_unit(x)); }

inline RenderSpec render_spec(const Common& c) {
  RenderSpec r;
  r.alpha = c.alpha;
  if (c.upsample == "nearest") r.upsample = Upsample::nearest;
  else if (c.upsample == "bilinear") r.upsample = Upsample::bilinear;
  else throw Error(ErrorCategory::usage, "unknown upsampling '" + c.upsample + "'");
  return r;
}

inline LossSpec loss_or(const std::string& text, LossSpec fallback) { return text.empty() ? fallback : LossSpec::parse(text); }

inline void emit_saliency(const Common& c, const SaliencyMap<R>& s, const Tensor<R>& image, json report, Manifest& m) {
  if (!c.out.empty()) {
    encode_image(c.out, render_heatmap(s, model_to_raw(image), render_spec(c)));
    m.outputs.push_back(c.out);
  }
  if (!c.json_out.empty()) {
    report["saliency"] = to_json(s);
    write_file(c.json_out, report.dump(2) + "\n");
    m.outputs.push_back(c.json_out);
  }
}

inline void need(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCategory::usage, what);
}

inline std::vector<BenchConfig> parse_bench_configs(const std::string& text) {
  std::vector<BenchConfig> out;
  std::error_code ec;
  if (std::filesystem::is_regular_file(text, ec)) {
    json j;
    try {
      j = json::parse(read_file(text));
      for (const auto& e : j) out.push_back({parse_scheme(e.at("scheme").get<std::string>()), e.at("loss").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::usage, std::string("bad configs file: ") + e.what());
    }
    return out;
  }
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ';');) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    need(eq != std::string::npos, "config entry '" + item + "' must look like scheme=loss");
    out.push_back({parse_scheme(item.substr(0, eq)), item.substr(eq + 1)});
    resolve_loss(out.back().loss, std::numeric_limits<std::uint32_t>::max());  // syntax check only
  }
  need(!out.empty(), "no benchmark configs given");
  return out;
}

inline SynthScene parse_scene(const Options& o, const ModelConfig& cfg) {
  SynthScene sc;
  sc.background = o.background;
  sc.noise = o.noise;
  for (const auto& spec : o.objects) {
    std::vector<double> v;
    std::stringstream ss(spec);
    for (std::string part; std::getline(ss, part, ':');) {
      try {
        v.push_back(std::stod(part));
      } catch (const std::exception&) {
        throw Error(ErrorCategory::usage, "bad --object '" + spec + "'");
      }
    }
    need(v.size() == 5, "--object wants r0:r1:c0:c1:level, got '" + spec + "'");
    sc.fill(patch_rect(cfg, std::size_t(v[0]), std::size_t(v[1]), std::size_t(v[2]), std::size_t(v[3])), v[4]);
  }
  return sc;
}

// ---- subcommand bodies ----

inline void cmd_interpret(const Options& o, Manifest& m, std::ostream& err) {
  need(!o.c.out.empty() || !o.c.json_out.empty(), "interpret needs --out and/or --json");
  auto lw = load(o.c.weights, err);
  const auto& w = lw.weights;
  const Tensor<R> x = load_model_image(o.c.image, w.config);
  const Tensor<R> logits = logits_of(w, x);
  const LossSpec spec = loss_or(o.c.loss, LossSpec::single(argmax(logits)));
  const auto s = interpret(w, x, spec, parse_scheme(o.c.scheme));
  emit_saliency(o.c, s, x, {{"logits", logits.storage()}, {"prediction", pred_json(top1(logits))}}, m);
}

inline void cmd_guide(const Options& o, Manifest& m, std::ostream& err) {
  need(!o.c.out.empty() || !o.c.json_out.empty(), "guide needs --out and/or --json");
  auto lw = load(o.c.weights, err);
  const auto& w = lw.weights;
  const auto src = normalize_channels(to_unit<R>(decode_image(o.c.image)), {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
  const auto gd = normalize_channels(to_unit<R>(decode_image(o.guide_image)), {0.5, 0.5, 0.5}, {0.5, 0.5, 0.5});
  const auto comp = composite_guide(src, gd, CompositeLayout{parse_placement(o.placement), o.fraction}, w.config);
  const Tensor<R> logits = logits_of(w, comp.image);
  const LossSpec spec = loss_or(o.c.loss, LossSpec::single(argmax(logits)));
  const auto s = interpret(w, comp.image, spec, parse_scheme(o.c.scheme));
  emit_saliency(o.c, s, comp.image,
                {{"logits", logits.storage()},
                 {"prediction", pred_json(top1(logits))},
                 {"source_mask", comp.source},
                 {"guide_mask", comp.guide},
                 {"source_mean", region_mean(s, comp.source)},
                 {"guide_mean", region_mean(s, comp.guide)}},
                m);
}

inline void cmd_detail(const Options& o, Manifest& m, std::ostream& err) {
  need(!o.c.out.empty() || !o.c.json_out.empty(), "detail needs --out and/or --json");
  LossSpec::Kind form;
  if (o.form == "ndiff") form = LossSpec::Kind::normalized_diff;
  else if (o.form == "diff") form = LossSpec::Kind::diff;
  else if (o.form == "ratio") form = LossSpec::Kind::ratio;
  else throw Error(ErrorCategory::usage, "unknown --form '" + o.form + "' (want ndiff, diff or ratio)");
  if (o.c1 == o.c2) throw PreconditionError("detail interpretation: classes must differ");
  auto lw = load(o.c.weights, err);
  const auto& w = lw.weights;
  const Tensor<R> x = load_model_image(o.c.image, w.config);
  const auto s = detail_interpret(w, x, o.c1, o.c2, form, parse_scheme(o.c.scheme));
  const Tensor<R> logits = logits_of(w, x);
  emit_saliency(o.c, s, x, {{"logits", logits.storage()}, {"c1", o.c1}, {"c2", o.c2}}, m);
}

inline void cmd_transfer(const Options& o, Manifest& m, std::ostream& err) {
  need(!o.c.json_out.empty(), "transfer needs --json");
  need(o.lr > 0, "--lr must be > 0");
  auto lw = load(o.c.weights, err);
  const auto& w = lw.weights;
  const Tensor<R> x = load_model_image(o.c.image, w.config);
  const LossSpec spec = loss_or(o.c.loss, LossSpec::single(argmax(logits_of(w, x))));
  const auto run = attention_transfer(w, x, spec, R(o.lr), o.steps, parse_scheme(o.c.scheme), o.snapshot_every);
  json recs = json::array();
  for (const auto& r : run.records) {
    json j = {{"step", r.step}, {"loss", r.loss}, {"logits", r.logits.storage()}, {"saliency", r.saliency.normalized}};
    if (r.attention) j["attention"] = {{"shape", r.attention->shape()}, {"data", r.attention->storage()}};
    recs.push_back(std::move(j));
  }
  write_file(o.c.json_out, json{{"lr", run.lr}, {"steps", run.steps}, {"loss", spec.str()}, {"scheme", o.c.scheme}, {"records", recs}}.dump(2) + "\n");
  m.outputs.push_back(o.c.json_out);
  if (!o.c.out.empty()) {
    encode_image(o.c.out, render_heatmap(run.records.back().saliency, model_to_raw(x), render_spec(o.c)));
    m.outputs.push_back(o.c.out);
  }
}

inline void cmd_rewrite(const Options& o, Manifest& m, std::ostream& err) {
  need(!o.c.json_out.empty(), "rewrite needs --json");
  auto lw = load(o.c.weights, err);
  const auto& w = lw.weights;
  const Tensor<R> x = load_model_image(o.c.image, w.config);
  const std::size_t orig = argmax(logits_of(w, x));
  if (o.target >= w.config.num_classes) throw PreconditionError("--target out of range");
  const LossSpec spec = o.c.loss.empty() ? LossSpec::difference(orig, o.target) : LossSpec::parse(o.c.loss);
  StopWhen stop;
  if (o.stop == "flip") stop = StopWhen::argmax_flip;
  else if (o.stop == "steps") stop = StopWhen::steps;
  else throw Error(ErrorCategory::usage, "unknown --stop '" + o.stop + "' (want flip or steps)");
  const std::optional<R> eps = o.eps >= 0 ? std::optional<R>(R(o.eps)) : std::nullopt;
  const auto run = rewrite_image(w, x, spec, R(o.step_size), o.max_steps, eps, stop);
  json steps = json::array();
  for (const auto& s : run.steps) steps.push_back({{"loss", s.loss}, {"logits", s.logits.storage()}, {"argmax", s.argmax}});
  json rep = {{"loss", spec.str()},         {"step_size", run.step_size}, {"max_steps", run.max_steps},
              {"eps", eps ? json(*eps) : json(nullptr)},
              {"original", pred_json(run.original)}, {"updated", pred_json(run.updated)},
              {"flipped", run.flipped},     {"steps_taken", run.steps.size()},
              {"linf", run.linf},           {"l2", run.l2},               {"steps", steps}};
  write_file(o.c.json_out, rep.dump(2) + "\n");
  m.outputs.push_back(o.c.json_out);
  if (!o.c.out.empty()) {
    encode_image(o.c.out, model_to_raw(run.image));
    m.outputs.push_back(o.c.out);
  }
}

inline void cmd_perturb(const Options& o, Manifest& m, std::ostream& err) {
  need(!o.csv.empty() || !o.c.json_out.empty(), "perturb needs --csv and/or --json");
  auto lw = load(o.c.weights, err);
  const auto configs = parse_bench_configs(o.configs);
  std::optional<BenchGuide> guide;
  if (!o.guide_image.empty()) guide = BenchGuide{decode_image(o.guide_image), {parse_placement(o.placement), o.fraction}};
  const auto rep = perturb_benchmark(lw.weights, o.dataset, configs, guide, o.K);
  for (const auto& [p, why] : rep.skipped) err << "skipped " << p << ": " << why << "\n";
  if (!o.csv.empty()) {
    write_file(o.csv, bench_csv(rep));
    m.outputs.push_back(o.csv);
  }
  if (!o.c.json_out.empty()) {
    json j = bench_json(rep);
    j["configs"] = json::array();
    for (const auto& c : configs) j["configs"].push_back({{"scheme", to_string(c.scheme)}, {"loss", c.loss}});
    j["seed"] = nullptr;
    j["engine_version"] = kVersion;
    write_file(o.c.json_out, j.dump(2) + "\n");
    m.outputs.push_back(o.c.json_out);
  }
}

inline void cmd_plant(const Options& o, Manifest& m, std::ostream&) {
  ModelConfig cfg;
  PlantParams params;
  json jc = json::object();
  if (!o.config.empty()) {
    try {
      jc = json::parse(read_file(o.config));
      cfg = jc.get<ModelConfig>();
      if (jc.contains("plant")) params = jc["plant"].get<PlantParams>();
    } catch (const json::exception& e) {
      throw Error(ErrorCategory::usage, std::string("bad --config: ") + e.what());
    }
  }
  cfg.validate();
  ClassRegions regions = column_bands(cfg);
  if (jc.contains("regions")) {
    regions.clear();
    for (const auto& [k, v] : jc["regions"].items()) regions[std::stoul(k)] = v.get<std::vector<std::size_t>>();
  }
  const auto w = plant_model<R>(cfg, regions, o.seed, params);
  json jr = json::object();
  for (const auto& [c, r] : regions) jr[std::to_string(c)] = r;
  save_weights(o.c.out, w, json{{"planted", {{"seed", o.seed}, {"params", params}, {"regions", jr}}}});
  m.outputs.push_back(o.c.out);
}

inline void cmd_synth(const Options& o, Manifest& m, std::ostream&) {
  ModelConfig cfg;
  cfg.image_size = o.image_size;
  cfg.patch_size = o.patch;
  cfg.validate();
  encode_image(o.c.out, from_unit(synth_unit<R>(cfg, parse_scene(o, cfg), o.seed)));
  m.outputs.push_back(o.c.out);
}

inline std::string default_manifest(const Options& o) {
  if (!o.c.manifest.empty()) return o.c.manifest;
  for (const auto* p : {&o.c.json_out, &o.c.out, &o.csv})
    if (!p->empty()) return *p + ".manifest.json";
  return {};
}

inline json collect_flags(const CLI::App* sub) {
  json flags = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_name() == "--help" || opt->get_name() == "--manifest") continue;
    const std::string name = opt->get_name().substr(opt->get_name().find_first_not_of('-'));
    if (opt->count() > 0) {
      const auto& res = opt->results();
      flags[name] = res.size() == 1 && opt->get_expected_max() <= 1 ? json(res.front()) : json(res);
    } else {
      flags[name] = opt->get_default_str();
    }
  }
  return flags;
}

}  // namespace cli_detail

/// Entry point shared by the executable and the tests. Exit codes: 0 ok,
/// 1 usage or precondition error, 2 data/format/io error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  Options o;
  CLI::App app{"Signed, gradient-corrected attention saliency for Vision Transformers", "attnguide"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  auto common = [&](CLI::App* s, bool image = true) {
    s->option_defaults()->always_capture_default();
    s->add_option("--weights", o.c.weights, "weight container")->required()->check(CLI::ExistingFile);
    if (image) s->add_option("--image", o.c.image, "input image (PNG or P6 PPM)")->required()->check(CLI::ExistingFile);
    s->add_option("--manifest", o.c.manifest, "run manifest path (default: <primary output>.manifest.json)");
  };
  auto saliency_out = [&](CLI::App* s) {
    s->add_option("--scheme", o.c.scheme, "positive | complete | absolute")->capture_default_str();
    s->add_option("--loss", o.c.loss, "single:C | diff:A,B | ratio:A,B | ndiff:A,B (default: single on the prediction)");
    s->add_option("--out", o.c.out, "heatmap image (.png or .ppm)");
    s->add_option("--json", o.c.json_out, "saliency JSON");
    s->add_option("--alpha", o.c.alpha, "base-image weight over the heatmap")->check(CLI::Range(0.0, 1.0));
    s->add_option("--upsample", o.c.upsample, "nearest | bilinear");
  };

  auto* interp = app.add_subcommand("interpret", "saliency map for one image");
  common(interp);
  saliency_out(interp);

  auto* guide = app.add_subcommand("guide", "saliency on the image composited with a guide image");
  common(guide);
  saliency_out(guide);
  guide->add_option("--guide-image", o.guide_image, "guide image")->required()->check(CLI::ExistingFile);
  guide->add_option("--placement", o.placement, "right | bottom");
  guide->add_option("--fraction", o.fraction, "share of the frame given to the guide");

  auto* detail = app.add_subcommand("detail", "contrastive saliency between two classes");
  common(detail);
  saliency_out(detail);
  detail->add_option("--c1", o.c1, "class shown in red")->required();
  detail->add_option("--c2", o.c2, "class shown in blue")->required();
  detail->add_option("--form", o.form, "ndiff | diff | ratio");

  auto* transfer = app.add_subcommand("transfer", "gradient descent on the attention maps");
  common(transfer);
  saliency_out(transfer);
  transfer->add_option("--lr", o.lr, "learning rate");
  transfer->add_option("--steps", o.steps, "update steps");
  transfer->add_option("--snapshot-every", o.snapshot_every, "store attention every N steps (0: never)");

  auto* rewrite = app.add_subcommand("rewrite", "pixel-level class rewriting");
  common(rewrite);
  rewrite->add_option("--target", o.target, "class to rewrite towards")->required();
  rewrite->add_option("--loss", o.c.loss, "override the default diff:<prediction>,<target>");
  rewrite->add_option("--step-size", o.step_size, "gradient step in model-space units");
  rewrite->add_option("--max-steps", o.max_steps, "step budget");
  rewrite->add_option("--eps", o.eps, "L-inf budget in model space (negative: none)");
  rewrite->add_option("--stop", o.stop, "flip | steps");
  rewrite->add_option("--out", o.c.out, "rewritten image (.png or .ppm)");
  rewrite->add_option("--json", o.c.json_out, "run report");

  auto* perturb = app.add_subcommand("perturb", "positive/negative perturbation AUC benchmark");
  common(perturb, false);
  perturb->add_option("--dataset", o.dataset, "directory with one sub-directory per class")->required();
  perturb->add_option("--configs", o.configs, "JSON file [{scheme, loss}] or 'scheme=loss;...'");
  perturb->add_option("--K", o.K, "masking steps (0: one per patch)");
  perturb->add_option("--csv", o.csv, "per-image rows");
  perturb->add_option("--json", o.c.json_out, "summary");
  perturb->add_option("--guide-image", o.guide_image, "composite every image with this guide first");
  perturb->add_option("--placement", o.placement, "right | bottom");
  perturb->add_option("--fraction", o.fraction, "share of the frame given to the guide");

  auto* plant = app.add_subcommand("plant-model", "write a planted-weight model");
  plant->option_defaults()->always_capture_default();
  plant->add_option("--config", o.config, "JSON model config (optional 'plant' and 'regions' keys)")->check(CLI::ExistingFile);
  plant->add_option("--seed", o.seed, "random seed");
  plant->add_option("--out", o.c.out, "weight container")->required();
  plant->add_option("--manifest", o.c.manifest, "run manifest path");

  auto* synth = app.add_subcommand("synth-image", "write a synthetic patch-object image");
  synth->option_defaults()->always_capture_default();
  synth->add_option("--image-size", o.image_size, "pixels per side");
  synth->add_option("--patch", o.patch, "patch size");
  synth->add_option("--object", o.objects, "r0:r1:c0:c1:level patch rectangle (repeatable)");
  synth->add_option("--background", o.background, "background level in [0,1]");
  synth->add_option("--noise", o.noise, "pixel noise std in [0,1] units");
  synth->add_option("--seed", o.seed, "random seed");
  synth->add_option("--out", o.c.out, "output image")->required();
  synth->add_option("--manifest", o.c.manifest, "run manifest path");

  std::string replay_path;
  auto* replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
  replay->add_option("manifest", replay_path, "manifest JSON")->required()->check(CLI::ExistingFile);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o1, o2;
    const int code = app.exit(e, o1, o2);
    out << o1.str();
    err << o2.str();
    if (code == 0) return 0;
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  if (replay->parsed()) {
    try {
      const auto j = nlohmann::json::parse(read_file(replay_path));
      return run_cli(j.at("argv").get<std::vector<std::string>>(), out, err);
    } catch (const nlohmann::json::exception& e) {
      err << "error: bad manifest: " << e.what() << "\n";
      return 2;
    }
  }

  CLI::App* sub = app.get_subcommands().front();
  Manifest m;
  m.command = sub->get_name();
  m.argv = args;
  m.flags = collect_flags(sub);
  if (sub == plant || sub == synth) m.seed = o.seed;
  const std::string manifest_path = default_manifest(o);

  static const std::map<std::string, std::function<void(const Options&, Manifest&, std::ostream&)>> table = {
      {"interpret", cmd_interpret}, {"guide", cmd_guide},     {"detail", cmd_detail},     {"transfer", cmd_transfer},
      {"rewrite", cmd_rewrite},     {"perturb", cmd_perturb}, {"plant-model", cmd_plant}, {"synth-image", cmd_synth}};
  int code = 0;
  try {
    table.at(m.command)(o, m, err);
  } catch (const Error& e) {
    const auto cat = e.category();
    code = cat == ErrorCategory::usage || cat == ErrorCategory::precondition ? 1 : 2;
    m.status = "error";
    m.error_category = to_string(cat);
    m.error_message = e.what();
    err << "error (" << to_string(cat) << "): " << e.what() << "\n";
    if (cat == ErrorCategory::usage) err << sub->help();
  } catch (const std::exception& e) {
    code = 2;
    m.status = "error";
    m.error_category = "data";
    m.error_message = e.what();
    err << "error: " << e.what() << "\n";
  }
  if (!manifest_path.empty()) {
    try {
      write_manifest(manifest_path, m);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      if (code == 0) code = 2;
    }
  }
  return code;
}

}  // namespace attnguide
