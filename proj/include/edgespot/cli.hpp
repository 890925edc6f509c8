#pragma once

// Subcommands behind the edgespot executable. Each cmd_* takes a plain options
// struct so tests can drive it in-process; run_cli adds flag parsing and maps
// exceptions to exit codes (2 usage, 3 data, 4 numeric).

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "edgespot/bench.hpp"
#include "edgespot/evaluate.hpp"
#include "edgespot/plot.hpp"
#include "edgespot/train.hpp"

namespace edgespot {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4 };

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// $EDGESPOT_OUT, or ./edgespot_out when unset.
inline std::filesystem::path output_root() {
  const char* env = std::getenv("EDGESPOT_OUT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("edgespot_out");
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& s) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << s;
  if (!os) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::filesystem::path out_dir;
  std::size_t count = 10;
  std::uint64_t seed = 0;
  std::string preset = "default";  // default | small
  std::filesystem::path config;    // optional JSON overriding the preset
};

inline SceneConfig resolve_scene_config(const GenerateOptions& o) {
  SceneConfig cfg;
  if (o.preset == "small")
    cfg = small_scene_config();
  else if (o.preset != "default")
    throw UsageError("unknown preset '" + o.preset + "' (default | small)");
  if (!o.config.empty()) {
    auto j = to_json(cfg);
    j.merge_patch(read_json_file(o.config));
    cfg = scene_config_from_json(j);
  }
  cfg.validate(Alphabet::standard().size());
  return cfg;
}

/// Writes the dataset and returns summary statistics.
inline nlohmann::json cmd_generate(const GenerateOptions& o) {
  if (o.count < 1) throw UsageError("--count must be >= 1");
  const SceneConfig cfg = resolve_scene_config(o);
  const auto out = o.out_dir.empty() ? output_root() / "dataset" : o.out_dir;
  ensure_dir(out);
  const auto scenes = generate_scenes(cfg, o.count, o.seed);
  nlohmann::json meta = {{"generator", to_json(cfg)}, {"count", o.count}, {"seed", o.seed}};
  write_dataset(out, scenes, meta);

  std::size_t total = 0, lo = static_cast<std::size_t>(-1), hi = 0;
  double ratio_sum = 0;
  for (const auto& s : scenes) {
    const auto& in = s.annotation.instances;
    total += in.size();
    lo = std::min(lo, in.size());
    hi = std::max(hi, in.size());
    double hmin = 1e300, hmax = 0;
    for (const auto& t : in) hmin = std::min(hmin, t.glyph_height), hmax = std::max(hmax, t.glyph_height);
    ratio_sum += in.empty() ? 1.0 : hmax / hmin;
  }
  const double n = static_cast<double>(scenes.size());
  return {{"out", out.string()},
          {"count", scenes.size()},
          {"mean_instances", static_cast<double>(total) / n},
          {"min_instances", lo},
          {"max_instances", hi},
          {"mean_scale_ratio", ratio_sum / n}};
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::filesystem::path resume;  // checkpoint to continue from
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  std::size_t batch_size = 2;
  double lr = 1e-3;
  double aux_weight = 1.0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::filesystem::path model_config;
  std::string encoder = "efficient";
  std::string proposals = "curve";
  std::size_t channels = 32;
  std::size_t top_k = 100;
  std::size_t points = 25;
};

inline SpotterConfig resolve_spotter_config(const TrainOptions& o, std::size_t image_size) {
  SpotterConfig c;
  c.image_size = image_size;
  c.channels = o.channels;
  c.num_proposals = o.top_k;
  c.num_points = o.points;
  if (o.encoder == "efficient")
    c.encoder = MixerKind::efficient;
  else if (o.encoder == "softmax")
    c.encoder = MixerKind::softmax;
  else
    throw UsageError("unknown encoder '" + o.encoder + "' (efficient | softmax)");
  if (o.proposals == "curve")
    c.proposals = ProposalKind::curve;
  else if (o.proposals == "box")
    c.proposals = ProposalKind::box;
  else
    throw UsageError("unknown proposals '" + o.proposals + "' (curve | box)");
  if (!o.model_config.empty()) {
    auto j = to_json(c);
    j.merge_patch(read_json_file(o.model_config));
    c = spotter_config_from_json(j);
  }
  c.validate();
  return c;
}

/// Keeps log lines whose step is <= last_step (used when resuming).
inline std::string truncate_log(const std::filesystem::path& path, std::size_t last_step) {
  std::ifstream is(path);
  std::string line, kept;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t step = 0;
    try {
      step = nlohmann::json::parse(line).at("step").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (step <= last_step) kept += line + "\n";
  }
  return kept;
}

/// Trains and writes model.ckpt, train_log.jsonl (one line per step) and
/// timing.jsonl (wall-clock per step, kept apart so the loss log stays
/// reproducible). A non-finite loss writes nonfinite.json and rethrows.
inline nlohmann::json cmd_train(const TrainOptions& o) {
  if (o.steps < 1) throw UsageError("--steps must be >= 1");
  if (o.batch_size < 1) throw UsageError("--batch must be >= 1");
  if (!(o.lr >= 0)) throw UsageError("--lr must be >= 0");
  if (o.data_dir.empty()) throw UsageError("--data is required");
  if (!std::filesystem::is_directory(o.data_dir)) throw DataError("dataset directory " + o.data_dir.string() + " not found");
  if (!o.resume.empty() && !std::filesystem::exists(o.resume))
    throw DataError("checkpoint " + o.resume.string() + " not found");
  const auto out = o.out_dir.empty() ? output_root() / "train" : o.out_dir;
  ensure_dir(out);

  auto ds = load_dataset(o.data_dir);
  if (ds.scenes.empty()) throw DataError(o.data_dir.string() + ": dataset has no scenes");

  TrainConfig tc;
  tc.steps = o.steps;
  tc.batch_size = o.batch_size;
  tc.seed = o.seed;
  tc.optim.lr = o.lr;
  tc.weights.aux = o.aux_weight;

  std::optional<Checkpoint> ck;
  SpotterConfig mc;
  if (!o.resume.empty()) {
    ck = load_checkpoint(o.resume);
    try {
      mc = spotter_config_from_json(ck->meta.at("model"));
    } catch (const std::exception& e) {
      throw DataError(o.resume.string() + ": bad model configuration: " + e.what());
    }
  } else {
    mc = resolve_spotter_config(o, ds.scenes.front().image.width);
  }

  Trainer trainer(mc, tc, ds.scenes);
  std::string prior_log, prior_timing;
  if (ck) {
    trainer.resume(*ck);
    if (trainer.step() > o.steps)
      throw UsageError("checkpoint is at step " + std::to_string(trainer.step()) + ", beyond --steps " +
                       std::to_string(o.steps));
    prior_log = truncate_log(out / "train_log.jsonl", trainer.step());
    prior_timing = truncate_log(out / "timing.jsonl", trainer.step());
  }
  std::ofstream log(out / "train_log.jsonl", std::ios::trunc | std::ios::binary);
  std::ofstream timing(out / "timing.jsonl", std::ios::trunc | std::ios::binary);
  if (!log || !timing) throw DataError("cannot write logs in " + out.string());
  log << prior_log;
  timing << prior_timing;

  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  StepReport last;
  while (trainer.step() < o.steps) {
    const auto t0 = clock::now();
    try {
      last = trainer.run_step();
    } catch (const NumericError& e) {
      const std::size_t at = trainer.step();
      nlohmann::json dump = {{"step", at + 1},
                             {"error", e.what()},
                             {"batch", batch_indices(ds.scenes.size(), tc.batch_size, tc.seed, at)},
                             {"previous", last.to_json()}};
      write_text(out / "nonfinite.json", dump.dump(2) + "\n");
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(at + 1) + " (dump in " +
                         (out / "nonfinite.json").string() + ")");
    }
    if (!std::isfinite(last.loss.total)) throw NumericError("non-finite loss at step " + std::to_string(last.step));
    log << last.to_json().dump() << '\n';
    const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    timing << nlohmann::json{{"step", last.step}, {"wall_ms", ms}}.dump() << '\n';
    if (o.checkpoint_every && last.step % o.checkpoint_every == 0 && last.step < o.steps)
      save_checkpoint(out / ("step_" + std::to_string(last.step) + ".ckpt"), trainer.checkpoint());
  }
  log.flush();
  if (!log) throw DataError("failed writing " + (out / "train_log.jsonl").string());
  save_checkpoint(out / "model.ckpt", trainer.checkpoint());
  return {{"out", out.string()},
          {"checkpoint", (out / "model.ckpt").string()},
          {"steps", trainer.step()},
          {"final_loss", last.loss.total},
          {"wall_s", std::chrono::duration<double>(clock::now() - t_start).count()}};
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
  bool overlays = false;
  std::size_t density_grid = 0;  // > 0: write density/{id}.csv of proposal control points
  double score_threshold = 0.5;
  double nms_iou = 0.5;
};

/// Metrics JSON; also written to out_dir/eval.json, with optional overlays.
inline nlohmann::json cmd_eval(const EvalOptions& o) {
  if (o.data_dir.empty()) throw UsageError("--data is required");
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (!std::filesystem::is_directory(o.data_dir)) throw DataError("dataset directory " + o.data_dir.string() + " not found");
  if (!std::filesystem::exists(o.checkpoint)) throw DataError("checkpoint " + o.checkpoint.string() + " not found");
  const auto out = o.out_dir.empty() ? output_root() / "eval" : o.out_dir;
  ensure_dir(out);

  auto ds = load_dataset(o.data_dir);
  if (ds.scenes.empty()) throw DataError(o.data_dir.string() + ": dataset is empty, nothing to evaluate");
  const auto model = load_model(load_checkpoint(o.checkpoint));
  for (const auto& s : ds.scenes)
    if (s.image.width != model.config.image_size || s.image.height != model.config.image_size)
      throw DataError("scene " + s.annotation.image_id + " is " + std::to_string(s.image.width) + "x" +
                      std::to_string(s.image.height) + ", checkpoint expects " +
                      std::to_string(model.config.image_size));

  std::vector<std::vector<Detection>> dets;
  const auto res = evaluate(model, ds.scenes, DecodeOptions{o.score_threshold, o.nms_iou}, &dets);
  auto j = res.to_json();
  write_text(out / "eval.json", j.dump(2) + "\n");
  if (o.overlays) {
    ensure_dir(out / "overlays");
    for (std::size_t i = 0; i < ds.scenes.size(); ++i)
      write_pgm(out / "overlays" / (ds.scenes[i].annotation.image_id + ".pgm"), overlay(ds.scenes[i].image, dets[i]));
  }
  if (o.density_grid) {
    ensure_dir(out / "density");
    NoGradGuard ng;
    for (const auto& s : ds.scenes) {
      const auto sets = model.forward(s.image).proposals.control_point_sets();
      write_density_csv(out / "density" / (s.annotation.image_id + ".csv"),
                        control_point_density_map(sets, o.density_grid, o.density_grid));
    }
  }
  return j;
}

// ---------------------------------------------------------------------------

struct BenchOptions {
  BenchConfig config;
  std::filesystem::path out;  // CSV path
};

inline nlohmann::json cmd_bench(const BenchOptions& o) {
  o.config.validate();
  const auto path = o.out.empty() ? output_root() / "bench.csv" : o.out;
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  const auto recs = run_bench(o.config);
  std::ostringstream csv;
  write_bench_csv(csv, recs);
  write_text(path, csv.str());
  nlohmann::json slopes = nlohmann::json::object();
  for (const auto& m : bench_mechanisms(recs)) slopes[m] = loglog_slope(recs, m);
  return {{"out", path.string()}, {"slopes", slopes}};
}

struct PlotOptions {
  std::filesystem::path in;
  std::filesystem::path out;
};

inline nlohmann::json cmd_plot(const PlotOptions& o) {
  if (o.in.empty()) throw UsageError("--in is required");
  auto out = o.out;
  if (out.empty()) out = output_root() / o.in.stem();
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  return {{"out", plot_csv(o.in, out).string()}};
}

// ---------------------------------------------------------------------------

inline std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

/// Parses argv, runs the chosen subcommand, prints its JSON result to `out`
/// and any failure as one "E_<KIND>: message" line to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"edgespot: synthetic text spotting toolkit"};
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "write a synthetic dataset");
  g->add_option("--out", gen.out_dir, "output directory");
  g->add_option("--count", gen.count, "number of scenes");
  g->add_option("--seed", gen.seed, "dataset seed");
  g->add_option("--preset", gen.preset, "default | small");
  g->add_option("--config", gen.config, "JSON overriding generator settings");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "train a model on a dataset");
  t->add_option("--data", tr.data_dir, "dataset directory")->required();
  t->add_option("--out", tr.out_dir, "output directory for checkpoint and logs");
  t->add_option("--resume", tr.resume, "checkpoint to continue from");
  t->add_option("--steps", tr.steps, "total optimizer steps");
  t->add_option("--seed", tr.seed, "initialization and batch-order seed");
  t->add_option("--batch", tr.batch_size, "images per step");
  t->add_option("--lr", tr.lr, "peak learning rate");
  t->add_option("--aux-weight", tr.aux_weight, "weight of the proposal loss");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "also save step_N.ckpt every N steps");
  t->add_option("--model-config", tr.model_config, "JSON overriding model settings");
  t->add_option("--encoder", tr.encoder, "efficient | softmax");
  t->add_option("--proposals", tr.proposals, "curve | box");
  t->add_option("--channels", tr.channels, "model width");
  t->add_option("--top-k", tr.top_k, "proposals kept");
  t->add_option("--points", tr.points, "points sampled per curve");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  e->add_option("--data", ev.data_dir, "dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  e->add_option("--out", ev.out_dir, "output directory");
  e->add_flag("--overlays", ev.overlays, "write per-image PGM overlays");
  e->add_option("--density", ev.density_grid, "write per-image control-point density CSVs on an NxN grid");
  e->add_option("--threshold", ev.score_threshold, "instance score threshold");
  e->add_option("--nms", ev.nms_iou, "NMS IoU (<= 0 disables)");

  BenchOptions be;
  auto* b = app.add_subcommand("bench", "time token mixers over token counts");
  b->add_option("--mechanisms", be.config.mechanisms, "em, softmax")->delimiter(',');
  b->add_option("--sizes", be.config.sizes, "strictly increasing token counts")->delimiter(',');
  b->add_option("--channels", be.config.channels, "channels");
  b->add_option("--reps", be.config.reps, "timed repetitions (>= 30)");
  b->add_option("--warmup", be.config.warmup, "untimed warm-up calls");
  b->add_option("--seed", be.config.seed, "input seed");
  b->add_option("--out", be.out, "CSV path");

  PlotOptions pl;
  auto* p = app.add_subcommand("plot", "render a bench or density CSV");
  p->add_option("--in", pl.in, "input CSV")->required();
  p->add_option("--out", pl.out, "output file (.svg or .pgm added)");

  auto fail = [&](const char* kind, int code, const std::string& msg) {
    err << kind << ": " << one_line(msg) << '\n';
    return code;
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    return fail("E_USAGE", kExitUsage, ex.what());
  }

  try {
    nlohmann::json res;
    if (*g)
      res = cmd_generate(gen);
    else if (*t)
      res = cmd_train(tr);
    else if (*e)
      res = cmd_eval(ev);
    else if (*b)
      res = cmd_bench(be);
    else
      res = cmd_plot(pl);
    out << res.dump(2) << '\n';
    return kExitOk;
  } catch (const NumericError& ex) {
    return fail("E_NUMERIC", kExitNumeric, ex.what());
  } catch (const DataError& ex) {
    return fail("E_DATA", kExitData, ex.what());
  } catch (const std::invalid_argument& ex) {
    return fail("E_USAGE", kExitUsage, ex.what());
  } catch (const std::exception& ex) {
    return fail("E_DATA", kExitData, ex.what());
  }
}

}  // namespace edgespot
