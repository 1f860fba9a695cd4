// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The `dcd` command-line tool. Configuration is a flat key=value file merged
// with flag overrides; every subcommand resolves it into the library types.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "dcd/probe.hpp"
#include "dcd/trainer.hpp"
#include "dcd/verify.hpp"

namespace dcd::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfig = 1, kData = 2, kDivergence = 3, kCheckpoint = 4 };

/// Failures while reading a dataset.
struct DataError : Error {
  using Error::Error;
};

/// Failures while reading or decoding a checkpoint file.
struct CheckpointError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// RunConfig

struct KeySpec {
  const char* key;
  const char* fallback;
  const char* help;
};

inline const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      {"data", "blobs", "blobs | cifar10:<dir> | cifar100:<dir> | mnist:<dir>"},
      {"subset", "0", "keep the first N training samples (0 keeps all)"},
      {"test_subset", "0", "keep the first N test samples (0 keeps all)"},
      {"blob.classes", "10", "blob classes"},
      {"blob.per_class", "20", "training samples per class"},
      {"blob.test_per_class", "200", "test samples per class"},
      {"blob.dim", "32", "input dimension"},
      {"blob.separation", "2.5", "distance between class means"},
      {"blob.sigma", "1", "per-coordinate noise"},
      {"blob.modes", "1", "sub-clusters per class"},
      {"blob.mean_seed", "7", "selects the class means"},
      {"blob.seed", "1", "selects the training draw; the test draw uses a derived seed"},
      {"model.family", "auto", "auto | mlp | convnet"},
      {"model.teacher_widths", "", "comma list; empty uses the shipped recipe"},
      {"model.student_widths", "", "comma list; empty uses the shipped recipe"},
      {"alpha", "0.5", "consistency weight inside the DCD term"},
      {"beta", "1", "DCD term weight"},
      {"lambda", "1", "logit KL weight"},
      {"tau_init", "2.659260036932778", "initial log inverse temperature, ln(1/0.07)"},
      {"b_init", "0", "initial logit bias"},
      {"tau_max", "10", "upper clamp for tau"},
      {"learn_temperature", "true", "train tau and b"},
      {"detach_teacher", "false", "hold the teacher-anchored distribution fixed in the consistency KL"},
      {"kd_temperature", "4", "softening temperature of the logit KL"},
      {"proj_dim", "128", "projection head output size"},
      {"lr", "0.05", "base learning rate"},
      {"momentum", "0.9", "SGD momentum"},
      {"weight_decay", "5e-4", "L2 decay on weights (not on tau or b)"},
      {"epochs", "30", "training epochs"},
      {"schedule", "15:0.1,23:0.1", "epoch:multiplier list, compounding; 'none' for a constant rate"},
      {"batch_size", "128", "mini-batch size"},
      {"augment", "none", "none | flip | flip+crop"},
      {"eval_each_epoch", "true", "score the test split after every epoch"},
      {"probe.epochs", "30", "linear probe epochs"},
      {"probe.lr", "0.1", "linear probe learning rate"},
      {"probe.batch_size", "128", "linear probe batch size"},
      {"seed", "0", "single source of randomness for a run"},
      {"out", "runs/default", "run directory"},
  };
  return keys;
}

/// One line per config key: name, default and description.
inline std::string key_table() {
  std::ostringstream os;
  os << "Config keys (default):\n";
  for (const auto& k : known_keys())
    os << "  " << std::left << std::setw(22) << k.key << std::setw(20) << (std::string("(") + k.fallback + ")") << k.help << '\n';
  return os.str();
}

inline bool is_known_key(const std::string& key) {
  for (const auto& k : known_keys())
    if (key == k.key) return true;
  return false;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : known_keys()) values_[k.key] = k.fallback;
  }

  /// One `key = value` per line; '#' starts a comment.
  void merge_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(no) + ": expected key = value, got '" + line + "'");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), origin + ":" + std::to_string(no));
    }
  }

  void merge_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path.string());
  }

  /// `key=value` from the command line.
  void merge_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)), "--set");
  }

  void set(const std::string& key, const std::string& value, const std::string& origin = "flag") {
    if (!is_known_key(key)) throw ConfigError(origin + ": unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double num(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }

  std::size_t count(const std::string& key) const {
    const double d = num(key);
    if (d < 0 || d != std::floor(d)) throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + str(key) + "'");
    return static_cast<std::size_t>(d);
  }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
  }

  /// Fully resolved config in key order, suitable for `merge_text`.
  std::string echo() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Resolution into library types.

inline std::vector<std::pair<std::size_t, double>> parse_schedule(const std::string& s) {
  std::vector<std::pair<std::size_t, double>> out;
  if (s.empty() || s == "none") return out;
  std::istringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument("");
      out.emplace_back(std::stoul(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("schedule entry '" + item + "' is not epoch:multiplier");
    }
  }
  return out;
}

inline TrainOptions train_options(const RunConfig& c) {
  TrainOptions o;
  o.optim.lr = c.num("lr");
  o.optim.momentum = c.num("momentum");
  o.optim.weight_decay = c.num("weight_decay");
  o.optim.epochs = c.count("epochs");
  o.optim.schedule = parse_schedule(c.str("schedule"));
  o.optim.seed = c.count("seed");
  o.batch_size = c.count("batch_size");
  if (o.batch_size == 0) throw ConfigError("batch_size must be positive");
  o.augment = parse_augment(c.str("augment"));
  o.eval_each_epoch = c.flag("eval_each_epoch");
  o.optim.validate();
  return o;
}

inline DistillConfig distill_config(const RunConfig& c) {
  DistillConfig d;
  d.alpha = c.num("alpha");
  d.beta = c.num("beta");
  d.lambda_kl = c.num("lambda");
  d.tau_init = c.num("tau_init");
  d.b_init = c.num("b_init");
  d.tau_max = c.num("tau_max");
  d.learn_temperature = c.flag("learn_temperature");
  d.detach_teacher_distribution = c.flag("detach_teacher");
  d.kd_temperature = c.num("kd_temperature");
  d.proj_dim = c.count("proj_dim");
  d.validate();
  return d;
}

inline BlobSpec blob_spec(const RunConfig& c) {
  return BlobSpec{c.count("blob.classes"), c.count("blob.per_class"), c.count("blob.dim"), c.num("blob.separation"),
                  c.num("blob.sigma"),     c.count("blob.modes"),     c.count("blob.mean_seed"), c.count("blob.seed")};
}

/// Loads the dataset named by `data`, applying the subset limits. Any failure
/// is reported as a DataError.
inline Split load_data(const RunConfig& c) {
  const std::string& src = c.str("data");
  Split s;
  if (src == "blobs") {
    BlobSpec b = blob_spec(c);
    s.train = synth_blobs(b);
    b.per_class = c.count("blob.test_per_class");
    b.seed = derive_seed(b.seed, {0x74657374ULL});
    s.test = synth_blobs(b);
  } else {
    const auto colon = src.find(':');
    if (colon == std::string::npos) throw ConfigError("data '" + src + "' is not blobs or <format>:<dir>");
    const std::string kind = src.substr(0, colon);
    const fs::path dir = src.substr(colon + 1);
    try {
      if (!fs::is_directory(dir)) throw Error("data directory " + dir.string() + " does not exist");
      if (kind == "cifar10") s = load_cifar10_dir(dir);
      else if (kind == "cifar100") s = load_cifar100_dir(dir);
      else if (kind == "mnist") s = load_mnist_dir(dir);
      else throw ConfigError("unknown data format '" + kind + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
  }
  if (const std::size_t n = c.count("subset")) s.train = s.train.head(n);
  if (const std::size_t n = c.count("test_subset")) s.test = s.test.head(n);
  return s;
}

inline Recipe recipe_for(const RunConfig& c, const Dataset& d) {
  std::string family = c.str("model.family");
  if (family == "auto") family = d.channels == 1 && d.height == 1 ? "mlp" : "convnet";
  Recipe r = parse_family(family) == Family::mlp ? mlp_recipe(d.image_size(), static_cast<std::size_t>(d.class_count))
                                                 : convnet_recipe(d.channels, d.height, d.width, static_cast<std::size_t>(d.class_count));
  if (parse_family(family) == Family::mlp) {
    // mlp specs see the input as a flat row; keep the dataset's own geometry.
    for (ModelSpec* m : {&r.teacher, &r.student}) {
      m->in_channels = d.channels;
      m->in_height = d.height;
      m->in_width = d.width;
    }
  }
  if (!c.str("model.teacher_widths").empty()) r.teacher.widths = parse_widths(c.str("model.teacher_widths"));
  if (!c.str("model.student_widths").empty()) r.student.widths = parse_widths(c.str("model.student_widths"));
  r.teacher.validate();
  r.student.validate();
  return r;
}

inline Checkpoint read_checkpoint(const fs::path& path) {
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Run directories.

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw Error("cannot write " + path.string());
}

/// Creates the directory, drops any stale completion marker and echoes the config.
inline fs::path begin_run(const RunConfig& c) {
  const fs::path dir = c.str("out");
  fs::create_directories(dir);
  fs::remove(dir / "DONE");
  write_text(dir / "config.txt", c.echo());
  return dir;
}

inline void finish_run(const fs::path& dir) { write_text(dir / "DONE", "ok\n"); }

inline std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

inline TrainOptions with_progress(TrainOptions o, std::ostream& log, bool quiet) {
  if (!quiet)
    o.on_epoch = [&log](const EpochLog& e) {
      log << "epoch " << e.epoch << " loss " << e.loss.total << " train " << pct(e.train_acc);
      if (e.test_acc) log << " test " << pct(*e.test_acc);
      if (e.tau) log << " tau " << *e.tau;
      log << '\n';
    };
  return o;
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns an exit code and lets library errors propagate.

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline int cmd_train_teacher(const RunConfig& c, bool quiet, Streams io) {
  const TrainOptions opt = train_options(c);
  const Split data = load_data(c);
  const Recipe r = recipe_for(c, data.train);
  const fs::path dir = begin_run(c);
  const TeacherResult t = train_teacher(r.teacher, data.train, data.test, with_progress(opt, io.err, quiet));
  write_epoch_csv(dir / "epochs.csv", t.log);
  save_checkpoint(t.checkpoint(), dir / "teacher.ckpt");
  finish_run(dir);
  io.out << "teacher test_acc: " << pct(t.test_acc) << "\ncheckpoint: " << (dir / "teacher.ckpt").string() << '\n';
  return kOk;
}

inline DistillResult distill_with(const TeacherResult& teacher, const RunConfig& c, const Split& data, std::ostream& log, bool quiet) {
  const Recipe r = recipe_for(c, data.train);
  return distill(teacher.model, teacher.standardizer, r.student, data.train, data.test, distill_config(c),
                 with_progress(train_options(c), log, quiet));
}

inline int cmd_distill(const RunConfig& c, const fs::path& teacher_path, bool quiet, Streams io) {
  distill_config(c);
  train_options(c);
  const TeacherResult teacher = TeacherResult::from_checkpoint(read_checkpoint(teacher_path));
  const Split data = load_data(c);
  const fs::path dir = begin_run(c);
  const DistillResult s = distill_with(teacher, c, data, io.err, quiet);
  write_epoch_csv(dir / "epochs.csv", s.log);
  save_checkpoint(s.checkpoint(), dir / "student.ckpt");
  finish_run(dir);
  io.out << "student test_acc: " << pct(s.test_acc) << "\ncheckpoint: " << (dir / "student.ckpt").string() << '\n';
  return kOk;
}

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

/// "beta=0.1,1,10;alpha=0.5" -> two axes. Keys must be numeric config keys.
inline std::vector<GridAxis> parse_grid(const std::string& expr) {
  std::vector<GridAxis> axes;
  std::istringstream in(expr);
  for (std::string part; std::getline(in, part, ';');) {
    part = trim(part);
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("grid axis '" + part + "' is not key=v1,v2,...");
    GridAxis a{trim(part.substr(0, eq)), {}};
    if (!is_known_key(a.key)) throw ConfigError("grid: unknown config key '" + a.key + "'");
    std::istringstream vs(part.substr(eq + 1));
    for (std::string v; std::getline(vs, v, ',');)
      if (!trim(v).empty()) a.values.push_back(trim(v));
    if (a.values.empty()) throw ConfigError("grid axis '" + a.key + "' has no values");
    for (const auto& v : a.values) {
      RunConfig probe;
      probe.set(a.key, v);
      probe.num(a.key);
    }
    axes.push_back(std::move(a));
  }
  if (axes.empty()) throw ConfigError("empty grid expression");
  return axes;
}

/// Cartesian product, first axis varying slowest.
inline std::vector<std::vector<std::pair<std::string, std::string>>> grid_points(const std::vector<GridAxis>& axes) {
  std::vector<std::vector<std::pair<std::string, std::string>>> pts{{}};
  for (const auto& a : axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& p : pts)
      for (const auto& v : a.values) {
        auto q = p;
        q.emplace_back(a.key, v);
        next.push_back(std::move(q));
      }
    pts = std::move(next);
  }
  return pts;
}

struct AblationRun {
  std::size_t point = 0;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  std::string status = "pending";
  double test_acc = std::nan("");
};

inline int cmd_ablate(const RunConfig& base, const fs::path& teacher_path, const std::string& grid, std::size_t seeds,
                      std::size_t jobs, Streams io) {
  if (seeds == 0) throw ConfigError("--seeds must be at least 1");
  const auto axes = parse_grid(grid);
  const auto points = grid_points(axes);
  for (const auto& p : points) {
    RunConfig c = base;
    for (const auto& [k, v] : p) c.set(k, v);
    distill_config(c);
    train_options(c);
  }
  const TeacherResult teacher = TeacherResult::from_checkpoint(read_checkpoint(teacher_path));
  const Split data = load_data(base);
  const fs::path root = base.str("out");
  fs::create_directories(root);
  fs::remove(root / "DONE");
  write_text(root / "config.txt", base.echo() + "# grid " + grid + "\n# seeds " + std::to_string(seeds) + "\n");

  std::vector<AblationRun> runs;
  for (std::size_t p = 0; p < points.size(); ++p)
    for (std::size_t k = 0; k < seeds; ++k) runs.push_back({p, k, base.count("seed") + k});

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < runs.size();) {
      AblationRun& run = runs[i];
      RunConfig c = base;
      std::string label;
      for (const auto& [k, v] : points[run.point]) {
        c.set(k, v);
        label += (label.empty() ? "" : "_") + k + "=" + v;
      }
      c.set("seed", std::to_string(run.seed));
      c.set("out", (root / label / ("seed" + std::to_string(run.replicate))).string());
      try {
        const fs::path dir = begin_run(c);
        std::ostringstream sink;
        const DistillResult s = distill_with(teacher, c, data, sink, true);
        write_epoch_csv(dir / "epochs.csv", s.log);
        save_checkpoint(s.checkpoint(), dir / "student.ckpt");
        finish_run(dir);
        run.status = "ok";
        run.test_acc = s.test_acc;
      } catch (const DivergenceError& e) {
        run.status = "diverged";
        std::lock_guard lock(mu);
        io.err << label << " seed " << run.seed << ": " << e.what() << '\n';
      } catch (const std::exception& e) {
        run.status = "failed";
        std::lock_guard lock(mu);
        io.err << label << " seed " << run.seed << ": " << e.what() << '\n';
      }
      std::lock_guard lock(mu);
      io.out << label << " seed " << run.seed << " " << run.status;
      if (run.status == "ok") io.out << " test_acc " << pct(run.test_acc);
      io.out << '\n';
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < std::max<std::size_t>(1, std::min(jobs, runs.size())); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostringstream csv;
  for (const auto& a : axes) csv << a.key << ',';
  csv << "seed,status,test_acc,mean,std,completed\n";
  std::size_t ok = 0;
  for (std::size_t p = 0; p < points.size(); ++p) {
    std::vector<double> acc;
    for (const auto& r : runs)
      if (r.point == p && r.status == "ok") acc.push_back(r.test_acc);
    double mean = 0.0, var = 0.0;
    for (double a : acc) mean += a;
    if (!acc.empty()) mean /= static_cast<double>(acc.size());
    for (double a : acc) var += (a - mean) * (a - mean);
    const double sd = acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0;
    ok += acc.size();
    for (const auto& r : runs) {
      if (r.point != p) continue;
      for (const auto& kv : points[p]) csv << kv.second << ',';
      csv << r.seed << ',' << r.status << ',' << (r.status == "ok" ? format_double(r.test_acc) : "") << ','
          << (acc.empty() ? "" : format_double(mean)) << ',' << (acc.empty() ? "" : format_double(sd)) << ',' << acc.size()
          << '\n';
    }
  }
  write_text(root / "summary.csv", csv.str());
  finish_run(root);
  io.out << "summary: " << (root / "summary.csv").string() << '\n';
  return ok == 0 ? kDivergence : kOk;
}

struct LoadedModel {
  Model model;
  Standardizer standardizer;
  std::optional<ProjectionHead> head;
};

inline LoadedModel load_model(const fs::path& path) {
  const Checkpoint c = read_checkpoint(path);
  try {
    const std::string kind = c.metadata.contains("kind") ? c.meta("kind") : "";
    if (kind == "teacher") {
      TeacherResult t = TeacherResult::from_checkpoint(c);
      return {std::move(t.model), std::move(t.standardizer), std::nullopt};
    }
    if (kind == "student") {
      DistillResult s = DistillResult::from_checkpoint(c);
      return {std::move(s.state.model), std::move(s.standardizer), std::move(s.state.student_head)};
    }
    throw FormatError("checkpoint kind '" + kind + "' is neither teacher nor student", 0);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

inline int cmd_eval(const RunConfig& c, const std::vector<std::string>& ckpts, Streams io) {
  const Split data = load_data(c);
  for (const auto& p : ckpts) {
    const LoadedModel m = load_model(p);
    io.out << p << " top1: " << pct(evaluate_accuracy(m.model, data.test, m.standardizer)) << '\n';
  }
  return kOk;
}

inline int cmd_transfer(const RunConfig& c, const fs::path& ckpt, Streams io) {
  const LoadedModel m = load_model(ckpt);
  const Split data = load_data(c);
  const ProbeOptions po{.lr = c.num("probe.lr"), .epochs = c.count("probe.epochs"), .batch_size = c.count("probe.batch_size"),
                        .seed = c.count("seed")};
  const ProbeResult r = linear_probe(m.model, m.standardizer, data.train, data.test, po);
  io.out << "probe train_acc: " << pct(r.train_acc) << "\nprobe test_acc: " << pct(r.test_acc) << '\n';
  return kOk;
}

inline int cmd_export(const RunConfig& c, const fs::path& ckpt, const fs::path& csv, const std::string& split, Streams io) {
  const LoadedModel m = load_model(ckpt);
  if (!m.head) throw CheckpointError(ckpt.string() + ": no projection head (export needs a student checkpoint)");
  if (split != "train" && split != "test") throw ConfigError("--split must be train or test");
  const Split data = load_data(c);
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  const std::size_t rows = export_embeddings(m.model, *m.head, split == "train" ? data.train : data.test, m.standardizer, csv);
  io.out << "wrote " << rows << " embeddings to " << csv.string() << '\n';
  return kOk;
}

inline int cmd_verify(const fs::path& fixtures, Streams io) {
  const auto results = verify::run_all(fixtures / "cifar100_accuracy.txt");
  bool ok = true;
  for (const auto& r : results) {
    io.out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.pass;
  }
  try {
    io.out << "relative_improvement: " << pct(verify::fixture_numbers(fixtures / "cifar100_accuracy.txt").dcd) << '\n';
  } catch (const std::exception& e) {
    io.err << "relative_improvement: " << e.what() << '\n';
    ok = false;
  }
  return ok ? kOk : kConfig;
}

// ---------------------------------------------------------------------------
// Entry point.

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return kDivergence;
  if (dynamic_cast<const CheckpointError*>(&e)) return kCheckpoint;
  if (dynamic_cast<const DataError*>(&e)) return kData;
  return kConfig;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Distillation with in-batch contrastive and consistency terms"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dcd 1.0.0");

  std::string config_file, data, out_dir, teacher, grid, fixtures, csv, split = "test";
  std::vector<std::string> sets, ckpts;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, beta, lambda, fixed_tau;
  std::size_t seeds = 1, jobs = 1;
  bool quiet = false;
#ifdef DCD_FIXTURE_DIR
  fixtures = DCD_FIXTURE_DIR;
#endif

  auto common = [&](CLI::App* s, bool writes_run) {
    s->add_option("--config", config_file, "key=value config file")->check(CLI::ExistingFile);
    s->add_option("--data", data, "dataset: blobs | cifar10:<dir> | cifar100:<dir> | mnist:<dir>");
    s->add_option("--seed", seed, "run seed");
    s->add_option("--set", sets, "override a config key (key=value), repeatable");
    s->add_flag("--quiet", quiet, "no per-epoch progress");
    if (writes_run) s->add_option("--out", out_dir, "run directory");
    s->footer(key_table());
  };

  auto* train = app.add_subcommand("train-teacher", "train a teacher network");
  common(train, true);

  auto* dist = app.add_subcommand("distill", "train a student against a frozen teacher");
  common(dist, true);
  dist->add_option("--teacher", teacher, "teacher checkpoint")->required();
  dist->add_option("--alpha", alpha, "consistency weight");
  dist->add_option("--beta", beta, "DCD weight");
  dist->add_option("--lambda", lambda, "logit KL weight");
  dist->add_option("--fixed-tau", fixed_tau, "freeze the logit scale at temperature T (tau = ln(1/T), b = 0)");

  auto* abl = app.add_subcommand("ablate", "sweep a grid of distillation settings");
  common(abl, true);
  abl->add_option("--teacher", teacher, "teacher checkpoint")->required();
  abl->add_option("--grid", grid, "e.g. beta=0.1,1,10,100 (axes separated by ';')")->required();
  abl->add_option("--seeds", seeds, "replicates per grid point");
  abl->add_option("--jobs", jobs, "concurrent runs");

  auto* ev = app.add_subcommand("eval", "top-1 accuracy of checkpoints on the test split");
  common(ev, false);
  ev->add_option("--ckpt", ckpts, "checkpoint, repeatable")->required();

  auto* tr = app.add_subcommand("transfer", "linear probe on frozen features");
  common(tr, false);
  tr->add_option("--ckpt", ckpts, "checkpoint")->required()->expected(1);

  auto* ex = app.add_subcommand("export-embeddings", "write normalized student embeddings as CSV");
  common(ex, false);
  ex->add_option("--ckpt", ckpts, "student checkpoint")->required()->expected(1);
  ex->add_option("--csv", csv, "output file")->required();
  ex->add_option("--split", split, "train or test");

  auto* ver = app.add_subcommand("verify", "oracle, gradient, invariant and fixture checks");
  ver->add_option("--fixtures", fixtures, "directory holding cifar100_accuracy.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    RunConfig c;
    if (!config_file.empty()) c.merge_file(config_file);
    for (const auto& kv : sets) c.merge_assignment(kv);
    if (!data.empty()) c.set("data", data);
    if (!out_dir.empty()) c.set("out", out_dir);
    if (seed) c.set("seed", std::to_string(*seed));
    if (alpha) c.set("alpha", format_double(*alpha));
    if (beta) c.set("beta", format_double(*beta));
    if (lambda) c.set("lambda", format_double(*lambda));
    if (fixed_tau) {
      if (!(*fixed_tau > 0.0)) throw ConfigError("--fixed-tau expects a positive temperature");
      c.set("learn_temperature", "false");
      c.set("tau_init", format_double(std::log(1.0 / *fixed_tau)));
      c.set("b_init", "0");
    }
    const Streams io{out, err};
    if (*train) return cmd_train_teacher(c, quiet, io);
    if (*dist) return cmd_distill(c, teacher, quiet, io);
    if (*abl) return cmd_ablate(c, teacher, grid, seeds, jobs, io);
    if (*ev) return cmd_eval(c, ckpts, io);
    if (*tr) return cmd_transfer(c, ckpts.front(), io);
    if (*ex) return cmd_export(c, ckpts.front(), csv, split, io);
    return cmd_verify(fixtures, io);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace dcd::cli
