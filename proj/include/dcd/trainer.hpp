// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Teacher pretraining and student distillation. Each step rebuilds the tape
// from scratch; tau is projected into [0, tau_max] after every update.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dcd/autodiff.hpp"
#include "dcd/checkpoint.hpp"
#include "dcd/data.hpp"
#include "dcd/losses.hpp"
#include "dcd/metrics.hpp"
#include "dcd/models.hpp"
#include "dcd/optim.hpp"

namespace dcd {

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown loss;
  std::optional<double> tau;
  std::optional<double> bias;
  double train_acc = 0.0;
  std::optional<double> test_acc;
};

inline std::string epoch_csv_header() { return "epoch,sup,distill_kl,contrast,consist,total,tau,b,train_acc,test_acc"; }

inline std::string epoch_csv_row(const EpochLog& e) {
  std::ostringstream os;
  os << std::setprecision(17) << e.epoch << ',' << e.loss.sup << ',' << e.loss.distill_kl << ',' << e.loss.contrast << ','
     << e.loss.consist << ',' << e.loss.total << ',';
  if (e.tau) os << *e.tau;
  os << ',';
  if (e.bias) os << *e.bias;
  os << ',' << e.train_acc << ',';
  if (e.test_acc) os << *e.test_acc;
  return os.str();
}

inline void write_epoch_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << epoch_csv_header() << '\n';
  for (const auto& e : log) out << epoch_csv_row(e) << '\n';
}

struct TrainOptions {
  OptimSpec optim;
  std::size_t batch_size = 128;
  Augment augment = Augment::none;
  /// Evaluate on the test split after every epoch (the last epoch is always evaluated).
  bool eval_each_epoch = true;
  std::function<void(const EpochLog&)> on_epoch;
};

// ---------------------------------------------------------------------------
// Inference helpers.

inline constexpr std::size_t kEvalBatch = 256;

inline ForwardResult forward_values(const Model& m, Tape& tape, const Tensor& images) {
  return m.forward_frozen(tape, tape.constant(images));
}

/// Logits for every sample, standardized with `st`, no augmentation.
inline Tensor predict_logits(const Model& m, const Dataset& d, const Standardizer& st) {
  const std::size_t c = m.spec().num_classes;
  Tensor out({d.size(), c});
  BatchPlan plan{kEvalBatch, 0, Augment::none, false};
  BatchStream s(d, plan, st, 0);
  std::size_t row = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const Batch b = s[k];
    Tape tape;
    const Tensor& l = forward_values(m, tape, b.images).logits.value();
    std::copy(l.data().begin(), l.data().end(), out.ptr() + row * c);
    row += b.labels.size();
  }
  return out;
}

/// Penultimate features for every sample.
inline Tensor predict_features(const Model& m, const Dataset& d, const Standardizer& st) {
  const std::size_t f = m.spec().feature_dim();
  Tensor out({d.size(), f});
  BatchPlan plan{kEvalBatch, 0, Augment::none, false};
  BatchStream s(d, plan, st, 0);
  std::size_t row = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const Batch b = s[k];
    Tape tape;
    const Tensor& h = forward_values(m, tape, b.images).features.value();
    std::copy(h.data().begin(), h.data().end(), out.ptr() + row * f);
    row += b.labels.size();
  }
  return out;
}

inline double evaluate_accuracy(const Model& m, const Dataset& d, const Standardizer& st) {
  if (d.size() == 0) return 0.0;
  return top1_accuracy(predict_logits(m, d, st), d.labels);
}

// ---------------------------------------------------------------------------
// Checkpoint conversion.

inline void put_model(Checkpoint& c, const std::string& prefix, const Model& m) {
  const ModelSpec& s = m.spec();
  c.metadata[prefix + ".family"] = to_string(s.family);
  c.metadata[prefix + ".widths"] = s.widths_str();
  c.metadata[prefix + ".num_classes"] = std::to_string(s.num_classes);
  c.metadata[prefix + ".input"] =
      std::to_string(s.in_channels) + "," + std::to_string(s.in_height) + "," + std::to_string(s.in_width);
  for (const auto& p : m.params()) c.put(prefix + "." + p.name, p.value);
}

inline Model get_model(const Checkpoint& c, const std::string& prefix) {
  ModelSpec s;
  try {
    s.family = parse_family(c.meta(prefix + ".family"));
    s.widths = parse_widths(c.meta(prefix + ".widths"));
    s.num_classes = std::stoul(c.meta(prefix + ".num_classes"));
    const auto in = parse_widths(c.meta(prefix + ".input"));
    if (in.size() != 3) throw ConfigError("bad input shape");
    s.in_channels = in[0];
    s.in_height = in[1];
    s.in_width = in[2];
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint model '" + prefix + "' metadata: " + e.what(), 0);
  }
  Model m(s);
  for (auto& p : m.params()) {
    const Tensor& t = c.tensor(prefix + "." + p.name);
    if (t.shape() != p.value.shape())
      throw FormatError("checkpoint tensor " + prefix + "." + p.name + " has shape " + shape_str(t.shape()), 0);
    p.value = t;
  }
  return m;
}

inline void put_standardizer(Checkpoint& c, const Standardizer& st) {
  c.put("standardize.mean", Tensor({st.mean.size()}, st.mean));
  c.put("standardize.std", Tensor({st.stddev.size()}, st.stddev));
}

inline Standardizer get_standardizer(const Checkpoint& c) {
  const Tensor& m = c.tensor("standardize.mean");
  const Tensor& s = c.tensor("standardize.std");
  return {m.vec(), s.vec()};
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Teacher pretraining.

struct TeacherResult {
  Model model;
  Standardizer standardizer;
  std::vector<EpochLog> log;
  double train_acc = 0.0;
  double test_acc = 0.0;

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.metadata["kind"] = "teacher";
    put_model(c, "teacher", model);
    put_standardizer(c, standardizer);
    c.metadata["metric.train_acc"] = format_double(train_acc);
    c.metadata["metric.test_acc"] = format_double(test_acc);
    return c;
  }

  static TeacherResult from_checkpoint(const Checkpoint& c) {
    TeacherResult r;
    r.model = get_model(c, "teacher");
    r.standardizer = get_standardizer(c);
    if (c.metadata.contains("metric.test_acc")) r.test_acc = std::stod(c.meta("metric.test_acc"));
    if (c.metadata.contains("metric.train_acc")) r.train_acc = std::stod(c.meta("metric.train_acc"));
    return r;
  }
};

namespace detail {

inline void check_finite(double loss, std::size_t step) {
  if (!std::isfinite(loss)) throw DivergenceError("non-finite loss", step);
}

inline void check_finite(const Var& v, const char* what, std::size_t step) {
  if (!v.value().all_finite()) throw DivergenceError(std::string("non-finite ") + what, step);
}

inline std::size_t correct_count(const Tensor& logits, std::span<const int> labels) {
  return static_cast<std::size_t>(std::lround(top1_accuracy(logits, labels) * static_cast<double>(labels.size()) / 100.0));
}

inline BatchPlan train_plan(const TrainOptions& o, std::uint64_t stream) {
  return BatchPlan{o.batch_size, derive_seed(o.optim.seed, {0x6261746368ULL, stream}), o.augment, true};
}

}  // namespace detail

/// Cross-entropy training. Deterministic in (spec, data, options).
inline TeacherResult train_teacher(const ModelSpec& spec, const Dataset& train, const Dataset& test, const TrainOptions& opt) {
  opt.optim.validate();
  if (train.size() == 0) throw ConfigError("empty training set");
  TeacherResult r;
  r.model = init_weights(spec, derive_seed(opt.optim.seed, {0x7465616368ULL}));
  r.standardizer = Standardizer::fit(train);
  Sgd sgd(opt.optim.momentum, opt.optim.weight_decay);
  for (auto& p : r.model.params()) sgd.add(p);
  const BatchPlan plan = detail::train_plan(opt, 1);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.optim.epochs; ++epoch) {
    const double lr = opt.optim.lr_at(epoch);
    BatchStream stream(train, plan, r.standardizer, epoch);
    EpochLog e;
    e.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t k = 0; k < stream.size(); ++k, ++step) {
      const Batch b = stream[k];
      Tape tape;
      const ForwardResult out = r.model.forward(tape, tape.constant(b.images));
      detail::check_finite(out.logits, "logits", step);
      const Var loss = cross_entropy_loss(out.logits, b.labels);
      detail::check_finite(loss.item(), step);
      sgd.zero_grad();
      tape.backward(loss);
      sgd.step(lr);
      const double w = static_cast<double>(b.labels.size());
      e.loss.sup += loss.item() * w;
      correct += detail::correct_count(out.logits.value(), b.labels);
    }
    const double n = static_cast<double>(train.size());
    e.loss = e.loss.scaled(1.0 / n);
    e.loss.total = e.loss.sup;
    e.train_acc = 100.0 * static_cast<double>(correct) / n;
    if (test.size() && (opt.eval_each_epoch || epoch + 1 == opt.optim.epochs))
      e.test_acc = evaluate_accuracy(r.model, test, r.standardizer);
    r.log.push_back(e);
    if (opt.on_epoch) opt.on_epoch(e);
  }
  r.train_acc = evaluate_accuracy(r.model, train, r.standardizer);
  r.test_acc = test.size() ? evaluate_accuracy(r.model, test, r.standardizer) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Distillation.

struct StudentState {
  Model model;
  ProjectionHead student_head;
  ProjectionHead teacher_head;
  Parameter tau;
  Parameter bias;
};

struct DistillResult {
  StudentState state;
  Standardizer standardizer;
  DistillConfig config;
  std::vector<EpochLog> log;
  double train_acc = 0.0;
  double test_acc = 0.0;

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.metadata["kind"] = "student";
    put_model(c, "student", state.model);
    put_standardizer(c, standardizer);
    c.put(state.student_head.weight.name, state.student_head.weight.value);
    c.put(state.teacher_head.weight.name, state.teacher_head.weight.value);
    c.put("tau", state.tau.value);
    c.put("bias", state.bias.value);
    c.metadata["config.alpha"] = format_double(config.alpha);
    c.metadata["config.beta"] = format_double(config.beta);
    c.metadata["config.lambda"] = format_double(config.lambda_kl);
    c.metadata["config.tau_init"] = format_double(config.tau_init);
    c.metadata["config.tau_max"] = format_double(config.tau_max);
    c.metadata["config.kd_temperature"] = format_double(config.kd_temperature);
    c.metadata["config.proj_dim"] = std::to_string(config.proj_dim);
    c.metadata["config.learn_temperature"] = config.learn_temperature ? "1" : "0";
    c.metadata["metric.train_acc"] = format_double(train_acc);
    c.metadata["metric.test_acc"] = format_double(test_acc);
    return c;
  }

  static DistillResult from_checkpoint(const Checkpoint& c) {
    DistillResult r;
    r.state.model = get_model(c, "student");
    r.standardizer = get_standardizer(c);
    r.state.student_head = {Parameter("student_proj.weight", c.tensor("student_proj.weight")), Owner::student};
    r.state.teacher_head = {Parameter("teacher_proj.weight", c.tensor("teacher_proj.weight")), Owner::teacher};
    r.state.tau = Parameter("tau", c.tensor("tau"));
    r.state.bias = Parameter("bias", c.tensor("bias"));
    if (c.metadata.contains("metric.test_acc")) r.test_acc = std::stod(c.meta("metric.test_acc"));
    if (c.metadata.contains("metric.train_acc")) r.train_acc = std::stod(c.meta("metric.train_acc"));
    return r;
  }
};

/// Trains a student against a frozen teacher with
///   sup + lambda * KL(teacher || student, T) + beta * (contrast + alpha * consist).
/// Optimized: student weights, both projection heads, tau and b. The teacher
/// backbone is read-only.
inline DistillResult distill(const Model& teacher, const Standardizer& st, const ModelSpec& student_spec,
                             const Dataset& train, const Dataset& test, const DistillConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  opt.optim.validate();
  if (train.size() == 0) throw ConfigError("empty training set");
  if (teacher.spec().num_classes != student_spec.num_classes)
    throw DimensionError("teacher has " + std::to_string(teacher.spec().num_classes) + " classes, student " +
                         std::to_string(student_spec.num_classes));
  DistillResult r;
  r.config = cfg;
  r.standardizer = st;
  StudentState& s = r.state;
  s.model = init_weights(student_spec, derive_seed(opt.optim.seed, {0x73747564ULL}));
  s.student_head = init_projection_head(student_spec.feature_dim(), cfg.proj_dim, Owner::student, opt.optim.seed);
  s.teacher_head = init_projection_head(teacher.spec().feature_dim(), cfg.proj_dim, Owner::teacher, opt.optim.seed);
  s.tau = Parameter("tau", Tensor::scalar(cfg.tau_init), std::make_pair(0.0, cfg.tau_max));
  s.bias = Parameter("bias", Tensor::scalar(cfg.b_init));

  Sgd sgd(opt.optim.momentum, opt.optim.weight_decay);
  for (auto& p : s.model.params()) sgd.add(p);
  sgd.add(s.student_head.weight);
  sgd.add(s.teacher_head.weight);
  if (cfg.learn_temperature) {
    sgd.add(s.tau, false);
    sgd.add(s.bias, false);
  }

  const bool vanilla = cfg.beta == 0.0 && cfg.lambda_kl == 0.0;
  const BatchPlan plan = detail::train_plan(opt, 2);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.optim.epochs; ++epoch) {
    const double lr = opt.optim.lr_at(epoch);
    BatchStream stream(train, plan, st, epoch);
    EpochLog e;
    e.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t k = 0; k < stream.size(); ++k, ++step) {
      const Batch b = stream[k];
      Tape tape;
      const Var x = tape.constant(b.images);
      const ForwardResult so = s.model.forward(tape, x);
      detail::check_finite(so.logits, "logits", step);
      Var objective;
      LossBreakdown terms;
      if (vanilla) {
        objective = cross_entropy_loss(so.logits, b.labels);
        terms.sup = terms.total = objective.item();
      } else {
        const ForwardResult to = teacher.forward_frozen(tape, x);
        EmbeddingPair pair;
        try {
          pair = {project(s.student_head, so.features), project(s.teacher_head, to.features)};
        } catch (const DegenerateInputError& err) {
          // A dead ReLU layer yields an all-zero feature row; training cannot continue from it.
          throw DivergenceError(std::string("embedding collapsed: ") + err.what(), step);
        }
        const LogitScale scale{cfg.learn_temperature ? tape.param(s.tau) : tape.constant(s.tau.value),
                               cfg.learn_temperature ? tape.param(s.bias) : tape.constant(s.bias.value), cfg.tau_max};
        const TotalLoss tl = total_loss(so.logits, to.logits, b.labels, pair, scale, cfg);
        objective = tl.total;
        terms = tl.terms;
      }
      detail::check_finite(objective.item(), step);
      sgd.zero_grad();
      tape.backward(objective);
      sgd.step(lr);
      if (!s.tau.within_bounds()) throw Error("tau left its clamp interval at step " + std::to_string(step));
      e.loss += terms.scaled(static_cast<double>(b.labels.size()));
      correct += detail::correct_count(so.logits.value(), b.labels);
    }
    const double n = static_cast<double>(train.size());
    e.loss = e.loss.scaled(1.0 / n);
    e.tau = s.tau.value.item();
    e.bias = s.bias.value.item();
    e.train_acc = 100.0 * static_cast<double>(correct) / n;
    if (test.size() && (opt.eval_each_epoch || epoch + 1 == opt.optim.epochs))
      e.test_acc = evaluate_accuracy(s.model, test, st);
    r.log.push_back(e);
    if (opt.on_epoch) opt.on_epoch(e);
  }
  r.train_acc = evaluate_accuracy(s.model, train, st);
  r.test_acc = test.size() ? evaluate_accuracy(s.model, test, st) : 0.0;
  return r;
}

inline DistillResult distill(const Checkpoint& teacher_ckpt, const ModelSpec& student_spec, const Dataset& train,
                             const Dataset& test, const DistillConfig& cfg, const TrainOptions& opt) {
  const TeacherResult t = TeacherResult::from_checkpoint(teacher_ckpt);
  return distill(t.model, t.standardizer, student_spec, train, test, cfg, opt);
}

}  // namespace dcd
