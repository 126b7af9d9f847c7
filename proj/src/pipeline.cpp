#include "eegtask/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "eegtask/error.hpp"
#include "eegtask/montage.hpp"
#include "eegtask/seed.hpp"
#include "json.hpp"

namespace eegtask {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(ErrorCode::InvalidConfig, "unknown key '" + std::string(where) + "." + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, std::string_view key, T& out) {
  if (auto it = j.find(std::string(key)); it != j.end()) out = it->get<T>();
}

std::string_view kernel_name(KernelKind k) { return k == KernelKind::Linear ? "linear" : "rbf"; }

KernelKind parse_kernel(const std::string& s) {
  if (s == "linear") return KernelKind::Linear;
  if (s == "rbf") return KernelKind::Rbf;
  throw Error(ErrorCode::InvalidConfig, "svm.kernel must be 'linear' or 'rbf'");
}

}  // namespace

PipelineConfig parse_config(std::string_view text) {
  PipelineConfig cfg;
  try {
    const auto j = json::parse(text);
    check_keys(j, "config",
               {"dataset_dir", "output_dir", "seed", "filter", "ptp_threshold_uv", "welch", "bands", "electrodes",
                "rfe", "svm", "cnn", "synth", "train_fraction", "eval_repeats"});
    if (auto it = j.find("dataset_dir"); it != j.end()) cfg.dataset_dir = it->get<std::string>();
    if (auto it = j.find("output_dir"); it != j.end()) cfg.output_dir = it->get<std::string>();
    read(j, "seed", cfg.seed);
    read(j, "ptp_threshold_uv", cfg.ptp_threshold_uv);
    read(j, "train_fraction", cfg.train_fraction);
    read(j, "eval_repeats", cfg.eval_repeats);
    read(j, "electrodes", cfg.electrodes);
    if (auto it = j.find("filter"); it != j.end()) {
      check_keys(*it, "filter", {"low_hz", "high_hz", "order", "zero_phase"});
      read(*it, "low_hz", cfg.filter.low_hz);
      read(*it, "high_hz", cfg.filter.high_hz);
      read(*it, "order", cfg.filter.order);
      read(*it, "zero_phase", cfg.filter.zero_phase);
    }
    if (auto it = j.find("welch"); it != j.end()) {
      check_keys(*it, "welch", {"segment_len", "overlap", "window"});
      read(*it, "segment_len", cfg.welch.segment_len);
      read(*it, "overlap", cfg.welch.overlap);
      if (auto w = it->find("window"); w != it->end() && w->get<std::string>() != "hann") {
        throw Error(ErrorCode::InvalidConfig, "welch.window must be 'hann'");
      }
    }
    if (auto it = j.find("bands"); it != j.end()) {
      cfg.bands.clear();
      for (const auto& b : *it) {
        check_keys(b, "bands[]", {"name", "lo_hz", "hi_hz"});
        cfg.bands.push_back({b.at("name"), b.at("lo_hz"), b.at("hi_hz")});
      }
    }
    if (auto it = j.find("rfe"); it != j.end()) {
      check_keys(*it, "rfe", {"target_k", "drop_fraction", "n_repeats", "svm_c", "tol", "max_passes"});
      read(*it, "target_k", cfg.rfe.target_k);
      read(*it, "drop_fraction", cfg.rfe.drop_fraction);
      read(*it, "n_repeats", cfg.rfe.n_repeats);
      read(*it, "svm_c", cfg.rfe.smo.C);
      read(*it, "tol", cfg.rfe.smo.tol);
      read(*it, "max_passes", cfg.rfe.smo.max_passes);
    }
    if (auto it = j.find("svm"); it != j.end()) {
      check_keys(*it, "svm", {"c", "kernel", "gamma"});
      read(*it, "c", cfg.svm.c);
      read(*it, "gamma", cfg.svm.gamma);
      if (auto k = it->find("kernel"); k != it->end()) cfg.svm.kernel = parse_kernel(k->get<std::string>());
    }
    if (auto it = j.find("cnn"); it != j.end()) {
      check_keys(*it, "cnn",
                 {"learning_rate", "beta1", "beta2", "adam_eps", "batch_size", "max_epochs", "patience",
                  "validation_fraction"});
      read(*it, "learning_rate", cfg.cnn.learning_rate);
      read(*it, "beta1", cfg.cnn.beta1);
      read(*it, "beta2", cfg.cnn.beta2);
      read(*it, "adam_eps", cfg.cnn.adam_eps);
      read(*it, "batch_size", cfg.cnn.batch_size);
      read(*it, "max_epochs", cfg.cnn.max_epochs);
      read(*it, "patience", cfg.cnn.patience);
      read(*it, "validation_fraction", cfg.cnn.validation_fraction);
    }
    if (auto it = j.find("synth"); it != j.end()) {
      check_keys(*it, "synth", {"n_subjects", "epochs_per_class", "snr", "noise_sd_uv", "n_experts", "planted"});
      read(*it, "n_subjects", cfg.synth.n_subjects);
      read(*it, "epochs_per_class", cfg.synth.epochs_per_class);
      read(*it, "snr", cfg.synth.snr);
      read(*it, "noise_sd_uv", cfg.synth.noise_sd_uv);
      if (auto n = it->find("n_experts"); n != it->end() && !n->is_null()) cfg.synth.n_experts = n->get<std::size_t>();
      if (auto p = it->find("planted"); p != it->end()) {
        if (!p->is_array() || p->size() != 3) throw Error(ErrorCode::InvalidConfig, "synth.planted needs 3 entries");
        for (std::size_t c = 0; c < 3; ++c) {
          check_keys((*p)[c], "synth.planted[]", {"channel_a", "channel_b", "band"});
          cfg.synth.planted[c] = {(*p)[c].at("channel_a"), (*p)[c].at("channel_b"), (*p)[c].at("band")};
        }
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  validate(cfg);
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_json(const PipelineConfig& cfg) {
  json bands = json::array();
  for (const auto& b : cfg.bands) bands.push_back({{"name", b.name}, {"lo_hz", b.lo_hz}, {"hi_hz", b.hi_hz}});
  json planted = json::array();
  for (const auto& p : cfg.synth.planted) {
    planted.push_back({{"channel_a", p.channel_a}, {"channel_b", p.channel_b}, {"band", p.band}});
  }
  json j = {
      {"dataset_dir", cfg.dataset_dir.string()},
      {"output_dir", cfg.output_dir.string()},
      {"seed", cfg.seed},
      {"filter",
       {{"low_hz", cfg.filter.low_hz},
        {"high_hz", cfg.filter.high_hz},
        {"order", cfg.filter.order},
        {"zero_phase", cfg.filter.zero_phase}}},
      {"ptp_threshold_uv", cfg.ptp_threshold_uv},
      {"welch", {{"segment_len", cfg.welch.segment_len}, {"overlap", cfg.welch.overlap}, {"window", "hann"}}},
      {"bands", bands},
      {"electrodes", cfg.electrodes},
      {"rfe",
       {{"target_k", cfg.rfe.target_k},
        {"drop_fraction", cfg.rfe.drop_fraction},
        {"n_repeats", cfg.rfe.n_repeats},
        {"svm_c", cfg.rfe.smo.C},
        {"tol", cfg.rfe.smo.tol},
        {"max_passes", cfg.rfe.smo.max_passes}}},
      {"svm", {{"c", cfg.svm.c}, {"kernel", kernel_name(cfg.svm.kernel)}, {"gamma", cfg.svm.gamma}}},
      {"cnn",
       {{"learning_rate", cfg.cnn.learning_rate},
        {"beta1", cfg.cnn.beta1},
        {"beta2", cfg.cnn.beta2},
        {"adam_eps", cfg.cnn.adam_eps},
        {"batch_size", cfg.cnn.batch_size},
        {"max_epochs", cfg.cnn.max_epochs},
        {"patience", cfg.cnn.patience},
        {"validation_fraction", cfg.cnn.validation_fraction}}},
      {"synth",
       {{"n_subjects", cfg.synth.n_subjects},
        {"epochs_per_class", cfg.synth.epochs_per_class},
        {"snr", cfg.synth.snr},
        {"noise_sd_uv", cfg.synth.noise_sd_uv},
        {"n_experts", cfg.synth.n_experts ? json(*cfg.synth.n_experts) : json(nullptr)},
        {"planted", planted}}},
      {"train_fraction", cfg.train_fraction},
      {"eval_repeats", cfg.eval_repeats}};
  return j.dump(2) + "\n";
}

void validate(const PipelineConfig& cfg) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (!(cfg.filter.low_hz > 0.0 && cfg.filter.low_hz < cfg.filter.high_hz && cfg.filter.high_hz < kSampleRateHz / 2.0)) {
    fail("filter edges must satisfy 0 < low < high < 128 Hz");
  }
  if (cfg.filter.order < 1) fail("filter.order must be positive");
  if (!(cfg.ptp_threshold_uv > 0.0)) fail("ptp_threshold_uv must be positive");
  if (cfg.welch.segment_len < 2 || cfg.welch.segment_len > kEpochSamples) fail("welch.segment_len out of range");
  if (!(cfg.welch.overlap >= 0.0 && cfg.welch.overlap < 1.0)) fail("welch.overlap must lie in [0, 1)");
  if (cfg.bands.empty()) fail("bands must not be empty");
  for (const auto& b : cfg.bands) {
    if (!(b.lo_hz >= 0.0 && b.lo_hz < b.hi_hz && b.hi_hz <= kSampleRateHz / 2.0)) fail("band '" + b.name + "' edges");
  }
  if (cfg.electrodes.size() < 2) fail("need at least two electrodes");
  for (const auto& e : cfg.electrodes) {
    if (!montage_index(e)) fail("electrode '" + e + "' is not in the montage");
  }
  if (cfg.rfe.target_k < 1) fail("rfe.target_k must be positive");
  if (!(cfg.rfe.drop_fraction > 0.0 && cfg.rfe.drop_fraction < 1.0)) fail("rfe.drop_fraction must lie in (0, 1)");
  if (cfg.rfe.n_repeats < 1) fail("rfe.n_repeats must be positive");
  if (!(cfg.rfe.smo.C > 0.0) || !(cfg.svm.c > 0.0)) fail("SVM C must be positive");
  if (!(cfg.svm.gamma >= 0.0)) fail("svm.gamma must be non-negative");
  if (!(cfg.cnn.learning_rate > 0.0) || cfg.cnn.batch_size < 1) fail("cnn learning rate and batch size must be positive");
  if (!(cfg.cnn.validation_fraction > 0.0 && cfg.cnn.validation_fraction < 1.0)) {
    fail("cnn.validation_fraction must lie in (0, 1)");
  }
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) fail("train_fraction must lie in (0, 1)");
  if (cfg.eval_repeats < 1) fail("eval_repeats must be positive");
  if (cfg.synth.n_subjects < 1 || cfg.synth.epochs_per_class < 1 || !(cfg.synth.snr >= 0.0)) fail("synth sizes");
}

std::uint64_t stage_seed(const PipelineConfig& cfg, std::string_view stage) { return derive_seed(cfg.seed, stage); }

PreprocessResult preprocess(std::span<const Recording> recordings, const PipelineConfig& cfg) {
  PreprocessResult out;
  for (const auto& r : recordings) {
    auto rejected = reject_artifacts(epoch_signal(bandpass_filter(r, cfg.filter)), cfg.ptp_threshold_uv);
    out.dropped_count += rejected.dropped_count;
    for (auto& e : rejected.kept) out.epochs.push_back(std::move(e));
  }
  return out;
}

FeatureMatrix compute_features(std::span<const Epoch> epochs, const PipelineConfig& cfg) {
  return extract_feature_matrix(epochs, cfg.electrodes, cfg.bands, cfg.welch);
}

SelectionResult select_features(const FeatureMatrix& fm, const PipelineConfig& cfg) {
  RfeConfig rfe = cfg.rfe;
  rfe.seed = stage_seed(cfg, "select");
  return rfe_stable(fm.values, fm.labels, rfe);
}

std::vector<SelectedFeature> selection_table(const SelectionResult& sel, std::span<const FeatureKey> index) {
  std::vector<SelectedFeature> out;
  for (auto f : sel.selected) {
    const auto it = std::find_if(sel.ranked.begin(), sel.ranked.end(), [&](const auto& p) { return p.first == f; });
    out.push_back({index[f].pair(), index[f].band, it == sel.ranked.end() ? 0 : it->second});
  }
  return out;
}

namespace {

Matrix<double> gather(const Matrix<double>& x, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Matrix<double> out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = x(rows[i], cols[j]);
  }
  return out;
}

}  // namespace

FitPredict make_svm_classifier(const FeatureMatrix& fm, std::vector<std::size_t> columns, const PipelineConfig& cfg,
                               bool select_in_fold) {
  auto values = std::make_shared<const Matrix<double>>(fm.values);
  auto labels = std::make_shared<const std::vector<int>>(fm.labels);
  if (columns.empty()) {
    columns.resize(fm.values.cols());
    std::iota(columns.begin(), columns.end(), 0);
  }
  const KernelSpec kernel{cfg.svm.kernel, cfg.svm.gamma};
  SmoOptions opt;
  opt.C = cfg.svm.c;
  RfeConfig rfe = cfg.rfe;
  return [values, labels, columns, kernel, opt, rfe, select_in_fold](std::span<const std::size_t> train,
                                                                     std::span<const std::size_t> test,
                                                                     std::uint64_t) {
    std::vector<int> y;
    for (auto i : train) y.push_back((*labels)[i]);
    auto cols = columns;
    if (select_in_fold) {
      std::vector<std::size_t> all(values->cols());
      std::iota(all.begin(), all.end(), 0);
      const auto sub = rfe_once(gather(*values, train, all), y, rfe);
      cols = sub;
    }
    const auto model = train_multiclass(gather(*values, train, cols), y, kernel, opt);
    std::vector<int> pred;
    std::vector<double> row(cols.size());
    for (auto i : test) {
      for (std::size_t j = 0; j < cols.size(); ++j) row[j] = (*values)(i, cols[j]);
      pred.push_back(predict(model, row).label);
    }
    return pred;
  };
}

FitPredict make_cnn_classifier(std::span<const Epoch> epochs, const PipelineConfig& cfg, const NetworkShape& shape) {
  auto inputs = std::make_shared<std::vector<std::vector<float>>>();
  auto labels = std::make_shared<std::vector<int>>();
  for (const auto& e : epochs) {
    inputs->push_back(flatten(e));
    labels->push_back(static_cast<int>(e.difficulty));
  }
  const TrainConfig base = cfg.cnn;
  return [inputs, labels, base, shape](std::span<const std::size_t> train, std::span<const std::size_t> test,
                                       std::uint64_t seed) {
    TrainConfig tc = base;
    tc.seed = seed;
    // Stratified validation hold-out from the training fold.
    Rng rng(derive_seed(seed, "validation"));
    std::vector<std::vector<float>> tx, vx;
    std::vector<int> ty, vy;
    for (int c = 0; c < kNumClasses; ++c) {
      std::vector<std::size_t> idx;
      for (auto i : train) {
        if ((*labels)[i] == c) idx.push_back(i);
      }
      std::shuffle(idx.begin(), idx.end(), rng);
      const auto n_val = static_cast<std::size_t>(tc.validation_fraction * static_cast<double>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) {
        (k < n_val ? vx : tx).push_back((*inputs)[idx[k]]);
        (k < n_val ? vy : ty).push_back(c);
      }
    }
    const auto result = train_cnn(tx, ty, vx, vy, tc, shape);
    std::vector<int> pred;
    for (auto i : test) pred.push_back(predict_class(result.model, (*inputs)[i]));
    return pred;
  };
}

PlanSource independent_plans(std::span<const int> labels, const PipelineConfig& cfg) {
  auto y = std::make_shared<const std::vector<int>>(labels.begin(), labels.end());
  const double fraction = cfg.train_fraction;
  return [y, fraction](std::uint64_t seed) {
    const auto kept = balance_classes(*y, derive_seed(seed, "balance"));
    return split_subject_independent(*y, fraction, derive_seed(seed, "split"), kept);
  };
}

PlanSource loso_plans(std::span<const int> labels, std::span<const std::string> subjects, const PipelineConfig& cfg) {
  const auto plan = std::make_shared<const SplitPlan>(split_loso(labels, subjects, stage_seed(cfg, "loso")));
  return [plan](std::uint64_t) { return *plan; };
}

PlanSource group_plans(std::span<const int> labels, std::span<const std::string> subjects,
                       std::span<const std::string> group, Scheme scheme, const PipelineConfig& cfg) {
  const std::set<std::string> members(group.begin(), group.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (members.count(subjects[i])) rows.push_back(i);
  }
  if (rows.empty()) {
    throw Error(ErrorCode::EmptyClass, std::string(to_string(scheme)) + " group has no epochs");
  }
  auto y = std::make_shared<const std::vector<int>>(labels.begin(), labels.end());
  auto subset = std::make_shared<const std::vector<std::size_t>>(std::move(rows));
  const double fraction = cfg.train_fraction;
  return [y, subset, fraction, scheme](std::uint64_t seed) {
    std::vector<int> sub_labels;
    for (auto i : *subset) sub_labels.push_back((*y)[i]);
    std::vector<std::size_t> kept;
    for (auto k : balance_classes(sub_labels, derive_seed(seed, "balance"))) kept.push_back((*subset)[k]);
    auto plan = split_subject_independent(*y, fraction, derive_seed(seed, "split"), kept);
    plan.scheme = scheme;
    return plan;
  };
}

}  // namespace eegtask
