// Command-line front end: one subcommand per pipeline stage.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "eegtask/error.hpp"
#include "eegtask/pipeline.hpp"
#include "eegtask/recording.hpp"
#include "eegtask/store.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace eegtask;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataset_dir, output_dir;
  std::optional<double> ptp_threshold, filter_low, filter_high;
  std::optional<int> filter_order;
  std::optional<std::size_t> segment_len;
  std::optional<double> overlap;
  std::optional<std::size_t> target_k;
  std::optional<double> drop_fraction;
  std::optional<std::size_t> rfe_repeats;
  std::optional<double> svm_c;
  std::optional<std::string> svm_kernel;
  std::optional<double> svm_gamma;
  std::optional<std::size_t> cnn_max_epochs, cnn_batch_size;
  std::optional<double> cnn_lr;
  std::optional<std::size_t> cnn_patience;
  std::optional<std::size_t> eval_repeats;
  std::optional<std::size_t> synth_subjects, synth_epochs;
  std::optional<double> synth_snr;
  std::optional<std::size_t> synth_experts;
};

void add_overrides(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "JSON configuration file (strict schema)");
  app->add_option("--seed", o.seed, "Global seed");
  app->add_option("--dataset-dir", o.dataset_dir, "Directory of recording manifests");
  app->add_option("--output-dir", o.output_dir, "Directory for all stage outputs");
  app->add_option("--ptp-threshold", o.ptp_threshold, "Artifact rejection peak-to-peak threshold (uV)");
  app->add_option("--filter-low", o.filter_low, "Band-pass low edge (Hz)");
  app->add_option("--filter-high", o.filter_high, "Band-pass high edge (Hz)");
  app->add_option("--filter-order", o.filter_order, "Butterworth prototype order");
  app->add_option("--segment-len", o.segment_len, "Welch segment length (samples)");
  app->add_option("--overlap", o.overlap, "Welch segment overlap fraction");
  app->add_option("--target-k", o.target_k, "Features kept by recursive elimination");
  app->add_option("--drop-fraction", o.drop_fraction, "Fraction of features removed per elimination step");
  app->add_option("--rfe-repeats", o.rfe_repeats, "Bootstrap repeats of feature elimination");
  app->add_option("--svm-c", o.svm_c, "SVM box constraint C");
  app->add_option("--svm-kernel", o.svm_kernel, "SVM kernel: linear or rbf")->check(CLI::IsMember({"linear", "rbf"}));
  app->add_option("--svm-gamma", o.svm_gamma, "RBF gamma (0 = 1/n_features)");
  app->add_option("--cnn-max-epochs", o.cnn_max_epochs, "CNN training epochs limit");
  app->add_option("--cnn-batch-size", o.cnn_batch_size, "CNN mini-batch size");
  app->add_option("--cnn-lr", o.cnn_lr, "CNN Adam learning rate");
  app->add_option("--cnn-patience", o.cnn_patience, "Early-stopping patience (epochs)");
  app->add_option("--eval-repeats", o.eval_repeats, "Evaluation repeats");
  app->add_option("--synth-subjects", o.synth_subjects, "Synthetic cohort size");
  app->add_option("--synth-epochs", o.synth_epochs, "Synthetic epochs per class per subject");
  app->add_option("--synth-snr", o.synth_snr, "Synthetic planted amplitude / noise sd");
  app->add_option("--synth-experts", o.synth_experts, "Synthetic subjects scored as experts");
}

PipelineConfig resolve(const Overrides& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.dataset_dir) cfg.dataset_dir = *o.dataset_dir;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.ptp_threshold) cfg.ptp_threshold_uv = *o.ptp_threshold;
  if (o.filter_low) cfg.filter.low_hz = *o.filter_low;
  if (o.filter_high) cfg.filter.high_hz = *o.filter_high;
  if (o.filter_order) cfg.filter.order = *o.filter_order;
  if (o.segment_len) cfg.welch.segment_len = *o.segment_len;
  if (o.overlap) cfg.welch.overlap = *o.overlap;
  if (o.target_k) cfg.rfe.target_k = *o.target_k;
  if (o.drop_fraction) cfg.rfe.drop_fraction = *o.drop_fraction;
  if (o.rfe_repeats) cfg.rfe.n_repeats = *o.rfe_repeats;
  if (o.svm_c) cfg.svm.c = *o.svm_c;
  if (o.svm_kernel) cfg.svm.kernel = *o.svm_kernel == "linear" ? KernelKind::Linear : KernelKind::Rbf;
  if (o.svm_gamma) cfg.svm.gamma = *o.svm_gamma;
  if (o.cnn_max_epochs) cfg.cnn.max_epochs = *o.cnn_max_epochs;
  if (o.cnn_batch_size) cfg.cnn.batch_size = *o.cnn_batch_size;
  if (o.cnn_lr) cfg.cnn.learning_rate = *o.cnn_lr;
  if (o.cnn_patience) cfg.cnn.patience = *o.cnn_patience;
  if (o.eval_repeats) cfg.eval_repeats = *o.eval_repeats;
  if (o.synth_subjects) cfg.synth.n_subjects = *o.synth_subjects;
  if (o.synth_epochs) cfg.synth.epochs_per_class = *o.synth_epochs;
  if (o.synth_snr) cfg.synth.snr = *o.synth_snr;
  if (o.synth_experts) cfg.synth.n_experts = *o.synth_experts;
  validate(cfg);
  return cfg;
}

void require(const fs::path& p, std::string_view producer) {
  if (!fs::exists(p)) {
    throw Error(ErrorCode::MissingFile, p.string() + " not found (run `eegtask " + std::string(producer) + "` first)");
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void cmd_synth(const PipelineConfig& cfg) {
  SynthConfig sc = cfg.synth;
  sc.seed = stage_seed(cfg, "synth");
  const auto recordings = synth_generate(sc);
  fs::create_directories(cfg.dataset_dir);
  for (const auto& r : recordings) save_recording(r, cfg.dataset_dir);
  std::printf("wrote %zu recordings to %s\n", recordings.size(), cfg.dataset_dir.string().c_str());
}

void cmd_preprocess(const PipelineConfig& cfg) {
  const auto manifests = list_manifests(cfg.dataset_dir);
  if (manifests.empty()) {
    throw Error(ErrorCode::MissingFile, "no recording manifests in " + cfg.dataset_dir.string() +
                                            " (run `eegtask synth` first)");
  }
  std::vector<Recording> recordings;
  for (const auto& m : manifests) recordings.push_back(load_recording(m));
  const auto result = preprocess(recordings, cfg);
  fs::create_directories(cfg.output_dir);
  save_epochs(result.epochs, subject_scores(recordings), cfg.output_dir / "epochs.json");
  std::printf("kept %zu epochs, dropped %zu epochs\n", result.epochs.size(), result.dropped_count);
}

void cmd_features(const PipelineConfig& cfg) {
  const auto epochs_path = cfg.output_dir / "epochs.json";
  require(epochs_path, "preprocess");
  const auto store = load_epochs(epochs_path);
  const auto fm = compute_features(store.epochs, cfg);
  save_features(fm, store.scores, cfg.output_dir / "features.bin");
  std::printf("wrote %zu x %zu feature matrix\n", fm.values.rows(), fm.values.cols());
}

void cmd_select(const PipelineConfig& cfg) {
  const auto features_path = cfg.output_dir / "features.bin";
  require(features_path, "features");
  const auto store = load_features(features_path);
  const auto sel = select_features(store.matrix, cfg);
  const auto& index = store.matrix.index;

  std::ostringstream txt;
  txt << "Significant Features\n";
  txt << "repeats: " << sel.n_repeats << '\n';
  txt << "Electrode pair | Frequency | Band | Count\n";
  nlohmann::json ranked = nlohmann::json::array();
  for (const auto& [f, count] : sel.ranked) {
    txt << index[f].pair() << " | " << band_range_label(index[f].band) << " | " << index[f].band.name << " | " << count
        << '\n';
    ranked.push_back({{"index", f}, {"name", index[f].name()}, {"count", count}});
  }
  nlohmann::json selected = nlohmann::json::array();
  for (auto f : sel.selected) selected.push_back({{"index", f}, {"name", index[f].name()}});
  const nlohmann::json j = {{"n_repeats", sel.n_repeats}, {"target_k", cfg.rfe.target_k},
                            {"selected", selected},       {"ranked", ranked}};
  write_text(cfg.output_dir / "selection.txt", txt.str());
  write_text(cfg.output_dir / "selection.json", j.dump(2) + "\n");
  std::printf("%s", txt.str().c_str());
}

std::vector<std::size_t> selected_columns(const nlohmann::json& j) {
  std::vector<std::size_t> out;
  for (const auto& s : j.at("selected")) out.push_back(s.at("index"));
  return out;
}

void cmd_train(const PipelineConfig& cfg, const std::string& model) {
  if (model == "svm") {
    const auto features_path = cfg.output_dir / "features.bin";
    const auto selection_path = cfg.output_dir / "selection.json";
    require(features_path, "features");
    require(selection_path, "select");
    const auto store = load_features(features_path);
    const auto selection = nlohmann::json::parse(read_text(selection_path));
    const auto cols = selected_columns(selection);
    const auto& fm = store.matrix;
    Matrix<double> x(fm.values.rows(), cols.size());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) x(i, j) = fm.values(i, cols[j]);
    }
    SmoOptions opt;
    opt.C = cfg.svm.c;
    const auto m = train_multiclass(x, fm.labels, {cfg.svm.kernel, cfg.svm.gamma}, opt);
    nlohmann::json j = nlohmann::json::parse(serialize(m));
    nlohmann::json wrapper = {{"selected", selection.at("selected")}, {"model", j}};
    write_text(cfg.output_dir / "svm_model.json", wrapper.dump(2) + "\n");
    std::printf("trained SVM on %zu epochs x %zu features\n", x.rows(), x.cols());
  } else {
    const auto epochs_path = cfg.output_dir / "epochs.json";
    require(epochs_path, "preprocess");
    const auto store = load_epochs(epochs_path);
    TrainConfig tc = cfg.cnn;
    tc.seed = stage_seed(cfg, "train-cnn");
    const auto result = train_cnn(store.epochs, tc);
    save_checkpoint(result.model, cfg.output_dir / "cnn_model.json");
    write_text(cfg.output_dir / "cnn_history.csv", history_csv(result.history));
    std::printf("trained CNN: best epoch %zu, validation accuracy %.4f\n", result.best_epoch,
                result.best_val_accuracy);
  }
}

void cmd_evaluate(const PipelineConfig& cfg, const std::string& scheme_name, const std::string& model) {
  const auto scheme = parse_scheme(scheme_name);
  const auto kind = parse_classifier(model);
  const auto checkpoint = cfg.output_dir / (kind == ClassifierKind::Svm ? "svm_model.json" : "cnn_model.json");
  require(checkpoint, "train " + model);

  std::vector<int> labels;
  std::vector<std::string> subjects;
  std::vector<SubjectScore> scores;
  FitPredict fit;
  std::vector<SelectedFeature> table;
  if (kind == ClassifierKind::Svm) {
    const auto features_path = cfg.output_dir / "features.bin";
    require(features_path, "features");
    const auto store = load_features(features_path);
    const auto wrapper = nlohmann::json::parse(read_text(checkpoint));
    const auto cols = selected_columns(wrapper);
    labels = store.matrix.labels;
    subjects = store.matrix.subjects;
    scores = store.scores;
    fit = make_svm_classifier(store.matrix, cols, cfg);
    const auto selection_path = cfg.output_dir / "selection.json";
    if (fs::exists(selection_path)) {
      const auto sel = nlohmann::json::parse(read_text(selection_path));
      for (const auto& r : sel.at("ranked")) {
        const std::size_t f = r.at("index");
        if (std::find(cols.begin(), cols.end(), f) == cols.end()) continue;
        const auto& key = store.matrix.index[f];
        table.push_back({key.pair(), key.band, r.at("count")});
      }
    }
  } else {
    const auto epochs_path = cfg.output_dir / "epochs.json";
    require(epochs_path, "preprocess");
    const auto store = load_epochs(epochs_path);
    const auto net = load_checkpoint(checkpoint);
    for (const auto& e : store.epochs) {
      labels.push_back(static_cast<int>(e.difficulty));
      subjects.push_back(e.subject_id);
    }
    scores = store.scores;
    fit = make_cnn_classifier(store.epochs, cfg, net.shape());
  }

  PlanSource plans;
  if (scheme == Scheme::SubjectIndependent) {
    plans = independent_plans(labels, cfg);
  } else if (scheme == Scheme::SubjectDependent) {
    plans = loso_plans(labels, subjects, cfg);
  } else {
    const auto part = label_expertise(scores);
    const auto& group = scheme == Scheme::Expert ? part.experts : part.novices;
    if (group.empty()) throw Error(ErrorCode::EmptyClass, std::string(to_string(scheme)) + " group is empty");
    plans = group_plans(labels, subjects, group, scheme, cfg);
  }
  const auto eval_seed = stage_seed(cfg, "evaluate-" + std::string(to_string(scheme)) + "-" + model);
  auto rep = evaluate(kind, labels, plans, fit, cfg.eval_repeats, eval_seed);
  rep.selected_features = table;
  const auto path = cfg.output_dir / ("report_" + std::string(to_string(scheme)) + "_" + model + ".txt");
  write_report(rep, path);
  std::printf("%s | %s\n", kind == ClassifierKind::Svm ? "SVM" : "CNN",
              format_accuracy(rep.accuracy_mean, rep.accuracy_std).c_str());
}

bool is_validation_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::MissingFile:
    case ErrorCode::LengthMismatch:
    case ErrorCode::UnknownChannelLabel:
    case ErrorCode::DuplicateChannelLabel:
    case ErrorCode::OverlappingEvents:
    case ErrorCode::InvalidManifest:
    case ErrorCode::InvalidReport:
    case ErrorCode::BandOutOfRange:
    case ErrorCode::MissingElectrode:
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidPlantTarget:
    case ErrorCode::InvalidConfig:
      return true;
    default:
      return false;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG coherence / CNN task-difficulty pipeline"};
  app.require_subcommand(1);

  Overrides o;
  std::string train_model, eval_scheme, eval_model;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic cohort into the dataset directory");
  auto* pre = app.add_subcommand("preprocess", "Filter, epoch and reject artifacts; writes epochs.json/.f32");
  auto* feat = app.add_subcommand("features", "Coherence features; writes features.bin");
  auto* sel = app.add_subcommand("select", "Recursive feature elimination; writes selection.txt/.json");
  auto* train = app.add_subcommand("train", "Train a model on all epochs; writes svm_model.json or cnn_model.json");
  train->add_option("model", train_model, "svm or cnn")->required()->check(CLI::IsMember({"svm", "cnn"}));
  auto* eval = app.add_subcommand("evaluate", "Repeated evaluation; writes report_<scheme>_<model>.txt/.json");
  eval->add_option("scheme", eval_scheme, "independent, loso, expert or novice")
      ->required()
      ->check(CLI::IsMember({"independent", "loso", "expert", "novice"}));
  eval->add_option("model", eval_model, "svm or cnn")->required()->check(CLI::IsMember({"svm", "cnn"}));
  auto* config = app.add_subcommand("config", "Print the resolved configuration as JSON");
  for (auto* sub : {synth, pre, feat, sel, train, eval, config}) add_overrides(sub, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = resolve(o);
    if (stage == "synth") cmd_synth(cfg);
    else if (stage == "preprocess") cmd_preprocess(cfg);
    else if (stage == "features") cmd_features(cfg);
    else if (stage == "select") cmd_select(cfg);
    else if (stage == "train") cmd_train(cfg, train_model);
    else if (stage == "evaluate") cmd_evaluate(cfg, eval_scheme, eval_model);
    else std::printf("%s", config_json(cfg).c_str());
  } catch (const Error& e) {
    std::fprintf(stderr, "[%s] %s\n", stage.c_str(), e.what());
    return is_validation_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "[%s] %s\n", stage.c_str(), e.what());
    return 2;
  }
  return 0;
}
