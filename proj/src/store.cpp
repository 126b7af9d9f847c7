#include "eegtask/store.hpp"

#include <fstream>
#include <sstream>

#include "eegtask/error.hpp"
#include "eegtask/recording.hpp"
#include "json.hpp"

namespace eegtask {

namespace {

using nlohmann::json;

json scores_json(std::span<const SubjectScore> scores) {
  json out = json::array();
  for (const auto& s : scores) out.push_back({{"subject_id", s.subject_id}, {"mot_score", s.mot_score}, {"vs_score", s.vs_score}});
  return out;
}

std::vector<SubjectScore> scores_from_json(const json& j) {
  std::vector<SubjectScore> out;
  for (const auto& s : j) out.push_back({s.at("subject_id"), s.at("mot_score"), s.at("vs_score")});
  return out;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, path.string() + ": " + e.what());
  }
}

std::filesystem::path sibling(const std::filesystem::path& p, const std::string& ext) {
  auto out = p;
  out.replace_extension(ext);
  return out;
}

}  // namespace

void save_epochs(std::span<const Epoch> epochs, std::span<const SubjectScore> scores,
                 const std::filesystem::path& header_path) {
  const auto blob_path = sibling(header_path, ".f32");
  json items = json::array();
  std::size_t n_ch = 0, n_t = 0;
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  for (const auto& e : epochs) {
    if (items.empty()) {
      n_ch = e.samples.rows();
      n_t = e.samples.cols();
    } else if (e.samples.rows() != n_ch || e.samples.cols() != n_t) {
      throw Error(ErrorCode::ShapeMismatch, "epochs differ in shape");
    }
    items.push_back({{"subject_id", e.subject_id}, {"difficulty", static_cast<int>(e.difficulty)}});
    detail::write_f32_le(blob, e.samples.data());
  }
  json j = {{"format", "eegtask-epochs-1"},
            {"byte_order", "little"},
            {"dtype", "f32"},
            {"data_file", blob_path.filename().string()},
            {"n_epochs", epochs.size()},
            {"n_channels", n_ch},
            {"n_samples", n_t},
            {"channel_labels", epochs.empty() ? std::vector<std::string>{} : epochs.front().channel_labels},
            {"epochs", items},
            {"subjects", scores_json(scores)}};
  std::ofstream header(header_path, std::ios::trunc);
  header << j.dump(1) << '\n';
  if (!blob || !header) throw Error(ErrorCode::IoFailure, "cannot write " + header_path.string());
}

EpochStore load_epochs(const std::filesystem::path& header_path) {
  const auto j = read_json(header_path);
  try {
    if (j.at("format") != "eegtask-epochs-1" || j.at("byte_order") != "little" || j.at("dtype") != "f32") {
      throw Error(ErrorCode::InvalidManifest, header_path.string() + ": unsupported epoch store");
    }
    const std::size_t n = j.at("n_epochs"), n_ch = j.at("n_channels"), n_t = j.at("n_samples");
    const auto labels = j.at("channel_labels").get<std::vector<std::string>>();
    const auto blob_path = header_path.parent_path() / j.at("data_file").get<std::string>();
    std::error_code ec;
    const auto size = std::filesystem::file_size(blob_path, ec);
    if (ec) throw Error(ErrorCode::MissingFile, blob_path.string());
    if (size != n * n_ch * n_t * 4) throw Error(ErrorCode::LengthMismatch, blob_path.string());
    std::ifstream blob(blob_path, std::ios::binary);
    EpochStore store;
    for (const auto& item : j.at("epochs")) {
      Epoch e;
      e.subject_id = item.at("subject_id");
      e.difficulty = static_cast<Difficulty>(item.at("difficulty").get<int>());
      e.channel_labels = labels;
      e.samples = Matrix<float>(n_ch, n_t);
      detail::read_f32_le(blob, e.samples.data());
      store.epochs.push_back(std::move(e));
    }
    if (store.epochs.size() != n) throw Error(ErrorCode::InvalidManifest, "epoch count mismatch");
    store.scores = scores_from_json(j.at("subjects"));
    return store;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, header_path.string() + ": " + e.what());
  }
}

void save_features(const FeatureMatrix& fm, std::span<const SubjectScore> scores, const std::filesystem::path& path) {
  if (fm.values.cols() != fm.index.size() || fm.values.rows() != fm.labels.size() ||
      fm.subjects.size() != fm.labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "feature matrix parts disagree");
  }
  std::string header;
  json bands = json::array();
  for (const auto& k : fm.index) {
    header += k.name();
    header += ',';
  }
  header += "label\n";
  std::vector<std::string> seen;
  for (const auto& k : fm.index) {
    if (std::find(seen.begin(), seen.end(), k.band.name) == seen.end()) {
      seen.push_back(k.band.name);
      bands.push_back({{"name", k.band.name}, {"lo_hz", k.band.lo_hz}, {"hi_hz", k.band.hi_hz}});
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << header;
  std::vector<float> row(fm.values.cols() + 1);
  for (std::size_t i = 0; i < fm.values.rows(); ++i) {
    for (std::size_t j = 0; j < fm.values.cols(); ++j) row[j] = static_cast<float>(fm.values(i, j));
    row.back() = static_cast<float>(fm.labels[i]);
    detail::write_f32_le(out, row);
  }
  json meta = {{"format", "eegtask-features-1"},
               {"byte_order", "little"},
               {"dtype", "f32"},
               {"n_rows", fm.values.rows()},
               {"n_features", fm.values.cols()},
               {"bands", bands},
               {"row_subjects", fm.subjects},
               {"subjects", scores_json(scores)}};
  std::ofstream side(sibling(path, ".meta.json"), std::ios::trunc);
  side << meta.dump(1) << '\n';
  if (!out || !side) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

FeatureStore load_features(const std::filesystem::path& path) {
  const auto meta = read_json(sibling(path, ".meta.json"));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  try {
    if (meta.at("format") != "eegtask-features-1" || meta.at("byte_order") != "little" || meta.at("dtype") != "f32") {
      throw Error(ErrorCode::InvalidManifest, path.string() + ": unsupported feature file");
    }
    const std::size_t n_rows = meta.at("n_rows"), n_feat = meta.at("n_features");
    std::vector<BandSpec> bands;
    for (const auto& b : meta.at("bands")) bands.push_back({b.at("name"), b.at("lo_hz"), b.at("hi_hz")});

    std::string header;
    std::getline(in, header);
    std::vector<std::string> names;
    std::stringstream hs(header);
    std::string tok;
    while (std::getline(hs, tok, ',')) names.push_back(tok);
    if (names.size() != n_feat + 1 || names.back() != "label") {
      throw Error(ErrorCode::InvalidManifest, path.string() + ": header does not match metadata");
    }
    FeatureStore store;
    auto& fm = store.matrix;
    for (std::size_t j = 0; j < n_feat; ++j) {
      const auto& name = names[j];
      const auto dash = name.find('-');
      const auto colon = name.find(':');
      if (dash == std::string::npos || colon == std::string::npos || colon < dash) {
        throw Error(ErrorCode::InvalidManifest, "bad feature name '" + name + "'");
      }
      const auto band_name = name.substr(colon + 1);
      const auto band = std::find_if(bands.begin(), bands.end(), [&](const BandSpec& b) { return b.name == band_name; });
      if (band == bands.end()) throw Error(ErrorCode::InvalidManifest, "unknown band in '" + name + "'");
      fm.index.push_back({name.substr(0, dash), name.substr(dash + 1, colon - dash - 1), *band});
    }
    const auto data_start = static_cast<std::uintmax_t>(in.tellg());
    const auto size = std::filesystem::file_size(path);
    if (size - data_start != n_rows * (n_feat + 1) * 4) throw Error(ErrorCode::LengthMismatch, path.string());
    fm.values = Matrix<double>(n_rows, n_feat);
    std::vector<float> row(n_feat + 1);
    for (std::size_t i = 0; i < n_rows; ++i) {
      detail::read_f32_le(in, row);
      for (std::size_t j = 0; j < n_feat; ++j) fm.values(i, j) = row[j];
      fm.labels.push_back(static_cast<int>(row.back()));
    }
    fm.subjects = meta.at("row_subjects").get<std::vector<std::string>>();
    if (fm.subjects.size() != n_rows) throw Error(ErrorCode::InvalidManifest, "row subject count mismatch");
    store.scores = scores_from_json(meta.at("subjects"));
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, path.string() + ": " + e.what());
  }
}

}  // namespace eegtask
