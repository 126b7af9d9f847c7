#include "eegtask/recording.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "eegtask/error.hpp"
#include "eegtask/montage.hpp"
#include "json.hpp"

namespace eegtask {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

void write_f32_le(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      char b[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8),
                   static_cast<char>(bits >> 16), static_cast<char>(bits >> 24)};
      out.write(b, 4);
    }
  }
}

void read_f32_le(std::istream& in, std::span<float> values) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
      v = std::bit_cast<float>(bits);
    }
  }
}

}  // namespace detail

namespace {

template <typename T>
T required(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) {
    throw Error(ErrorCode::InvalidManifest, where.string() + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, where.string() + ": field '" + key + "': " + e.what());
  }
}

void validate_labels(const std::vector<std::string>& labels) {
  std::set<std::string> seen;
  for (const auto& label : labels) {
    if (!montage_index(label)) {
      throw Error(ErrorCode::UnknownChannelLabel, "channel label '" + label + "' is not in the montage");
    }
    if (!seen.insert(label).second) {
      throw Error(ErrorCode::DuplicateChannelLabel, "channel label '" + label + "' repeated");
    }
  }
}

void validate_events(std::vector<Event> events, std::int64_t n_samples) {
  for (const auto& e : events) {
    if (e.onset_sample >= e.offset_sample) {
      throw Error(ErrorCode::InvalidManifest, "event onset must precede offset");
    }
    if (e.onset_sample < 0 || e.offset_sample > n_samples) {
      throw Error(ErrorCode::InvalidManifest, "event outside recording");
    }
    int d = static_cast<int>(e.difficulty);
    if (d < 0 || d > 2) throw Error(ErrorCode::InvalidManifest, "difficulty must be 0, 1 or 2");
  }
  std::sort(events.begin(), events.end(),
            [](const Event& a, const Event& b) { return a.onset_sample < b.onset_sample; });
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].onset_sample < events[i - 1].offset_sample) {
      throw Error(ErrorCode::OverlappingEvents,
                  "events starting at " + std::to_string(events[i - 1].onset_sample) + " and " +
                      std::to_string(events[i].onset_sample) + " overlap");
    }
  }
}

}  // namespace

void validate(const Recording& r) {
  if (r.sample_rate_hz <= 0) throw Error(ErrorCode::InvalidManifest, "sample rate must be positive");
  if (r.channel_labels.size() != r.samples.rows()) {
    throw Error(ErrorCode::LengthMismatch, "channel label count " + std::to_string(r.channel_labels.size()) +
                                               " differs from sample rows " +
                                               std::to_string(r.samples.rows()));
  }
  validate_labels(r.channel_labels);
  validate_events(r.events, static_cast<std::int64_t>(r.n_samples()));
  if (!(r.mot_score >= 0.0 && r.mot_score <= 1.0) || !(r.vs_score >= 0.0 && r.vs_score <= 1.0)) {
    throw Error(ErrorCode::InvalidManifest, "MOT/VS scores must lie in [0, 1]");
  }
}

Recording load_recording(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::MissingFile, manifest_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidManifest, manifest_path.string() + ": " + e.what());
  }

  const auto byte_order = required<std::string>(j, "byte_order", manifest_path);
  const auto dtype = required<std::string>(j, "dtype", manifest_path);
  if (byte_order != "little") throw Error(ErrorCode::InvalidManifest, "unsupported byte_order " + byte_order);
  if (dtype != "f32") throw Error(ErrorCode::InvalidManifest, "unsupported dtype " + dtype);

  Recording r;
  r.subject_id = required<std::string>(j, "subject_id", manifest_path);
  r.sample_rate_hz = required<int>(j, "sample_rate_hz", manifest_path);
  r.channel_labels = required<std::vector<std::string>>(j, "channel_labels", manifest_path);
  const auto n_samples = required<std::int64_t>(j, "n_samples", manifest_path);
  r.mot_score = required<double>(j, "mot_score", manifest_path);
  r.vs_score = required<double>(j, "vs_score", manifest_path);
  if (n_samples < 0) throw Error(ErrorCode::InvalidManifest, "negative n_samples");
  for (const auto& je : required<json>(j, "events", manifest_path)) {
    Event e;
    e.onset_sample = required<std::int64_t>(je, "onset", manifest_path);
    e.offset_sample = required<std::int64_t>(je, "offset", manifest_path);
    e.difficulty = static_cast<Difficulty>(required<int>(je, "difficulty", manifest_path));
    r.events.push_back(e);
  }
  validate_labels(r.channel_labels);

  const fs::path data_path = manifest_path.parent_path() / required<std::string>(j, "data_file", manifest_path);
  std::error_code ec;
  const auto size = fs::file_size(data_path, ec);
  if (ec) throw Error(ErrorCode::MissingFile, data_path.string());
  const std::uintmax_t expected = r.channel_labels.size() * static_cast<std::uintmax_t>(n_samples) * 4u;
  if (size != expected) {
    throw Error(ErrorCode::LengthMismatch, data_path.string() + " holds " + std::to_string(size) +
                                               " bytes, manifest implies " + std::to_string(expected));
  }
  r.samples = Matrix<float>(r.channel_labels.size(), static_cast<std::size_t>(n_samples));
  std::ifstream data(data_path, std::ios::binary);
  detail::read_f32_le(data, r.samples.data());
  if (!data) throw Error(ErrorCode::IoFailure, "short read on " + data_path.string());

  validate(r);
  return r;
}

fs::path save_recording(const Recording& r, const fs::path& dir) {
  validate(r);
  std::error_code ec;
  fs::create_directories(dir, ec);
  const std::string data_name = r.subject_id + ".f32";
  const fs::path manifest_path = dir / (r.subject_id + ".json");

  json events = json::array();
  for (const auto& e : r.events) {
    events.push_back({{"onset", e.onset_sample},
                      {"offset", e.offset_sample},
                      {"difficulty", static_cast<int>(e.difficulty)}});
  }
  json j = {{"subject_id", r.subject_id},
            {"sample_rate_hz", r.sample_rate_hz},
            {"channel_labels", r.channel_labels},
            {"n_samples", r.n_samples()},
            {"data_file", data_name},
            {"byte_order", "little"},
            {"dtype", "f32"},
            {"events", events},
            {"mot_score", r.mot_score},
            {"vs_score", r.vs_score}};

  std::ofstream data(dir / data_name, std::ios::binary | std::ios::trunc);
  detail::write_f32_le(data, r.samples.data());
  std::ofstream manifest(manifest_path, std::ios::trunc);
  manifest << j.dump(2) << '\n';
  if (!data || !manifest) throw Error(ErrorCode::IoFailure, "cannot write recording to " + dir.string());
  return manifest_path;
}

std::vector<fs::path> list_manifests(const fs::path& dir) {
  std::vector<fs::path> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") out.push_back(entry.path());
  }
  if (ec) throw Error(ErrorCode::MissingFile, dir.string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace eegtask
