#include "eegtask/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "eegtask/error.hpp"
#include "json.hpp"

namespace eegtask {

namespace {

constexpr std::array<std::string_view, 3> kClassNames{"none", "static", "dynamic"};

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view s) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end == tmp.c_str() || *end != '\0') throw Error(ErrorCode::InvalidReport, "not a number: " + tmp);
  return v;
}

std::size_t parse_count(std::string_view s) {
  std::string tmp(s);
  char* end = nullptr;
  const auto v = std::strtoull(tmp.c_str(), &end, 10);
  if (end == tmp.c_str() || *end != '\0') throw Error(ErrorCode::InvalidReport, "not a count: " + tmp);
  return static_cast<std::size_t>(v);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_cells(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto bar = line.find('|', start);
    cells.push_back(trim(line.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start)));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return cells;
}

// "8-10 Hz" -> {8, 10}
std::pair<double, double> parse_range(const std::string& s) {
  const auto dash = s.find('-');
  const auto hz = s.rfind(" Hz");
  if (dash == std::string::npos || hz == std::string::npos || hz < dash) {
    throw Error(ErrorCode::InvalidReport, "bad frequency range: " + s);
  }
  return {parse_double(s.substr(0, dash)), parse_double(s.substr(dash + 1, hz - dash - 1))};
}

std::string scheme_title(Scheme s) {
  switch (s) {
    case Scheme::SubjectIndependent: return "Subject-independent";
    case Scheme::SubjectDependent: return "Subject-dependent";
    case Scheme::Expert: return "Expert";
    case Scheme::Novice: return "Novice";
  }
  return "?";
}

}  // namespace

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::SubjectIndependent: return "independent";
    case Scheme::SubjectDependent: return "loso";
    case Scheme::Expert: return "expert";
    case Scheme::Novice: return "novice";
  }
  return "?";
}

std::string_view to_string(ClassifierKind c) { return c == ClassifierKind::Svm ? "svm" : "cnn"; }

Scheme parse_scheme(std::string_view s) {
  for (auto v : {Scheme::SubjectIndependent, Scheme::SubjectDependent, Scheme::Expert, Scheme::Novice}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown scheme '" + std::string(s) + "'");
}

ClassifierKind parse_classifier(std::string_view s) {
  if (s == "svm" || s == "SVM") return ClassifierKind::Svm;
  if (s == "cnn" || s == "CNN") return ClassifierKind::Cnn;
  throw Error(ErrorCode::InvalidArgument, "unknown classifier '" + std::string(s) + "'");
}

std::string format_accuracy(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", 100.0 * mean, 100.0 * std);
  return buf;
}

void validate(const EvalReport& rep) {
  std::size_t total = 0;
  for (const auto& row : rep.confusion) {
    for (auto v : row) total += v;
  }
  if (total == 0) throw Error(ErrorCode::ZeroTestSet, "report has no test predictions");
  auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!in_unit(rep.accuracy_mean) || !in_unit(rep.accuracy_std)) {
    throw Error(ErrorCode::InvalidReport, "accuracy outside [0, 1]");
  }
  for (double a : rep.repeat_accuracies) {
    if (!in_unit(a)) throw Error(ErrorCode::InvalidReport, "repeat accuracy outside [0, 1]");
  }
}

std::string render_report(const EvalReport& rep) {
  validate(rep);
  std::ostringstream out;
  out << "Classification results\n";
  out << "scheme: " << to_string(rep.scheme) << '\n';
  out << "classifier: " << to_string(rep.classifier) << '\n';
  out << "repeats: " << rep.repeat_accuracies.size() << '\n';
  out << '\n';
  out << "Classifier | " << scheme_title(rep.scheme) << '\n';
  out << (rep.classifier == ClassifierKind::Svm ? "SVM" : "CNN") << " | "
      << format_accuracy(rep.accuracy_mean, rep.accuracy_std) << '\n';
  out << '\n';
  out << "accuracy_mean: " << exact(rep.accuracy_mean) << '\n';
  out << "accuracy_std: " << exact(rep.accuracy_std) << '\n';
  out << "repeat_accuracies:";
  for (double a : rep.repeat_accuracies) out << ' ' << exact(a);
  out << '\n';
  out << '\n';
  out << "Confusion (rows true, columns predicted)\n";
  out << "true \\ predicted | none | static | dynamic\n";
  for (std::size_t i = 0; i < 3; ++i) {
    out << kClassNames[i];
    for (auto v : rep.confusion[i]) out << " | " << v;
    out << '\n';
  }
  out << '\n';
  out << "Significant Features\n";
  out << "Electrode pair | Frequency | Band | Count\n";
  for (const auto& f : rep.selected_features) {
    out << f.pair << " | " << band_range_label(f.band) << " | " << f.band.name << " | " << f.count << '\n';
  }
  return out.str();
}

EvalReport parse_report(std::string_view text) {
  EvalReport rep;
  std::istringstream in{std::string(text)};
  std::string line;
  enum class Section { Header, Confusion, Features } section = Section::Header;
  std::size_t confusion_row = 0;
  bool have_mean = false, have_std = false, have_scheme = false, have_classifier = false;

  auto value_of = [](const std::string& l, std::string_view key) -> std::optional<std::string> {
    if (l.rfind(key, 0) != 0) return std::nullopt;
    return trim(std::string_view(l).substr(key.size()));
  };

  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (line.rfind("Confusion", 0) == 0) {
      section = Section::Confusion;
      continue;
    }
    if (line.rfind("Significant Features", 0) == 0) {
      section = Section::Features;
      continue;
    }
    if (section == Section::Header) {
      if (auto v = value_of(line, "scheme:")) {
        rep.scheme = parse_scheme(*v);
        have_scheme = true;
      } else if (auto v = value_of(line, "classifier:")) {
        rep.classifier = parse_classifier(*v);
        have_classifier = true;
      } else if (auto v = value_of(line, "accuracy_mean:")) {
        rep.accuracy_mean = parse_double(*v);
        have_mean = true;
      } else if (auto v = value_of(line, "accuracy_std:")) {
        rep.accuracy_std = parse_double(*v);
        have_std = true;
      } else if (auto v = value_of(line, "repeat_accuracies:")) {
        std::istringstream vs(*v);
        std::string tok;
        while (vs >> tok) rep.repeat_accuracies.push_back(parse_double(tok));
      }
    } else if (section == Section::Confusion) {
      if (line.rfind("true", 0) == 0) continue;
      const auto cells = split_cells(line);
      if (cells.size() != 4 || confusion_row >= 3 || cells[0] != kClassNames[confusion_row]) {
        throw Error(ErrorCode::InvalidReport, "bad confusion row: " + line);
      }
      for (std::size_t j = 0; j < 3; ++j) rep.confusion[confusion_row][j] = parse_count(cells[j + 1]);
      ++confusion_row;
    } else {
      if (line.rfind("Electrode pair", 0) == 0) continue;
      const auto cells = split_cells(line);
      if (cells.size() != 4) throw Error(ErrorCode::InvalidReport, "bad feature row: " + line);
      const auto [lo, hi] = parse_range(cells[1]);
      rep.selected_features.push_back({cells[0], BandSpec{cells[2], lo, hi}, parse_count(cells[3])});
    }
  }
  if (!have_scheme || !have_classifier || !have_mean || !have_std || confusion_row != 3) {
    throw Error(ErrorCode::InvalidReport, "report is missing required sections");
  }
  validate(rep);
  return rep;
}

std::string report_json(const EvalReport& rep) {
  validate(rep);
  using nlohmann::json;
  json features = json::array();
  for (const auto& f : rep.selected_features) {
    features.push_back({{"pair", f.pair},
                        {"band", f.band.name},
                        {"lo_hz", f.band.lo_hz},
                        {"hi_hz", f.band.hi_hz},
                        {"frequency_count", f.count}});
  }
  json j = {{"scheme", to_string(rep.scheme)},
            {"classifier", to_string(rep.classifier)},
            {"accuracy_mean", rep.accuracy_mean},
            {"accuracy_std", rep.accuracy_std},
            {"accuracy_text", format_accuracy(rep.accuracy_mean, rep.accuracy_std)},
            {"repeat_accuracies", rep.repeat_accuracies},
            {"confusion", rep.confusion},
            {"selected_features", features}};
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  using nlohmann::json;
  try {
    const auto j = json::parse(text);
    EvalReport rep;
    rep.scheme = parse_scheme(j.at("scheme").get<std::string>());
    rep.classifier = parse_classifier(j.at("classifier").get<std::string>());
    rep.accuracy_mean = j.at("accuracy_mean");
    rep.accuracy_std = j.at("accuracy_std");
    rep.repeat_accuracies = j.at("repeat_accuracies").get<std::vector<double>>();
    rep.confusion = j.at("confusion").get<Confusion>();
    for (const auto& f : j.at("selected_features")) {
      rep.selected_features.push_back(
          {f.at("pair"), BandSpec{f.at("band"), f.at("lo_hz"), f.at("hi_hz")}, f.at("frequency_count")});
    }
    validate(rep);
    return rep;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidReport, e.what());
  }
}

void write_report(const EvalReport& rep, const std::filesystem::path& path) {
  const auto text = render_report(rep);
  const auto structured = report_json(rep);
  auto json_path = path;
  json_path.replace_extension(".json");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  std::ofstream js(json_path, std::ios::binary | std::ios::trunc);
  js << structured;
  if (!out || !js) throw Error(ErrorCode::IoFailure, "cannot write report " + path.string());
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_report(ss.str());
}

}  // namespace eegtask
