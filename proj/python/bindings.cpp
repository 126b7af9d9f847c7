#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "eegtask/error.hpp"
#include "eegtask/montage.hpp"
#include "eegtask/nn.hpp"
#include "eegtask/pipeline.hpp"
#include "eegtask/recording.hpp"
#include "eegtask/selection.hpp"
#include "eegtask/spectral.hpp"
#include "eegtask/svm.hpp"

namespace py = pybind11;
using namespace eegtask;

namespace {

using ArrayD = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ArrayF = py::array_t<float, py::array::c_style | py::array::forcecast>;

Matrix<double> to_matrix(const ArrayD& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::DimensionMismatch, "expected a 2-D array");
  Matrix<double> m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

template <typename T>
py::array_t<T> to_array(const Matrix<T>& m) {
  py::array_t<T> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Epoch to_epoch(const ArrayF& samples, const std::vector<std::string>& labels) {
  if (samples.ndim() != 2 || static_cast<std::size_t>(samples.shape(0)) != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "samples must be [len(channel_labels) x n]");
  }
  Epoch e;
  e.channel_labels = labels;
  e.samples = Matrix<float>(labels.size(), static_cast<std::size_t>(samples.shape(1)));
  std::copy(samples.data(), samples.data() + samples.size(), e.samples.data().begin());
  return e;
}

}  // namespace

PYBIND11_MODULE(_eegtask, m) {
  m.doc() = "EEG coherence features, SMO SVM, recursive feature elimination and the shallow CNN";

  py::register_exception<Error>(m, "EegError", PyExc_ValueError);

  m.def("montage_labels", &montage_labels);
  m.def("coherence_electrodes", &coherence_electrodes);

  py::enum_<Difficulty>(m, "Difficulty")
      .value("NONE", Difficulty::None)
      .value("STATIC", Difficulty::Static)
      .value("DYNAMIC", Difficulty::Dynamic);

  py::class_<Event>(m, "Event")
      .def(py::init([](std::int64_t on, std::int64_t off, Difficulty d) { return Event{on, off, d}; }))
      .def_readwrite("onset_sample", &Event::onset_sample)
      .def_readwrite("offset_sample", &Event::offset_sample)
      .def_readwrite("difficulty", &Event::difficulty);

  py::class_<Recording>(m, "Recording")
      .def(py::init<>())
      .def_readwrite("subject_id", &Recording::subject_id)
      .def_readwrite("sample_rate_hz", &Recording::sample_rate_hz)
      .def_readwrite("channel_labels", &Recording::channel_labels)
      .def_readwrite("events", &Recording::events)
      .def_readwrite("mot_score", &Recording::mot_score)
      .def_readwrite("vs_score", &Recording::vs_score)
      .def_property(
          "samples", [](const Recording& r) { return to_array(r.samples); },
          [](Recording& r, const ArrayF& a) {
            if (a.ndim() != 2) throw Error(ErrorCode::DimensionMismatch, "samples must be 2-D");
            r.samples = Matrix<float>(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
            std::copy(a.data(), a.data() + a.size(), r.samples.data().begin());
          });

  m.def("load_recording", &load_recording, py::arg("manifest_path"));
  m.def("save_recording", &save_recording, py::arg("recording"), py::arg("directory"));

  m.def(
      "synth_generate",
      [](std::size_t n_subjects, std::size_t epochs_per_class, double snr, std::uint64_t seed,
         std::optional<std::size_t> n_experts) {
        SynthConfig cfg;
        cfg.n_subjects = n_subjects;
        cfg.epochs_per_class = epochs_per_class;
        cfg.snr = snr;
        cfg.seed = seed;
        cfg.n_experts = n_experts;
        return synth_generate(cfg);
      },
      py::arg("n_subjects") = 6, py::arg("epochs_per_class") = 60, py::arg("snr") = 3.0, py::arg("seed") = 0,
      py::arg("n_experts") = py::none());

  m.def(
      "butterworth_bandpass",
      [](double low, double high, int order, double fs) {
        return design_butterworth_bandpass({low, high, order, true}, fs);
      },
      py::arg("low_hz") = 0.1, py::arg("high_hz") = 70.0, py::arg("order") = 4, py::arg("sample_rate_hz") = 256.0);
  m.def(
      "zero_phase_filter",
      [](const std::vector<SosSection>& sos, const std::vector<double>& x, std::size_t pad) {
        return zero_phase_filter(sos, x, pad);
      },
      py::arg("sos"), py::arg("x"), py::arg("pad") = 12);

  m.def(
      "coherence",
      [](const std::vector<double>& x, const std::vector<double>& y, std::size_t segment_len, double overlap) {
        const auto s = welch_spectra(x, y, {segment_len, overlap, WindowKind::Hann});
        std::vector<double> freqs(s.sxx.size());
        for (std::size_t k = 0; k < freqs.size(); ++k) freqs[k] = static_cast<double>(k) * s.bin_hz;
        return py::make_tuple(freqs, coherence(s));
      },
      py::arg("x"), py::arg("y"), py::arg("segment_len") = 256, py::arg("overlap") = 0.5,
      "Magnitude coherence per frequency bin; returns (freqs, coherence).");

  m.def(
      "extract_features",
      [](const ArrayF& samples, const std::vector<std::string>& channel_labels,
         std::optional<std::vector<std::string>> electrodes) {
        const auto e = to_epoch(samples, channel_labels);
        const auto el = electrodes.value_or(coherence_electrodes());
        const auto bands = default_bands();
        const auto fv = extract_features(e, el, bands, WelchSpec{});
        std::vector<std::string> names;
        for (const auto& k : fv.index) names.push_back(k.name());
        return py::make_tuple(fv.values, names);
      },
      py::arg("samples"), py::arg("channel_labels"), py::arg("electrodes") = py::none(),
      "Coherence features of one epoch; returns (values, names).");

  m.def(
      "rfe_stable",
      [](const ArrayD& x, const std::vector<int>& labels, std::size_t target_k, std::size_t n_repeats,
         std::uint64_t seed, double drop_fraction) {
        RfeConfig cfg;
        cfg.target_k = target_k;
        cfg.n_repeats = n_repeats;
        cfg.seed = seed;
        cfg.drop_fraction = drop_fraction;
        const auto r = rfe_stable(to_matrix(x), labels, cfg);
        return py::make_tuple(r.selected, r.ranked);
      },
      py::arg("x"), py::arg("labels"), py::arg("target_k") = 5, py::arg("n_repeats") = 10, py::arg("seed") = 0,
      py::arg("drop_fraction") = 0.1, "Returns (selected indices, [(index, count)]).");

  py::class_<MulticlassSvm>(m, "MulticlassSvm")
      .def("predict",
           [](const MulticlassSvm& svm, const ArrayD& x) {
             const auto mx = to_matrix(x);
             std::vector<int> out;
             for (std::size_t i = 0; i < mx.rows(); ++i) out.push_back(predict(svm, mx.row(i)).label);
             return out;
           })
      .def("to_json", [](const MulticlassSvm& svm) { return serialize(svm); })
      .def_static("from_json", &deserialize_svm);

  m.def(
      "train_svm",
      [](const ArrayD& x, const std::vector<int>& labels, const std::string& kernel, double c, double gamma) {
        if (kernel != "linear" && kernel != "rbf") throw Error(ErrorCode::InvalidArgument, "kernel must be linear or rbf");
        SmoOptions opt;
        opt.C = c;
        return train_multiclass(to_matrix(x), labels, {kernel == "linear" ? KernelKind::Linear : KernelKind::Rbf, gamma},
                                opt);
      },
      py::arg("x"), py::arg("labels"), py::arg("kernel") = "rbf", py::arg("c") = 1.0, py::arg("gamma") = 0.0);

  py::class_<NetworkShape>(m, "NetworkShape")
      .def(py::init<>())
      .def_static("standard", &NetworkShape::standard)
      .def_static("reduced", &NetworkShape::reduced)
      .def_readwrite("n_channels", &NetworkShape::n_channels)
      .def_readwrite("n_samples", &NetworkShape::n_samples)
      .def("shape_chain", &NetworkShape::shape_chain)
      .def("parameter_count", &NetworkShape::parameter_count);

  py::class_<Network<float>>(m, "Network")
      .def(py::init<NetworkShape>(), py::arg("shape") = NetworkShape::standard())
      .def_property_readonly("parameter_count", &Network<float>::parameter_count)
      .def(
          "initialize",
          [](Network<float>& net, std::uint64_t seed) { net.initialize(seed, {}); }, py::arg("seed") = 0)
      .def(
          "forward",
          [](const Network<float>& net, const ArrayF& x) {
            return net.forward(std::span<const float>(x.data(), static_cast<std::size_t>(x.size())));
          },
          "Class probabilities (eval mode) for one [channels x samples] input.");

  m.def("load_checkpoint", &load_checkpoint);
  m.def("save_checkpoint", &save_checkpoint);
}
