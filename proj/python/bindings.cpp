#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "vtrain/config.hpp"
#include "vtrain/error.hpp"
#include "vtrain/fpround.hpp"
#include "vtrain/merkle.hpp"
#include "vtrain/protocol.hpp"
#include "vtrain/report.hpp"
#include "vtrain/roundlog.hpp"

namespace py = pybind11;
using namespace vtrain;

namespace {

Digest digest_from_bytes(const py::bytes& b) {
  const std::string s = b;
  if (s.size() != 32) throw DomainError("digest must be 32 bytes");
  Digest d;
  std::copy(s.begin(), s.end(), d.begin());
  return d;
}

py::bytes to_bytes(const Digest& d) { return {reinterpret_cast<const char*>(d.data()), d.size()}; }

TrainConfig with_profile(TrainConfig cfg, const std::optional<std::string>& profile) {
  if (profile) cfg.trainer_profile = DeviceProfile::parse(*profile);
  return cfg;
}

std::string report(std::string_view role, const TrainConfig& cfg, const DeviceProfile& profile, const RunResult& run,
                   std::optional<std::uint64_t> log_bytes) {
  ReportExtras extras;
  extras.log_bytes = log_bytes;
  return make_report(role, cfg, profile, run, extras).dump();
}

}  // namespace

PYBIND11_MODULE(_vtrain, m) {
  m.doc() = "Verifiable training core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());

  m.attr("TAU_FLOOR") = kTauFloor;
  m.def("rnd", &rnd, py::arg("x"), py::arg("b_r"));
  m.def("exponent_scale", &exponent_scale, py::arg("x"));
  m.def("epsilon", &epsilon, py::arg("b_r"), py::arg("scale"));
  m.def("tau_ceiling", &tau_ceiling, py::arg("b_r"));
  m.def(
      "direction",
      [](double x, int b_r, double tau) { return static_cast<int>(direction(x, {b_r, tau})); }, py::arg("x"),
      py::arg("b_r"), py::arg("tau"));
  m.def(
      "rev", [](double x, int b_r, int code) { return rev(x, b_r, direction_from_code(code)); }, py::arg("x"),
      py::arg("b_r"), py::arg("code"));

  m.def(
      "pack5",
      [](const std::vector<int>& codes) {
        if (codes.size() != 5) throw DomainError("pack5 takes exactly 5 codes");
        std::array<Direction, 5> d;
        for (int i = 0; i < 5; ++i) d[i] = direction_from_code(codes[i]);
        return static_cast<int>(pack5(d));
      },
      py::arg("codes"));
  m.def(
      "unpack5",
      [](int byte) {
        if (byte < 0 || byte > 255) throw DomainError("byte out of range");
        std::vector<int> out;
        for (auto d : unpack5(static_cast<std::uint8_t>(byte))) out.push_back(static_cast<int>(d));
        return out;
      },
      py::arg("byte"));

  m.def(
      "sha256", [](const py::bytes& data) {
        const std::string s = data;
        return to_bytes(sha256({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
      },
      py::arg("data"));
  m.def(
      "merkle_root",
      [](const std::vector<py::bytes>& leaves) {
        std::vector<Digest> d;
        for (const auto& l : leaves) d.push_back(digest_from_bytes(l));
        return to_bytes(MerkleTree::build(std::move(d)).root());
      },
      py::arg("leaves"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def_static("shipped_mlp", &TrainConfig::shipped_mlp)
      .def_static("shipped_logistic", &TrainConfig::shipped_logistic)
      .def_static("load", [](const std::string& path) { return load_config(path); }, py::arg("path"))
      .def_static(
          "from_json", [](const std::string& text) { return config_from_json(nlohmann::json::parse(text)); },
          py::arg("text"))
      .def("to_json", [](const TrainConfig& c) { return config_to_json(c).dump(); })
      .def("steps", &TrainConfig::steps)
      .def_readwrite("b_r", &TrainConfig::b_r)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("checkpoint_interval", &TrainConfig::checkpoint_interval);

  m.def(
      "train",
      [](const TrainConfig& c, const std::optional<std::string>& log_path, const std::optional<std::string>& profile) {
        const TrainConfig cfg = with_profile(c, profile);
        py::gil_scoped_release release;
        if (log_path) {
          LogWriter w(*log_path, cfg.b_r, cfg.compress_log);
          const auto run = train(cfg, w);
          w.close();
          return report("train", cfg, cfg.trainer_profile, run, std::filesystem::file_size(*log_path));
        }
        MemoryLog log;
        return report("train", cfg, cfg.trainer_profile, train(cfg, log), std::nullopt);
      },
      py::arg("config"), py::arg("log_path") = py::none(), py::arg("profile") = py::none());
  m.def(
      "audit",
      [](const TrainConfig& cfg, const std::string& profile, const std::string& log_path) {
        const auto p = DeviceProfile::parse(profile);
        py::gil_scoped_release release;
        LogReader r(log_path);
        return report("audit", cfg, p, audit(cfg, p, r), std::filesystem::file_size(log_path));
      },
      py::arg("config"), py::arg("profile"), py::arg("log_path"));
  m.def(
      "audit_without_corrections",
      [](const TrainConfig& cfg, const std::string& profile) {
        const auto p = DeviceProfile::parse(profile);
        py::gil_scoped_release release;
        return report("audit_naive", cfg, p, audit_without_corrections(cfg, p), std::nullopt);
      },
      py::arg("config"), py::arg("profile"));
  m.def(
      "estimate",
      [](const TrainConfig& cfg) {
        const auto e = estimate_log_entries(cfg);
        return py::dict(py::arg("steps") = e.steps, py::arg("entries") = e.entries,
                        py::arg("payload_bytes") = e.payload_bytes, py::arg("file_bytes") = e.file_bytes);
      },
      py::arg("config"));
  m.def(
      "inspect_log",
      [](const std::string& path) {
        const auto s = inspect_log(path);
        return py::dict(py::arg("entries") = s.header.entry_count, py::arg("b_r") = s.header.b_r,
                        py::arg("compressed") = s.header.compressed(), py::arg("down") = s.histogram[0],
                        py::arg("ignore") = s.histogram[1], py::arg("up") = s.histogram[2],
                        py::arg("file_bytes") = s.file_bytes);
      },
      py::arg("path"));
  m.def(
      "search_threshold",
      [](const std::vector<double>& samples, int b_r, std::size_t iterations) {
        return search_threshold(samples, b_r, iterations);
      },
      py::arg("samples"), py::arg("b_r"), py::arg("iterations"));
}
