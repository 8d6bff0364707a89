#pragma once

// File formats: ellipsoids, snapshot lists (JSON and CSV), fusion results,
// timing tables and models, anytime reports, availability traces and the
// system/uncertainty description.

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ellreach/anytime.hpp"
#include "ellreach/ellipsoid.hpp"
#include "ellreach/fusion.hpp"
#include "ellreach/model.hpp"
#include "ellreach/propagation.hpp"

namespace ellreach::io {

using Json = nlohmann::json;

/// Malformed or inconsistent input file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Primitive conversions

inline Json to_json(const Vector& v) {
  Json j = Json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

inline Json to_json(const Matrix& m) {
  Json j = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

inline double number(const Json& j, const std::string& what) {
  if (!j.is_number()) throw FormatError(what + ": expected a number");
  return j.get<double>();
}

inline Vector vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array of numbers");
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = number(j[i], what);
  return v;
}

/// Row-major nested array. `cols` disambiguates empty rows ([] is 0 x cols).
inline Matrix matrix_from_json(const Json& j, const std::string& what, int cols = -1) {
  if (!j.is_array()) throw FormatError(what + ": expected an array of rows");
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return Matrix(0, std::max(cols, 0));
  if (!j[0].is_array()) throw FormatError(what + ": expected an array of rows");
  const int width = static_cast<int>(j[0].size());
  Matrix m(rows, width);
  for (int r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != width) {
      throw FormatError(what + ": ragged matrix");
    }
    for (int c = 0; c < width; ++c) m(r, c) = number(j[r][c], what);
  }
  return m;
}

inline std::vector<int> int_list(const Json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array of integers");
  std::vector<int> out;
  for (const Json& e : j) {
    if (!e.is_number_integer()) throw FormatError(what + ": expected integers");
    out.push_back(e.get<int>());
  }
  return out;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Ellipsoid

inline Json to_json(const Ellipsoid& e) {
  return {{"center", to_json(e.center())}, {"shape", to_json(e.shape().matrix())}};
}

inline Ellipsoid ellipsoid_from_json(const Json& j, const std::string& what = "ellipsoid") {
  if (!j.is_object() || !j.contains("center") || !j.contains("shape")) {
    throw FormatError(what + ": expected {\"center\", \"shape\"}");
  }
  try {
    return Ellipsoid(vector_from_json(j["center"], what + ".center"),
                     SymMatrix(matrix_from_json(j["shape"], what + ".shape")));
  } catch (const std::invalid_argument& e) {
    throw FormatError(what + ": " + e.what());
  } catch (const LinalgError& e) {
    throw FormatError(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Snapshots

inline Json to_json(const ReachSnapshot& s) {
  Json shapes = Json::array();
  for (const SymMatrix& x : s.shapes) shapes.push_back(to_json(x.matrix()));
  Json dirs = Json::array();
  for (const Vector& l : s.directions) dirs.push_back(to_json(l));
  return {{"t", s.t}, {"center", to_json(s.center)}, {"shapes", shapes}, {"directions", dirs}};
}

inline Json to_json(const std::vector<ReachSnapshot>& list) {
  Json j = Json::array();
  for (const ReachSnapshot& s : list) j.push_back(to_json(s));
  return j;
}

inline std::vector<ReachSnapshot> snapshots_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("snapshots: expected an array");
  std::vector<ReachSnapshot> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const Json& e = j[k];
    const std::string what = "snapshots[" + std::to_string(k) + "]";
    if (!e.is_object() || !e.contains("t") || !e.contains("center") || !e.contains("shapes")) {
      throw FormatError(what + ": expected {\"t\", \"center\", \"shapes\"}");
    }
    ReachSnapshot s;
    s.t = number(e["t"], what + ".t");
    s.center = vector_from_json(e["center"], what + ".center");
    if (!e["shapes"].is_array() || e["shapes"].empty()) {
      throw FormatError(what + ".shapes: expected a non-empty array");
    }
    for (const Json& x : e["shapes"]) {
      Matrix m = matrix_from_json(x, what + ".shapes");
      if (m.rows() != s.center.size() || m.cols() != s.center.size()) {
        throw FormatError(what + ".shapes: dimension does not match center");
      }
      s.shapes.emplace_back(m);
    }
    if (e.contains("directions")) {
      for (const Json& l : e["directions"]) s.directions.push_back(vector_from_json(l, what + ".directions"));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Columns: t, xc0..xc{n-1}, then X{i}_{r}_{c} row-major for each member,
/// then l{i}_{k} for each member's direction.
inline std::string snapshots_to_csv(const std::vector<ReachSnapshot>& list) {
  std::ostringstream os;
  if (list.empty()) return "t\n";
  const int n = static_cast<int>(list.front().center.size());
  const int count = list.front().size();
  os << "t";
  for (int k = 0; k < n; ++k) os << ",xc" << k;
  for (int i = 0; i < count; ++i)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) os << ",X" << i << "_" << r << "_" << c;
  const bool with_dirs = !list.front().directions.empty();
  if (with_dirs)
    for (int i = 0; i < count; ++i)
      for (int k = 0; k < n; ++k) os << ",l" << i << "_" << k;
  os << "\n";
  for (const ReachSnapshot& s : list) {
    os << format_double(s.t);
    for (int k = 0; k < n; ++k) os << "," << format_double(s.center(k));
    for (const SymMatrix& x : s.shapes)
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) os << "," << format_double(x(r, c));
    if (with_dirs)
      for (const Vector& l : s.directions)
        for (int k = 0; k < n; ++k) os << "," << format_double(l(k));
    os << "\n";
  }
  return os.str();
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Strict decimal parse of the whole (trimmed) field.
inline double parse_double(const std::string& field, const std::string& what) {
  const std::string s = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError(what + ": '" + field + "' is not a number");
  }
  return v;
}

inline std::vector<ReachSnapshot> snapshots_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string header;
  if (!std::getline(is, header)) throw FormatError("snapshot CSV: missing header");
  const std::vector<std::string> cols = split(trim(header), ',');
  if (cols.empty() || cols[0] != "t") throw FormatError("snapshot CSV: first column must be t");
  int n = 0, shape_cols = 0, dir_cols = 0;
  for (std::size_t c = 1; c < cols.size(); ++c) {
    if (cols[c].rfind("xc", 0) == 0) ++n;
    else if (cols[c].rfind("X", 0) == 0) ++shape_cols;
    else if (cols[c].rfind("l", 0) == 0) ++dir_cols;
    else throw FormatError("snapshot CSV: unknown column " + cols[c]);
  }
  if (n == 0 || shape_cols == 0 || shape_cols % (n * n) != 0) {
    throw FormatError("snapshot CSV: inconsistent column counts");
  }
  const int count = shape_cols / (n * n);
  if (dir_cols != 0 && dir_cols != count * n) {
    throw FormatError("snapshot CSV: inconsistent direction columns");
  }
  std::vector<ReachSnapshot> out;
  std::string line;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split(trim(line), ',');
    const std::string what = "snapshot CSV row " + std::to_string(row);
    if (f.size() != cols.size()) throw FormatError(what + ": wrong field count");
    std::size_t pos = 0;
    ReachSnapshot s;
    s.t = parse_double(f[pos++], what);
    s.center.resize(n);
    for (int k = 0; k < n; ++k) s.center(k) = parse_double(f[pos++], what);
    for (int i = 0; i < count; ++i) {
      Matrix m(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) m(r, c) = parse_double(f[pos++], what);
      s.shapes.emplace_back(m);
    }
    if (dir_cols) {
      for (int i = 0; i < count; ++i) {
        Vector l(n);
        for (int k = 0; k < n; ++k) l(k) = parse_double(f[pos++], what);
        s.directions.push_back(l);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// JSON or CSV by extension.
inline std::vector<ReachSnapshot> read_snapshots(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
    return snapshots_from_csv(read_text_file(path));
  }
  return snapshots_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Fusion results

inline Json to_json(const FusionResult& r) {
  return {{"ellipsoid", to_json(r.ellipsoid)},
          {"tau", r.certificate.tau},
          {"logdet", r.logdet},
          {"certified", r.certified},
          {"iterations", r.iterations},
          {"gap", r.gap},
          {"inflation", r.inflation},
          {"notes", r.notes}};
}

/// Tube entry as read back: the fused ellipsoid and its bookkeeping.
struct FusedEntry {
  double t = 0.0;
  Ellipsoid ellipsoid;
  std::vector<double> tau;
  double logdet = 0.0;
  bool certified = false;
  int iterations = 0;
};

inline std::vector<FusedEntry> fused_tube_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("fused tube: expected an array");
  std::vector<FusedEntry> out;
  for (const Json& e : j) {
    if (!e.is_object() || !e.contains("ellipsoid")) throw FormatError("fused tube: missing ellipsoid");
    FusedEntry f{e.value("t", 0.0), ellipsoid_from_json(e["ellipsoid"], "fused tube ellipsoid")};
    if (e.contains("tau")) f.tau = e["tau"].get<std::vector<double>>();
    f.logdet = e.value("logdet", 0.0);
    f.certified = e.value("certified", false);
    f.iterations = e.value("iterations", 0);
    out.push_back(std::move(f));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Timing

inline std::string timing_to_csv(const std::vector<TimingSample>& samples) {
  std::ostringstream os;
  os << "N,workers,t_center,t_shape,t_opt,t_propagation,t_total\n";
  for (const TimingSample& s : samples) {
    os << s.n << "," << s.workers << "," << format_double(s.t_center) << ","
       << format_double(s.t_shape) << "," << format_double(s.t_opt) << ","
       << format_double(s.t_propagation) << "," << format_double(s.t_total) << "\n";
  }
  return os.str();
}

inline std::vector<TimingSample> timing_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (trim(line) != "N,workers,t_center,t_shape,t_opt,t_propagation,t_total") {
    throw FormatError("timing CSV: unexpected header");
  }
  std::vector<TimingSample> out;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 7) throw FormatError("timing CSV: wrong field count");
    out.push_back({static_cast<int>(parse_double(f[0], "N")), parse_double(f[2], "t_center"),
                   parse_double(f[3], "t_shape"), parse_double(f[4], "t_opt"),
                   parse_double(f[5], "t_propagation"), parse_double(f[6], "t_total"),
                   static_cast<int>(parse_double(f[1], "workers"))});
  }
  return out;
}

inline Json to_json(const TimingModel& m) {
  return {{"coefficients", m.coefficients},
          {"n_min", m.n_min},
          {"n_cap", m.n_cap},
          {"residual_norm", m.residual_norm}};
}

inline TimingModel timing_model_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("coefficients")) {
    throw FormatError("timing model: missing coefficients");
  }
  TimingModel m;
  for (const Json& c : j["coefficients"]) m.coefficients.push_back(number(c, "coefficients"));
  if (m.coefficients.empty()) throw FormatError("timing model: empty coefficients");
  m.n_min = j.value("n_min", 1);
  m.n_cap = j.value("n_cap", 1);
  m.residual_norm = j.value("residual_norm", 0.0);
  return m;
}

// ---------------------------------------------------------------------------
// Anytime report

inline Json to_json(const AnytimeReport& r) {
  Json steps = Json::array();
  for (const StepRecord& s : r.steps) {
    steps.push_back({{"k", s.k},
                     {"t_start", s.t_start},
                     {"t_available", s.t_available},
                     {"N_hat", s.n_hat ? Json(*s.n_hat) : Json(nullptr)},
                     {"N_max", s.n_max},
                     {"wall_s", s.wall_s},
                     {"fused", to_json(s.fused)},
                     {"projected", s.projected ? to_json(*s.projected) : Json(nullptr)},
                     {"volume", volume(s.reported())},
                     {"certified", s.certified},
                     {"warnings", s.warnings}});
  }
  return {{"dt", r.dt}, {"coords", r.coords}, {"steps", steps}};
}

inline AnytimeReport report_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("steps")) throw FormatError("report: missing steps");
  AnytimeReport r;
  r.dt = j.value("dt", 0.0);
  if (j.contains("coords")) r.coords = int_list(j["coords"], "report.coords");
  for (const Json& s : j["steps"]) {
    StepRecord rec{s.value("k", 0), s.value("t_start", 0.0), s.value("t_available", 0.0),
                   std::nullopt, s.value("N_max", 1), s.value("wall_s", 0.0),
                   ellipsoid_from_json(s.at("fused"), "report.fused")};
    if (s.contains("N_hat") && !s["N_hat"].is_null()) rec.n_hat = s["N_hat"].get<double>();
    if (s.contains("projected") && !s["projected"].is_null()) {
      rec.projected = ellipsoid_from_json(s["projected"], "report.projected");
    }
    rec.certified = s.value("certified", false);
    if (s.contains("warnings")) rec.warnings = s["warnings"].get<std::vector<std::string>>();
    r.steps.push_back(std::move(rec));
  }
  return r;
}

inline std::string report_to_csv(const AnytimeReport& r) {
  std::ostringstream os;
  os << "k,t_available,N_hat,N_max,wall_s,volume,certified\n";
  for (const StepRecord& s : r.steps) {
    os << s.k << "," << format_double(s.t_available) << ","
       << (s.n_hat ? format_double(*s.n_hat) : std::string("nan")) << "," << s.n_max << ","
       << format_double(s.wall_s) << "," << format_double(volume(s.reported())) << ","
       << (s.certified ? 1 : 0) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Availability trace: one positive decimal (seconds) per line.

inline std::vector<double> parse_trace(const std::string& text) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string line;
  int row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const double v = parse_double(line, "trace line " + std::to_string(row));
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw FormatError("trace line " + std::to_string(row) + ": budget must be positive");
    }
    out.push_back(v);
  }
  if (out.empty()) throw FormatError("trace: no entries");
  return out;
}

// ---------------------------------------------------------------------------
// System / uncertainty description
//
// {"n", "m", "p", "A", "B", "G", "X0": {"center", "shape"},
//  "U": {"center", "shape"}, "W": {"center", "shape"}}
// Each matrix is a nested array, {"constant": nested array}, or
// {"times": [...], "values": [nested arrays]} for linear interpolation.
// Vectors likewise with flat arrays.

inline TimeFunction time_function_from_json(const Json& j, int rows, int cols,
                                            const std::string& what, bool vector_valued) {
  auto parse_value = [&](const Json& v) -> Matrix {
    Matrix m = vector_valued ? Matrix(vector_from_json(v, what)) : matrix_from_json(v, what, cols);
    if (vector_valued && m.size() == 0) m = Matrix(0, 1);
    if (m.rows() != rows || m.cols() != cols) {
      throw FormatError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                        ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    return m;
  };
  if (j.is_array()) return TimeFunction::Constant(parse_value(j));
  if (j.is_object() && j.contains("constant")) return TimeFunction::Constant(parse_value(j["constant"]));
  if (j.is_object() && j.contains("times") && j.contains("values")) {
    std::vector<double> times;
    for (const Json& t : j["times"]) times.push_back(number(t, what + ".times"));
    std::vector<Matrix> values;
    for (const Json& v : j["values"]) values.push_back(parse_value(v));
    try {
      return TimeFunction::Grid(std::move(times), std::move(values));
    } catch (const ModelError& e) {
      throw FormatError(what + ": " + e.what());
    }
  }
  throw FormatError(what + ": expected an array, {\"constant\"} or {\"times\", \"values\"}");
}

inline SetFunction set_function_from_json(const Json& j, int d, const std::string& what) {
  if (d == 0 && (j.is_null() || !j.is_object())) {
    return SetFunction::Constant(Vector(0), Matrix(0, 0));
  }
  if (!j.is_object() || !j.contains("center") || !j.contains("shape")) {
    throw FormatError(what + ": expected {\"center\", \"shape\"}");
  }
  return {time_function_from_json(j["center"], d, 1, what + ".center", true),
          time_function_from_json(j["shape"], d, d, what + ".shape", false)};
}

struct SystemDescription {
  LtvSystem system;
  UncertaintySpec uncertainty;
};

inline SystemDescription system_from_json(const Json& j) {
  if (!j.is_object()) throw FormatError("system: expected an object");
  for (const char* key : {"n", "A", "X0"}) {
    if (!j.contains(key)) throw FormatError(std::string("system: missing \"") + key + "\"");
  }
  auto dim = [&](const char* key) {
    if (!j.contains(key)) return 0;
    if (!j[key].is_number_integer() || j[key].get<int>() < 0) {
      throw FormatError(std::string("system.") + key + ": expected a non-negative integer");
    }
    return j[key].get<int>();
  };
  LtvSystem sys;
  sys.n = dim("n");
  sys.m = dim("m");
  sys.p = dim("p");
  if (sys.n < 1) throw FormatError("system.n: must be positive");
  auto fn = [&](const char* key, int rows, int cols) {
    if (!j.contains(key)) {
      if (cols == 0) return TimeFunction::Constant(Matrix(rows, 0));
      throw FormatError(std::string("system: missing \"") + key + "\"");
    }
    return time_function_from_json(j[key], rows, cols, std::string("system.") + key, false);
  };
  sys.a = fn("A", sys.n, sys.n);
  sys.b = fn("B", sys.n, sys.m);
  sys.g = fn("G", sys.n, sys.p);
  const Ellipsoid x0 = ellipsoid_from_json(j["X0"], "system.X0");
  UncertaintySpec unc{x0, set_function_from_json(j.value("U", Json()), sys.m, "system.U"),
                      set_function_from_json(j.value("W", Json()), sys.p, "system.W")};
  try {
    sys.validate();
    unc.validate(sys);
  } catch (const ModelError& e) {
    throw FormatError(e.what());
  }
  return {std::move(sys), std::move(unc)};
}

}  // namespace ellreach::io
