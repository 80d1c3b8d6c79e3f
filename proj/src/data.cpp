#include "ftbo/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

// vendored single-header nlohmann/json lives at vendor/json.hpp; the include
// above resolves against the vendor dir added by the top-level build.

namespace ftbo::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("invalid JSON in '" + path + "': " + e.what());
  }
  return j;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim spaces and a trailing CR
    std::size_t b = cell.find_first_not_of(" \t\r");
    std::size_t e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

bool parse_double(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

}  // namespace

Schema Schema::load(const std::string& path) {
  const json j = parse_json_file(path);
  if (!j.is_object() || !j.contains("columns") || !j["columns"].is_object())
    throw std::invalid_argument("schema '" + path +
                                "': expected an object with a 'columns' map");
  Schema s;
  for (const auto& [name, spec] : j["columns"].items()) {
    ColumnSpec cs;
    const std::string kind = spec.value("kind", "numeric");
    if (kind == "numeric") {
      cs.kind = ColumnKind::numeric;
      if (spec.contains("lower")) cs.lower = spec["lower"].get<double>();
      if (spec.contains("upper")) cs.upper = spec["upper"].get<double>();
      cs.integer = spec.value("integer", false);
    } else if (kind == "categorical") {
      cs.kind = ColumnKind::categorical;
      if (!spec.contains("values") || !spec["values"].is_array())
        throw std::invalid_argument("schema '" + path + "': categorical '" +
                                    name + "' needs a 'values' array");
      for (const auto& v : spec["values"])
        cs.values.push_back(v.get<std::string>());
    } else {
      throw std::invalid_argument("schema '" + path + "': unknown kind '" +
                                  kind + "'");
    }
    s.columns[name] = std::move(cs);
  }
  return s;
}

std::vector<std::string> SourceDataset::names() const {
  std::vector<std::string> out;
  out.reserve(columns.size());
  for (const Column& c : columns) out.push_back(c.name);
  return out;
}

const Column* SourceDataset::find(const std::string& name) const {
  for (const Column& c : columns)
    if (c.name == name) return &c;
  return nullptr;
}

enc::NamedRow SourceDataset::row(Eigen::Index i) const {
  enc::NamedRow r;
  for (const Column& c : columns) {
    if (c.kind == ColumnKind::categorical)
      r.push_categorical(c.name, c.cats[static_cast<std::size_t>(i)]);
    else
      r.push_numeric(c.name, c.numeric(i));
  }
  return r;
}

SourceDataset load_dataset(const std::string& path, const Schema* schema,
                           const std::string& task_id, int* dropped_rows) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("'" + path + "': no data rows");
  const std::vector<std::string> header = split_csv_line(line);
  int y_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "y") {
      if (y_col >= 0)
        throw std::invalid_argument("'" + path + "': duplicate y column");
      y_col = static_cast<int>(i);
    } else if (header[i].empty()) {
      throw std::invalid_argument("'" + path + "': empty column name");
    }
  }
  if (y_col < 0)
    throw std::invalid_argument("'" + path + "': missing y column");

  SourceDataset ds;
  ds.task_id = task_id;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (static_cast<int>(i) == y_col) continue;
    Column c;
    c.name = header[i];
    if (schema != nullptr) {
      auto it = schema->columns.find(c.name);
      if (it != schema->columns.end() &&
          it->second.kind == ColumnKind::categorical) {
        c.kind = ColumnKind::categorical;
        c.cat_values = it->second.values;
      }
    }
    ds.columns.push_back(std::move(c));
  }

  std::vector<std::vector<double>> numeric(ds.columns.size());
  std::vector<std::vector<int>> cats(ds.columns.size());
  std::vector<double> ys;
  int dropped = 0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::invalid_argument("'" + path + "': ragged row at line " +
                                  std::to_string(line_no));
    bool has_nan = false;
    double yv = 0.0;
    std::vector<double> nvals(ds.columns.size(), 0.0);
    std::vector<int> cvals(ds.columns.size(), -1);
    std::size_t col = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (static_cast<int>(i) == y_col) {
        if (!parse_double(cells[i], &yv)) {
          if (cells[i].empty() || cells[i] == "nan" || cells[i] == "NaN") {
            has_nan = true;
            continue;
          }
          throw std::invalid_argument("'" + path + "': non-numeric y at line " +
                                      std::to_string(line_no));
        }
        if (!std::isfinite(yv)) has_nan = true;
        continue;
      }
      Column& c = ds.columns[col];
      if (c.kind == ColumnKind::categorical) {
        auto it = std::find(c.cat_values.begin(), c.cat_values.end(), cells[i]);
        if (cells[i].empty()) {
          has_nan = true;
        } else if (it == c.cat_values.end()) {
          throw std::invalid_argument("'" + path + "': unknown category '" +
                                      cells[i] + "' in column '" + c.name +
                                      "' at line " + std::to_string(line_no));
        } else {
          cvals[col] = static_cast<int>(it - c.cat_values.begin());
        }
      } else {
        double v = 0.0;
        if (!parse_double(cells[i], &v)) {
          if (cells[i].empty() || cells[i] == "nan" || cells[i] == "NaN") {
            has_nan = true;
          } else {
            throw std::invalid_argument(
                "'" + path + "': non-numeric cell '" + cells[i] +
                "' in column '" + c.name + "' at line " +
                std::to_string(line_no));
          }
        } else if (!std::isfinite(v)) {
          has_nan = true;
        } else {
          nvals[col] = v;
        }
      }
      ++col;
    }
    if (has_nan) {
      ++dropped;
      continue;
    }
    for (std::size_t j = 0; j < ds.columns.size(); ++j) {
      if (ds.columns[j].kind == ColumnKind::categorical)
        cats[j].push_back(cvals[j]);
      else
        numeric[j].push_back(nvals[j]);
    }
    ys.push_back(yv);
  }
  if (dropped > 0)
    std::cerr << "[ftbo::data] '" << path << "': dropped " << dropped
              << " row(s) containing NaN\n";
  if (dropped_rows != nullptr) *dropped_rows = dropped;
  if (ys.empty()) throw std::invalid_argument("'" + path + "': no data rows");

  ds.y = Eigen::Map<Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  for (std::size_t j = 0; j < ds.columns.size(); ++j) {
    if (ds.columns[j].kind == ColumnKind::categorical) {
      ds.columns[j].cats = std::move(cats[j]);
    } else {
      ds.columns[j].numeric = Eigen::Map<Vector>(
          numeric[j].data(), static_cast<Eigen::Index>(numeric[j].size()));
    }
  }
  return ds;
}

Manifest Manifest::load(const std::string& path) {
  const json j = parse_json_file(path);
  if (!j.is_object() || !j.contains("tasks") || !j["tasks"].is_array())
    throw std::invalid_argument("manifest '" + path +
                                "': expected an object with a 'tasks' array");
  Manifest m;
  for (const auto& t : j["tasks"]) {
    Entry e;
    if (!t.contains("task_id") || !t.contains("path"))
      throw std::invalid_argument(
          "manifest '" + path + "': each task needs 'task_id' and 'path'");
    e.task_id = t["task_id"].get<std::string>();
    e.path = t["path"].get<std::string>();
    e.schema_path = t.value("schema", "");
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty())
    throw std::invalid_argument("manifest '" + path + "': no tasks");
  return m;
}

std::vector<SourceDataset> load_corpus(const std::string& manifest_path) {
  const Manifest m = Manifest::load(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<SourceDataset> out;
  out.reserve(m.entries.size());
  for (const Manifest::Entry& e : m.entries) {
    const fs::path p = fs::path(e.path).is_absolute()
                           ? fs::path(e.path)
                           : base / e.path;
    Schema schema;
    const Schema* sp = nullptr;
    if (!e.schema_path.empty()) {
      const fs::path spath = fs::path(e.schema_path).is_absolute()
                                 ? fs::path(e.schema_path)
                                 : base / e.schema_path;
      schema = Schema::load(spath.string());
      sp = &schema;
    }
    out.push_back(load_dataset(p.string(), sp, e.task_id));
  }
  return out;
}

YNormalizer YNormalizer::fit(const Vector& y) {
  YNormalizer n;
  if (y.size() == 0) return n;
  n.mean = y.mean();
  const double var =
      (y.array() - n.mean).square().sum() / static_cast<double>(y.size());
  n.std = std::sqrt(var);
  if (n.std < 1e-8) {
    std::cerr << "[ftbo::data] warning: (near-)constant objective, using eps "
                 "std\n";
    n.std = 1e-8;
  }
  return n;
}

std::map<std::string, YNormalizer> normalize_objectives(
    std::vector<SourceDataset>& sources) {
  std::map<std::string, YNormalizer> out;
  for (SourceDataset& ds : sources) {
    const YNormalizer n = YNormalizer::fit(ds.y);
    ds.y = ((ds.y.array() - n.mean) / n.std).matrix();
    out[ds.task_id] = n;
  }
  return out;
}

double FeatureTransform::apply(double x) const {
  switch (kind) {
    case Kind::identity:
      return x;
    case Kind::standard:
      return (x - mean) / std;
    case Kind::affine:
      return scale * x + offset;
    case Kind::quantile: {
      if (knots.empty()) return 0.0;
      const double lo = knots.front();
      const double hi = knots.back();
      double p;
      if (x <= lo) {
        p = 0.0;
      } else if (x >= hi) {
        p = 1.0;
      } else {
        // first knot >= x; linear interpolation inside the segment
        const auto it = std::lower_bound(knots.begin(), knots.end(), x);
        const std::size_t j = static_cast<std::size_t>(it - knots.begin());
        const double k = static_cast<double>(knots.size() - 1);
        if (j == 0) {
          p = 0.0;
        } else {
          const double x0 = knots[j - 1];
          const double x1 = knots[j];
          const double frac = (x1 > x0) ? (x - x0) / (x1 - x0) : 1.0;
          p = (static_cast<double>(j - 1) + frac) / k;
        }
      }
      const double q = normal_quantile(p);
      return std::clamp(q, -kQuantileClamp, kQuantileClamp);
    }
  }
  return x;
}

double FeatureNormalizer::apply(const std::string& name, double x) const {
  auto it = transforms.find(name);
  if (it == transforms.end())
    throw std::invalid_argument("no feature transform for '" + name + "'");
  return it->second.apply(x);
}

void FeatureNormalizer::add_affine_from_bounds(const std::string& name,
                                               double lower, double upper) {
  if (!(upper > lower))
    throw std::invalid_argument("bounds for '" + name + "' must satisfy lower < upper");
  FeatureTransform t;
  t.kind = FeatureTransform::Kind::affine;
  t.scale = 2.0 / (upper - lower);
  t.offset = -(upper + lower) / (upper - lower);
  transforms[name] = std::move(t);
}

enc::NamedRow FeatureNormalizer::apply_row(const enc::NamedRow& row) const {
  enc::NamedRow out;
  for (std::size_t i = 0; i < row.names.size(); ++i) {
    if (row.values[i].is_categorical())
      out.push_categorical(row.names[i], row.values[i].cat);
    else
      out.push_numeric(row.names[i], apply(row.names[i], row.values[i].num));
  }
  return out;
}

namespace {

std::vector<double> quantile_knots(std::vector<double> values, int count) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::vector<double> knots(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double p = static_cast<double>(i) / static_cast<double>(count - 1);
    const double h = p * static_cast<double>(n - 1);
    const std::size_t f = static_cast<std::size_t>(std::floor(h));
    const std::size_t c = std::min(f + 1, n - 1);
    knots[static_cast<std::size_t>(i)] =
        values[f] + (h - static_cast<double>(f)) * (values[c] - values[f]);
  }
  return knots;
}

}  // namespace

FeatureNormalizer normalize_features(std::vector<SourceDataset>& sources,
                                     FeatureScaling kind) {
  FeatureNormalizer out;
  out.scaling = kind;

  // gather every numeric column name across sources
  std::map<std::string, std::vector<double>> pooled;
  for (const SourceDataset& ds : sources)
    for (const Column& c : ds.columns)
      if (c.kind == ColumnKind::numeric) {
        auto& vals = pooled[c.name];
        vals.insert(vals.end(), c.numeric.data(), c.numeric.data() + c.numeric.size());
      }

  for (auto& [name, vals] : pooled) {
    FeatureTransform t;
    if (kind == FeatureScaling::standard) {
      t.kind = FeatureTransform::Kind::standard;
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var /= static_cast<double>(vals.size());
      t.mean = mean;
      t.std = std::sqrt(var);
      if (t.std < 1e-8) {
        std::cerr << "[ftbo::data] warning: (near-)constant feature '" << name
                  << "', using eps std\n";
        t.std = 1e-8;
      }
    } else {
      t.kind = FeatureTransform::Kind::quantile;
      t.knots = quantile_knots(vals, kQuantileKnots);
    }
    out.transforms[name] = std::move(t);
  }

  for (SourceDataset& ds : sources)
    for (Column& c : ds.columns)
      if (c.kind == ColumnKind::numeric) {
        const FeatureTransform& t = out.transforms.at(c.name);
        for (Eigen::Index i = 0; i < c.numeric.size(); ++i)
          c.numeric(i) = t.apply(c.numeric(i));
      }
  return out;
}

double normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  // Acklam's rational approximation
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // one Halley refinement against the exact CDF
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

ParamDef ParamDef::box(std::string name, double lower, double upper) {
  ParamDef d;
  d.name = std::move(name);
  d.lower = lower;
  d.upper = upper;
  return d;
}

std::vector<std::string> ParamSpace::names() const {
  std::vector<std::string> out;
  out.reserve(params.size());
  for (const ParamDef& p : params) out.push_back(p.name);
  return out;
}

const ParamDef* ParamSpace::find(const std::string& name) const {
  for (const ParamDef& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

bool ParamSpace::contains(const enc::NamedRow& row) const {
  if (row.names.size() != params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamDef* d = find(row.names[i]);
    if (d == nullptr) return false;
    if (d->categorical) {
      if (!row.values[i].is_categorical()) return false;
      if (row.values[i].cat < 0 ||
          row.values[i].cat >= static_cast<int>(d->values.size()))
        return false;
    } else {
      const double v = row.values[i].num;
      if (row.values[i].is_categorical()) return false;
      if (v < d->lower - 1e-12 || v > d->upper + 1e-12) return false;
    }
  }
  return true;
}

CandidateTable load_candidates(const std::string& path, const Schema* schema) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("'" + path + "': no data rows");
  const std::vector<std::string> header = split_csv_line(line);
  int y_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == "y") y_col = static_cast<int>(i);

  CandidateTable t;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (static_cast<int>(i) == y_col) continue;
    t.names.push_back(header[i]);
    ColumnKind kind = ColumnKind::numeric;
    if (schema != nullptr) {
      auto it = schema->columns.find(header[i]);
      if (it != schema->columns.end()) kind = it->second.kind;
    }
    t.kinds.push_back(kind);
  }
  t.cat_cells.resize(t.names.size());

  std::vector<std::vector<double>> numeric(t.names.size());
  std::vector<double> ys;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::invalid_argument("'" + path + "': ragged row at line " +
                                  std::to_string(line_no));
    std::size_t col = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (static_cast<int>(i) == y_col) {
        double v = 0.0;
        if (!parse_double(cells[i], &v))
          throw std::invalid_argument("'" + path + "': non-numeric y at line " +
                                      std::to_string(line_no));
        ys.push_back(v);
        continue;
      }
      if (t.kinds[col] == ColumnKind::categorical) {
        t.cat_cells[col].push_back(cells[i]);
      } else {
        double v = 0.0;
        if (!parse_double(cells[i], &v))
          throw std::invalid_argument(
              "'" + path + "': non-numeric cell '" + cells[i] +
              "' in column '" + t.names[col] + "' at line " +
              std::to_string(line_no));
        numeric[col].push_back(v);
      }
      ++col;
    }
  }
  Eigen::Index n = 0;
  for (std::size_t j = 0; j < t.names.size(); ++j) {
    const Eigen::Index rows =
        t.kinds[j] == ColumnKind::categorical
            ? static_cast<Eigen::Index>(t.cat_cells[j].size())
            : static_cast<Eigen::Index>(numeric[j].size());
    n = std::max(n, rows);
  }
  if (n == 0) throw std::invalid_argument("'" + path + "': no data rows");
  t.numeric = Matrix::Zero(n, static_cast<Eigen::Index>(t.names.size()));
  for (std::size_t j = 0; j < t.names.size(); ++j)
    if (t.kinds[j] == ColumnKind::numeric)
      for (std::size_t i = 0; i < numeric[j].size(); ++i)
        t.numeric(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            numeric[j][i];
  if (y_col >= 0)
    t.y = Eigen::Map<Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return t;
}

enc::Batch make_batch(const SourceDataset& ds, const std::vector<int>& rows) {
  enc::Batch b;
  b.names = ds.names();
  const std::size_t d = b.names.size();
  b.categorical.resize(d);
  b.cats.resize(d);
  b.numeric = Matrix::Zero(static_cast<Eigen::Index>(rows.size()),
                           static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    const Column& c = ds.columns[j];
    b.categorical[j] = (c.kind == ColumnKind::categorical);
    if (b.categorical[j]) {
      b.cats[j].resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        b.cats[j][i] = c.cats[static_cast<std::size_t>(rows[i])];
    } else {
      for (std::size_t i = 0; i < rows.size(); ++i)
        b.numeric(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            c.numeric(rows[i]);
    }
  }
  return b;
}

}  // namespace ftbo::data
