#pragma once

#include "ftbo/encoder.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ftbo::data {

using diff::Matrix;
using diff::Vector;

enum class ColumnKind { numeric, categorical };

struct ColumnSpec {
  ColumnKind kind = ColumnKind::numeric;
  std::optional<double> lower;
  std::optional<double> upper;
  bool integer = false;
  std::vector<std::string> values;  // categorical levels, in order
};

// Optional sidecar schema describing column kinds and box bounds.
struct Schema {
  std::map<std::string, ColumnSpec> columns;
  static Schema load(const std::string& path);
};

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  Vector numeric;                       // numeric values
  std::vector<int> cats;                // categorical level indices
  std::vector<std::string> cat_values;  // level names for this column
};

struct SourceDataset {
  std::string task_id;
  std::vector<Column> columns;  // header order
  Vector y;

  Eigen::Index size() const { return y.size(); }
  std::vector<std::string> names() const;
  const Column* find(const std::string& name) const;
  enc::NamedRow row(Eigen::Index i) const;
};

// CSV with a header row naming the columns; exactly one column must be
// called "y". Rows containing NaN (or empty cells) are dropped with a count
// reported through dropped_rows. Ragged rows and non-numeric cells in
// numeric columns are errors.
SourceDataset load_dataset(const std::string& path, const Schema* schema,
                           const std::string& task_id,
                           int* dropped_rows = nullptr);

struct Manifest {
  struct Entry {
    std::string task_id;
    std::string path;
    std::string schema_path;  // optional
  };
  std::vector<Entry> entries;
  static Manifest load(const std::string& path);
};

// Loads every dataset in a manifest (paths are resolved relative to the
// manifest file).
std::vector<SourceDataset> load_corpus(const std::string& manifest_path);

// ---- objective normalization (independent per task) ----

struct YNormalizer {
  double mean = 0.0;
  double std = 1.0;
  double apply(double y) const { return (y - mean) / std; }
  double invert(double yn) const { return yn * std + mean; }
  double invert_std(double sn) const { return sn * std; }
  static YNormalizer fit(const Vector& y);  // population std, eps guard
};

// In-place per-task standardization; returns the per-task state keyed by
// task_id (needed to map predictions back to raw units).
std::map<std::string, YNormalizer> normalize_objectives(
    std::vector<SourceDataset>& sources);

// ---- feature normalization (joint across tasks per name) ----

enum class FeatureScaling { standard, quantile };

struct FeatureTransform {
  enum class Kind { identity, standard, quantile, affine };
  Kind kind = Kind::identity;
  double mean = 0.0;
  double std = 1.0;
  double scale = 1.0;   // affine: scale * x + offset
  double offset = 0.0;
  std::vector<double> knots;  // sorted quantile knots

  double apply(double x) const;
};

struct FeatureNormalizer {
  FeatureScaling scaling = FeatureScaling::standard;
  std::map<std::string, FeatureTransform> transforms;

  bool has(const std::string& name) const { return transforms.count(name) > 0; }
  double apply(const std::string& name, double x) const;
  // Bound-derived affine map onto [-1, 1] for names never seen in sources.
  void add_affine_from_bounds(const std::string& name, double lower,
                              double upper);
  void add_identity(const std::string& name) { transforms[name] = {}; }
  enc::NamedRow apply_row(const enc::NamedRow& row) const;
};

// Fits one transform per column name on the concatenation of that name's
// values across all sources, then applies it in place. Categorical columns
// pass through untouched.
FeatureNormalizer normalize_features(std::vector<SourceDataset>& sources,
                                     FeatureScaling kind);

// Number of reference knots used by the quantile transform.
inline constexpr int kQuantileKnots = 1000;
// Output clamp for the Gaussian quantile map.
inline constexpr double kQuantileClamp = 8.0;

// Inverse standard-normal CDF (Acklam's approximation plus one Halley
// refinement); used by the quantile transform.
double normal_quantile(double p);

// ---- search-space description ----

struct ParamDef {
  std::string name;
  bool categorical = false;
  double lower = -1.0;
  double upper = 1.0;
  bool integer = false;                // ordinal grid with step 1
  std::vector<std::string> values;     // categorical levels

  static ParamDef box(std::string name, double lower, double upper);
};

struct ParamSpace {
  std::vector<ParamDef> params;

  std::size_t size() const { return params.size(); }
  bool empty() const { return params.empty(); }
  std::vector<std::string> names() const;
  const ParamDef* find(const std::string& name) const;
  bool contains(const enc::NamedRow& row) const;  // bounds check
};

// Builds a homogeneous encoder batch from selected dataset rows.
enc::Batch make_batch(const SourceDataset& ds, const std::vector<int>& rows);

// Candidate table for tabular optimization / zero-shot ranking. Unlike
// SourceDataset the y column is optional and categorical cells stay as
// strings until they are resolved against a registry or schema.
struct CandidateTable {
  std::vector<std::string> names;
  std::vector<ColumnKind> kinds;
  Matrix numeric;  // n x d, zero where categorical
  std::vector<std::vector<std::string>> cat_cells;  // per column
  std::optional<Vector> y;

  Eigen::Index size() const { return numeric.rows(); }
};

CandidateTable load_candidates(const std::string& path, const Schema* schema);

}  // namespace ftbo::data
