#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "glsr/corpus.hpp"
#include "glsr/seqvae.hpp"

namespace glsr {

/// Attribute of the argmax decoding of z.
double g_Z(const Model& model, const LatentPoint& z, const AttributeSpec& attribute);

struct ScanCell {
  double g_z = 0.0;
  std::map<std::string, double> attributes;
  bool operator==(const ScanCell&) const = default;
};

struct ScanGrid {
  int dim_x = 0;
  int dim_y = 1;
  std::vector<double> x_values;
  std::vector<double> y_values;
  std::string g_attribute;
  std::vector<std::string> attribute_names;
  /// Row-major, |y_values| rows of |x_values| cells.
  std::vector<ScanCell> cells;

  const ScanCell& at(int row, int col) const { return cells[static_cast<std::size_t>(row) * x_values.size() + col]; }
  bool operator==(const ScanGrid&) const = default;
};

struct ScanOptions {
  int dim_x = 0;
  int dim_y = 1;
  double lo = -4.0;
  double hi = 4.0;
  int resolution = 41;
  /// Non-scanned coordinates; zero (the plane through the origin) when empty.
  std::vector<double> offset;
};

/// Evenly spaced, endpoints included.
std::vector<double> grid_values(double lo, double hi, int resolution);

/// g_z is `g_attribute`; every entry of `attributes` is recorded per cell.
ScanGrid plane_scan(const Model& model, const ScanOptions& options, const AttributeSpec& g_attribute,
                    std::span<const AttributeSpec> attributes);

/// Fraction of horizontally adjacent pairs with g_z(right) >= g_z(left), averaged over rows.
double monotonicity_score(const ScanGrid& grid);

std::string scan_to_csv(const ScanGrid& grid);
std::string scan_to_json(const ScanGrid& grid);
ScanGrid scan_from_json(const std::string& text);

struct AggSample {
  int x_index = 0;
  LatentPoint z;
  double g_z = 0.0;
  SequenceSample decoded;
};

/// x uniform over `samples`, z ~ q(z|x), g_z of the argmax decoding of z.
/// Each draw is seeded independently, so the result does not depend on evaluation order.
std::vector<AggSample> aggregated_sample(const Model& model, std::span<const SequenceSample> samples, int n,
                                         std::uint64_t seed, const AttributeSpec& g_attribute);

std::string agg_to_csv(std::span<const AggSample> samples, const TokenVocab& vocab);
std::string agg_to_json(std::span<const AggSample> samples, const TokenVocab& vocab);

struct MomentSummary {
  std::vector<double> mean;
  std::vector<double> variance;
};
MomentSummary latent_moments(std::span<const AggSample> samples);

/// Pearson correlation; 0 when either column has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationEntry {
  std::string attribute;
  int dim = 0;
  double correlation = 0.0;
  bool degenerate = false;
};

struct ClassMeans {
  std::string attribute;
  std::string label;
  int count = 0;
  std::vector<double> mean_z;
};

struct DecorrelationReport {
  std::vector<CorrelationEntry> correlations;
  std::vector<ClassMeans> class_means;

  const CorrelationEntry& find(const std::string& attribute, int dim) const;
};

/// `z_columns[d][i]` is coordinate d of sample i; each attribute column has one value per sample.
/// Categorical columns are reported as per-class mean z instead of correlations.
DecorrelationReport correlation_table(const std::vector<std::vector<double>>& z_columns,
                                      const std::vector<std::pair<std::string, std::vector<double>>>& numeric,
                                      const std::vector<std::pair<std::string, std::vector<std::string>>>& categorical);

/// Evaluates each attribute on the decoded sequences. Needs at least 30 samples.
DecorrelationReport decorrelation_report(std::span<const AggSample> samples, std::span<const AttributeSpec> attributes);
std::string decorrelation_to_json(const DecorrelationReport& report);

struct WalkStep {
  LatentPoint z;
  SequenceSample tokens;
  double g = 0.0;
  /// Same decoding as the previous step.
  bool plateau = false;
};

/// Argmax decodings at z0 + j * step * e_dim for j = 0 .. count-1.
std::vector<WalkStep> latent_walk(const Model& model, const LatentPoint& z0, int dim, double step, int count,
                                  const AttributeSpec& g_attribute);

/// Fraction of adjacent steps whose g does not decrease.
double nondecreasing_fraction(std::span<const WalkStep> walk);

std::string walk_to_csv(std::span<const WalkStep> walk, const TokenVocab& vocab);
std::string walk_to_json(std::span<const WalkStep> walk, const TokenVocab& vocab);

}  // namespace glsr
