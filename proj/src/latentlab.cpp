#include "glsr/latentlab.hpp"

#include <charconv>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace glsr {

namespace {

using Json = nlohmann::ordered_json;

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string joined_tokens(const SequenceSample& s, const TokenVocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(s.ids[i]);
  }
  return out;
}

Json token_array(const SequenceSample& s, const TokenVocab& vocab) {
  Json a = Json::array();
  for (int id : s.ids) a.push_back(vocab.token(id));
  return a;
}

std::string category_label(const std::string& attribute, double value) {
  if (attribute == "accidental_class") return to_string(static_cast<AccidentalClass>(static_cast<int>(value)));
  return num(value);
}

}  // namespace

double g_Z(const Model& model, const LatentPoint& z, const AttributeSpec& attribute) {
  return attribute_value(attribute, argmax_decode(model, z));
}

std::vector<double> grid_values(double lo, double hi, int resolution) {
  if (resolution < 2) throw std::invalid_argument("resolution must be at least 2");
  if (!(hi > lo)) throw std::invalid_argument("scan range must be increasing");
  std::vector<double> v(resolution);
  for (int i = 0; i < resolution; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / (resolution - 1);
  v.back() = hi;
  return v;
}

ScanGrid plane_scan(const Model& model, const ScanOptions& options, const AttributeSpec& g_attribute,
                    std::span<const AttributeSpec> attributes) {
  const int dims = model.config.latent_dim;
  if (options.dim_x < 0 || options.dim_x >= dims || options.dim_y < 0 || options.dim_y >= dims ||
      options.dim_x == options.dim_y) {
    throw std::invalid_argument("scan dims must be distinct latent coordinates");
  }
  if (!options.offset.empty() && static_cast<int>(options.offset.size()) != dims) {
    throw std::invalid_argument("scan offset must have one entry per latent dim");
  }
  ScanGrid grid;
  grid.dim_x = options.dim_x;
  grid.dim_y = options.dim_y;
  grid.x_values = grid_values(options.lo, options.hi, options.resolution);
  grid.y_values = grid.x_values;
  grid.g_attribute = g_attribute.name;
  for (const auto& a : attributes) grid.attribute_names.push_back(a.name);

  const std::vector<double> base = options.offset.empty() ? std::vector<double>(dims, 0.0) : options.offset;
  for (double y : grid.y_values) {
    for (double x : grid.x_values) {
      LatentPoint z{base};
      z.z[options.dim_x] = x;
      z.z[options.dim_y] = y;
      const auto decoded = argmax_decode(model, z);
      ScanCell cell;
      cell.g_z = attribute_value(g_attribute, decoded);
      for (const auto& a : attributes) cell.attributes[a.name] = attribute_value(a, decoded);
      grid.cells.push_back(std::move(cell));
    }
  }
  return grid;
}

double monotonicity_score(const ScanGrid& grid) {
  const int cols = static_cast<int>(grid.x_values.size());
  const int rows = static_cast<int>(grid.y_values.size());
  if (rows == 0 || cols == 0) throw std::invalid_argument("empty scan grid");
  if (cols < 2) return 1.0;
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    int ok = 0;
    for (int c = 0; c + 1 < cols; ++c) ok += grid.at(r, c + 1).g_z >= grid.at(r, c).g_z;
    total += static_cast<double>(ok) / (cols - 1);
  }
  return total / rows;
}

std::string scan_to_csv(const ScanGrid& grid) {
  std::ostringstream out;
  out << "z" << grid.dim_x << ",z" << grid.dim_y << ",g_z";
  for (const auto& name : grid.attribute_names) out << ',' << name;
  out << '\n';
  std::size_t k = 0;
  for (double y : grid.y_values) {
    for (double x : grid.x_values) {
      const auto& cell = grid.cells[k++];
      out << num(x) << ',' << num(y) << ',' << num(cell.g_z);
      for (const auto& name : grid.attribute_names) out << ',' << num(cell.attributes.at(name));
      out << '\n';
    }
  }
  return out.str();
}

std::string scan_to_json(const ScanGrid& grid) {
  Json j;
  j["dim_x"] = grid.dim_x;
  j["dim_y"] = grid.dim_y;
  j["x_values"] = grid.x_values;
  j["y_values"] = grid.y_values;
  j["g_attribute"] = grid.g_attribute;
  j["attributes"] = grid.attribute_names;
  Json cells = Json::array();
  for (const auto& c : grid.cells) {
    Json attrs = Json::object();
    for (const auto& [k, v] : c.attributes) attrs[k] = v;
    cells.push_back({{"g_z", c.g_z}, {"attributes", attrs}});
  }
  j["cells"] = std::move(cells);
  return j.dump();
}

ScanGrid scan_from_json(const std::string& text) {
  const auto j = Json::parse(text);
  ScanGrid grid;
  grid.dim_x = j.at("dim_x").get<int>();
  grid.dim_y = j.at("dim_y").get<int>();
  grid.x_values = j.at("x_values").get<std::vector<double>>();
  grid.y_values = j.at("y_values").get<std::vector<double>>();
  grid.g_attribute = j.at("g_attribute").get<std::string>();
  grid.attribute_names = j.at("attributes").get<std::vector<std::string>>();
  for (const auto& c : j.at("cells")) {
    ScanCell cell;
    cell.g_z = c.at("g_z").get<double>();
    for (const auto& [k, v] : c.at("attributes").items()) cell.attributes[k] = v.get<double>();
    grid.cells.push_back(std::move(cell));
  }
  if (grid.cells.size() != grid.x_values.size() * grid.y_values.size()) throw std::invalid_argument("scan grid cell count mismatch");
  return grid;
}

// ---------------------------------------------------------------------------

std::vector<AggSample> aggregated_sample(const Model& model, std::span<const SequenceSample> samples, int n,
                                         std::uint64_t seed, const AttributeSpec& g_attribute) {
  if (n < 1) throw std::invalid_argument("aggregated_sample needs n >= 1");
  if (samples.empty()) throw std::invalid_argument("aggregated_sample needs data");
  std::vector<AggSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(s);
    std::uniform_int_distribution<int> pick_x(0, static_cast<int>(samples.size()) - 1);
    AggSample a;
    a.x_index = pick_x(rng);
    const auto post = encode(model, samples[a.x_index]);
    a.z = reparam_sample(post, standard_normal(model.config.latent_dim, mix_seed(s, 1)));
    a.decoded = argmax_decode(model, a.z);
    a.g_z = attribute_value(g_attribute, a.decoded);
    out.push_back(std::move(a));
  }
  return out;
}

std::string agg_to_csv(std::span<const AggSample> samples, const TokenVocab& vocab) {
  std::ostringstream out;
  out << "x_index";
  const int dims = samples.empty() ? 0 : samples[0].z.dim();
  for (int d = 0; d < dims; ++d) out << ",z" << d;
  out << ",g_z,tokens\n";
  for (const auto& s : samples) {
    out << s.x_index;
    for (double v : s.z.z) out << ',' << num(v);
    out << ',' << num(s.g_z) << ',' << joined_tokens(s.decoded, vocab) << '\n';
  }
  return out.str();
}

std::string agg_to_json(std::span<const AggSample> samples, const TokenVocab& vocab) {
  Json a = Json::array();
  for (const auto& s : samples) {
    a.push_back({{"x_index", s.x_index}, {"z", s.z.z}, {"g_z", s.g_z}, {"tokens", token_array(s.decoded, vocab)}});
  }
  return a.dump();
}

MomentSummary latent_moments(std::span<const AggSample> samples) {
  if (samples.empty()) throw std::invalid_argument("no samples");
  const int dims = samples[0].z.dim();
  MomentSummary m{std::vector<double>(dims, 0.0), std::vector<double>(dims, 0.0)};
  const double n = static_cast<double>(samples.size());
  for (const auto& s : samples) {
    for (int d = 0; d < dims; ++d) m.mean[d] += s.z.z[d];
  }
  for (auto& v : m.mean) v /= n;
  for (const auto& s : samples) {
    for (int d = 0; d < dims; ++d) m.variance[d] += (s.z.z[d] - m.mean[d]) * (s.z.z[d] - m.mean[d]);
  }
  for (auto& v : m.variance) v /= (n - 1.0 > 0.0 ? n - 1.0 : 1.0);
  return m;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("pearson: column size mismatch");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

const CorrelationEntry& DecorrelationReport::find(const std::string& attribute, int dim) const {
  for (const auto& e : correlations) {
    if (e.attribute == attribute && e.dim == dim) return e;
  }
  throw std::out_of_range("no correlation for " + attribute + " / z" + std::to_string(dim));
}

DecorrelationReport correlation_table(const std::vector<std::vector<double>>& z_columns,
                                      const std::vector<std::pair<std::string, std::vector<double>>>& numeric,
                                      const std::vector<std::pair<std::string, std::vector<std::string>>>& categorical) {
  DecorrelationReport report;
  const int dims = static_cast<int>(z_columns.size());
  auto zero_variance = [](const std::vector<double>& c) {
    return std::all_of(c.begin(), c.end(), [&](double v) { return v == c.front(); });
  };
  for (const auto& [name, column] : numeric) {
    for (int d = 0; d < dims; ++d) {
      CorrelationEntry e{name, d, 0.0, zero_variance(column) || zero_variance(z_columns[d])};
      if (!e.degenerate) e.correlation = pearson(z_columns[d], column);
      report.correlations.push_back(e);
    }
  }
  for (const auto& [name, labels] : categorical) {
    std::map<std::string, ClassMeans> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto& g = groups[labels[i]];
      if (g.mean_z.empty()) {
        g.attribute = name;
        g.label = labels[i];
        g.mean_z.assign(dims, 0.0);
      }
      ++g.count;
      for (int d = 0; d < dims; ++d) g.mean_z[d] += z_columns[d][i];
    }
    for (auto& [label, g] : groups) {
      for (auto& v : g.mean_z) v /= g.count;
      report.class_means.push_back(std::move(g));
    }
  }
  return report;
}

DecorrelationReport decorrelation_report(std::span<const AggSample> samples, std::span<const AttributeSpec> attributes) {
  if (samples.size() < 30) throw std::invalid_argument("decorrelation_report needs at least 30 samples");
  const int dims = samples[0].z.dim();
  std::vector<std::vector<double>> z(dims);
  for (const auto& s : samples) {
    for (int d = 0; d < dims; ++d) z[d].push_back(s.z.z[d]);
  }
  std::vector<std::pair<std::string, std::vector<double>>> numeric;
  std::vector<std::pair<std::string, std::vector<std::string>>> categorical;
  for (const auto& a : attributes) {
    if (a.categorical) {
      std::vector<std::string> labels;
      for (const auto& s : samples) labels.push_back(category_label(a.name, attribute_value(a, s.decoded)));
      categorical.emplace_back(a.name, std::move(labels));
    } else {
      std::vector<double> col;
      for (const auto& s : samples) col.push_back(attribute_value(a, s.decoded));
      numeric.emplace_back(a.name, std::move(col));
    }
  }
  return correlation_table(z, numeric, categorical);
}

std::string decorrelation_to_json(const DecorrelationReport& report) {
  Json j;
  Json corr = Json::array();
  for (const auto& e : report.correlations) {
    corr.push_back({{"attribute", e.attribute}, {"dim", e.dim}, {"correlation", e.correlation}, {"degenerate", e.degenerate}});
  }
  j["correlations"] = std::move(corr);
  Json classes = Json::array();
  for (const auto& c : report.class_means) {
    classes.push_back({{"attribute", c.attribute}, {"class", c.label}, {"count", c.count}, {"mean_z", c.mean_z}});
  }
  j["class_means"] = std::move(classes);
  return j.dump();
}

// ---------------------------------------------------------------------------

std::vector<WalkStep> latent_walk(const Model& model, const LatentPoint& z0, int dim, double step, int count,
                                  const AttributeSpec& g_attribute) {
  if (count < 1) throw std::invalid_argument("walk count must be at least 1");
  if (dim < 0 || dim >= z0.dim()) throw std::invalid_argument("walk dim out of range");
  std::vector<WalkStep> walk;
  walk.reserve(count);
  for (int j = 0; j < count; ++j) {
    WalkStep s;
    s.z = z0;
    s.z.z[dim] += static_cast<double>(j) * step;
    s.tokens = argmax_decode(model, s.z);
    s.g = attribute_value(g_attribute, s.tokens);
    s.plateau = !walk.empty() && walk.back().tokens == s.tokens;
    walk.push_back(std::move(s));
  }
  return walk;
}

double nondecreasing_fraction(std::span<const WalkStep> walk) {
  if (walk.size() < 2) return 1.0;
  int ok = 0;
  for (std::size_t i = 1; i < walk.size(); ++i) ok += walk[i].g >= walk[i - 1].g;
  return static_cast<double>(ok) / static_cast<double>(walk.size() - 1);
}

std::string walk_to_csv(std::span<const WalkStep> walk, const TokenVocab& vocab) {
  std::ostringstream out;
  out << "step";
  const int dims = walk.empty() ? 0 : walk[0].z.dim();
  for (int d = 0; d < dims; ++d) out << ",z" << d;
  out << ",g,plateau,tokens\n";
  for (std::size_t j = 0; j < walk.size(); ++j) {
    out << j;
    for (double v : walk[j].z.z) out << ',' << num(v);
    out << ',' << num(walk[j].g) << ',' << (walk[j].plateau ? 1 : 0) << ',' << joined_tokens(walk[j].tokens, vocab) << '\n';
  }
  return out.str();
}

std::string walk_to_json(std::span<const WalkStep> walk, const TokenVocab& vocab) {
  Json steps = Json::array();
  for (const auto& s : walk) {
    steps.push_back({{"z", s.z.z}, {"tokens", token_array(s.tokens, vocab)}, {"g", s.g}, {"plateau", s.plateau}});
  }
  return Json{{"steps", steps}}.dump();
}

}  // namespace glsr
