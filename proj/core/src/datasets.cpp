#include "litens/datasets.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <sstream>

#include "litens/errors.hpp"
#include "litens/rng.hpp"

namespace litens {

namespace {

using json = nlohmann::json;

constexpr std::int64_t kProbeDraws = 1000000;
constexpr double kMinAcceptance = 1e-4;

void draw_point(RngStream& rng, const DomainBox& domain, std::span<double> out) {
  for (int d = 0; d < domain.dim(); ++d) {
    out[d] = rng.uniform(domain.lower[d], domain.upper[d]);
  }
}

// +1 / -1 when all rule values strictly share that sign, 0 otherwise.
int joint_sign(std::span<const GroundTruthRule> rules, std::span<const double> x) {
  int sign = 0;
  for (const GroundTruthRule& rule : rules) {
    const double v = rule.value(x);
    const int s = v > 0.0 ? 1 : (v < 0.0 ? -1 : 0);
    if (s == 0) return 0;
    if (sign == 0) {
      sign = s;
    } else if (s != sign) {
      return 0;
    }
  }
  return sign;
}

std::filesystem::path provenance_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".provenance.json");
  return p;
}

}  // namespace

bool DomainBox::contains(std::span<const double> x) const {
  for (int d = 0; d < dim(); ++d) {
    if (x[d] < lower[d] || x[d] > upper[d]) return false;
  }
  return true;
}

DomainBox cube_domain(int dim, double lo, double hi) {
  if (dim < 1) throw UsageError("domain dimension must be positive");
  if (!(lo < hi)) throw UsageError(fmt::format("domain bounds [{}, {}] are empty", lo, hi));
  DomainBox box;
  box.lower.assign(dim, lo);
  box.upper.assign(dim, hi);
  return box;
}

Dataset gen_confounded(std::span<const GroundTruthRule> rules,
                       const DomainBox& domain, int n, std::uint64_t seed) {
  if (rules.size() < 2) throw UsageError("gen_confounded needs at least 2 rules");
  if (n < 1) throw UsageError("gen_confounded: n must be positive");

  Dataset data;
  data.dim = domain.dim();
  data.domain = domain;
  data.provenance.generator = "confounded";
  data.provenance.seed = seed;
  for (const GroundTruthRule& r : rules) data.provenance.rule_names.push_back(r.name);
  data.X.reserve(static_cast<std::size_t>(n) * data.dim);
  data.Y.reserve(n);

  RngStream rng(seed, "gen_confounded");
  std::vector<double> x(data.dim);
  std::int64_t draws = 0;
  while (data.size() < n) {
    draw_point(rng, domain, x);
    ++draws;
    if (draws == kProbeDraws &&
        static_cast<double>(data.size()) < kMinAcceptance * static_cast<double>(draws)) {
      throw UsageError(fmt::format(
          "degenerate rule set: {} of {} probe draws accepted", data.size(), draws));
    }
    const int sign = joint_sign(rules, x);
    if (sign == 0) continue;
    data.X.insert(data.X.end(), x.begin(), x.end());
    data.Y.push_back(sign > 0 ? 1 : 0);
  }
  data.provenance.rejected = draws - n;
  return data;
}

Dataset gen_rule_testset(const GroundTruthRule& rule, const DomainBox& domain,
                         int n, std::uint64_t seed) {
  if (n < 1) throw UsageError("gen_rule_testset: n must be positive");
  Dataset data;
  data.dim = domain.dim();
  data.domain = domain;
  data.provenance.generator = "rule_testset";
  data.provenance.seed = seed;
  data.provenance.rule_names.push_back(rule.name);
  data.X.reserve(static_cast<std::size_t>(n) * data.dim);
  data.Y.reserve(n);

  RngStream rng(seed, "gen_testset");
  std::vector<double> x(data.dim);
  for (int i = 0; i < n; ++i) {
    draw_point(rng, domain, x);
    data.X.insert(data.X.end(), x.begin(), x.end());
    data.Y.push_back(rule.label(x));
  }
  return data;
}

double acceptance_probe(std::span<const GroundTruthRule> rules,
                        const DomainBox& domain, std::int64_t draws,
                        std::uint64_t seed) {
  if (draws < 1) throw UsageError("acceptance_probe: draws must be positive");
  RngStream rng(seed, "gen_confounded");
  std::vector<double> x(domain.dim());
  std::int64_t kept = 0;
  for (std::int64_t i = 0; i < draws; ++i) {
    draw_point(rng, domain, x);
    if (joint_sign(rules, x) != 0) ++kept;
  }
  return static_cast<double>(kept) / static_cast<double>(draws);
}

std::vector<RuleCase> builtin_2d_cases() {
  const double s3 = std::sqrt(3.0) / 2.0;
  std::vector<RuleCase> cases(3);

  cases[0].name = "case1";
  cases[0].domain = cube_domain(2, -10.0, 10.0);
  cases[0].default_n = 2000;
  cases[0].rules = {
      {"f1", {0}, [](std::span<const double> x) { return x[0]; }},
      {"f2", {1}, [](std::span<const double> x) { return x[1]; }},
  };

  cases[1].name = "case2";
  cases[1].domain = cube_domain(2, -10.0, 10.0);
  cases[1].default_n = 2000;
  cases[1].rules = {
      {"f1", {0, 1}, [s3](std::span<const double> x) { return 0.5 * x[0] + s3 * x[1]; }},
      {"f2", {0, 1}, [s3](std::span<const double> x) { return -s3 * x[0] + 0.5 * x[1]; }},
  };

  cases[2].name = "case3";
  cases[2].domain = cube_domain(2, -10.0, 10.0);
  cases[2].default_n = 2000;
  cases[2].rules = {
      {"f1", {0, 1}, [](std::span<const double> x) { return 2.0 * x[0] * x[1]; }},
      {"f2", {0, 1}, [](std::span<const double> x) { return x[0] * x[0] - x[1] * x[1]; }},
  };
  return cases;
}

RuleCase builtin_8d_case() {
  RuleCase c;
  c.name = "toy8d";
  c.domain = cube_domain(8, -20.0, 20.0);
  c.default_n = 10000;
  c.rules = {
      {"f1", {0, 1}, [](std::span<const double> x) { return x[0] + x[1]; }},
      {"f2", {2, 3}, [](std::span<const double> x) { return x[2] * x[3]; }},
      {"f3", {4, 5}, [](std::span<const double> x) { return x[4] * x[4] + x[5] * x[5] - 200.0; }},
      {"f4", {6, 7}, [](std::span<const double> x) { return x[6] - x[7] * x[7] * x[7] / 100.0; }},
  };
  return c;
}

RuleCase builtin_case(std::string_view name) {
  if (name == "toy8d") return builtin_8d_case();
  for (RuleCase& c : builtin_2d_cases()) {
    if (c.name == name) return std::move(c);
  }
  throw UsageError(fmt::format("unknown case '{}'", name));
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  for (int d = 0; d < data.dim; ++d) out << 'x' << d << ',';
  out << "y\n";
  for (int i = 0; i < data.size(); ++i) {
    const auto x = data.point(i);
    for (int d = 0; d < data.dim; ++d) out << fmt::format("{:.17g},", x[d]);
    out << data.Y[i] << '\n';
  }
  if (!out) throw IoError(fmt::format("write failure on '{}'", path.string()));
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));

  std::string line;
  if (!std::getline(in, line)) throw IoError("no data rows");
  // header x0,...,x{D-1},y
  int dim = 0;
  {
    std::stringstream header(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(header, col, ',')) cols.push_back(col);
    if (cols.empty() || cols.back() != "y") {
      throw IoError("line 1: header must end with column 'y'");
    }
    dim = static_cast<int>(cols.size()) - 1;
    for (int d = 0; d < dim; ++d) {
      if (cols[d] != fmt::format("x{}", d)) {
        throw IoError(fmt::format("line 1: expected column 'x{}', got '{}'", d, cols[d]));
      }
    }
    if (dim < 1) throw IoError("line 1: no feature columns");
  }

  Dataset data;
  data.dim = dim;
  data.provenance.generator = "csv";
  int line_no = 1;
  std::vector<double> x(dim);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int d = 0; d < dim; ++d) {
      auto [next, ec] = std::from_chars(p, end, x[d]);
      if (ec != std::errc{} || next == end || *next != ',') {
        throw IoError(fmt::format("line {}: malformed value in column x{}", line_no, d));
      }
      if (!std::isfinite(x[d])) {
        throw IoError(fmt::format("line {}: non-finite value in column x{}", line_no, d));
      }
      p = next + 1;
    }
    int y = -1;
    auto [next, ec] = std::from_chars(p, end, y);
    if (ec != std::errc{} || next != end) {
      throw IoError(fmt::format("line {}: malformed label", line_no));
    }
    if (y != 0 && y != 1) {
      throw IoError(fmt::format("line {}: label {} is not binary", line_no, y));
    }
    data.X.insert(data.X.end(), x.begin(), x.end());
    data.Y.push_back(y);
  }
  if (data.Y.empty()) throw IoError("no data rows");

  const std::filesystem::path side = provenance_path(path);
  bool have_domain = false;
  if (std::filesystem::exists(side)) {
    std::ifstream sin(side);
    json j;
    try {
      sin >> j;
      data.provenance.generator = j.value("generator", "csv");
      data.provenance.seed = j.value("seed", std::uint64_t{0});
      data.provenance.rejected = j.value("rejected", std::int64_t{0});
      if (j.contains("rule_names")) {
        data.provenance.rule_names = j["rule_names"].get<std::vector<std::string>>();
      }
      if (j.contains("domain")) {
        data.domain.lower = j["domain"].at("lower").get<std::vector<double>>();
        data.domain.upper = j["domain"].at("upper").get<std::vector<double>>();
        if (data.domain.dim() != dim ||
            static_cast<int>(data.domain.upper.size()) != dim) {
          throw IoError(fmt::format("provenance domain dimension does not match '{}'",
                                    path.string()));
        }
        have_domain = true;
      }
    } catch (const json::exception& e) {
      throw IoError(fmt::format("malformed provenance '{}': {}", side.string(), e.what()));
    }
  }
  if (!have_domain) {
    // empirical bounding box
    data.domain.lower.assign(dim, std::numeric_limits<double>::infinity());
    data.domain.upper.assign(dim, -std::numeric_limits<double>::infinity());
    for (int i = 0; i < data.size(); ++i) {
      const auto pt = data.point(i);
      for (int d = 0; d < dim; ++d) {
        data.domain.lower[d] = std::min(data.domain.lower[d], pt[d]);
        data.domain.upper[d] = std::max(data.domain.upper[d], pt[d]);
      }
    }
  }
  return data;
}

void save_provenance(const Dataset& data, const std::filesystem::path& csv_path) {
  json j;
  j["generator"] = data.provenance.generator;
  j["rule_names"] = data.provenance.rule_names;
  j["seed"] = data.provenance.seed;
  j["n"] = data.size();
  j["rejected"] = data.provenance.rejected;
  j["domain"]["lower"] = data.domain.lower;
  j["domain"]["upper"] = data.domain.upper;
  const std::filesystem::path side = provenance_path(csv_path);
  std::ofstream out(side);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", side.string()));
  out << j.dump(1) << '\n';
  if (!out) throw IoError(fmt::format("write failure on '{}'", side.string()));
}

}  // namespace litens
