#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace litens {

struct DomainBox {
  std::vector<double> lower;
  std::vector<double> upper;

  int dim() const { return static_cast<int>(lower.size()); }
  double width(int d) const { return upper[d] - lower[d]; }
  bool contains(std::span<const double> x) const;
};

// [lo, hi]^dim
DomainBox cube_domain(int dim, double lo, double hi);

// Closed-form labeling rule; label = 1 iff value(x) > 0. arity_dims lists
// the input dimensions the rule reads.
struct GroundTruthRule {
  std::string name;
  std::vector<int> arity_dims;
  std::function<double(std::span<const double>)> value;

  int label(std::span<const double> x) const { return value(x) > 0.0 ? 1 : 0; }
};

struct Provenance {
  std::string generator;
  std::vector<std::string> rule_names;
  std::uint64_t seed = 0;
  std::int64_t rejected = 0;  // draws discarded during generation
};

struct Dataset {
  int dim = 0;
  std::vector<double> X;  // row-major, one row per point
  std::vector<int> Y;
  DomainBox domain;
  Provenance provenance;

  int size() const { return static_cast<int>(Y.size()); }
  std::span<const double> point(int i) const {
    return {X.data() + static_cast<std::size_t>(i) * dim,
            static_cast<std::size_t>(dim)};
  }
};

// Rejection-samples uniform points, keeping x iff every rule value shares
// one strict sign; y = 1 iff that sign is positive. Points where any rule is
// exactly 0 are rejected. Throws UsageError when a probe of 1e6 draws keeps
// fewer than a 1e-4 fraction (degenerate rule set).
Dataset gen_confounded(std::span<const GroundTruthRule> rules,
                       const DomainBox& domain, int n, std::uint64_t seed);

// n uniform samples over the whole domain, labeled by the single rule.
Dataset gen_rule_testset(const GroundTruthRule& rule, const DomainBox& domain,
                         int n, std::uint64_t seed);

// Fraction of `draws` uniform samples on which all rules share a strict sign.
double acceptance_probe(std::span<const GroundTruthRule> rules,
                        const DomainBox& domain, std::int64_t draws,
                        std::uint64_t seed);

struct RuleCase {
  std::string name;
  std::vector<GroundTruthRule> rules;
  DomainBox domain;
  int default_n = 0;
};

// case1 {x, y}, case2 {x/2 + (sqrt3/2) y, -(sqrt3/2) x + y/2}, case3
// {2xy, x^2 - y^2}, all over [-10,10]^2.
std::vector<RuleCase> builtin_2d_cases();

// Four rules on disjoint dimension pairs over [-20,20]^8: x0+x1,
// x2*x3, x4^2+x5^2-200, x6-x7^3/100.
RuleCase builtin_8d_case();

// Lookup by name: case1 | case2 | case3 | toy8d. Throws UsageError.
RuleCase builtin_case(std::string_view name);

// Header `x0,...,x{D-1},y`; values printed with 17 significant digits so a
// round-trip reproduces every double exactly. Errors name the line number.
void save_csv(const Dataset& data, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);

// Sidecar JSON recording generator, rules, domain, seed, n. load_csv picks
// the domain up from `<stem>.provenance.json` next to the CSV when present,
// falling back to the empirical bounding box.
void save_provenance(const Dataset& data, const std::filesystem::path& csv_path);

}  // namespace litens
