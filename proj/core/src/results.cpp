#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "adua/analysis.hpp"

namespace adua {

namespace {

// Canonical column order: the two full fine-tuning baselines, then the
// adapter variants, then anything unexpected alphabetically.
int variant_rank(const std::string& v) {
  if (v == "Full-FT") return 0;
  if (v == "Full-TSA") return 1;
  if (v == "Ada-FT") return 2;
  if (v == "Ada-TSA") return 3;
  return 4;
}

bool variant_less(const std::string& a, const std::string& b) {
  const int ra = variant_rank(a);
  const int rb = variant_rank(b);
  return ra != rb ? ra < rb : a < b;
}

constexpr const char* kAvgScheme = "Avg.";

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

std::vector<double> present_values(const ResultCell& cell) {
  std::vector<double> out;
  for (double v : cell.per_seed) {
    if (!std::isnan(v)) out.push_back(v);
  }
  return out;
}

}  // namespace

const ResultCell* ResultTable::find(const std::string& scheme, const std::string& variant) const {
  for (const ResultCell& c : cells) {
    if (c.scheme == scheme && c.variant == variant) return &c;
  }
  return nullptr;
}

ResultTable aggregate_results(const std::vector<RunAccuracy>& runs) {
  if (runs.empty()) throw ContractError("aggregate_results: no runs");

  ResultTable table;
  {
    std::set<std::uint64_t> seeds;
    std::set<std::string> schemes;
    std::set<std::string> variants;
    for (const RunAccuracy& r : runs) {
      seeds.insert(r.seed);
      schemes.insert(r.scheme);
      variants.insert(r.variant);
      if (r.scheme == kAvgScheme) {
        throw ContractError("aggregate_results: scheme name \"Avg.\" is reserved");
      }
    }
    table.seeds.assign(seeds.begin(), seeds.end());
    table.schemes.assign(schemes.begin(), schemes.end());
    table.variants.assign(variants.begin(), variants.end());
    std::sort(table.variants.begin(), table.variants.end(), variant_less);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::map<std::pair<std::string, std::string>, ResultCell> cells;
  for (const RunAccuracy& r : runs) {
    auto key = std::make_pair(r.scheme, r.variant);
    auto [it, inserted] = cells.try_emplace(key);
    ResultCell& cell = it->second;
    if (inserted) {
      cell.scheme = r.scheme;
      cell.variant = r.variant;
      cell.per_seed.assign(table.seeds.size(), nan);
    }
    const auto at = static_cast<std::size_t>(
        std::lower_bound(table.seeds.begin(), table.seeds.end(), r.seed) - table.seeds.begin());
    if (!std::isnan(cell.per_seed[at])) {
      throw ContractError("aggregate_results: duplicate run for scheme \"" + r.scheme +
                          "\", variant \"" + r.variant + "\", seed " + std::to_string(r.seed));
    }
    cell.per_seed[at] = r.accuracy;
  }

  // Per-variant macro average across schemes, seed by seed, appended as an
  // extra row. A seed contributes only where every scheme has it.
  for (const std::string& variant : table.variants) {
    ResultCell avg;
    avg.scheme = kAvgScheme;
    avg.variant = variant;
    avg.per_seed.assign(table.seeds.size(), nan);
    for (std::size_t si = 0; si < table.seeds.size(); ++si) {
      double sum = 0.0;
      std::size_t have = 0;
      for (const std::string& scheme : table.schemes) {
        auto it = cells.find(std::make_pair(scheme, variant));
        if (it == cells.end() || std::isnan(it->second.per_seed[si])) continue;
        sum += it->second.per_seed[si];
        ++have;
      }
      if (have == table.schemes.size()) {
        avg.per_seed[si] = sum / static_cast<double>(have);
      }
    }
    cells.emplace(std::make_pair(std::string(kAvgScheme), variant), std::move(avg));
  }

  for (const std::string& scheme : table.schemes) {
    for (const std::string& variant : table.variants) {
      auto it = cells.find(std::make_pair(scheme, variant));
      if (it == cells.end()) continue;
      table.cells.push_back(std::move(it->second));
      cells.erase(it);
    }
  }
  for (const std::string& variant : table.variants) {
    auto it = cells.find(std::make_pair(std::string(kAvgScheme), variant));
    if (it != cells.end()) table.cells.push_back(std::move(it->second));
  }
  table.schemes.push_back(kAvgScheme);

  for (ResultCell& cell : table.cells) {
    const std::vector<double> vals = present_values(cell);
    cell.n = vals.size();
    if (!vals.empty()) {
      cell.mean = mean_of(vals);
      cell.stddev = sample_stddev(vals, cell.mean);
    }
  }
  return table;
}

std::vector<PairwiseTest> pairwise_vs_reference(const ResultTable& table,
                                                const std::string& reference_variant) {
  std::vector<PairwiseTest> out;
  for (const std::string& scheme : table.schemes) {
    const ResultCell* ref = table.find(scheme, reference_variant);
    if (ref == nullptr) continue;
    for (const std::string& variant : table.variants) {
      if (variant == reference_variant) continue;
      const ResultCell* cell = table.find(scheme, variant);
      if (cell == nullptr) continue;
      // Pair up seeds present on both sides; Welch needs two per sample.
      std::vector<double> a;
      std::vector<double> b;
      for (std::size_t si = 0; si < table.seeds.size(); ++si) {
        if (std::isnan(ref->per_seed[si]) || std::isnan(cell->per_seed[si])) continue;
        a.push_back(ref->per_seed[si]);
        b.push_back(cell->per_seed[si]);
      }
      if (a.size() < 2) continue;
      out.push_back({scheme, variant, welch_t_test(a, b)});
    }
  }
  return out;
}

void write_results_csv(const ResultTable& table, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write \"" + file.string() + "\"");
  out << "scheme,variant,mean,std,n";
  for (std::uint64_t s : table.seeds) out << ",seed_" << s;
  out << '\n';
  for (const ResultCell& cell : table.cells) {
    out << cell.scheme << ',' << cell.variant << ',' << format_double(cell.mean) << ','
        << format_double(cell.stddev) << ',' << cell.n;
    for (double v : cell.per_seed) {
      out << ',';
      if (!std::isnan(v)) out << format_double(v);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for \"" + file.string() + "\"");
}

void write_ttest_csv(const std::vector<PairwiseTest>& tests, const std::string& reference,
                     const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write \"" + file.string() + "\"");
  out << "scheme,variant,reference,t,df,p,significant_05,significant_01,degenerate\n";
  for (const PairwiseTest& pt : tests) {
    out << pt.scheme << ',' << pt.variant << ',' << reference << ','
        << format_double(pt.test.t) << ',' << format_double(pt.test.df) << ','
        << format_double(pt.test.p) << ',' << (pt.test.p < 0.05 ? 1 : 0) << ','
        << (pt.test.p < 0.01 ? 1 : 0) << ',' << (pt.test.degenerate ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed for \"" + file.string() + "\"");
}

std::string render_results_table(const ResultTable& table,
                                 const std::vector<PairwiseTest>& tests,
                                 const std::string& reference_variant) {
  auto find_test = [&](const std::string& scheme, const std::string& variant) -> const PairwiseTest* {
    for (const PairwiseTest& pt : tests) {
      if (pt.scheme == scheme && pt.variant == variant) return &pt;
    }
    return nullptr;
  };

  auto cell_text = [&](const std::string& scheme, const std::string& variant) {
    const ResultCell* cell = table.find(scheme, variant);
    if (cell == nullptr || cell->n == 0) return std::string("-");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", cell->mean * 100.0, cell->stddev * 100.0);
    std::string text = buf;
    if (variant != reference_variant) {
      if (const PairwiseTest* pt = find_test(scheme, variant)) {
        if (pt->test.p < 0.01) {
          text += " **";
        } else if (pt->test.p < 0.05) {
          text += " *";
        }
      }
    }
    return text;
  };

  std::vector<std::size_t> widths;
  widths.push_back(std::string("scheme").size());
  for (const std::string& scheme : table.schemes) {
    widths[0] = std::max(widths[0], scheme.size());
  }
  for (const std::string& variant : table.variants) {
    std::size_t w = variant.size();
    for (const std::string& scheme : table.schemes) {
      w = std::max(w, cell_text(scheme, variant).size());
    }
    widths.push_back(w);
  }

  std::ostringstream os;
  auto pad = [&os](const std::string& s, std::size_t w) {
    os << s;
    for (std::size_t i = s.size(); i < w; ++i) os << ' ';
  };
  pad("scheme", widths[0]);
  for (std::size_t vi = 0; vi < table.variants.size(); ++vi) {
    os << "  ";
    pad(table.variants[vi], widths[vi + 1]);
  }
  os << '\n';
  for (const std::string& scheme : table.schemes) {
    pad(scheme, widths[0]);
    for (std::size_t vi = 0; vi < table.variants.size(); ++vi) {
      os << "  ";
      pad(cell_text(scheme, table.variants[vi]), widths[vi + 1]);
    }
    os << '\n';
  }
  os << "\naccuracy percent, mean +- sample std over seeds; * p<0.05, ** p<0.01 "
        "(Welch t-test vs " << reference_variant << ")\n";
  return os.str();
}

}  // namespace adua
