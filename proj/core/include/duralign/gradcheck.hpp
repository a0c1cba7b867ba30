#pragma once

// Central finite-difference verification of analytic gradients. Requires the
// 64-bit tensor type; the builder must be deterministic (same graph for every
// call, including any sampled noise).

#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <type_traits>

#include "duralign/graph.hpp"
#include "duralign/ops.hpp"

namespace duralign {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0;
  int64_t components = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0;

  bool all_below(double tol) const { return worst <= tol; }

  void print(std::ostream& os) const {
    os << std::left << std::setw(40) << "parameter" << std::setw(12) << "size"
       << "max rel. err\n";
    for (const auto& e : entries)
      os << std::left << std::setw(40) << e.name << std::setw(12) << e.components
         << std::scientific << std::setprecision(3) << e.max_rel_err << std::defaultfloat << "\n";
    os << "worst: " << std::scientific << std::setprecision(3) << worst << std::defaultfloat
       << "\n";
  }
};

/// Compares analytic gradients of every trainable parameter against central
/// finite differences of the scalar the builder returns.
template <class T>
GradCheckReport check_gradients(ParameterStore<T>& store,
                                const std::function<int(Graph<T>&)>& build, double fd_step = 1e-4,
                                double denom_floor = 1e-6) {
  static_assert(std::is_floating_point_v<T>);
  if (!std::is_same_v<T, double>)
    throw std::invalid_argument("check_gradients requires 64-bit precision mode");

  std::map<std::string, Tensor<T>> analytic;
  {
    Graph<T> g;
    int root = build(g);
    g.backward(root);
    g.collect_param_gradients(analytic);
  }

  auto eval = [&]() -> double {
    Graph<T> g;
    int root = build(g);
    return static_cast<double>(g.value(root).v[0]);
  };

  GradCheckReport report;
  for (auto& [name, entry] : store) {
    if (!entry.trainable) continue;
    GradCheckEntry res;
    res.name = name;
    res.components = entry.value.size();
    auto it = analytic.find(name);
    for (size_t i = 0; i < entry.value.v.size(); ++i) {
      T saved = entry.value.v[i];
      entry.value.v[i] = saved + static_cast<T>(fd_step);
      double up = eval();
      entry.value.v[i] = saved - static_cast<T>(fd_step);
      double down = eval();
      entry.value.v[i] = saved;
      double fd = (up - down) / (2.0 * fd_step);
      double an = it == analytic.end() ? 0.0 : static_cast<double>(it->second.v[i]);
      double denom = std::max({std::abs(an), std::abs(fd), denom_floor});
      double rel = std::abs(an - fd) / denom;
      res.max_rel_err = std::max(res.max_rel_err, rel);
    }
    report.worst = std::max(report.worst, res.max_rel_err);
    report.entries.push_back(std::move(res));
  }
  return report;
}

}  // namespace duralign
