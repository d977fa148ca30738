#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lomix/cmm.hpp"
#include "lomix/csv.hpp"
#include "lomix/trainer.hpp"

namespace lomix {

inline WeightTrace read_weight_trace(const std::string& path) {
  const csv::Table t = csv::read(path);
  if (t.header != std::vector<std::string>{"epoch", "output_id", "weight"})
    throw std::runtime_error("'" + path + "' is not a weight-trace CSV");
  WeightTrace trace;
  for (const auto& row : t.rows) {
    if (row.size() != 3) throw std::runtime_error("malformed weight-trace row in '" + path + "'");
    trace.push_back({static_cast<std::size_t>(std::stoull(row[0])), row[1], std::stod(row[2])});
  }
  return trace;
}

struct FamilySum {
  std::size_t epoch;
  std::string family;
  double weight_sum;
};

/// Family order of the output-id families present in the trace.
inline std::vector<std::string> family_order() { return {"Original", "Add", "Mult", "Concat", "Awf"}; }

/// Per-epoch sum of weights within each operator family. Families without
/// members in the trace are omitted.
inline std::vector<FamilySum> family_sums(const WeightTrace& trace) {
  std::map<std::size_t, std::map<std::string, double>> acc;
  for (const auto& r : trace) acc[r.epoch][OutputId::parse(r.output_id).family()] += r.weight;
  std::vector<FamilySum> out;
  for (const auto& [epoch, fams] : acc)
    for (const auto& f : family_order())
      if (auto it = fams.find(f); it != fams.end()) out.push_back({epoch, f, it->second});
  return out;
}

/// Rows of the last recorded epoch, in trace order.
inline WeightTrace final_weights(const WeightTrace& trace) {
  if (trace.empty()) return {};
  std::size_t last = 0;
  for (const auto& r : trace) last = std::max(last, r.epoch);
  WeightTrace out;
  for (const auto& r : trace)
    if (r.epoch == last) out.push_back(r);
  return out;
}

inline std::string family_sums_csv(const std::vector<FamilySum>& rows) {
  std::string out = "epoch,family,weight_sum\n";
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + "," + r.family + "," + csv::number(r.weight_sum, 17) + "\n";
  return out;
}

inline std::string final_weights_csv(const WeightTrace& rows) {
  std::string out = "output_id,family,weight\n";
  for (const auto& r : rows)
    out += csv::field(r.output_id) + "," + OutputId::parse(r.output_id).family() + "," +
           csv::number(r.weight) + "\n";
  return out;
}

}  // namespace lomix
