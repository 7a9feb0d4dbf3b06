#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace agtcnet::graph {

// Anteroposterior rows, front to back. Temporal prefixes fold into these.
enum class Row : std::uint8_t { Fp, AF, F, FC, C, CP, P, PO, O, I };

std::string_view row_name(Row r);

// A parsed 10-20/10-10 electrode label. `prefix` keeps the written letter
// designation (e.g. "T" or "FT") so formatting round-trips; `row` is the
// lattice row it sits on. lateral_index < 0 is left (odd), 0 midline, > 0 right.
struct ElectrodeLabel {
  std::string raw;
  std::string prefix;
  Row row = Row::C;
  int lateral_index = 0;

  bool operator==(const ElectrodeLabel& o) const {
    return prefix == o.prefix && row == o.row && lateral_index == o.lateral_index;
  }
};

// Accepts case variants and trailing dots/whitespace ("Fc5.", "FCZ").
ElectrodeLabel parse_label(std::string_view s);
// Canonical spelling, e.g. "FC3", "Cz", "Fp1", "AFz", "T7".
std::string format_label(const ElectrodeLabel& label);

// Undirected binary channel graph. No self-loops are stored.
struct AdjacencyGraph {
  std::vector<ElectrodeLabel> labels;
  std::vector<std::uint8_t> matrix;  // C x C, row-major

  std::size_t size() const { return labels.size(); }
  bool connected(std::size_t i, std::size_t j) const { return matrix[i * size() + j] != 0; }
  std::vector<std::size_t> neighbors(std::size_t i) const;
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;  // i < j
  std::size_t edge_count() const { return edges().size(); }
  std::size_t index_of(std::string_view label) const;  // throws when absent
};

// Consecutive-neighbour lattice: link adjacent members of each letter row
// (ordered by lateral index) and of each lateral column (ordered front to back).
AdjacencyGraph build_adjacency(const std::vector<std::string>& labels);

// Graph from an explicit matrix (used when loading checkpoints).
AdjacencyGraph adjacency_from_matrix(std::vector<ElectrodeLabel> labels, std::vector<std::uint8_t> matrix);

struct DegreeReport {
  std::map<std::string, std::size_t> degree;  // keyed by canonical label
  std::size_t components = 0;
};

DegreeReport degree_histogram(const AdjacencyGraph& g);

// Channel lists of the two reference montages.
std::vector<std::string> bciciv2a_montage();
std::vector<std::string> eegmmidb_montage();

}  // namespace agtcnet::graph
