#include "agtcnet/electrode_graph.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <numeric>
#include <set>

#include "agtcnet/error.hpp"

namespace agtcnet::graph {

namespace {

struct PrefixInfo {
  std::string_view upper;
  std::string_view canonical;
  Row row;
};

// Longest prefixes first so "FC" wins over "F".
constexpr std::array<PrefixInfo, 13> kPrefixes{{
    {"FP", "Fp", Row::Fp},
    {"AF", "AF", Row::AF},
    {"FT", "FT", Row::FC},
    {"FC", "FC", Row::FC},
    {"TP", "TP", Row::CP},
    {"CP", "CP", Row::CP},
    {"PO", "PO", Row::PO},
    {"F", "F", Row::F},
    {"T", "T", Row::C},
    {"C", "C", Row::C},
    {"P", "P", Row::P},
    {"O", "O", Row::O},
    {"I", "I", Row::I},
}};

}  // namespace

std::string_view row_name(Row r) {
  static constexpr std::array<std::string_view, 10> names{"Fp", "AF", "F", "FC", "C", "CP", "P", "PO", "O", "I"};
  return names[static_cast<std::size_t>(r)];
}

ElectrodeLabel parse_label(std::string_view s) {
  std::string t(s);
  while (!t.empty() && (t.back() == '.' || std::isspace(static_cast<unsigned char>(t.back())))) t.pop_back();
  std::size_t lead = 0;
  while (lead < t.size() && std::isspace(static_cast<unsigned char>(t[lead]))) ++lead;
  t.erase(0, lead);
  if (t.empty()) throw ParseError("empty electrode label");
  std::string up = t;
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));

  const PrefixInfo* match = nullptr;
  for (const auto& p : kPrefixes) {
    if (up.rfind(p.upper, 0) == 0) {
      match = &p;
      break;
    }
  }
  if (!match) throw ParseError("unrecognized electrode prefix in '" + std::string(s) + "'");
  const std::string suffix = up.substr(match->upper.size());
  ElectrodeLabel label;
  label.raw = std::string(s);
  label.prefix = std::string(match->canonical);
  label.row = match->row;
  if (suffix == "Z") {
    label.lateral_index = 0;
  } else {
    if (suffix.empty() || suffix.size() > 2 || !std::all_of(suffix.begin(), suffix.end(), ::isdigit) ||
        suffix[0] == '0') {
      throw ParseError("unrecognized electrode suffix '" + suffix + "' in '" + std::string(s) + "'");
    }
    const int n = std::stoi(suffix);
    label.lateral_index = (n % 2 == 1) ? -n : n;
  }
  // Temporal letters only exist laterally; "Tz" and friends are not sites.
  if (label.lateral_index == 0 && (match->upper == "T" || match->upper == "FT" || match->upper == "TP")) {
    throw ParseError("unrecognized electrode suffix 'Z' for temporal prefix in '" + std::string(s) + "'");
  }
  return label;
}

std::string format_label(const ElectrodeLabel& label) {
  if (label.lateral_index == 0) return label.prefix + "z";
  return label.prefix + std::to_string(std::abs(label.lateral_index));
}

std::vector<std::size_t> AdjacencyGraph::neighbors(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < size(); ++j)
    if (connected(i, j)) out.push_back(j);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> AdjacencyGraph::edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = i + 1; j < size(); ++j)
      if (connected(i, j)) out.emplace_back(i, j);
  return out;
}

std::size_t AdjacencyGraph::index_of(std::string_view label) const {
  const ElectrodeLabel want = parse_label(label);
  for (std::size_t i = 0; i < size(); ++i)
    if (labels[i] == want) return i;
  throw InvalidArgument("channel '" + std::string(label) + "' not in graph");
}

AdjacencyGraph build_adjacency(const std::vector<std::string>& raw_labels) {
  AdjacencyGraph g;
  const std::size_t n = raw_labels.size();
  g.labels.reserve(n);
  for (const auto& s : raw_labels) g.labels.push_back(parse_label(s));
  std::set<std::pair<Row, int>> positions;
  for (std::size_t i = 0; i < n; ++i) {
    if (!positions.emplace(g.labels[i].row, g.labels[i].lateral_index).second) {
      throw InvalidArgument("duplicate electrode position for label '" + raw_labels[i] + "'");
    }
  }
  g.matrix.assign(n * n, 0);
  auto link = [&](std::size_t a, std::size_t b) {
    g.matrix[a * n + b] = 1;
    g.matrix[b * n + a] = 1;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  // Rows: consecutive channels by lateral index within a letter row.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& la = g.labels[a];
    const auto& lb = g.labels[b];
    return std::tie(la.row, la.lateral_index) < std::tie(lb.row, lb.lateral_index);
  });
  for (std::size_t k = 1; k < n; ++k)
    if (g.labels[order[k]].row == g.labels[order[k - 1]].row) link(order[k], order[k - 1]);

  // Columns: consecutive channels front to back sharing a lateral index.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& la = g.labels[a];
    const auto& lb = g.labels[b];
    return std::tie(la.lateral_index, la.row) < std::tie(lb.lateral_index, lb.row);
  });
  for (std::size_t k = 1; k < n; ++k)
    if (g.labels[order[k]].lateral_index == g.labels[order[k - 1]].lateral_index) link(order[k], order[k - 1]);
  return g;
}

AdjacencyGraph adjacency_from_matrix(std::vector<ElectrodeLabel> labels, std::vector<std::uint8_t> matrix) {
  const std::size_t n = labels.size();
  if (matrix.size() != n * n) throw ShapeError("adjacency matrix size does not match label count");
  for (std::size_t i = 0; i < n; ++i) {
    if (matrix[i * n + i]) throw InvalidArgument("adjacency matrix must have a zero diagonal");
    for (std::size_t j = 0; j < n; ++j) {
      if (matrix[i * n + j] > 1 || matrix[i * n + j] != matrix[j * n + i]) {
        throw InvalidArgument("adjacency matrix must be symmetric and binary");
      }
    }
  }
  return AdjacencyGraph{std::move(labels), std::move(matrix)};
}

DegreeReport degree_histogram(const AdjacencyGraph& g) {
  DegreeReport r;
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i) r.degree[format_label(g.labels[i])] = g.neighbors(i).size();
  std::vector<bool> seen(n, false);
  for (std::size_t s = 0; s < n; ++s) {
    if (seen[s]) continue;
    ++r.components;
    std::vector<std::size_t> stack{s};
    seen[s] = true;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v : g.neighbors(u)) {
        if (!seen[v]) {
          seen[v] = true;
          stack.push_back(v);
        }
      }
    }
  }
  return r;
}

std::vector<std::string> bciciv2a_montage() {
  return {"Fz",  "FC3", "FC1", "FCz", "FC2", "FC4", "C5",  "C3", "C1", "Cz",  "C2",
          "C4",  "C6",  "CP3", "CP1", "CPz", "CP2", "CP4", "P1", "Pz", "P2",  "POz"};
}

std::vector<std::string> eegmmidb_montage() {
  return {"FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "C5",  "C3",  "C1",  "Cz",  "C2",  "C4",
          "C6",  "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "Fp1", "Fpz", "Fp2", "AF7", "AF3",
          "AFz", "AF4", "AF8", "F7",  "F5",  "F3",  "F1",  "Fz",  "F2",  "F4",  "F6",  "F8",  "FT7",
          "FT8", "T7",  "T8",  "T9",  "T10", "TP7", "TP8", "P7",  "P5",  "P3",  "P1",  "Pz",  "P2",
          "P4",  "P6",  "P8",  "PO7", "PO3", "POz", "PO4", "PO8", "O1",  "Oz",  "O2",  "Iz"};
}

}  // namespace agtcnet::graph
