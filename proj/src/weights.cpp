#include <map>

#include "agtcnet/binary_io.hpp"
#include "agtcnet/model.hpp"

namespace agtcnet::model {

namespace {

constexpr char kMagic[4] = {'A', 'G', 'T', 'C'};
constexpr std::uint16_t kVersion = 1;

[[noreturn]] void corrupt(const std::string& what, std::size_t offset) {
  throw WeightsError(WeightsError::Kind::corrupt,
                     "corrupt checkpoint: " + what + " (at byte " + std::to_string(offset) + ")");
}

std::vector<std::uint32_t> config_words(const ModelConfig& c) {
  const std::size_t v[] = {c.num_channels, c.num_samples,      c.num_classes, c.gcat_heads, c.gcat_out_features,
                           c.ctc_filters,  c.gtc_filters,      c.mha_heads,   c.mha_key_dim, c.ctc_kernel,
                           c.gcat_kernel,  c.gcat_attn_kernel, c.gcat_depth,  c.gcap_depth, c.gtc_kernel,
                           c.gtc_depth,    c.tce_kernel,       c.tce_depth};
  std::vector<std::uint32_t> out;
  for (std::size_t x : v) out.push_back(static_cast<std::uint32_t>(x));
  return out;
}

ModelConfig config_from_words(const std::vector<std::uint32_t>& w, const std::vector<double>& rates) {
  ModelConfig c;
  std::size_t* fields[] = {&c.num_channels, &c.num_samples,      &c.num_classes, &c.gcat_heads, &c.gcat_out_features,
                           &c.ctc_filters,  &c.gtc_filters,      &c.mha_heads,   &c.mha_key_dim, &c.ctc_kernel,
                           &c.gcat_kernel,  &c.gcat_attn_kernel, &c.gcat_depth,  &c.gcap_depth, &c.gtc_kernel,
                           &c.gtc_depth,    &c.tce_kernel,       &c.tce_depth};
  for (std::size_t i = 0; i < w.size(); ++i) *fields[i] = w[i];
  c.dropout = DropoutRates{rates[0], rates[1], rates[2], rates[3], rates[4], rates[5]};
  return c;
}

std::vector<double> dropout_words(const DropoutRates& d) {
  return {d.gcat_attention, d.gcat, d.gtc, d.mha_internal, d.mha, d.tce_conv};
}

struct ParsedCheckpoint {
  ModelConfig config;
  std::vector<graph::ElectrodeLabel> labels;
  std::vector<std::uint8_t> adjacency;
  std::vector<std::pair<std::string, nn::Tensor>> tensors;
};

ParsedCheckpoint parse(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const Error& e) {
    throw WeightsError(WeightsError::Kind::io, e.what());
  }
  io::ByteReader r(bytes, [](const std::string& what, std::size_t off) { corrupt(what, off); });
  const std::string magic = r.get_string(4, "magic");
  if (magic != std::string(kMagic, 4)) throw WeightsError(WeightsError::Kind::bad_magic, "not an AGTC checkpoint: " + path.string());
  const auto version = r.get<std::uint16_t>("version");
  if (version != kVersion) {
    throw WeightsError(WeightsError::Kind::bad_version, "unsupported checkpoint version " + std::to_string(version));
  }
  ParsedCheckpoint cp;
  std::vector<std::uint32_t> words(config_words(ModelConfig{}).size());
  for (auto& w : words) w = r.get<std::uint32_t>("config block");
  std::vector<double> rates(6);
  for (auto& v : rates) v = r.get<double>("config block");
  cp.config = config_from_words(words, rates);

  const auto channels = r.get<std::uint32_t>("graph block");
  if (channels != cp.config.num_channels) corrupt("graph block channel count disagrees with config", r.pos());
  for (std::uint32_t i = 0; i < channels; ++i) {
    const auto len = r.get<std::uint16_t>("channel label");
    const std::string s = r.get_string(len, "channel label");
    try {
      cp.labels.push_back(graph::parse_label(s));
    } catch (const Error&) {
      corrupt("bad channel label '" + s + "'", r.pos());
    }
  }
  cp.adjacency.resize(static_cast<std::size_t>(channels) * channels);
  for (auto& a : cp.adjacency) a = r.get<std::uint8_t>("adjacency");

  const auto count = r.get<std::uint32_t>("record count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint16_t>("record name length");
    std::string name = r.get_string(name_len, "record name");
    const auto rank = r.get<std::uint8_t>("record rank");
    nn::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("record dims");
    const std::size_t n = nn::shape_size(shape);
    if (r.remaining() / sizeof(double) < n) corrupt("truncated payload of '" + name + "'", r.pos());
    std::vector<double> data(n);
    for (auto& v : data) v = r.get<double>("record payload");
    cp.tensors.emplace_back(std::move(name), nn::Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) corrupt("trailing bytes after last record", r.pos());
  return cp;
}

void assign(Agtcnet& model, ParsedCheckpoint& cp) {
  auto targets = model.state_tensors();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cp.tensors.size(); ++i) index[cp.tensors[i].first] = i;
  // Shape checks walk the model's own order so the first mismatching layer
  // is the one reported.
  for (const auto& t : targets) {
    auto it = index.find(t.name);
    if (it == index.end()) continue;
    const nn::Tensor& src = cp.tensors[it->second].second;
    if (src.shape() != t.tensor->shape()) {
      throw WeightsError(WeightsError::Kind::shape_mismatch, "shape mismatch for '" + t.name + "': checkpoint " +
                                                                 nn::shape_str(src.shape()) + " vs model " +
                                                                 nn::shape_str(t.tensor->shape()));
    }
  }
  if (index.size() != cp.tensors.size()) throw WeightsError(WeightsError::Kind::name_mismatch, "duplicate tensor names in checkpoint");
  for (const auto& t : targets) {
    if (!index.count(t.name)) throw WeightsError(WeightsError::Kind::name_mismatch, "checkpoint lacks tensor '" + t.name + "'");
  }
  if (targets.size() != cp.tensors.size()) {
    for (const auto& [name, _] : cp.tensors) {
      bool known = false;
      for (const auto& t : targets) known = known || t.name == name;
      if (!known) throw WeightsError(WeightsError::Kind::name_mismatch, "checkpoint has unknown tensor '" + name + "'");
    }
  }
  for (auto& t : targets) *t.tensor = std::move(cp.tensors[index[t.name]].second);
}

}  // namespace

void save_weights(Agtcnet& model, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint16_t>(kVersion);
  for (std::uint32_t v : config_words(model.config())) w.put<std::uint32_t>(v);
  for (double v : dropout_words(model.config().dropout)) w.put<double>(v);
  const auto& g = model.adjacency();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.size()));
  for (const auto& l : g.labels) {
    const std::string s = graph::format_label(l);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    w.put_bytes(s);
  }
  for (std::uint8_t a : g.matrix) w.put<std::uint8_t>(a);
  const auto tensors = model.state_tensors();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.tensor->rank()));
    for (std::size_t d : t.tensor->shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.tensor->values()) w.put<double>(v);
  }
  try {
    io::write_file(path, w.bytes());
  } catch (const Error& e) {
    throw WeightsError(WeightsError::Kind::io, e.what());
  }
}

Agtcnet load_weights(const std::filesystem::path& path) {
  ParsedCheckpoint cp = parse(path);
  graph::AdjacencyGraph g;
  try {
    g = graph::adjacency_from_matrix(cp.labels, cp.adjacency);
    cp.config.validate();
  } catch (const WeightsError&) {
    throw;
  } catch (const Error& e) {
    throw WeightsError(WeightsError::Kind::corrupt, std::string("corrupt checkpoint: ") + e.what());
  }
  Agtcnet model(cp.config, std::move(g), 0);
  assign(model, cp);
  return model;
}

void load_weights_into(Agtcnet& model, const std::filesystem::path& path) {
  ParsedCheckpoint cp = parse(path);
  assign(model, cp);
}

}  // namespace agtcnet::model
