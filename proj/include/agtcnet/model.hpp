#pragma once

#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agtcnet/electrode_graph.hpp"
#include "agtcnet/error.hpp"
#include "agtcnet/ops.hpp"
#include "agtcnet/params.hpp"

namespace agtcnet::model {

struct DropoutRates {
  double gcat_attention = 0.2;
  double gcat = 0.25;
  double gtc = 0.25;
  double mha_internal = 0.6;
  double mha = 0.3;
  double tce_conv = 0.2;

  static DropoutRates none() { return {0, 0, 0, 0, 0, 0}; }
  bool operator==(const DropoutRates&) const = default;
};

// Layer sizes. Defaults are the reference configuration for the 22-channel,
// 3 s @ 125 Hz, 4-class setup.
struct ModelConfig {
  std::size_t num_channels = 22;
  std::size_t num_samples = 375;
  std::size_t num_classes = 4;
  std::size_t gcat_heads = 2;
  std::size_t gcat_out_features = 16;
  std::size_t ctc_filters = 8;
  std::size_t gtc_filters = 96;
  std::size_t mha_heads = 2;
  std::size_t mha_key_dim = 8;

  std::size_t ctc_kernel = 32;
  std::size_t gcat_kernel = 8;
  std::size_t gcat_attn_kernel = 2;
  std::size_t gcat_depth = 4;
  std::size_t gcap_depth = 2;
  std::size_t gtc_kernel = 8;
  std::size_t gtc_depth = 4;
  std::size_t tce_kernel = 2;
  std::size_t tce_depth = 4;

  DropoutRates dropout;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  // Temporal length after each stage.
  std::size_t ctc_length() const;
  std::size_t gtc_mid_length() const;
  std::size_t gtc_length() const;
};

ModelConfig bciciv2a_config();
ModelConfig eegmmidb_config(std::size_t num_classes);

// Normalized GCAT attention for introspection: one (B, C, T, C) tensor per
// head, alpha[b, i, t, j] = weight node i gives neighbour j at time t.
struct EdgeAttention {
  std::vector<nn::Tensor> heads;
};

struct ForwardContext {
  nn::Mode mode = nn::Mode::infer;
  RngStream* rng = nullptr;  // required in train mode when any dropout rate > 0
};

struct ForwardResult {
  nn::Var logits;
  nn::Var probs;
  EdgeAttention attention;
  // Stage outputs, kept for shape audits.
  nn::Var ctc_conv, ctc, gcat, gcap, gtc_conv, gtc, tce;
};

struct ParamReport {
  struct Entry {
    std::string name;
    nn::Shape shape;
    std::size_t count;
    bool trainable;
  };
  std::vector<Entry> entries;
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;
  std::size_t total() const { return trainable + non_trainable; }
  // Sum over entries whose names start with `prefix`.
  std::size_t count_prefix(const std::string& prefix) const;
};

// Named reference to a persistent tensor (trainable or BN statistic).
struct NamedTensor {
  std::string name;
  nn::Tensor* tensor;
  bool trainable;
};

// One AGTCNet instance: configuration, parameters, BN running statistics and
// the channel graph it was built for.
class Agtcnet {
 public:
  Agtcnet(ModelConfig config, graph::AdjacencyGraph adjacency, std::uint64_t seed);

  Agtcnet(const Agtcnet&) = delete;
  Agtcnet& operator=(const Agtcnet&) = delete;
  Agtcnet(Agtcnet&&) = default;
  Agtcnet& operator=(Agtcnet&&) = default;

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const graph::AdjacencyGraph& adjacency() const { return adjacency_; }

  std::vector<nn::LayerParam>& params() { return params_; }
  const std::vector<nn::LayerParam>& params() const { return params_; }
  nn::LayerParam& param(const std::string& name);
  nn::BatchNormState& bn(const std::string& site);

  // Persistent tensors in serialization order.
  std::vector<NamedTensor> state_tensors();

  // batch: (B, C, T, 1).
  ForwardResult forward(const nn::Var& batch, const ForwardContext& ctx);

  nn::Var ctc_forward(const nn::Var& x, const ForwardContext& ctx, nn::Var* conv_out = nullptr);
  nn::Var gcat_forward(const nn::Var& x, const ForwardContext& ctx, EdgeAttention* attention = nullptr);
  nn::Var gcap_forward(const nn::Var& x, const ForwardContext& ctx);
  nn::Var gtc_forward(const nn::Var& x, const ForwardContext& ctx, nn::Var* conv_out = nullptr);
  nn::Var tce_forward(const nn::Var& x, const ForwardContext& ctx);
  nn::Var classify_logits(const nn::Var& x);
  nn::Var multi_head_attention(const nn::Var& seq, const ForwardContext& ctx);

  ParamReport param_count() const;

  using Snapshot = std::vector<nn::Tensor>;
  Snapshot snapshot();
  void restore(const Snapshot& snap);

 private:
  struct BnSite {
    std::string name;
    nn::BatchNormState state;
    nn::Var gamma, beta;
  };
  struct DsConv {
    nn::Var depthwise, pointwise;
    nn::Conv2dOptions opt;
  };
  struct GcatHead {
    DsConv weight, val, src, dst;
    BnSite *weight_bn, *val_bn, *src_bn, *dst_bn;
    nn::Var prelu_alpha;
  };

  nn::Var add_param(const std::string& name, nn::Tensor init, std::optional<nn::Constraint> c = std::nullopt);
  BnSite* add_bn(const std::string& name, std::size_t features);
  DsConv add_dsconv(const std::string& name, std::size_t kw, std::size_t f_in, std::size_t depth,
                    std::size_t f_out, nn::Padding padding);
  nn::Var run_dsconv(const DsConv& c, const nn::Var& x) const;
  nn::Var bn_apply(BnSite* site, const nn::Var& x, const ForwardContext& ctx) const;
  nn::Var drop(const nn::Var& x, double rate, const ForwardContext& ctx) const;
  void build(std::uint64_t seed);

  // Serialization order of persistent tensors.
  // Either a trainable parameter (param >= 0) or one running statistic of a
  // BN site.
  struct Slot {
    std::string name;
    std::ptrdiff_t param = -1;
    std::size_t bn_site = 0;
    bool running_mean = false;
  };

  ModelConfig config_;
  graph::AdjacencyGraph adjacency_;
  std::vector<Slot> slots_;
  RngStream init_rng_;
  nn::SoftmaxMask attention_mask_;
  nn::Tensor pos_table_;
  std::vector<nn::LayerParam> params_;
  std::deque<BnSite> bn_sites_;

  nn::Var ctc_kernel_;
  BnSite* ctc_bn_ = nullptr;
  std::vector<GcatHead> heads_;
  nn::Var gcat_bias_;
  BnSite* gcat_bn_ = nullptr;
  nn::Var gcap_kernel_;
  BnSite* gcap_bn_ = nullptr;
  DsConv gtc_conv_;
  BnSite* gtc_bn_ = nullptr;
  nn::Var pe_scale_;
  nn::Var mha_q_w_, mha_q_b_, mha_k_w_, mha_k_b_, mha_v_w_, mha_v_b_, mha_o_w_, mha_o_b_;
  BnSite* mha_bn_ = nullptr;
  DsConv tce_conv_;
  BnSite* tce_bn_ = nullptr;
  nn::Var cls_w_, cls_b_;
};

// Checkpoint file errors, one kind per failure class.
class WeightsError : public Error {
 public:
  enum class Kind { io, corrupt, bad_magic, bad_version, name_mismatch, shape_mismatch };
  WeightsError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Little-endian binary checkpoint: magic "AGTC", u16 version, config block,
// then named tensor records. See README for the byte layout.
void save_weights(Agtcnet& model, const std::filesystem::path& path);
// Builds a fresh model from the checkpoint's own config and graph.
Agtcnet load_weights(const std::filesystem::path& path);
// Loads into an existing model. Validates every record before touching the
// model, so a failed load leaves it unchanged.
void load_weights_into(Agtcnet& model, const std::filesystem::path& path);

}  // namespace agtcnet::model
