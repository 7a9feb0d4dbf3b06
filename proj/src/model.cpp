#include <cmath>

#include "agtcnet/error.hpp"
#include "agtcnet/model.hpp"

namespace agtcnet::model {

using nn::Conv2dOptions;
using nn::Padding;
using nn::PoolOptions;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr PoolOptions kCtcPool{1, 4, 1, 2};
constexpr PoolOptions kGtcPool{1, 4, 1, 4};

}  // namespace

void ModelConfig::validate() const {
  const std::size_t sizes[] = {num_channels, num_samples, num_classes, gcat_heads,  gcat_out_features,
                               ctc_filters,  gtc_filters, mha_heads,   mha_key_dim, ctc_kernel,
                               gcat_kernel,  gcat_attn_kernel, gcat_depth, gcap_depth, gtc_kernel,
                               gtc_depth,    tce_kernel,  tce_depth};
  for (std::size_t v : sizes)
    if (v == 0) throw InvalidArgument("model configuration sizes must all be positive");
  if (num_classes < 2) throw InvalidArgument("at least two classes are required");
  if (gtc_filters % 2 != 0) throw InvalidArgument("temporal feature size must be even for positional encoding");
  const double rates[] = {dropout.gcat_attention, dropout.gcat, dropout.gtc,
                          dropout.mha_internal,   dropout.mha,  dropout.tce_conv};
  for (double r : rates)
    if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("dropout rates must lie in [0, 1)");
  try {
    (void)gtc_length();
  } catch (const ShapeError& e) {
    throw ShapeError("input length " + std::to_string(num_samples) + " too short for the temporal stack: " + e.what());
  }
}

std::size_t ModelConfig::ctc_length() const {
  if (num_samples < ctc_kernel) throw ShapeError("ctc: input shorter than the temporal kernel");
  return nn::pool_out_len(num_samples - ctc_kernel + 1, kCtcPool.pool_w, kCtcPool.stride_w);
}

std::size_t ModelConfig::gtc_mid_length() const {
  return nn::pool_out_len(ctc_length(), kGtcPool.pool_w, kGtcPool.stride_w);
}

std::size_t ModelConfig::gtc_length() const {
  return nn::pool_out_len(gtc_mid_length(), kGtcPool.pool_w, kGtcPool.stride_w);
}

ModelConfig bciciv2a_config() { return ModelConfig{}; }

ModelConfig eegmmidb_config(std::size_t num_classes) {
  ModelConfig c;
  c.num_channels = 64;
  c.num_samples = 640;
  c.num_classes = num_classes;
  return c;
}

std::size_t ParamReport::count_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries)
    if (e.name.rfind(prefix, 0) == 0) n += e.count;
  return n;
}

Agtcnet::Agtcnet(ModelConfig config, graph::AdjacencyGraph adjacency, std::uint64_t seed)
    : config_(std::move(config)), adjacency_(std::move(adjacency)) {
  config_.validate();
  if (adjacency_.size() != config_.num_channels) {
    throw ShapeError("adjacency has " + std::to_string(adjacency_.size()) + " nodes but the model expects " +
                     std::to_string(config_.num_channels) + " channels");
  }
  const std::size_t C = config_.num_channels;
  attention_mask_.rows = C;
  attention_mask_.repeat_inner = config_.ctc_length();
  attention_mask_.allowed.assign(C * C, 0);
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j)
      attention_mask_.allowed[i * C + j] = (i == j || adjacency_.connected(i, j)) ? 1 : 0;
  pos_table_ = nn::positional_encoding(config_.gtc_length(), config_.gtc_filters);
  build(seed);
}

Var Agtcnet::add_param(const std::string& name, Tensor init, std::optional<nn::Constraint> c) {
  Var v(std::move(init), true);
  slots_.push_back(Slot{name, static_cast<std::ptrdiff_t>(params_.size()), 0, false});
  params_.push_back(nn::LayerParam{name, v, c});
  return v;
}

Agtcnet::BnSite* Agtcnet::add_bn(const std::string& name, std::size_t features) {
  BnSite& site = bn_sites_.emplace_back();
  site.name = name;
  site.state = nn::BatchNormState(features);
  site.gamma = add_param(name + ".gamma", Tensor({features}, 1.0));
  site.beta = add_param(name + ".beta", Tensor({features}, 0.0));
  const std::size_t idx = bn_sites_.size() - 1;
  slots_.push_back(Slot{name + ".moving_mean", -1, idx, true});
  slots_.push_back(Slot{name + ".moving_var", -1, idx, false});
  return &site;
}

Agtcnet::DsConv Agtcnet::add_dsconv(const std::string& name, std::size_t kw, std::size_t f_in, std::size_t depth,
                                    std::size_t f_out, Padding padding) {
  // Initial values are drawn from a per-name substream, so adding a layer
  // does not reshuffle the others.
  RngStream dw_rng = init_rng_.fork(name + ".depthwise");
  RngStream pw_rng = init_rng_.fork(name + ".pointwise");
  const Shape dw_shape{1, kw, f_in, depth};
  const Shape pw_shape{1, 1, f_in * depth, f_out};
  const auto [dfi, dfo] = nn::kernel_fans(dw_shape);
  const auto [pfi, pfo] = nn::kernel_fans(pw_shape);
  DsConv c;
  c.depthwise = add_param(name + ".depthwise", nn::glorot_uniform(dw_shape, dfi, dfo, dw_rng));
  c.pointwise = add_param(name + ".pointwise", nn::glorot_uniform(pw_shape, pfi, pfo, pw_rng));
  c.opt = Conv2dOptions{1, 1, padding};
  return c;
}

void Agtcnet::build(std::uint64_t seed) {
  init_rng_ = RngStream(seed);
  const auto& c = config_;
  auto glorot = [&](const std::string& name, const Shape& shape, std::size_t fan_in, std::size_t fan_out) {
    RngStream r = init_rng_.fork(name);
    return nn::glorot_uniform(shape, fan_in, fan_out, r);
  };

  {
    const Shape ks{1, c.ctc_kernel, 1, c.ctc_filters};
    const auto [fi, fo] = nn::kernel_fans(ks);
    ctc_kernel_ = add_param("ctc.conv.kernel", glorot("ctc.conv.kernel", ks, fi, fo));
    ctc_bn_ = add_bn("ctc.bn", c.ctc_filters);
  }

  const std::size_t F = c.gcat_out_features;
  for (std::size_t h = 0; h < c.gcat_heads; ++h) {
    const std::string p = "gcat.head" + std::to_string(h);
    GcatHead head;
    head.weight = add_dsconv(p + ".weight", c.gcat_kernel, c.ctc_filters, c.gcat_depth, F, Padding::same);
    head.weight_bn = add_bn(p + ".weight.bn", F);
    head.val = add_dsconv(p + ".val", c.gcat_kernel, c.ctc_filters, c.gcat_depth, F, Padding::same);
    head.val_bn = add_bn(p + ".val.bn", F);
    head.src = add_dsconv(p + ".attn_src", c.gcat_attn_kernel, F, c.gcat_depth, 1, Padding::same);
    head.src_bn = add_bn(p + ".attn_src.bn", 1);
    head.dst = add_dsconv(p + ".attn_dst", c.gcat_attn_kernel, F, c.gcat_depth, 1, Padding::same);
    head.dst_bn = add_bn(p + ".attn_dst.bn", 1);
    head.prelu_alpha = add_param(p + ".prelu.alpha", Tensor({1}, 0.0));
    heads_.push_back(head);
  }
  gcat_bias_ = add_param("gcat.bias", Tensor({F}, 0.0));
  gcat_bn_ = add_bn("gcat.bn", F);

  const std::size_t gcat_features = c.ctc_filters + F;
  {
    const Shape ks{c.num_channels, 1, gcat_features, c.gcap_depth};
    const auto [fi, fo] = nn::kernel_fans(ks);
    gcap_kernel_ = add_param("gcap.depthwise", glorot("gcap.depthwise", ks, fi, fo),
                             nn::Constraint{nn::MaxNorm{1.0, 0}, std::nullopt});
    gcap_bn_ = add_bn("gcap.bn", gcat_features * c.gcap_depth);
  }

  const std::size_t gcap_features = gcat_features * c.gcap_depth;
  gtc_conv_ = add_dsconv("gtc.conv", c.gtc_kernel, gcap_features, c.gtc_depth, c.gtc_filters, Padding::same);
  gtc_bn_ = add_bn("gtc.bn", c.gtc_filters);

  const std::size_t D = c.gtc_filters;
  const std::size_t HK = c.mha_heads * c.mha_key_dim;
  pe_scale_ = add_param("tce.pos.scale", Tensor({1}, 0.0), nn::Constraint{std::nullopt, nn::MinMax{0.0, 1.0}});
  mha_q_w_ = add_param("tce.mha.query.kernel", glorot("tce.mha.query.kernel", {D, HK}, D, HK));
  mha_q_b_ = add_param("tce.mha.query.bias", Tensor({HK}, 0.0));
  mha_k_w_ = add_param("tce.mha.key.kernel", glorot("tce.mha.key.kernel", {D, HK}, D, HK));
  mha_k_b_ = add_param("tce.mha.key.bias", Tensor({HK}, 0.0));
  mha_v_w_ = add_param("tce.mha.value.kernel", glorot("tce.mha.value.kernel", {D, HK}, D, HK));
  mha_v_b_ = add_param("tce.mha.value.bias", Tensor({HK}, 0.0));
  mha_o_w_ = add_param("tce.mha.output.kernel", glorot("tce.mha.output.kernel", {HK, D}, HK, D));
  mha_o_b_ = add_param("tce.mha.output.bias", Tensor({D}, 0.0));
  mha_bn_ = add_bn("tce.mha.bn", D);
  tce_conv_ = add_dsconv("tce.conv", c.tce_kernel, D, c.tce_depth, D, Padding::same);
  tce_bn_ = add_bn("tce.conv.bn", D);

  const std::size_t flat = c.gtc_length() * D;
  cls_w_ = add_param("classifier.kernel", glorot("classifier.kernel", {flat, c.num_classes}, flat, c.num_classes),
                     nn::Constraint{nn::MaxNorm{0.25, 0}, std::nullopt});
  cls_b_ = add_param("classifier.bias", Tensor({c.num_classes}, 0.0));
  nn::apply_constraints(params_);
}

nn::LayerParam& Agtcnet::param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw InvalidArgument("no parameter named '" + name + "'");
}

nn::BatchNormState& Agtcnet::bn(const std::string& site) {
  for (auto& s : bn_sites_)
    if (s.name == site) return s.state;
  throw InvalidArgument("no batch-norm site named '" + site + "'");
}

std::vector<NamedTensor> Agtcnet::state_tensors() {
  std::vector<NamedTensor> out;
  out.reserve(slots_.size());
  for (const auto& s : slots_) {
    if (s.param >= 0) {
      out.push_back({s.name, &params_[static_cast<std::size_t>(s.param)].var.mutable_value(), true});
    } else {
      auto& st = bn_sites_[s.bn_site].state;
      out.push_back({s.name, s.running_mean ? &st.running_mean : &st.running_var, false});
    }
  }
  return out;
}

ParamReport Agtcnet::param_count() const {
  ParamReport r;
  for (const auto& s : slots_) {
    const Tensor& t = s.param >= 0 ? params_[static_cast<std::size_t>(s.param)].var.value()
                                   : (s.running_mean ? bn_sites_[s.bn_site].state.running_mean
                                                     : bn_sites_[s.bn_site].state.running_var);
    const bool trainable = s.param >= 0;
    r.entries.push_back({s.name, t.shape(), t.size(), trainable});
    (trainable ? r.trainable : r.non_trainable) += t.size();
  }
  return r;
}

Agtcnet::Snapshot Agtcnet::snapshot() {
  Snapshot snap;
  for (const auto& nt : state_tensors()) snap.push_back(*nt.tensor);
  return snap;
}

void Agtcnet::restore(const Snapshot& snap) {
  auto tensors = state_tensors();
  if (snap.size() != tensors.size()) throw InvalidArgument("snapshot does not match this model");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (snap[i].shape() != tensors[i].tensor->shape()) throw ShapeError("snapshot shape mismatch at " + tensors[i].name);
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) *tensors[i].tensor = snap[i];
}

Var Agtcnet::run_dsconv(const DsConv& c, const Var& x) const {
  return nn::separable_conv2d(x, c.depthwise, c.pointwise, c.opt);
}

Var Agtcnet::bn_apply(BnSite* site, const Var& x, const ForwardContext& ctx) const {
  return nn::batch_norm(x, site->gamma, site->beta, site->state, ctx.mode);
}

Var Agtcnet::drop(const Var& x, double rate, const ForwardContext& ctx) const {
  if (ctx.mode == nn::Mode::infer || rate == 0.0) return x;
  if (!ctx.rng) throw InvalidArgument("train-mode forward with dropout needs a random stream");
  return nn::dropout(x, rate, ctx.mode, *ctx.rng);
}

Var Agtcnet::ctc_forward(const Var& x, const ForwardContext& ctx, Var* conv_out) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != config_.num_channels || s[3] != 1) {
    throw ShapeError("ctc: expected (B," + std::to_string(config_.num_channels) + ",T,1) input, got " +
                     nn::shape_str(s));
  }
  Var conv = nn::conv2d(x, ctc_kernel_, Conv2dOptions{1, 1, Padding::valid});
  if (conv_out) *conv_out = conv;
  return nn::avg_pool2d(bn_apply(ctc_bn_, conv, ctx), kCtcPool);
}

Var Agtcnet::gcat_forward(const Var& x, const ForwardContext& ctx, EdgeAttention* attention) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != config_.num_channels || s[3] != config_.ctc_filters) {
    throw ShapeError("gcat: unexpected input " + nn::shape_str(s));
  }
  if (s[2] != attention_mask_.repeat_inner) {
    throw ShapeError("gcat: time axis " + std::to_string(s[2]) + " does not match the configured length");
  }
  Var sum;
  for (auto& head : heads_) {
    Var z = nn::selu(bn_apply(head.weight_bn, run_dsconv(head.weight, x), ctx));
    Var src = nn::selu(bn_apply(head.src_bn, run_dsconv(head.src, z), ctx));
    Var dst = nn::selu(bn_apply(head.dst_bn, run_dsconv(head.dst, z), ctx));
    Var scores = nn::prelu(nn::pairwise_sum(src, dst), head.prelu_alpha);
    Var alpha = nn::masked_softmax(scores, attention_mask_);
    if (attention) attention->heads.push_back(alpha.value());
    alpha = drop(alpha, config_.dropout.gcat_attention, ctx);
    Var values = nn::selu(bn_apply(head.val_bn, run_dsconv(head.val, x), ctx));
    Var message = nn::graph_aggregate(alpha, values);
    sum = sum.defined() ? nn::add(sum, message) : message;
  }
  Var mean = nn::scale(sum, 1.0 / static_cast<double>(heads_.size()));
  Var out = nn::selu(nn::add_bias(mean, gcat_bias_));
  out = drop(bn_apply(gcat_bn_, out, ctx), config_.dropout.gcat, ctx);
  return nn::concat_last(x, out);
}

Var Agtcnet::gcap_forward(const Var& x, const ForwardContext& ctx) {
  const auto& s = x.shape();
  const std::size_t f = config_.ctc_filters + config_.gcat_out_features;
  if (s.size() != 4 || s[1] != config_.num_channels || s[3] != f) {
    throw ShapeError("gcap: unexpected input " + nn::shape_str(s));
  }
  Var y = nn::depthwise_conv2d(x, gcap_kernel_, Conv2dOptions{1, 1, Padding::valid});
  return nn::selu(bn_apply(gcap_bn_, y, ctx));
}

Var Agtcnet::gtc_forward(const Var& x, const ForwardContext& ctx, Var* conv_out) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("gtc: unexpected input " + nn::shape_str(s));
  Var y = drop(nn::avg_pool2d(x, kGtcPool), config_.dropout.gtc, ctx);
  y = nn::selu(bn_apply(gtc_bn_, run_dsconv(gtc_conv_, y), ctx));
  if (conv_out) *conv_out = y;
  return drop(nn::avg_pool2d(y, kGtcPool), config_.dropout.gtc, ctx);
}

Var Agtcnet::multi_head_attention(const Var& seq, const ForwardContext& ctx) {
  const std::size_t H = config_.mha_heads;
  Var q = nn::linear(seq, mha_q_w_, mha_q_b_);
  Var k = nn::linear(seq, mha_k_w_, mha_k_b_);
  Var v = nn::linear(seq, mha_v_w_, mha_v_b_);
  Var probs = nn::softmax(nn::attention_scores(q, k, H));
  probs = drop(probs, config_.dropout.mha_internal, ctx);
  return nn::linear(nn::attention_context(probs, v, H), mha_o_w_, mha_o_b_);
}

Var Agtcnet::tce_forward(const Var& x, const ForwardContext& ctx) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != pos_table_.dim(0) || s[3] != config_.gtc_filters) {
    throw ShapeError("tce: unexpected input " + nn::shape_str(s));
  }
  const std::size_t B = s[0], T = s[2], D = s[3];
  Var y0 = nn::add_positional(x, pe_scale_, pos_table_);
  Var attn = nn::reshape(multi_head_attention(nn::reshape(y0, {B, T, D}), ctx), {B, 1, T, D});
  Var y1 = nn::add(y0, drop(bn_apply(mha_bn_, attn, ctx), config_.dropout.mha, ctx));
  Var conv = nn::selu(bn_apply(tce_bn_, run_dsconv(tce_conv_, y1), ctx));
  return nn::add(y1, drop(conv, config_.dropout.tce_conv, ctx));
}

Var Agtcnet::classify_logits(const Var& x) {
  const std::size_t B = x.dim(0);
  const std::size_t flat = x.value().size() / B;
  if (flat != cls_w_.dim(0)) throw ShapeError("classifier: unexpected input " + nn::shape_str(x.shape()));
  return nn::linear(nn::reshape(x, {B, flat}), cls_w_, cls_b_);
}

ForwardResult Agtcnet::forward(const Var& batch, const ForwardContext& ctx) {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != config_.num_channels || s[2] != config_.num_samples || s[3] != 1) {
    throw ShapeError("forward: batch shape " + nn::shape_str(s) + " does not match (B," +
                     std::to_string(config_.num_channels) + "," + std::to_string(config_.num_samples) + ",1)");
  }
  ForwardResult r;
  r.ctc = ctc_forward(batch, ctx, &r.ctc_conv);
  r.gcat = gcat_forward(r.ctc, ctx, &r.attention);
  r.gcap = gcap_forward(r.gcat, ctx);
  r.gtc = gtc_forward(r.gcap, ctx, &r.gtc_conv);
  r.tce = tce_forward(r.gtc, ctx);
  r.logits = classify_logits(r.tce);
  r.probs = nn::softmax(r.logits);
  return r;
}

}  // namespace agtcnet::model
