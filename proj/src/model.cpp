#include "seunet/model.hpp"

#include <stdexcept>

namespace seunet {

std::string_view variant_label(VariantName v) {
  switch (v) {
    case VariantName::kL:
      return "L";
    case VariantName::kM:
      return "M";
    case VariantName::kS:
      return "S";
  }
  return "?";
}

VariantName parse_variant(std::string_view name) {
  if (name == "L") return VariantName::kL;
  if (name == "M") return VariantName::kM;
  if (name == "S") return VariantName::kS;
  throw std::invalid_argument("unknown variant '" + std::string(name) + "' (expected L, M or S)");
}

namespace {

struct RatioStride {
  Index ratio;
  Index stride;
};

RatioStride locked_pair(VariantName v) {
  switch (v) {
    case VariantName::kL:
      return {4, 2};
    case VariantName::kM:
      return {2, 4};
    case VariantName::kS:
      return {1, 8};
  }
  throw std::invalid_argument("unknown variant");
}

}  // namespace

void VariantSpec::validate() const {
  const Index positives[] = {reduction_ratio, merge_stride,    merge_kernel, embed_dim,   heads,
                             head_dim,        depth,           bridge_channels, mlp_ratio, cbr_hidden1,
                             cbr_hidden2,     in_channels,     encoder.bottleneck};
  for (Index v : positives) {
    if (v < 1) throw std::invalid_argument("variant spec: all widths, counts and ratios must be positive");
  }
  for (Index w : encoder.stages) {
    if (w < 1) throw std::invalid_argument("variant spec: encoder widths must be positive");
  }
  if (merge_padding < 0) throw std::invalid_argument("variant spec: merge padding must be >= 0");
  if (heads * head_dim != embed_dim) {
    throw std::invalid_argument("variant spec: heads * head_dim (" + std::to_string(heads * head_dim) +
                                ") must equal embed_dim (" + std::to_string(embed_dim) + ")");
  }
  if (bridge_channels != embed_dim) {
    throw std::invalid_argument("variant spec: bridge channels must equal embed_dim so sites are tokens");
  }
  const RatioStride pair = locked_pair(name);
  if (pair.ratio != reduction_ratio || pair.stride != merge_stride) {
    throw std::invalid_argument("variant spec: " + std::string(variant_label(name)) + " requires (R, S) = (" +
                                std::to_string(pair.ratio) + ", " + std::to_string(pair.stride) + ")");
  }
}

Index VariantSpec::merged_extent(Index extent) const {
  ConvSpec conv{bridge_channels, bridge_channels, merge_kernel, merge_stride, merge_padding, true};
  return conv.conv_output_extent(extent);
}

void VariantSpec::check_input_size(Index height, Index width) const {
  if (height < 16 || width < 16 || height % 16 != 0 || width % 16 != 0) {
    throw ShapeError("model input " + std::to_string(height) + "x" + std::to_string(width) +
                     " must have extents that are positive multiples of 16");
  }
  if (merged_extent(height) * merge_stride != height || merged_extent(width) * merge_stride != width) {
    throw ShapeError("model input " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not restored by the x" + std::to_string(merge_stride) + " head upsampling");
  }
  if (token_count(height, width) % reduction_ratio != 0) {
    throw ShapeError("token count " + std::to_string(token_count(height, width)) + " not divisible by R=" +
                     std::to_string(reduction_ratio));
  }
}

VariantSpec build_variant(VariantName name, const EncoderWidths& widths, Index cbr_hidden1, Index cbr_hidden2) {
  VariantSpec spec;
  spec.name = name;
  const RatioStride pair = locked_pair(name);
  spec.reduction_ratio = pair.ratio;
  spec.merge_stride = pair.stride;
  spec.encoder = widths;
  spec.cbr_hidden1 = cbr_hidden1;
  spec.cbr_hidden2 = cbr_hidden2;
  spec.validate();
  return spec;
}

VariantSpec build_variant(std::string_view name, const EncoderWidths& widths, Index cbr_hidden1, Index cbr_hidden2) {
  return build_variant(parse_variant(name), widths, cbr_hidden1, cbr_hidden2);
}

VariantSpec thin_gradcheck_spec() {
  VariantSpec spec = build_variant(VariantName::kM, EncoderWidths{{4, 8, 16, 32}, 32}, 8, 4);
  spec.embed_dim = 8;
  spec.bridge_channels = 8;
  spec.heads = 2;
  spec.head_dim = 4;
  spec.depth = 1;
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------------------------
// UNet

template <typename T>
UNetBlock<T>::UNetBlock(const std::string& name, const UNetBlockConfig& cfg, Rng& rng)
    : cfg_(cfg),
      conv1_(name + ".conv1", ConvSpec{cfg.in_channels, cfg.hidden_channels, 3, 1, 1, false}, rng),
      bn1_(name + ".bn1", cfg.hidden_channels),
      conv2_(name + ".conv2", ConvSpec{cfg.hidden_channels, cfg.out_channels, 3, 1, 1, false}, rng),
      bn2_(name + ".bn2", cfg.out_channels) {}

template <typename T>
Var<T> UNetBlock<T>::forward(const Var<T>& x, Mode mode) {
  if (x.shape().size() != 4 || x.shape()[1] != cfg_.in_channels) {
    throw ShapeError("unet block: input " + shape_to_string(x.shape()) + " expected " +
                     std::to_string(cfg_.in_channels) + " channels");
  }
  const Var<T> h = ops::relu(bn1_.forward(conv1_.forward(x), mode));
  return ops::relu(bn2_.forward(conv2_.forward(h), mode));
}

template <typename T>
void UNetBlock<T>::collect(StateRefs<T>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
}

template <typename T>
Encoder<T>::Encoder(const VariantSpec& spec, Rng& rng) {
  Index in = spec.in_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    const Index w = spec.encoder.stages[i];
    stages_[i] = UNetBlock<T>("encoder.stage" + std::to_string(i + 1), UNetBlockConfig{in, w, w}, rng);
    in = w;
  }
  const Index b = spec.encoder.bottleneck;
  bottleneck_ = UNetBlock<T>("encoder.bottleneck", UNetBlockConfig{in, b, b}, rng);
}

template <typename T>
EncoderOutput<T> Encoder<T>::forward(const Var<T>& x, Mode mode) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] % 16 != 0 || s[3] % 16 != 0 || s[2] == 0 || s[3] == 0) {
    throw ShapeError("encoder: input " + shape_to_string(s) + " needs spatial extents divisible by 16");
  }
  EncoderOutput<T> out;
  Var<T> h = x;
  for (auto& stage : stages_) {
    h = stage.forward(h, mode);
    out.skips.push_back(h);
    h = ops::maxpool2d(h);
  }
  out.bottleneck = bottleneck_.forward(h, mode);
  return out;
}

template <typename T>
void Encoder<T>::collect(StateRefs<T>& out) {
  for (auto& stage : stages_) stage.collect(out);
  bottleneck_.collect(out);
}

template <typename T>
Decoder<T>::Decoder(const VariantSpec& spec, Rng& rng) {
  Index in = spec.encoder.bottleneck;
  for (std::size_t i = 0; i < 4; ++i) {
    const Index w = spec.encoder.stages[3 - i];
    const std::string tag = std::to_string(i + 1);
    up_[i] = ConvTranspose2d<T>("decoder.up" + tag, ConvSpec{in, w, 2, 2, 0, true}, rng);
    refine_[i] = UNetBlock<T>("decoder.stage" + tag, UNetBlockConfig{2 * w, w, w}, rng);
    in = w;
  }
}

template <typename T>
Var<T> Decoder<T>::forward(const Var<T>& bottleneck, const std::vector<Var<T>>& skips, Mode mode) {
  if (skips.size() != 4) throw ShapeError("decoder: expected 4 skip maps, got " + std::to_string(skips.size()));
  Var<T> h = bottleneck;
  for (std::size_t i = 0; i < 4; ++i) {
    const Var<T> up = up_[i].forward(h);
    const Var<T>& skip = skips[3 - i];
    if (up.shape()[2] != skip.shape()[2] || up.shape()[3] != skip.shape()[3]) {
      throw ShapeError("decoder: upsampled " + shape_to_string(up.shape()) + " does not match skip " +
                       shape_to_string(skip.shape()));
    }
    h = refine_[i].forward(ops::concat_channels(up, skip), mode);
  }
  return h;
}

template <typename T>
void Decoder<T>::collect(StateRefs<T>& out) {
  for (std::size_t i = 0; i < 4; ++i) {
    up_[i].collect(out);
    refine_[i].collect(out);
  }
}

template <typename T>
Bridge<T>::Bridge(const VariantSpec& spec, Rng& rng)
    : conv_("bridge.conv", ConvSpec{spec.decoder_channels(), spec.bridge_channels, 1, 1, 0, true}, rng) {}

// ---------------------------------------------------------------------------------------------
// Tokens

template <typename T>
Var<T> flatten_to_tokens(const Var<T>& map) {
  const Shape& s = map.shape();
  if (s.size() != 4) throw ShapeError("flatten_to_tokens: expected (B,C,H,W), got " + shape_to_string(s));
  return ops::permute(ops::reshape(map, Shape{s[0], s[1], s[2] * s[3]}), {0, 2, 1});
}

template <typename T>
Var<T> tokens_to_map(const Var<T>& tokens, Index height, Index width) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[1] != height * width) {
    throw ShapeError("tokens_to_map: " + shape_to_string(s) + " does not hold " + std::to_string(height) + "x" +
                     std::to_string(width) + " tokens");
  }
  return ops::reshape(ops::permute(tokens, {0, 2, 1}), Shape{s[0], s[2], height, width});
}

template <typename T>
TokenEmbedding<T>::TokenEmbedding(const VariantSpec& spec, Rng& rng)
    : conv_("embed.conv",
            ConvSpec{spec.bridge_channels, spec.bridge_channels, spec.merge_kernel, spec.merge_stride,
                     spec.merge_padding, true},
            rng) {}

template <typename T>
TokenGrid<T> TokenEmbedding<T>::forward(const Var<T>& bridged) const {
  const Var<T> merged = conv_.forward(bridged);
  return TokenGrid<T>{flatten_to_tokens(merged), merged.shape()[2], merged.shape()[3]};
}

// ---------------------------------------------------------------------------------------------
// Attention

template <typename T>
Var<T> reduce_sequence(const Var<T>& tokens, Index ratio, const Linear<T>& proj, const LayerNorm<T>& norm) {
  const Shape& s = tokens.shape();
  if (s.size() != 3) throw ShapeError("reduce_sequence: expected (B,N,d), got " + shape_to_string(s));
  if (ratio < 1 || s[1] % ratio != 0) {
    throw ShapeError("reduce_sequence: token count " + std::to_string(s[1]) + " not divisible by R=" +
                     std::to_string(ratio));
  }
  if (ratio == 1) return tokens;
  const Var<T> grouped = ops::reshape(tokens, Shape{s[0], s[1] / ratio, s[2] * ratio});
  return norm.forward(proj.forward(grouped));
}

template <typename T>
Var<T> sr_attention_head(const Var<T>& q_in, const Var<T>& kv_in, Index ratio, const AttentionHeadWeights<T>& w) {
  Var<T> kv = kv_in;
  if (ratio > 1) {
    if (w.reduction == nullptr || w.reduction_norm == nullptr) {
      throw std::invalid_argument("sr_attention_head: ratio > 1 requires reduction weights");
    }
    kv = reduce_sequence(kv_in, ratio, *w.reduction, *w.reduction_norm);
  } else if (ratio < 1 || kv_in.shape().size() != 3) {
    throw ShapeError("sr_attention_head: bad ratio or input " + shape_to_string(kv_in.shape()));
  }
  const Var<T> q = ops::linear(q_in, w.query_w, w.query_b);
  const Var<T> k = ops::linear(kv, w.key_w, w.key_b);
  const Var<T> v = ops::linear(kv, w.value_w, w.value_b);
  return ops::scaled_dot_product_attention(q, k, v);
}

template <typename T>
SpatialReductionAttention<T>::SpatialReductionAttention(const std::string& name, Index embed_dim, Index heads,
                                                        Index ratio, Rng& rng)
    : embed_dim_(embed_dim),
      heads_(heads),
      ratio_(ratio),
      query_(name + ".query", embed_dim, embed_dim, rng),
      key_(name + ".key", embed_dim, embed_dim, rng, false),
      value_(name + ".value", embed_dim, embed_dim, rng),
      output_(name + ".output", embed_dim, embed_dim, rng) {
  if (heads < 1 || embed_dim % heads != 0) {
    throw std::invalid_argument("attention: embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (ratio < 1) throw std::invalid_argument("attention: reduction ratio must be >= 1");
  if (ratio > 1) {
    reduction_ = Linear<T>(name + ".reduction", embed_dim * ratio, embed_dim, rng);
    reduction_norm_ = LayerNorm<T>(name + ".reduction_norm", embed_dim);
  }
}

template <typename T>
Var<T> SpatialReductionAttention<T>::split_heads(const Var<T>& x) const {
  const Shape& s = x.shape();
  return ops::permute(ops::reshape(x, Shape{s[0], s[1], heads_, embed_dim_ / heads_}), {0, 2, 1, 3});
}

template <typename T>
Var<T> SpatialReductionAttention<T>::merge_heads(const Var<T>& x) const {
  const Shape& s = x.shape();  // (B, h, N, d_h)
  return ops::reshape(ops::permute(x, {0, 2, 1, 3}), Shape{s[0], s[2], embed_dim_});
}

template <typename T>
Var<T> SpatialReductionAttention<T>::forward(const Var<T>& tokens) const {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[2] != embed_dim_) {
    throw ShapeError("attention: expected (B,N," + std::to_string(embed_dim_) + "), got " + shape_to_string(s));
  }
  const Var<T> kv = reduce_sequence(tokens, ratio_, reduction_, reduction_norm_);
  const Var<T> q = split_heads(query_.forward(tokens));
  const Var<T> k = split_heads(key_.forward(kv));
  const Var<T> v = split_heads(value_.forward(kv));
  return output_.forward(merge_heads(ops::scaled_dot_product_attention(q, k, v)));
}

template <typename T>
Var<T> SpatialReductionAttention<T>::forward_dense_reference(const Var<T>& tokens) const {
  const Var<T> q = split_heads(query_.forward(tokens));
  const Var<T> k = split_heads(key_.forward(tokens));
  const Var<T> v = split_heads(value_.forward(tokens));
  return output_.forward(merge_heads(ops::attention_reference(q, k, v)));
}

template <typename T>
AttentionHeadWeights<T> SpatialReductionAttention<T>::head_weights(Index e) const {
  if (e < 0 || e >= heads_) throw std::out_of_range("attention: head index out of range");
  const Index dh = embed_dim_ / heads_;
  auto columns = [&](const Linear<T>& lin) {
    const Tensor<T>& w = lin.weight().value();
    Tensor<T> sw(Shape{embed_dim_, dh});
    for (Index r = 0; r < embed_dim_; ++r) {
      for (Index c = 0; c < dh; ++c) sw[r * dh + c] = w[r * embed_dim_ + e * dh + c];
    }
    if (!lin.bias().var().defined()) return std::make_pair(Var<T>(std::move(sw)), Var<T>());
    const Tensor<T>& b = lin.bias().value();
    Tensor<T> sb(Shape{dh});
    for (Index c = 0; c < dh; ++c) sb[c] = b[e * dh + c];
    return std::make_pair(Var<T>(std::move(sw)), Var<T>(std::move(sb)));
  };
  AttentionHeadWeights<T> w;
  std::tie(w.query_w, w.query_b) = columns(query_);
  std::tie(w.key_w, w.key_b) = columns(key_);
  std::tie(w.value_w, w.value_b) = columns(value_);
  if (ratio_ > 1) {
    w.reduction = &reduction_;
    w.reduction_norm = &reduction_norm_;
  }
  return w;
}

template <typename T>
void SpatialReductionAttention<T>::collect(StateRefs<T>& out) {
  query_.collect(out);
  key_.collect(out);
  value_.collect(out);
  output_.collect(out);
  if (ratio_ > 1) {
    reduction_.collect(out);
    reduction_norm_.collect(out);
  }
}

template <typename T>
TransformerBlock<T>::TransformerBlock(const std::string& name, const VariantSpec& spec, Rng& rng)
    : norm1_(name + ".norm1", spec.embed_dim),
      attention_(name + ".attn", spec.embed_dim, spec.heads, spec.reduction_ratio, rng),
      norm2_(name + ".norm2", spec.embed_dim),
      fc1_(name + ".mlp.fc1", spec.embed_dim, spec.embed_dim * spec.mlp_ratio, rng),
      fc2_(name + ".mlp.fc2", spec.embed_dim * spec.mlp_ratio, spec.embed_dim, rng) {}

template <typename T>
Var<T> TransformerBlock<T>::forward(const Var<T>& tokens) const {
  const Var<T> mid = ops::add(attention_.forward(norm1_.forward(tokens)), tokens);
  return ops::add(fc2_.forward(ops::gelu(fc1_.forward(norm2_.forward(mid)))), mid);
}

template <typename T>
void TransformerBlock<T>::collect(StateRefs<T>& out) {
  norm1_.collect(out);
  attention_.collect(out);
  norm2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

// ---------------------------------------------------------------------------------------------
// Head and full model

template <typename T>
PredictionHead<T>::PredictionHead(const VariantSpec& spec, Rng& rng)
    : channels_(spec.bridge_channels),
      factor_(spec.upsample_factor()),
      conv1_("head.conv1", ConvSpec{spec.bridge_channels, spec.cbr_hidden1, 3, 1, 1, false}, rng),
      bn1_("head.bn1", spec.cbr_hidden1),
      conv2_("head.conv2", ConvSpec{spec.cbr_hidden1, spec.cbr_hidden2, 3, 1, 1, false}, rng),
      bn2_("head.bn2", spec.cbr_hidden2),
      out_("head.out", ConvSpec{spec.cbr_hidden2, 1, 1, 1, 0, true}, rng) {}

template <typename T>
Var<T> PredictionHead<T>::forward(const TokenGrid<T>& grid, Mode mode) {
  const Shape& s = grid.tokens.shape();
  if (s.size() != 3 || s[1] != grid.height * grid.width || s[2] != channels_) {
    throw ShapeError("prediction head: tokens " + shape_to_string(s) + " do not form a " +
                     std::to_string(grid.height) + "x" + std::to_string(grid.width) + "x" +
                     std::to_string(channels_) + " grid");
  }
  const Var<T> map = ops::bilinear_resize(tokens_to_map(grid.tokens, grid.height, grid.width), factor_);
  const Var<T> h1 = ops::relu(bn1_.forward(conv1_.forward(map), mode));
  const Var<T> h2 = ops::relu(bn2_.forward(conv2_.forward(h1), mode));
  return out_.forward(h2);
}

template <typename T>
void PredictionHead<T>::collect(StateRefs<T>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  out_.collect(out);
}

template <typename T>
SeUNetTrans<T>::SeUNetTrans(const VariantSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  encoder_ = Encoder<T>(spec_, rng);
  decoder_ = Decoder<T>(spec_, rng);
  bridge_ = Bridge<T>(spec_, rng);
  embedding_ = TokenEmbedding<T>(spec_, rng);
  for (Index d = 0; d < spec_.depth; ++d) {
    blocks_.emplace_back("transformer.block" + std::to_string(d + 1), spec_, rng);
  }
  head_ = PredictionHead<T>(spec_, rng);
}

template <typename T>
Var<T> SeUNetTrans<T>::forward_logits(const Var<T>& x, Mode mode, ForwardTrace<T>* trace) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != spec_.in_channels) {
    throw ShapeError("model: expected (B," + std::to_string(spec_.in_channels) + ",H,W) input, got " +
                     shape_to_string(s));
  }
  spec_.check_input_size(s[2], s[3]);
  EncoderOutput<T> enc = encoder_.forward(x, mode);
  const Var<T> decoded = decoder_.forward(enc.bottleneck, enc.skips, mode);
  const Var<T> bridged = bridge_.forward(decoded);
  TokenGrid<T> grid = embedding_.forward(bridged);
  const TokenGrid<T> embedded = grid;
  for (const auto& block : blocks_) grid.tokens = block.forward(grid.tokens);
  Var<T> logits = head_.forward(grid, mode);
  if (trace != nullptr) {
    *trace = ForwardTrace<T>{enc.skips, enc.bottleneck, decoded, bridged, embedded, grid.tokens, logits};
  }
  return logits;
}

template <typename T>
StateRefs<T> SeUNetTrans<T>::state() {
  StateRefs<T> out;
  encoder_.collect(out);
  decoder_.collect(out);
  bridge_.collect(out);
  embedding_.collect(out);
  for (auto& block : blocks_) block.collect(out);
  head_.collect(out);
  return out;
}

#define SEUNET_INSTANTIATE_MODEL(T)                                                                       \
  template class UNetBlock<T>;                                                                            \
  template class Encoder<T>;                                                                              \
  template class Decoder<T>;                                                                              \
  template class Bridge<T>;                                                                               \
  template class TokenEmbedding<T>;                                                                       \
  template class SpatialReductionAttention<T>;                                                            \
  template class TransformerBlock<T>;                                                                     \
  template class PredictionHead<T>;                                                                       \
  template class SeUNetTrans<T>;                                                                          \
  template Var<T> flatten_to_tokens(const Var<T>&);                                                       \
  template Var<T> tokens_to_map(const Var<T>&, Index, Index);                                             \
  template Var<T> reduce_sequence(const Var<T>&, Index, const Linear<T>&, const LayerNorm<T>&);           \
  template Var<T> sr_attention_head(const Var<T>&, const Var<T>&, Index, const AttentionHeadWeights<T>&);

SEUNET_INSTANTIATE_MODEL(float)
SEUNET_INSTANTIATE_MODEL(double)

#undef SEUNET_INSTANTIATE_MODEL

}  // namespace seunet
