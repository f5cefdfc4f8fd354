#pragma once

// UNet feature extractor, bridge, pixel-level token embedding, spatial-reduction
// transformer and CBR prediction head.
//
//   image (B,3,H,W)
//     -> encoder: 4 × [UNet block, record skip, 2×2 max-pool], bottleneck block
//     -> decoder: 4 × [2×2 transposed conv, concat skip, UNet block]   (B,C_d,H,W)
//     -> bridge: 1×1 conv C_d -> C_b                                   (B,C_b,H,W)
//     -> merge: 3×3 conv stride S, flatten sites to tokens             (B,N,d_N)
//     -> D transformer blocks with spatial-reduction attention (ratio R)
//     -> reshape to (B,C_b,H/S,W/S), bilinear ×S, conv-BN-ReLU ×2, 1×1 conv
//     -> logits (B,1,H,W); sigmoid gives the probability map.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "seunet/layers.hpp"

namespace seunet {

enum class VariantName { kL, kM, kS };

std::string_view variant_label(VariantName v);
VariantName parse_variant(std::string_view name);

struct EncoderWidths {
  std::array<Index, 4> stages{16, 32, 64, 128};
  Index bottleneck = 256;
};

inline constexpr EncoderWidths kDeskWidths{{16, 32, 64, 128}, 256};
inline constexpr EncoderWidths kPaperWidths{{64, 128, 256, 512}, 1024};

/// Every architecture hyperparameter of one model.
struct VariantSpec {
  VariantName name = VariantName::kM;
  Index reduction_ratio = 2;  // R
  Index merge_stride = 4;     // S
  Index merge_kernel = 3;     // E
  Index merge_padding = 1;    // P
  Index embed_dim = 64;       // d_N
  Index heads = 4;            // h
  Index head_dim = 16;        // d_h
  Index depth = 3;            // D
  Index bridge_channels = 64; // C_b
  Index mlp_ratio = 4;
  Index cbr_hidden1 = 32;     // C_h1
  Index cbr_hidden2 = 16;     // C_h2
  Index in_channels = 3;
  EncoderWidths encoder = kDeskWidths;

  void validate() const;
  Index decoder_channels() const { return encoder.stages[0]; }
  Index upsample_factor() const { return merge_stride; }
  /// floor((extent - E + 2P) / S) + 1
  Index merged_extent(Index extent) const;
  Index token_count(Index height, Index width) const { return merged_extent(height) * merged_extent(width); }
  /// Throws unless (height, width) is a legal model input size.
  void check_input_size(Index height, Index width) const;
};

/// Locked (R, S) pairs: L -> (4, 2), M -> (2, 4), S -> (1, 8).
VariantSpec build_variant(VariantName name, const EncoderWidths& widths = kDeskWidths, Index cbr_hidden1 = 32,
                          Index cbr_hidden2 = 16);
VariantSpec build_variant(std::string_view name, const EncoderWidths& widths = kDeskWidths, Index cbr_hidden1 = 32,
                          Index cbr_hidden2 = 16);

/// Small configuration used for end-to-end gradient checks.
VariantSpec thin_gradcheck_spec();

struct UNetBlockConfig {
  Index in_channels;
  Index hidden_channels;
  Index out_channels;
};

/// Two (3×3 conv, batch norm, ReLU) stages; spatial extents preserved.
template <typename T>
class UNetBlock {
 public:
  UNetBlock() = default;
  UNetBlock(const std::string& name, const UNetBlockConfig& cfg, Rng& rng);

  Var<T> forward(const Var<T>& x, Mode mode);
  const UNetBlockConfig& config() const noexcept { return cfg_; }
  void collect(StateRefs<T>& out);

 private:
  UNetBlockConfig cfg_{};
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
};

template <typename T>
struct EncoderOutput {
  Var<T> bottleneck;
  std::vector<Var<T>> skips;  // encoder order, finest first
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const VariantSpec& spec, Rng& rng);
  EncoderOutput<T> forward(const Var<T>& x, Mode mode);
  void collect(StateRefs<T>& out);

 private:
  std::array<UNetBlock<T>, 4> stages_;
  UNetBlock<T> bottleneck_;
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const VariantSpec& spec, Rng& rng);
  /// Output has C_d = first encoder width channels at the input resolution.
  Var<T> forward(const Var<T>& bottleneck, const std::vector<Var<T>>& skips, Mode mode);
  void collect(StateRefs<T>& out);

 private:
  std::array<ConvTranspose2d<T>, 4> up_;  // deepest stage first
  std::array<UNetBlock<T>, 4> refine_;
};

/// 1×1 convolution, stride 1, C_d -> C_b.
template <typename T>
class Bridge {
 public:
  Bridge() = default;
  Bridge(const VariantSpec& spec, Rng& rng);
  Var<T> forward(const Var<T>& x) const { return conv_.forward(x); }
  Conv2d<T>& conv() noexcept { return conv_; }
  void collect(StateRefs<T>& out) { conv_.collect(out); }

 private:
  Conv2d<T> conv_;
};

template <typename T>
struct TokenGrid {
  Var<T> tokens;  // (B, N, C_b)
  Index height = 0;
  Index width = 0;
};

/// Strided merge convolution followed by flattening every spatial site into one token.
/// No positional term is added.
template <typename T>
class TokenEmbedding {
 public:
  TokenEmbedding() = default;
  TokenEmbedding(const VariantSpec& spec, Rng& rng);
  TokenGrid<T> forward(const Var<T>& bridged) const;
  Conv2d<T>& conv() noexcept { return conv_; }
  void collect(StateRefs<T>& out) { conv_.collect(out); }

 private:
  Conv2d<T> conv_;
};

/// (B, C, H, W) -> (B, H·W, C)
template <typename T> Var<T> flatten_to_tokens(const Var<T>& map);
/// (B, H·W, C) -> (B, C, H, W)
template <typename T> Var<T> tokens_to_map(const Var<T>& tokens, Index height, Index width);

/// Shortens a token sequence by `ratio`: groups of `ratio` consecutive tokens become one
/// token of width d·ratio, mapped back to d by `proj` and layer-normalised.
template <typename T>
Var<T> reduce_sequence(const Var<T>& tokens, Index ratio, const Linear<T>& proj, const LayerNorm<T>& norm);

/// Weights of a single attention head.
template <typename T>
struct AttentionHeadWeights {
  Var<T> query_w, query_b;  // [d_N, d_h], [d_h]
  Var<T> key_w, key_b;      // key_b undefined: a key bias shifts every score of a row equally
  Var<T> value_w, value_b;
  const Linear<T>* reduction = nullptr;  // required when ratio > 1
  const LayerNorm<T>* reduction_norm = nullptr;
};

/// One attention head: queries from `q_in`, keys/values from the ratio-reduced `kv_in`.
/// Returns (B, N, d_h).
template <typename T>
Var<T> sr_attention_head(const Var<T>& q_in, const Var<T>& kv_in, Index ratio, const AttentionHeadWeights<T>& w);

/// Multi-head attention with spatial reduction of the key/value sequence.
template <typename T>
class SpatialReductionAttention {
 public:
  SpatialReductionAttention() = default;
  SpatialReductionAttention(const std::string& name, Index embed_dim, Index heads, Index ratio, Rng& rng);

  Var<T> forward(const Var<T>& tokens) const;
  /// Same weights, keys/values from the unreduced sequence, attention spelled out with
  /// matmul + softmax. Equals forward() exactly when the ratio is 1.
  Var<T> forward_dense_reference(const Var<T>& tokens) const;

  /// Weights of head `e` as standalone views (slices are copies, not differentiable links).
  AttentionHeadWeights<T> head_weights(Index e) const;

  Index heads() const noexcept { return heads_; }
  Index ratio() const noexcept { return ratio_; }
  Linear<T>& query() noexcept { return query_; }
  Linear<T>& key() noexcept { return key_; }
  Linear<T>& value() noexcept { return value_; }
  Linear<T>& output() noexcept { return output_; }
  void collect(StateRefs<T>& out);

 private:
  Var<T> split_heads(const Var<T>& x) const;
  Var<T> merge_heads(const Var<T>& x) const;

  Index embed_dim_ = 0;
  Index heads_ = 1;
  Index ratio_ = 1;
  Linear<T> query_, key_, value_, output_;
  Linear<T> reduction_;
  LayerNorm<T> reduction_norm_;
};

/// Pre-norm attention and MLP (d -> 4d -> GeLU -> d), each with a residual connection.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, const VariantSpec& spec, Rng& rng);
  Var<T> forward(const Var<T>& tokens) const;

  SpatialReductionAttention<T>& attention() noexcept { return attention_; }
  Linear<T>& mlp_in() noexcept { return fc1_; }
  Linear<T>& mlp_out() noexcept { return fc2_; }
  void collect(StateRefs<T>& out);

 private:
  LayerNorm<T> norm1_;
  SpatialReductionAttention<T> attention_;
  LayerNorm<T> norm2_;
  Linear<T> fc1_, fc2_;
};

/// Reshape, ×S bilinear upsampling and the CBR stack ending in a 1-channel 1×1 conv.
template <typename T>
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(const VariantSpec& spec, Rng& rng);
  /// Returns logits (B, 1, height·S, width·S).
  Var<T> forward(const TokenGrid<T>& grid, Mode mode);
  Index conv_count() const noexcept { return 3; }
  Conv2d<T>& final_conv() noexcept { return out_; }
  void collect(StateRefs<T>& out);

 private:
  Index channels_ = 0;
  Index factor_ = 1;
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  Conv2d<T> out_;
};

/// Intermediate tensors of one forward pass, for inspection.
template <typename T>
struct ForwardTrace {
  std::vector<Var<T>> skips;
  Var<T> bottleneck;
  Var<T> decoded;
  Var<T> bridged;
  TokenGrid<T> embedded;
  Var<T> transformed;
  Var<T> logits;
};

template <typename T>
class SeUNetTrans {
 public:
  SeUNetTrans(const VariantSpec& spec, std::uint64_t seed);
  SeUNetTrans(const SeUNetTrans&) = delete;
  SeUNetTrans& operator=(const SeUNetTrans&) = delete;

  const VariantSpec& spec() const noexcept { return spec_; }

  Var<T> forward_logits(const Var<T>& x, Mode mode, ForwardTrace<T>* trace = nullptr);
  /// Sigmoid probabilities in (0, 1).
  Var<T> forward(const Var<T>& x, Mode mode) { return ops::sigmoid(forward_logits(x, mode)); }

  /// Parameters and buffers in a fixed order with unique dotted names.
  StateRefs<T> state();
  std::vector<Parameter<T>*> parameters() { return state().params; }

  Encoder<T>& encoder() noexcept { return encoder_; }
  Decoder<T>& decoder() noexcept { return decoder_; }
  Bridge<T>& bridge() noexcept { return bridge_; }
  TokenEmbedding<T>& embedding() noexcept { return embedding_; }
  std::vector<TransformerBlock<T>>& blocks() noexcept { return blocks_; }
  PredictionHead<T>& head() noexcept { return head_; }

 private:
  VariantSpec spec_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
  Bridge<T> bridge_;
  TokenEmbedding<T> embedding_;
  std::vector<TransformerBlock<T>> blocks_;
  PredictionHead<T> head_;
};

extern template class SeUNetTrans<float>;
extern template class SeUNetTrans<double>;

}  // namespace seunet
