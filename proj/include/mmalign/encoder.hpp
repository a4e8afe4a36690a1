#pragma once

// Transformer blocks shared by the unimodal encoders and the cross-modal
// fusion stacks. One block computes
//
//   Q = t Wq, K = s Wk, V = s Wv
//   zhat = MATT(Q, K, V) + t
//   out  = FFN(zhat) + LN(zhat)
//
// for a target sequence t and a source sequence s (t == s for self-attention).
// ResidualVariant::kStandardPostLN swaps in out = LN2(a + FFN(a)),
// a = LN1(MATT + t) for comparison.

#include <string>
#include <vector>

#include "mmalign/numerics.hpp"

namespace mmalign {

enum class Modality { kM1, kM2 };

std::string to_string(Modality m);

struct ModalitySequence {
  Modality tag = Modality::kM1;
  Matrix values;  // length x d_in

  Index length() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

/// Encoded sequence; row 0 is the head token, rows 1..l the content.
struct SharedRepr {
  Matrix values;

  Index content_length() const { return values.rows() - 1; }
  Index dim() const { return values.cols(); }
  Matrix content() const { return values.bottomRows(values.rows() - 1); }
};

enum class ResidualVariant { kAsPrinted, kStandardPostLN };

class MultiHeadAttention {
 public:
  struct Cache {
    Matrix q, k, v;
    std::vector<Matrix> probs;  // one Lq x Ls matrix per head
    Matrix heads;               // concatenated head outputs, before Wo
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(Index d_model, Index num_heads, Rng& rng);

  Matrix forward(const Matrix& target, const Matrix& source, Cache* cache = nullptr) const;
  // Adds the input gradients into d_target and d_source.
  void backward(const Matrix& target, const Matrix& source, const Cache& cache,
                const Matrix& d_out, Matrix& d_target, Matrix& d_source);
  void collect(const std::string& prefix, ParamList& out);

  GradPair wq, wk, wv, wo;
  Index num_heads = 1;
};

class TransformerLayer {
 public:
  struct Cache {
    MultiHeadAttention::Cache attn;
    Matrix zhat;          // attention + residual (pre-LN in the post-LN variant)
    LayerNorm::Cache ln1;
    Matrix ffn_in;
    Matrix ffn_pre;       // ff1 output before GELU
    Matrix ffn_act;
    Matrix post_sum;      // post-LN variant: input of LN2
    LayerNorm::Cache ln2;
  };

  TransformerLayer() = default;
  TransformerLayer(Index d_model, Index num_heads, Index d_ff, ResidualVariant variant, Rng& rng);

  Matrix forward(const Matrix& target, const Matrix& source, Cache* cache = nullptr) const;
  void backward(const Matrix& target, const Matrix& source, const Cache& cache,
                const Matrix& d_out, Matrix& d_target, Matrix& d_source);
  void collect(const std::string& prefix, ParamList& out);

  MultiHeadAttention attn;
  LayerNorm ln1;
  LayerNorm ln2;
  Linear ff1;
  Linear ff2;
  ResidualVariant variant = ResidualVariant::kAsPrinted;

 private:
  Matrix ffn(const Matrix& x, Cache* cache) const;
  Matrix ffn_backward(const Cache& cache, const Matrix& d_out);
};

struct EncoderConfig {
  Index d_in = 8;
  Index d_model = 32;
  Index num_heads = 4;
  Index d_ff = 64;
  Index num_layers = 1;
  Index max_len = 128;  // positions including the head token
  ResidualVariant variant = ResidualVariant::kAsPrinted;
  bool positional = true;
};

class EncoderParams {
 public:
  EncoderParams() = default;
  EncoderParams(const EncoderConfig& config, Rng& rng);

  void collect(const std::string& prefix, ParamList& out);

  EncoderConfig config;
  Linear input_proj;
  GradPair cls;  // learned head-token embedding, 1 x d_model
  GradPair pos;  // max_len x d_model
  std::vector<TransformerLayer> layers;
};

struct EncodeCache {
  Matrix x;
  std::vector<Matrix> layer_inputs;
  std::vector<TransformerLayer::Cache> layers;
};

/// Projects, prepends the head token, adds positions and runs self-attention.
SharedRepr encode(const ModalitySequence& x, const EncoderParams& params,
                  EncodeCache* cache = nullptr);
void encode_backward(EncoderParams& params, const EncodeCache& cache, const Matrix& d_z);

/// Cross-modal stack: every layer queries from the running target and reads
/// keys/values from the fixed source.
struct FusionStack {
  FusionStack() = default;
  FusionStack(Index depth, Index d_model, Index num_heads, Index d_ff, ResidualVariant variant,
              Rng& rng);
  void collect(const std::string& prefix, ParamList& out);

  std::vector<TransformerLayer> layers;
};

struct CrossCache {
  std::vector<Matrix> layer_inputs;
  std::vector<TransformerLayer::Cache> layers;
};

SharedRepr cross_attend(const SharedRepr& target, const SharedRepr& source,
                        const FusionStack& stack, CrossCache* cache = nullptr);
void cross_attend_backward(FusionStack& stack, const SharedRepr& source, const CrossCache& cache,
                           const Matrix& d_out, Matrix& d_target, Matrix& d_source);

}  // namespace mmalign
