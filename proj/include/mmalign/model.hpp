#pragma once

// The full network: two unimodal encoders, the alignment dynamics learner,
// two cross-attention fusion stacks and the output head, plus the losses.
//
// Parameter names carry their partition as a prefix: theta_enc/, theta_fu/,
// theta_out/ for the backbone and psi/ for the fitter.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmalign/adl.hpp"
#include "mmalign/encoder.hpp"
#include "mmalign/numerics.hpp"
#include "mmalign/ot_align.hpp"

namespace mmalign {

enum class Task { kRegression, kClassification };

/// How the victim modality is replaced when it is absent.
enum class ImputeMode {
  kAdl,   // fitter -> plan -> weighted sum of surviving representations
  kZero,  // zeros on content rows
  kSelf,  // the surviving sequence itself (single-modality backbone)
};

std::string to_string(Task t);
std::string to_string(ImputeMode m);

struct ModelConfig {
  Index d_in1 = 8;
  Index d_in2 = 8;
  Index d_model = 32;
  Index num_heads = 4;
  Index d_ff = 64;
  Index encoder_layers = 1;
  Index fusion_layers = 2;
  Index head_hidden = 32;
  Index max_len = 128;
  Index window = 8;
  Task task = Task::kRegression;
  Index num_classes = 7;
  ResidualVariant variant = ResidualVariant::kAsPrinted;
  // Per-encoder position tables. Off by default: attention is blind to row
  // order, so slot positions at the fusion input carry the timing instead and
  // the encoders stay comparable for the OT cost.
  bool positional = false;
  bool renormalize_columns = true;
  // Learned slot positions added to both sequences at the fusion input, so a
  // re-aligned imputation is distinguishable from a permutation of Z1.
  bool fusion_positional = true;

  Index output_dim() const { return task == Task::kRegression ? 1 : num_classes; }
};

/// Two-layer regression/classification head on [z0_12, z0_21].
struct OutputHead {
  OutputHead() = default;
  OutputHead(Index in, Index hidden, Index out, Rng& rng);
  void collect(const std::string& prefix, ParamList& out);

  Linear hidden;
  Linear out;
};

class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(const ModelConfig& config, std::uint64_t seed);

  ParamList theta();
  ParamList psi();
  ParamList all();

  ModelConfig config;
  EncoderParams enc1;
  EncoderParams enc2;
  FusionStack fuse12;  // queries from m2, keys/values from m1
  FusionStack fuse21;  // queries from m1, keys/values from m2
  GradPair fusion_pos;  // max_len x d_model, empty when disabled
  OutputHead head;
  FitterParams fitter;
};

struct Prediction {
  Task task = Task::kRegression;
  double value = 0.0;  // regression output
  Vector logits;       // classification output

  int predicted_class() const;
};

struct ForwardCache {
  bool missing = false;
  ImputeMode mode = ImputeMode::kAdl;
  EncodeCache enc1;
  EncodeCache enc2;
  SharedRepr z1;
  SharedRepr z2;  // encoded or imputed
  std::optional<AlignmentPlan> plan;
  SharedRepr fused_z1;  // fusion inputs, slot positions included
  SharedRepr fused_z2;
  CrossCache fuse12;
  CrossCache fuse21;
  Matrix head_in;
  Matrix head_act;
};

struct CompleteOutput {
  Prediction prediction;
  SharedRepr z1;
  SharedRepr z2;
};

CompleteOutput forward_complete(const ModalitySequence& x1, const ModalitySequence& x2,
                                const ModelParams& params, ForwardCache* cache = nullptr);

/// Victim modality absent: the fitter is only read, never updated here.
Prediction forward_missing(const ModalitySequence& x1, const ModelParams& params,
                           ImputeMode mode = ImputeMode::kAdl, ForwardCache* cache = nullptr);

/// Fusion and head on already-encoded sequences.
Prediction fuse_and_predict(const SharedRepr& z1, const SharedRepr& z2, const ModelParams& params,
                            ForwardCache* cache = nullptr);

/// Backward pass from d(loss)/d(prediction) plus optional gradients on the
/// pooled content means used by the contrastive term. Only backbone (theta)
/// gradients are touched; the imputation plan is treated as a constant.
void backward(ModelParams& params, const ForwardCache& cache, const Prediction& d_pred,
              const Vector* d_pool1 = nullptr, const Vector* d_pool2 = nullptr);

/// Squared error (regression) or cross-entropy over logits (classification).
double main_loss(const Prediction& pred, double label, Prediction* d_pred = nullptr);

/// Mean over content rows (head token excluded).
Vector pool_content(const SharedRepr& z);

struct ContrastiveResult {
  double loss = 0.0;
  Matrix d_s;  // N x d
  Matrix d_t;
};

/// -(1/N) sum_i log( exp(s_i.t_i/tau) / sum_j exp(s_i.t_j/tau) ).
ContrastiveResult contrastive_loss(const Matrix& s, const Matrix& t, double tau);

}  // namespace mmalign
