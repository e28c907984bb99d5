#pragma once

#include <string>
#include <vector>

#include "hoi/optim.hpp"
#include "hoi/tensor.hpp"

namespace hoi::model {

using ad::Tensor;

struct ModelConfig {
  int num_queries = 16;
  int query_dim = 32;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int attention_heads = 4;
  int num_object_classes = 6;
  int num_action_classes = 5;
  int grid_h = 6;
  int grid_w = 6;
  int grid_c = 32;  // must equal query_dim

  void validate() const;
};

// Larger preset mirroring the published CDN-S sizes.
ModelConfig paper_preset(int num_object_classes, int num_action_classes, int grid_h, int grid_w);

enum class ActionHeadKind {
  interaction_only,  // action logits from interaction representations alone
  concat,            // action logits from HO-pair ++ interaction representations
};

struct PredictionSet {
  Tensor human_boxes;    // [N_q, 4] (cx, cy, w, h) in (0,1)
  Tensor object_boxes;   // [N_q, 4]
  Tensor object_logits;  // [N_q, N_o + 1]; last column = no-object
  Tensor action_logits;  // [N_q, N_a]; raw multi-label logits
};

struct ForwardResult {
  Tensor memory;   // [H*W, C]
  Tensor ho_reps;  // R_p, [N_q, C]
  Tensor in_reps;  // R_i, [N_q, C]
  PredictionSet preds;
};

// Fixed 2-D sinusoidal positional encoding; pure function of (h, w, c).
Tensor positional_encoding(int h, int w, int c);

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
  Tensor apply(const Tensor& x) const;
};

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  Tensor apply(const Tensor& query_in, const Tensor& key_in, const Tensor& value_in) const;
};

struct FeedForward {
  Linear l1, l2;
  Tensor apply(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gain, bias;
  Tensor apply(const Tensor& x) const;
};

struct EncoderLayer {
  MultiHeadAttention attn;
  LayerNormParams ln1, ln2;
  FeedForward ffn;
  Tensor apply(const Tensor& x, const Tensor& pos) const;
};

struct DecoderLayer {
  MultiHeadAttention self_attn;
  MultiHeadAttention cross_attn;
  LayerNormParams ln1, ln2, ln3;
  FeedForward ffn;
  // self-attention over queries, cross-attention with keys offset by pos,
  // then feed-forward; residual + layer norm after each block
  Tensor apply(const Tensor& queries, const Tensor& memory, const Tensor& pos) const;
};

class HoiModel {
 public:
  HoiModel(ModelConfig cfg, ActionHeadKind head_kind, std::uint64_t seed);

  // feature grid [H, W, C] or [H*W, C] -> global memory [H*W, C]
  Tensor encode(const Tensor& fmap) const;
  Tensor decode_ho_pairs(const Tensor& memory) const;
  Tensor decode_interactions(const Tensor& ho_reps, const Tensor& memory) const;
  // (human boxes, object boxes, object logits)
  std::vector<Tensor> predict_ho(const Tensor& ho_reps) const;
  Tensor predict_actions(const Tensor& ho_reps, const Tensor& in_reps) const;

  ForwardResult forward(const Tensor& fmap) const;

  const ModelConfig& config() const { return cfg_; }
  ActionHeadKind action_head_kind() const { return head_kind_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  const Tensor& query_embed() const { return query_embed_; }
  const Linear& action_head() const { return action_head_; }
  const Tensor& pos_encoding() const { return pos_; }

  // All parameters except those under "encoder." (phase-2 fine-tuning set).
  std::vector<ad::Parameter> decoder_and_head_params() const;

 private:
  ModelConfig cfg_;
  ActionHeadKind head_kind_;
  ad::ParameterStore params_;

  Tensor query_embed_;
  Tensor pos_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> ho_decoder_;
  std::vector<DecoderLayer> int_decoder_;
  std::vector<Linear> box_head_h_;  // 3 layers
  std::vector<Linear> box_head_o_;
  Linear object_head_;
  Linear action_head_;
};

}  // namespace hoi::model
