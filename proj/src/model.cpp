#include "hoi/model.hpp"

#include <cmath>

namespace hoi::model {

using namespace hoi::ad;

void ModelConfig::validate() const {
  if (num_queries <= 0 || query_dim <= 0 || attention_heads <= 0) {
    throw ConfigError("model: query count, width and heads must be positive");
  }
  if (encoder_layers < 0 || decoder_layers < 0) {
    throw ConfigError("model: layer counts must be non-negative");
  }
  if (num_object_classes <= 0 || num_action_classes <= 0) {
    throw ConfigError("model: class counts must be positive");
  }
  if (query_dim % attention_heads != 0) {
    throw ConfigError("model: query_dim must be divisible by attention_heads");
  }
  if (query_dim % 2 != 0) {
    throw ConfigError("model: query_dim must be even for the sinusoidal encoding");
  }
  if (grid_h <= 0 || grid_w <= 0 || grid_c != query_dim) {
    throw ConfigError("model: feature grid must be positive with channel count == query_dim");
  }
}

ModelConfig paper_preset(int num_object_classes, int num_action_classes, int grid_h, int grid_w) {
  ModelConfig cfg;
  cfg.num_queries = 64;
  cfg.query_dim = 256;
  cfg.encoder_layers = 6;
  cfg.decoder_layers = 3;
  cfg.attention_heads = 8;
  cfg.num_object_classes = num_object_classes;
  cfg.num_action_classes = num_action_classes;
  cfg.grid_h = grid_h;
  cfg.grid_w = grid_w;
  cfg.grid_c = 256;
  return cfg;
}

Tensor positional_encoding(int h, int w, int c) {
  if (c % 2 != 0) throw ConfigError("positional encoding needs an even channel count");
  const int half = c / 2;  // first half encodes y, second half x
  Tensor out = Tensor::zeros({h * w, c});
  auto& v = out.values();
  const double two_pi = 2.0 * M_PI;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t row = static_cast<std::size_t>(y * w + x) * c;
      const double py = (y + 0.5) / h * two_pi;
      const double px = (x + 0.5) / w * two_pi;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        v[row + 2 * i] = std::sin(py * freq);
        v[row + 2 * i + 1] = std::cos(py * freq);
        v[row + half + 2 * i] = std::sin(px * freq);
        v[row + half + 2 * i + 1] = std::cos(px * freq);
      }
    }
  }
  return out;
}

Tensor Linear::apply(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }

Tensor MultiHeadAttention::apply(const Tensor& query_in, const Tensor& key_in,
                                 const Tensor& value_in) const {
  const int c = query_in.dim(1);
  if (c % heads != 0) throw DimensionError("attention: width not divisible by head count");
  const int dh = c / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tensor q = wq.apply(query_in);
  const Tensor k = wk.apply(key_in);
  const Tensor v = wv.apply(value_in);

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<std::size_t>(heads));
  for (int hIdx = 0; hIdx < heads; ++hIdx) {
    const Tensor qh = slice_cols(q, hIdx * dh, dh);
    const Tensor kh = slice_cols(k, hIdx * dh, dh);
    const Tensor vh = slice_cols(v, hIdx * dh, dh);
    const Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    const Tensor weights = softmax(scores, 1);
    head_outs.push_back(matmul(weights, vh));
  }
  return wo.apply(concat(head_outs, 1));
}

Tensor FeedForward::apply(const Tensor& x) const { return l2.apply(relu(l1.apply(x))); }

Tensor LayerNormParams::apply(const Tensor& x) const { return layer_norm(x, gain, bias); }

Tensor EncoderLayer::apply(const Tensor& x, const Tensor& pos) const {
  const Tensor qk = add(x, pos);
  const Tensor attn_out = attn.apply(qk, qk, x);
  const Tensor x1 = ln1.apply(add(x, attn_out));
  return ln2.apply(add(x1, ffn.apply(x1)));
}

Tensor DecoderLayer::apply(const Tensor& queries, const Tensor& memory, const Tensor& pos) const {
  const Tensor sa = self_attn.apply(queries, queries, queries);
  const Tensor q1 = ln1.apply(add(queries, sa));
  const Tensor ca = cross_attn.apply(q1, add(memory, pos), memory);
  const Tensor q2 = ln2.apply(add(q1, ca));
  return ln3.apply(add(q2, ffn.apply(q2)));
}

namespace {

Tensor xavier(std::vector<int> shape, Rng& rng) {
  const double limit = std::sqrt(6.0 / (shape[0] + shape[1]));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

struct Builder {
  ParameterStore& store;
  Rng& rng;

  Linear linear(const std::string& name, int in, int out) {
    Linear l;
    l.w = store.add(name + ".w", xavier({in, out}, rng));
    l.b = store.add(name + ".b", Tensor::zeros({out}));
    return l;
  }

  MultiHeadAttention attention(const std::string& name, int c, int heads) {
    MultiHeadAttention a;
    a.wq = linear(name + ".q", c, c);
    a.wk = linear(name + ".k", c, c);
    a.wv = linear(name + ".v", c, c);
    a.wo = linear(name + ".o", c, c);
    a.heads = heads;
    return a;
  }

  LayerNormParams norm(const std::string& name, int c) {
    LayerNormParams n;
    n.gain = store.add(name + ".gain", Tensor::full({c}, 1.0));
    n.bias = store.add(name + ".bias", Tensor::zeros({c}));
    return n;
  }

  FeedForward ffn(const std::string& name, int c) {
    FeedForward f;
    f.l1 = linear(name + ".l1", c, 4 * c);
    f.l2 = linear(name + ".l2", 4 * c, c);
    return f;
  }

  EncoderLayer encoder_layer(const std::string& name, int c, int heads) {
    EncoderLayer e;
    e.attn = attention(name + ".attn", c, heads);
    e.ln1 = norm(name + ".ln1", c);
    e.ffn = ffn(name + ".ffn", c);
    e.ln2 = norm(name + ".ln2", c);
    return e;
  }

  DecoderLayer decoder_layer(const std::string& name, int c, int heads) {
    DecoderLayer d;
    d.self_attn = attention(name + ".self_attn", c, heads);
    d.ln1 = norm(name + ".ln1", c);
    d.cross_attn = attention(name + ".cross_attn", c, heads);
    d.ln2 = norm(name + ".ln2", c);
    d.ffn = ffn(name + ".ffn", c);
    d.ln3 = norm(name + ".ln3", c);
    return d;
  }
};

}  // namespace

HoiModel::HoiModel(ModelConfig cfg, ActionHeadKind head_kind, std::uint64_t seed)
    : cfg_(cfg), head_kind_(head_kind) {
  cfg_.validate();
  Rng rng(seed);
  Builder b{params_, rng};
  const int c = cfg_.query_dim;

  query_embed_ = params_.add("query_embed",
                             Tensor::randn({cfg_.num_queries, c}, rng, 0.02));
  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    encoder_.push_back(b.encoder_layer("encoder." + std::to_string(i), c, cfg_.attention_heads));
  }
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    ho_decoder_.push_back(
        b.decoder_layer("ho_decoder." + std::to_string(i), c, cfg_.attention_heads));
  }
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    int_decoder_.push_back(
        b.decoder_layer("int_decoder." + std::to_string(i), c, cfg_.attention_heads));
  }
  for (int i = 0; i < 3; ++i) {
    const int out = (i == 2) ? 4 : c;
    box_head_h_.push_back(b.linear("head.box_h." + std::to_string(i), c, out));
    box_head_o_.push_back(b.linear("head.box_o." + std::to_string(i), c, out));
  }
  object_head_ = b.linear("head.object", c, cfg_.num_object_classes + 1);
  const int action_in = head_kind_ == ActionHeadKind::concat ? 2 * c : c;
  action_head_ = b.linear("head.action", action_in, cfg_.num_action_classes);

  pos_ = positional_encoding(cfg_.grid_h, cfg_.grid_w, c);
}

Tensor HoiModel::encode(const Tensor& fmap) const {
  Tensor x = fmap;
  if (x.ndim() == 3) {
    if (x.dim(0) != cfg_.grid_h || x.dim(1) != cfg_.grid_w || x.dim(2) != cfg_.grid_c) {
      throw DimensionError("encode: feature grid does not match the model config");
    }
    x = reshape(x, {cfg_.grid_h * cfg_.grid_w, cfg_.grid_c});
  } else if (x.ndim() != 2 || x.dim(0) != cfg_.grid_h * cfg_.grid_w || x.dim(1) != cfg_.grid_c) {
    throw DimensionError("encode: expected [H,W,C] or [H*W,C] features");
  }
  for (const auto& layer : encoder_) x = layer.apply(x, pos_);
  return x;
}

Tensor HoiModel::decode_ho_pairs(const Tensor& memory) const {
  Tensor q = query_embed_;
  for (const auto& layer : ho_decoder_) q = layer.apply(q, memory, pos_);
  return q;
}

Tensor HoiModel::decode_interactions(const Tensor& ho_reps, const Tensor& memory) const {
  if (ho_reps.dim(0) != cfg_.num_queries) {
    throw DimensionError("decode_interactions: query count mismatch");
  }
  Tensor q = ho_reps;  // cascade link: interaction queries start from R_p
  for (const auto& layer : int_decoder_) q = layer.apply(q, memory, pos_);
  return q;
}

std::vector<Tensor> HoiModel::predict_ho(const Tensor& ho_reps) const {
  auto box_ffn = [](const std::vector<Linear>& layers, const Tensor& x) {
    Tensor h = relu(layers[0].apply(x));
    h = relu(layers[1].apply(h));
    return sigmoid(layers[2].apply(h));
  };
  return {box_ffn(box_head_h_, ho_reps), box_ffn(box_head_o_, ho_reps),
          object_head_.apply(ho_reps)};
}

Tensor HoiModel::predict_actions(const Tensor& ho_reps, const Tensor& in_reps) const {
  if (ho_reps.dim(0) != in_reps.dim(0)) {
    throw DimensionError("predict_actions: row count mismatch between representation sets");
  }
  if (head_kind_ == ActionHeadKind::concat) {
    return action_head_.apply(concat({ho_reps, in_reps}, 1));
  }
  return action_head_.apply(in_reps);
}

ForwardResult HoiModel::forward(const Tensor& fmap) const {
  ForwardResult r;
  r.memory = encode(fmap);
  r.ho_reps = decode_ho_pairs(r.memory);
  r.in_reps = decode_interactions(r.ho_reps, r.memory);
  auto ho = predict_ho(r.ho_reps);
  r.preds.human_boxes = ho[0];
  r.preds.object_boxes = ho[1];
  r.preds.object_logits = ho[2];
  r.preds.action_logits = predict_actions(r.ho_reps, r.in_reps);
  return r;
}

std::vector<ad::Parameter> HoiModel::decoder_and_head_params() const {
  return params_.with_prefix_excluded("encoder.");
}

}  // namespace hoi::model
