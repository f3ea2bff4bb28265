#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prefsum/metrics.hpp"
#include "prefsum/param_store.hpp"
#include "prefsum/tensor.hpp"

namespace prefsum {

enum class AdapterKind {
  kNone,
  kPlain,  // bottleneck adapters after every feed-forward layer, both stacks
  kPref,   // preference-modulated adapters, decoder only
};

std::string adapter_kind_name(AdapterKind k);
AdapterKind adapter_kind_from_name(const std::string& name);

struct ModelConfig {
  size_t vocab_size = 2000;
  size_t d_model = 64;
  size_t n_heads = 2;
  size_t n_enc_layers = 2;
  size_t n_dec_layers = 2;
  size_t ffn_dim = 128;
  size_t adapter_hidden = 16;       // bottleneck width, must stay below d_model
  size_t preference_dim = PreferenceVector::kDim;
  size_t max_seq_len = 128;
  double dropout_rate = 0.0;
  bool tie_embeddings = true;

  AdapterKind adapter_kind = AdapterKind::kNone;
  bool adapter_set_self = false;
  bool adapter_set_meta = false;
  bool use_pln = false;
  bool pln_relu = false;  // activation after P-LN; identity by default

  double init_std = 0.02;
  double adapter_init_std = 1e-2;  // variance 1e-4
  double ln_eps = 1e-5;
  double attn_scale = 0.0;  // 0 means sqrt(d_head)

  void validate() const;
  Json to_json() const;
  static ModelConfig from_json(const Json& j);

  bool pref_adapters_active() const {
    return adapter_kind == AdapterKind::kPref && (adapter_set_self || adapter_set_meta);
  }
};

// ---- building blocks (exposed for direct testing) ---------------------------

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Per-head scaled dot-product attention with concatenated heads projected by
// wo. scale <= 0 selects sqrt(d_head). attn_out, when given, receives each
// head's attention matrix.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                            const AttentionParams& params, size_t n_heads,
                            double scale, bool causal,
                            std::vector<Tensor>* attn_out = nullptr);

// UP(ReLU(DP(h))) + h with DP(h) = h Wd^T, UP(z) = z Wu^T.
Tensor adapter_forward(const Tensor& h, const Tensor& wd, const Tensor& wu);

struct ModulatedWeights {
  Tensor wd;  // (n, m)
  Tensor wu;  // (m, n)
};

// FiLM-style modulation: scales and shifts each row of Wd / Wu by vectors
// linearly projected from the preference p.
ModulatedWeights modulate_params(const Tensor& wd, const Tensor& wu, const Tensor& wgd,
                                 const Tensor& wbd, const Tensor& wgu, const Tensor& wbu,
                                 const Tensor& p);

Tensor p_adapter_forward(const Tensor& h, const Tensor& wd, const Tensor& wu,
                         const Tensor& wgd, const Tensor& wbd, const Tensor& wgu,
                         const Tensor& wbu, const Tensor& p);

// f(g' * (h - mu) / sqrt(var + eps) + b') with g' = wg * g, b' = wb * b.
Tensor p_layer_norm(const Tensor& h, const Tensor& g, const Tensor& b, const Tensor& wg,
                    const Tensor& wb, double eps, bool relu_activation = false);

// ---- model ------------------------------------------------------------------

class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Full encoder stack over article token ids.
  Tensor encode(const std::vector<int>& src_ids, const ParamOverlay* overlay = nullptr,
                Rng* dropout_rng = nullptr) const;

  // Logits over the vocabulary at every decoder position.
  Tensor forward(const std::vector<int>& src_ids, const std::vector<int>& dec_input_ids,
                 const Tensor* preference = nullptr, const ParamOverlay* overlay = nullptr,
                 Rng* dropout_rng = nullptr) const;

  // Same, reusing a precomputed encoder state (autoregressive decoding).
  Tensor decode_logits(const Tensor& h_enc, const std::vector<int>& dec_input_ids,
                       const Tensor* preference = nullptr,
                       const ParamOverlay* overlay = nullptr,
                       Rng* dropout_rng = nullptr) const;

  // Storage identity of the output projection (the embedding when tied).
  const void* output_projection_id() const;

  static Tensor preference_tensor(const PreferenceVector& p);

 private:
  struct Ctx {
    const ParamOverlay* overlay;
    Rng* dropout_rng;
  };

  const Tensor& P(const std::string& name, const Ctx& ctx) const;
  Tensor embed(const std::vector<int>& ids, const Ctx& ctx) const;
  Tensor mha(const Tensor& q_in, const Tensor& kv_in, const std::string& prefix,
             bool causal, const Ctx& ctx) const;
  Tensor ffn(const Tensor& h, const std::string& prefix, const Ctx& ctx) const;
  Tensor apply_adapters(const Tensor& h, const std::string& site, const Tensor* pref,
                        const Ctx& ctx) const;
  Tensor ln(const Tensor& h, const std::string& prefix, const Ctx& ctx) const;
  Tensor maybe_dropout(const Tensor& h, const Ctx& ctx) const;
  Tensor sa_block(const Tensor& h, const std::string& layer, bool causal,
                  const Tensor* pref, const Ctx& ctx) const;
  Tensor ca_block(const Tensor& h, const Tensor& h_enc, const std::string& layer,
                  const Tensor* pref, const Ctx& ctx) const;
  Tensor run_decoder(const Tensor& h_enc, const std::vector<int>& dec_input_ids,
                     const Tensor* preference, const Ctx& ctx) const;

  void build_params(uint64_t seed);

  ModelConfig config_;
  ParamStore params_;
};

}  // namespace prefsum
