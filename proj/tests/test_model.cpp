#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "prefsum/model.hpp"

using namespace prefsum;

namespace {

ModelConfig tiny_config(AdapterKind kind = AdapterKind::kNone, bool self_set = false,
                        bool meta_set = false, bool pln = false) {
  ModelConfig c;
  c.vocab_size = 23;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.ffn_dim = 12;
  c.adapter_hidden = 3;
  c.max_seq_len = 16;
  c.adapter_kind = kind;
  c.adapter_set_self = self_set;
  c.adapter_set_meta = meta_set;
  c.use_pln = pln;
  return c;
}

Tensor pref7(std::vector<double> head) {
  head.resize(7, 0.0);
  return Tensor::from({7}, std::move(head));
}

AttentionParams identity_attention(size_t d) {
  AttentionParams p;
  p.wq = Tensor::zeros({d, d});
  p.wk = Tensor::zeros({d, d});
  std::vector<double> eye(d * d, 0.0);
  for (size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  p.wv = Tensor::from({d, d}, eye);
  p.wo = Tensor::from({d, d}, eye);
  p.bq = Tensor::zeros({d});
  p.bk = Tensor::zeros({d});
  p.bv = Tensor::zeros({d});
  p.bo = Tensor::zeros({d});
  return p;
}

}  // namespace

TEST_CASE("attention with a single position weights it fully") {
  Rng rng(2);
  const size_t d = 4;
  AttentionParams p;
  p.wq = Tensor::randn({d, d}, rng);
  p.wk = Tensor::randn({d, d}, rng);
  p.wv = Tensor::randn({d, d}, rng);
  p.wo = Tensor::randn({d, d}, rng);
  p.bq = p.bk = p.bv = p.bo = Tensor::zeros({d});
  const Tensor h = Tensor::randn({1, d}, rng);

  std::vector<Tensor> attn;
  const Tensor out = multi_head_attention(h, h, p, 2, 0.0, false, &attn);
  for (const auto& a : attn) CHECK(a.data()[0] == doctest::Approx(1.0));
  // Output equals the wo-projected value path.
  const Tensor expected = matmul(matmul(h, p.wv), p.wo);
  for (size_t i = 0; i < d; ++i)
    CHECK(out.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
}

TEST_CASE("zero query weights give uniform attention") {
  Rng rng(3);
  const size_t d = 4;
  AttentionParams p = identity_attention(d);
  p.wk = Tensor::randn({d, d}, rng);
  const Tensor h = Tensor::randn({3, d}, rng);
  std::vector<Tensor> attn;
  multi_head_attention(h, h, p, 1, 0.0, false, &attn);
  REQUIRE(attn.size() == 1);
  for (double w : attn[0].data()) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("two-position attention matches hand-computed softmax mix") {
  // d=2, one head, identity projections: logits = q k^T / sqrt(2).
  const size_t d = 2;
  AttentionParams p = identity_attention(d);
  std::vector<double> eye = {1, 0, 0, 1};
  p.wq = Tensor::from({2, 2}, eye);
  p.wk = Tensor::from({2, 2}, eye);
  const Tensor h = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 2.0});
  const Tensor out = multi_head_attention(h, h, p, 1, 0.0, false);

  const double s = std::sqrt(2.0);
  auto soft2 = [](double a, double b) {
    const double ea = std::exp(a), eb = std::exp(b);
    return std::pair<double, double>{ea / (ea + eb), eb / (ea + eb)};
  };
  // Row 0: logits (1/s, 0); row 1: logits (0, 4/s).
  const auto [w00, w01] = soft2(1.0 / s, 0.0);
  const auto [w10, w11] = soft2(0.0, 4.0 / s);
  CHECK(out.data()[0] == doctest::Approx(w00 * 1.0 + w01 * 0.0).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(w00 * 0.0 + w01 * 2.0).epsilon(1e-12));
  CHECK(out.data()[2] == doctest::Approx(w10 * 1.0).epsilon(1e-12));
  CHECK(out.data()[3] == doctest::Approx(w11 * 2.0).epsilon(1e-12));
}

TEST_CASE("causal mask blocks future positions") {
  Rng rng(5);
  const size_t d = 4;
  AttentionParams p;
  p.wq = Tensor::randn({d, d}, rng);
  p.wk = Tensor::randn({d, d}, rng);
  p.wv = Tensor::randn({d, d}, rng);
  p.wo = Tensor::randn({d, d}, rng);
  p.bq = p.bk = p.bv = p.bo = Tensor::zeros({d});
  const Tensor h = Tensor::randn({3, d}, rng);
  std::vector<Tensor> attn;
  multi_head_attention(h, h, p, 2, 0.0, true, &attn);
  for (const auto& a : attn) {
    for (size_t i = 0; i < 3; ++i)
      for (size_t j = i + 1; j < 3; ++j) CHECK(a.data()[i * 3 + j] < 1e-12);
  }
}

TEST_CASE("adapter forward") {
  SUBCASE("dead bottleneck is identity") {
    Rng rng(7);
    const Tensor h = Tensor::randn({2, 4}, rng);
    const Tensor wd = Tensor::randn({2, 4}, rng);
    const Tensor wu = Tensor::zeros({4, 2});
    const Tensor out = adapter_forward(h, wd, wu);
    for (size_t i = 0; i < h.size(); ++i) CHECK(out.data()[i] == h.data()[i]);
  }
  SUBCASE("one-dimensional hand case") {
    const Tensor out = adapter_forward(Tensor::from({1, 1}, {1.0}),
                                       Tensor::from({1, 1}, {2.0}),
                                       Tensor::from({1, 1}, {3.0}));
    CHECK(out.item() == doctest::Approx(7.0));
  }
  SUBCASE("fresh gaussian init stays near identity") {
    Rng rng(11);
    const size_t m = 64, n = 16;
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor wd = Tensor::randn({n, m}, rng, 1e-2);
      const Tensor wu = Tensor::randn({m, n}, rng, 1e-2);
      Tensor h = Tensor::randn({1, m}, rng);
      double norm = 0.0;
      for (double v : h.data()) norm += v * v;
      h = mul_scalar(h, 1.0 / std::sqrt(norm));  // unit-norm input
      const Tensor out = adapter_forward(h, wd, wu);
      double diff = 0.0;
      for (size_t i = 0; i < h.size(); ++i) {
        const double dv = out.data()[i] - h.data()[i];
        diff += dv * dv;
      }
      CHECK(std::sqrt(diff) <= 0.05);
    }
  }
}

TEST_CASE("parameter modulation") {
  const size_t n = 2, m = 3, k = 7;
  Rng rng(13);
  const Tensor wd = Tensor::randn({n, m}, rng);
  const Tensor wu = Tensor::randn({m, n}, rng);
  const Tensor wgd = Tensor::randn({n, k}, rng);
  const Tensor wbd = Tensor::randn({n, k}, rng);
  const Tensor wgu = Tensor::randn({m, k}, rng);
  const Tensor wbu = Tensor::randn({m, k}, rng);

  SUBCASE("zero preference zeroes both weights") {
    const auto w = modulate_params(wd, wu, wgd, wbd, wgu, wbu, pref7({0}));
    for (double v : w.wd.data()) CHECK(v == 0.0);
    for (double v : w.wu.data()) CHECK(v == 0.0);
  }
  SUBCASE("identity modulation reproduces the raw weights") {
    // First column selects gamma = 1, beta = 0 for p = e1.
    const Tensor ones_gd = Tensor::from({n, k}, {1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0});
    const Tensor zeros_bd = Tensor::zeros({n, k});
    std::vector<double> gu(m * k, 0.0);
    for (size_t i = 0; i < m; ++i) gu[i * k] = 1.0;
    const Tensor ones_gu = Tensor::from({m, k}, gu);
    const Tensor zeros_bu = Tensor::zeros({m, k});
    const auto w = modulate_params(wd, wu, ones_gd, zeros_bd, ones_gu, zeros_bu,
                                   pref7({1}));
    for (size_t i = 0; i < wd.size(); ++i)
      CHECK(w.wd.data()[i] == doctest::Approx(wd.data()[i]).epsilon(1e-15));
    for (size_t i = 0; i < wu.size(); ++i)
      CHECK(w.wu.data()[i] == doctest::Approx(wu.data()[i]).epsilon(1e-15));
  }
  SUBCASE("scalar case") {
    // W_d = 2, gamma_d = 3, beta_d = 1 -> 7.
    const Tensor swd = Tensor::from({1, 1}, {2.0});
    const Tensor swu = Tensor::from({1, 1}, {2.0});
    std::vector<double> row(k, 0.0);
    row[0] = 3.0;
    const Tensor sgd = Tensor::from({1, k}, row);
    row[0] = 1.0;
    const Tensor sbd = Tensor::from({1, k}, row);
    const auto w = modulate_params(swd, swu, sgd, sbd, sgd, sbd, pref7({1}));
    CHECK(w.wd.item() == doctest::Approx(7.0));
  }
  SUBCASE("wrong preference dimension") {
    CHECK_THROWS_AS(modulate_params(wd, wu, wgd, wbd, wgu, wbu, Tensor::zeros({3})),
                    std::invalid_argument);
  }
}

TEST_CASE("preference-aware adapter") {
  const size_t n = 2, m = 3, k = 7;
  Rng rng(17);
  const Tensor wd = Tensor::randn({n, m}, rng);
  const Tensor wu = Tensor::randn({m, n}, rng);
  const Tensor wgd = Tensor::randn({n, k}, rng);
  const Tensor wbd = Tensor::randn({n, k}, rng);
  const Tensor wgu = Tensor::randn({m, k}, rng);
  const Tensor wbu = Tensor::randn({m, k}, rng);

  SUBCASE("zero preference is a bit-exact identity") {
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor h = Tensor::randn({2, m}, rng);
      const Tensor out = p_adapter_forward(h, wd, wu, wgd, wbd, wgu, wbu, pref7({0}));
      for (size_t i = 0; i < h.size(); ++i) CHECK(out.data()[i] == h.data()[i]);
    }
  }
  SUBCASE("hand case: wd=1, wu=1, gamma=2, beta=0, h=1 gives 5") {
    std::vector<double> row(k, 0.0);
    row[0] = 2.0;
    const Tensor g = Tensor::from({1, k}, row);
    const Tensor z = Tensor::zeros({1, k});
    const Tensor out = p_adapter_forward(Tensor::from({1, 1}, {1.0}),
                                         Tensor::from({1, 1}, {1.0}),
                                         Tensor::from({1, 1}, {1.0}), g, z, g, z,
                                         pref7({1}));
    CHECK(out.item() == doctest::Approx(5.0));
  }
}

TEST_CASE("preference-aware layer norm") {
  const size_t m = 2;
  SUBCASE("unit scalers reproduce standard layer norm") {
    Rng rng(19);
    const Tensor h = Tensor::randn({3, m}, rng);
    const Tensor g = Tensor::ones({m});
    const Tensor b = Tensor::zeros({m});
    const Tensor w1 = Tensor::ones({m});
    const Tensor pln = p_layer_norm(h, g, b, w1, w1, 1e-5);
    const Tensor ln = layer_norm(h, g, b, 1e-5);
    for (size_t i = 0; i < pln.size(); ++i)
      CHECK(pln.data()[i] == doctest::Approx(ln.data()[i]).epsilon(1e-15));
  }
  SUBCASE("constant row collapses to shifted bias") {
    const Tensor h = Tensor::from({1, m}, {4.0, 4.0});
    const Tensor out = p_layer_norm(h, Tensor::ones({m}), Tensor::from({m}, {0.3, 0.3}),
                                    Tensor::ones({m}), Tensor::from({m}, {2.0, 2.0}),
                                    1e-5);
    // b' = wb * b = 0.6
    for (double v : out.data()) CHECK(v == doctest::Approx(0.6).epsilon(1e-6));
  }
  SUBCASE("unit variance row with g'=2") {
    const Tensor h = Tensor::from({1, m}, {1.0, -1.0});
    const Tensor out = p_layer_norm(h, Tensor::ones({m}), Tensor::zeros({m}),
                                    Tensor::from({m}, {2.0, 2.0}), Tensor::ones({m}),
                                    1e-9);
    CHECK(out.data()[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(out.data()[1] == doctest::Approx(-2.0).epsilon(1e-6));
  }
}

TEST_CASE("forward shape contract") {
  Seq2SeqModel model(tiny_config(), 42);
  const std::vector<int> src = {4, 5, 6, 7};
  const std::vector<int> dec = {1, 8, 9};
  const Tensor logits = model.forward(src, dec);
  CHECK(logits.shape() == Shape{3, 23});
  for (double v : logits.data()) CHECK(std::isfinite(v));
}

TEST_CASE("zero encoder layers leave embeddings unchanged") {
  ModelConfig cfg = tiny_config();
  cfg.n_enc_layers = 0;
  Seq2SeqModel model(cfg, 1);
  const std::vector<int> src = {4, 5};
  const Tensor h = model.encode(src);
  const Tensor tok = gather_rows(model.params().at("embed.tok"), src);
  const Tensor pos = gather_rows(model.params().at("embed.pos"), {0, 1});
  const Tensor expected = add(tok, pos);
  for (size_t i = 0; i < h.size(); ++i) CHECK(h.data()[i] == expected.data()[i]);
}

TEST_CASE("determinism: same seed and inputs give bit-identical logits") {
  const auto cfg = tiny_config(AdapterKind::kPref, true, true, true);
  Seq2SeqModel a(cfg, 123), b(cfg, 123);
  const Tensor p = pref7({0.3, 0.1, 0.2});
  const Tensor la = a.forward({4, 5, 6}, {1, 7}, &p);
  const Tensor lb = b.forward({4, 5, 6}, {1, 7}, &p);
  REQUIRE(la.size() == lb.size());
  for (size_t i = 0; i < la.size(); ++i) CHECK(la.data()[i] == lb.data()[i]);
}

TEST_CASE("tied embeddings share storage with the output projection") {
  Seq2SeqModel model(tiny_config(), 3);
  CHECK(model.output_projection_id() == model.params().at("embed.tok").node_id());
  // Mutating the embedding must change the logits.
  const Tensor before = model.forward({4, 5}, {1});
  model.params().at("embed.tok").mutable_data()[10 * 8 + 0] += 10.0;
  const Tensor after = model.forward({4, 5}, {1});
  bool changed = false;
  for (size_t i = 0; i < before.size(); ++i)
    if (before.data()[i] != after.data()[i]) changed = true;
  CHECK(changed);
}

TEST_CASE("preference required when modulated adapters are active") {
  Seq2SeqModel model(tiny_config(AdapterKind::kPref, true, false, false), 5);
  CHECK_THROWS_WITH_AS(model.forward({4, 5}, {1}), "preference required",
                       std::invalid_argument);
}

TEST_CASE("zero preference with P-LN disabled matches the adapter-free model") {
  const uint64_t seed = 77;
  Seq2SeqModel base(tiny_config(), seed);
  Seq2SeqModel pref_model(tiny_config(AdapterKind::kPref, true, true, false), seed);
  const Tensor p0 = pref7({0});
  const Tensor lb = base.forward({4, 5, 6}, {1, 9});
  const Tensor lp = pref_model.forward({4, 5, 6}, {1, 9}, &p0);
  REQUIRE(lb.size() == lp.size());
  for (size_t i = 0; i < lb.size(); ++i) CHECK(lb.data()[i] == lp.data()[i]);
}

TEST_CASE("different preferences change the logits") {
  Seq2SeqModel model(tiny_config(AdapterKind::kPref, true, false, false), 9);
  const Tensor p1 = pref7({0.9, 0.5, 0.3, 0.2});
  const Tensor p2 = pref7({0.1, 0.0, 0.8, 0.4});
  const Tensor l1 = model.forward({4, 5, 6}, {1, 7}, &p1);
  const Tensor l2 = model.forward({4, 5, 6}, {1, 7}, &p2);
  bool differs = false;
  for (size_t i = 0; i < l1.size(); ++i)
    if (l1.data()[i] != l2.data()[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("plain adapters live in encoder and decoder") {
  Seq2SeqModel model(tiny_config(AdapterKind::kPlain, false, true, false), 21);
  CHECK(model.params().contains("enc.0.sa.ada.meta.wd"));
  CHECK(model.params().contains("enc.0.out.ada.meta.wd"));
  CHECK(model.params().contains("dec.0.ca.ada.meta.wd"));
  CHECK(!model.params().contains("enc.0.sa.ada.meta.wgd"));  // no modulation in plain
  const Tensor logits = model.forward({4, 5}, {1, 6});
  CHECK(logits.shape() == Shape{2, 23});
}

TEST_CASE("modulated adapters live in the decoder only") {
  Seq2SeqModel model(tiny_config(AdapterKind::kPref, true, true, true), 22);
  CHECK(!model.params().contains("enc.0.sa.ada.self.wd"));
  CHECK(model.params().contains("dec.0.sa.ada.self.wd"));
  CHECK(model.params().contains("dec.0.out.ada.meta.wgu"));
  CHECK(model.params().contains("dec.0.out.pln.meta.wg"));
  // Group partition.
  CHECK(model.params().group_of("dec.0.sa.ada.self.wd") == ParamGroup::kPhiSelf);
  CHECK(model.params().group_of("dec.0.sa.ada.meta.wd") == ParamGroup::kPhiMeta);
  CHECK(model.params().group_of("dec.0.sa.pln.meta.wg") == ParamGroup::kPhiMeta);
  CHECK(model.params().group_of("embed.tok") == ParamGroup::kTheta);
}

TEST_CASE("overlay substitutes parameters in the forward pass") {
  Seq2SeqModel model(tiny_config(AdapterKind::kPref, false, true, false), 31);
  const Tensor p = pref7({0.5, 0.5});
  const Tensor base_logits = model.forward({4, 5}, {1}, &p);

  ParamOverlay overlay;
  Rng rng(99);
  overlay.set("dec.0.sa.ada.meta.wd",
              Tensor::randn(model.params().at("dec.0.sa.ada.meta.wd").shape(), rng, 0.5));
  const Tensor new_logits = model.forward({4, 5}, {1}, &p, &overlay);
  bool differs = false;
  for (size_t i = 0; i < base_logits.size(); ++i)
    if (base_logits.data()[i] != new_logits.data()[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("gradients flow through the whole stack including modulation") {
  ModelConfig cfg = tiny_config(AdapterKind::kPref, true, true, true);
  Seq2SeqModel model(cfg, 55);
  const Tensor p = pref7({0.4, 0.2, 0.1, 0.3, 0.5, 0.8, 0.1});
  const std::vector<int> src = {4, 5, 6};
  const std::vector<int> dec_in = {1, 7, 8};
  const std::vector<int> dec_tgt = {7, 8, 2};

  const auto loss_fn = [&] {
    return nll_label_smoothed(model.forward(src, dec_in, &p), dec_tgt, 0.1);
  };
  // Every parameter kind, including all six modulation matrices and P-LN.
  std::vector<Tensor> checked;
  for (const char* name :
       {"embed.tok", "embed.pos", "enc.0.sa.wq", "enc.0.sa.bo", "enc.0.sa_ff.w1",
        "enc.0.ln.g", "dec.0.sa.wv", "dec.0.ca.wk", "dec.0.ff.w2", "dec.0.ln.b",
        "dec.0.sa.ada.self.wd", "dec.0.sa.ada.self.wu", "dec.0.sa.ada.self.wgd",
        "dec.0.sa.ada.self.wbd", "dec.0.sa.ada.self.wgu", "dec.0.sa.ada.self.wbu",
        "dec.0.out.ada.meta.wgd", "dec.0.sa.pln.self.g", "dec.0.sa.pln.self.wg",
        "dec.0.sa.pln.self.wb"}) {
    checked.push_back(model.params().at(name));
  }
  // eps below the default: ReLU kinks within 1e-5 of zero corrupt the
  // numeric difference even when the analytic gradient is exact.
  CHECK(finite_diff_check(loss_fn, checked, 1e-6) <= 1e-4);
}
