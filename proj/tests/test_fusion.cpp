#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ff/checkpoint.hpp"
#include "ff/encoder.hpp"
#include "ff/fusion.hpp"
#include "ff/model.hpp"
#include "ff/rng.hpp"

using namespace ff;

namespace {

Tensor random_tokens(size_t n, Rng& rng, double scale = 1.0) {
  Tensor t({n, kTokenDim});
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

std::filesystem::path temp_dir() {
  auto d = std::filesystem::temp_directory_path() / "ff_fusion_tests";
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("encoder: shape preservation and attention row sums") {
  Rng rng(3);
  EncoderParams p = make_encoder_params(rng);
  Tensor tokens = random_tokens(16, rng);
  Graph g;
  g.set_recording(false);
  AttnProbe probe;
  Tensor out = encode_branch(g, tokens, p, 4, &probe);
  CHECK(out.shape() == tokens.shape());
  REQUIRE(probe.attention.size() == kEncLayers * kEncHeads);
  for (const Tensor& a : probe.attention) {
    REQUIRE(a.shape() == Shape{16, 16});
    for (size_t i = 0; i < 16; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < 16; ++j) {
        s += a(i, j);
        CHECK(a(i, j) > 0.0);
        CHECK(a(i, j) <= 1.0);
      }
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
  Tensor bad({4, 128});
  CHECK_THROWS_AS(encode_branch(g, bad, p, 2), DimensionError);
}

TEST_CASE("encoder gradient check on a 4-token input") {
  Rng rng(5);
  EncoderParams p = make_encoder_params(rng);
  Tensor tokens = random_tokens(4, rng);
  Rng wr(9);
  Tensor w({4 * kTokenDim, 1});
  for (size_t i = 0; i < w.size(); ++i) w[i] = wr.uniform(-1.0, 1.0);
  auto f = [&](Graph& g, const Tensor& t) {
    Tensor enc = encode_branch(g, t, p, 2);
    Tensor flat = ff::ops::reshape(g, enc, {1, 4 * kTokenDim});
    return ff::ops::pick(g, ff::ops::matmul(g, flat, w), 0);
  };
  CHECK(finite_diff_check(f, tokens, 1e-4, 200, 11) < 1e-5);

  // and through one attention projection
  auto fq = [&](Graph& g, const Tensor& t) {
    EncoderParams q = p;
    q.layers[0].wq = t;
    Tensor enc = encode_branch(g, tokens, q, 2);
    Tensor flat = ff::ops::reshape(g, enc, {1, 4 * kTokenDim});
    return ff::ops::pick(g, ff::ops::matmul(g, flat, w), 0);
  };
  CHECK(finite_diff_check(fq, p.layers[0].wq.clone(), 1e-4, 200, 12) < 1e-5);
}

TEST_CASE("cross attention: singleton keys return the key row exactly") {
  Rng rng(17);
  Graph g;
  g.set_recording(false);
  Tensor q = random_tokens(5, rng);
  Tensor k = random_tokens(1, rng);
  Tensor out = cross_attention(g, q, k);
  REQUIRE(out.shape() == Shape{5, kTokenDim});
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < kTokenDim; ++j) CHECK(out(i, j) == k(0, j));
}

TEST_CASE("cross attention: zero logits average the key rows uniformly") {
  Rng rng(19);
  Graph g;
  g.set_recording(false);
  Tensor q({3, kTokenDim});  // zero queries -> all logits zero
  Tensor k = random_tokens(7, rng);
  Tensor out = cross_attention(g, q, k);
  for (size_t j = 0; j < kTokenDim; ++j) {
    double mean = 0.0;
    for (size_t r = 0; r < 7; ++r) mean += k(r, j);
    mean /= 7.0;
    for (size_t i = 0; i < 3; ++i) CHECK(out(i, j) == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("cross attention matches a hand-evaluated two-token case") {
  Graph g;
  g.set_recording(false);
  Tensor q({1, kTokenDim});
  Tensor k({2, kTokenDim});
  // construct known logits: q doter k0 = 16, q dot k1 = -16
  q(0, 0) = 1.0;
  k(0, 0) = 16.0;
  k(1, 0) = -16.0;
  k(0, 5) = 2.0;
  k(1, 5) = -3.0;
  Tensor out = cross_attention(g, q, k);
  const double d = std::sqrt(256.0);
  const double l0 = 16.0 / d, l1 = -16.0 / d;
  const double e0 = std::exp(l0 - l0), e1 = std::exp(l1 - l0);
  const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
  for (size_t j = 0; j < kTokenDim; ++j)
    CHECK(std::fabs(out(0, j) - (w0 * k(0, j) + w1 * k(1, j))) < 1e-12);
}

TEST_CASE("cross attention outputs stay in the per-coordinate key envelope") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Graph g;
    g.set_recording(false);
    const size_t nq = 1 + rng.below(6), nk = 1 + rng.below(6);
    Tensor q = random_tokens(nq, rng, 2.0);
    Tensor k = random_tokens(nk, rng, 2.0);
    Tensor out = cross_attention(g, q, k);
    for (size_t j = 0; j < kTokenDim; ++j) {
      double lo = k(0, j), hi = k(0, j);
      for (size_t r = 1; r < nk; ++r) {
        lo = std::min(lo, k(r, j));
        hi = std::max(hi, k(r, j));
      }
      for (size_t i = 0; i < nq; ++i) {
        CHECK(out(i, j) >= lo - 1e-12);
        CHECK(out(i, j) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("fuse: zeros, reduced sum, six-term oracle, reduced linearity") {
  Rng rng(29);
  Graph g;
  g.set_recording(false);
  FusionParams fp;
  const size_t n = 9;
  Tensor zero({n, kTokenDim});
  Tensor fz = fuse(g, zero, zero, zero, fp);
  for (size_t i = 0; i < fz.size(); ++i) CHECK(fz[i] == 0.0);

  Tensor h1 = random_tokens(n, rng), h2 = random_tokens(n, rng), h3 = random_tokens(n, rng);
  Tensor reduced = fuse(g, h1, h2, h3, fp, FusionMode::CrossAttention, false);
  for (size_t i = 0; i < reduced.size(); ++i)
    CHECK(reduced[i] == doctest::Approx(h1[i] + h2[i] + h3[i]).epsilon(1e-14));

  // independent six-term evaluation with plain loops
  auto manual_ca = [&](const Tensor& q, const Tensor& k) {
    Tensor out({n, kTokenDim});
    const double inv = 1.0 / std::sqrt(256.0);
    for (size_t i = 0; i < n; ++i) {
      std::vector<double> logits(n);
      double mx = -1e300;
      for (size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (size_t c = 0; c < kTokenDim; ++c) acc += q(i, c) * k(r, c);
        logits[r] = acc * inv;
        mx = std::max(mx, logits[r]);
      }
      double sum = 0.0;
      for (size_t r = 0; r < n; ++r) {
        logits[r] = std::exp(logits[r] - mx);
        sum += logits[r];
      }
      for (size_t r = 0; r < n; ++r)
        for (size_t c = 0; c < kTokenDim; ++c) out(i, c) += logits[r] / sum * k(r, c);
    }
    return out;
  };
  Tensor full = fuse(g, h1, h2, h3, fp);
  Tensor lm = manual_ca(h1, h2), mh = manual_ca(h2, h3), lh = manual_ca(h1, h3);
  for (size_t i = 0; i < full.size(); ++i)
    CHECK(std::fabs(full[i] - (h1[i] + h2[i] + h3[i] + lm[i] + mh[i] + lh[i])) < 1e-12);

  // zeroed third branch reduces the formula; terms with zero keys vanish
  Tensor masked = fuse(g, h1, h2, zero, fp);
  for (size_t i = 0; i < masked.size(); ++i)
    CHECK(std::fabs(masked[i] - (h1[i] + h2[i] + lm[i])) < 1e-12);

  // reduced path is linear in a joint scaling
  const double alpha = 2.75;
  Tensor h1s = h1.clone(), h2s = h2.clone(), h3s = h3.clone();
  for (size_t i = 0; i < h1s.size(); ++i) {
    h1s[i] *= alpha;
    h2s[i] *= alpha;
    h3s[i] *= alpha;
  }
  Tensor scaled = fuse(g, h1s, h2s, h3s, fp, FusionMode::CrossAttention, false);
  for (size_t i = 0; i < scaled.size(); ++i)
    CHECK(scaled[i] == doctest::Approx(alpha * reduced[i]).epsilon(1e-12));
}

TEST_CASE("concat fusion and projected cross-attention variants run") {
  Rng rng(31);
  Graph g;
  g.set_recording(false);
  FusionParams fp;
  fp.concat_w = uniform_init({3 * kTokenDim, kTokenDim}, 3 * kTokenDim, rng);
  fp.concat_b = Tensor({kTokenDim});
  Tensor h1 = random_tokens(4, rng), h2 = random_tokens(4, rng), h3 = random_tokens(4, rng);
  Tensor cat = fuse(g, h1, h2, h3, fp, FusionMode::Concat);
  CHECK(cat.shape() == Shape{4, kTokenDim});

  FusionParams pp;
  pp.projected = true;
  for (auto& pr : pp.proj) {
    pr.wq = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
    pr.wk = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
    pr.wv = uniform_init({kTokenDim, kTokenDim}, kTokenDim, rng);
  }
  Tensor proj = fuse(g, h1, h2, h3, pp, FusionMode::CrossAttention);
  CHECK(proj.shape() == Shape{4, kTokenDim});
}

TEST_CASE("heads: zero fused input gives maximum-entropy outputs") {
  Rng rng(37);
  HeadParams p = make_head_params(rng);  // biases are zero-initialized
  Graph g;
  g.set_recording(false);
  Tensor fused({16, kTokenDim});
  ModelOutputs out = heads_forward(g, fused, p, 4, 32, 32);
  CHECK(out.y_hat(0, 0) == 0.5);
  CHECK(out.y_hat(0, 1) == 0.5);
  for (size_t i = 0; i < kTypeClasses; ++i)
    CHECK(out.type_hat[i] == doctest::Approx(1.0 / 7).epsilon(1e-14));
  CHECK(out.mask_hat.shape() == Shape{32, 32, 1});
  for (size_t i = 0; i < out.mask_hat.size(); ++i) CHECK(out.mask_hat[i] == 0.5);

  double type_sum = 0.0;
  for (size_t i = 0; i < kTypeClasses; ++i) type_sum += out.type_hat[i];
  CHECK(std::fabs(type_sum - 1.0) <= 1e-12);
}

TEST_CASE("joint gradient check through all heads and the loss") {
  Rng rng(41);
  HeadParams p = make_head_params(rng);
  Tensor fused = random_tokens(4, rng);
  Tensor mask({16, 16, 1});
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 5 == 0) ? 1.0 : 0.0;
  auto f = [&](Graph& g, const Tensor& t) {
    ModelOutputs out = heads_forward(g, t, p, 2, 16, 16);
    return total_loss(g, out, mask, 1, 3).total;
  };
  CHECK(finite_diff_check(f, fused, 1e-5, 200, 13) < 1e-5);

  auto fw = [&](Graph& g, const Tensor& t) {
    HeadParams q = p;
    q.mask_w = t;
    ModelOutputs out = heads_forward(g, fused, q, 2, 16, 16);
    return total_loss(g, out, mask, 0, 0).total;
  };
  CHECK(finite_diff_check(fw, p.mask_w.clone(), 1e-5, 200, 14) < 1e-5);
}

TEST_CASE("loss composition: weights, ln 2, dice bound, breakdown identity") {
  Rng rng(43);
  HeadParams p = make_head_params(rng);
  Graph g;
  const LossWeights w;
  CHECK(w.cls == 1.0);
  CHECK(w.loc == 0.5);
  CHECK(w.type == 0.3);

  // zero fused input -> zero logits -> p(fake) = 0.5 -> BCE = ln 2
  Tensor fused({16, kTokenDim});
  ModelOutputs out = heads_forward(g, fused, p, 4, 16, 16);
  Tensor mask({16, 16, 1});
  for (size_t i = 0; i < 80; ++i) mask[i] = 1.0;
  LossBreakdown lb = total_loss(g, out, mask, 1, 2);
  CHECK(std::fabs(lb.cls[0] - std::log(2.0)) <= 1e-12);
  CHECK(std::fabs(lb.total[0] - (1.0 * lb.cls[0] + 0.5 * lb.loc[0] + 0.3 * lb.type[0])) <= 1e-12);
  CHECK(lb.total[0] >= 0.0);

  // a perfect binary mask drives the dice complement below eps/(2|m| + eps)
  Graph g2;
  ModelOutputs ideal;
  ideal.z_cls = Tensor::from({1, 2}, {0.0, 8.0});
  ideal.y_hat = ff::ops::sigmoid(g2, ideal.z_cls);
  ideal.z_type = Tensor({1, 7});
  ideal.type_hat = ff::ops::softmax_rows(g2, ideal.z_type);
  Tensor logits({16, 16, 1});
  double mask_sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    logits[i] = mask[i] > 0.5 ? 60.0 : -60.0;  // saturates sigmoid to ~{0,1}
    mask_sum += mask[i];
  }
  ideal.mask_logits = logits;
  ideal.mask_hat = ff::ops::sigmoid(g2, logits);
  LossBreakdown perfect = total_loss(g2, ideal, mask, 1, 2);
  const double dice_complement_bound = kDiceEps / (2.0 * mask_sum + kDiceEps);
  // l_loc = bce + lambda * (1 - dice); bce of saturated logits is ~0
  CHECK(perfect.loc[0] <= dice_complement_bound + 1e-9);

  CHECK_THROWS_AS(total_loss(g, out, mask, 2, 0), ContractError);
  CHECK_THROWS_AS(total_loss(g, out, mask, 0, 9), ContractError);
  Tensor small({8, 8, 1});
  CHECK_THROWS_AS(total_loss(g, out, small, 0, 0), DimensionError);
}

TEST_CASE("loss positivity and breakdown identity on random outputs") {
  Rng rng(47);
  HeadParams p = make_head_params(rng);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    Tensor fused = random_tokens(4, rng, 2.0);
    ModelOutputs out = heads_forward(g, fused, p, 2, 16, 16);
    Tensor mask({16, 16, 1});
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const int label = static_cast<int>(rng.below(2));
    const int mtype = static_cast<int>(rng.below(7));
    LossBreakdown lb = total_loss(g, out, mask, label, mtype);
    CHECK(lb.total[0] >= 0.0);
    CHECK(std::fabs(lb.total[0] -
                    (1.0 * lb.cls[0] + 0.5 * lb.loc[0] + 0.3 * lb.type[0])) <= 1e-12);
  }
}

TEST_CASE("checkpoint round trip is bit-exact and failures are classified") {
  ModelConfig cfg;
  cfg.image_size = 32;
  Model m = Model::init(cfg, 42);
  auto dir = temp_dir();
  const std::string path = (dir / "model.ffck").string();
  save_checkpoint(m, path);
  Model back = load_checkpoint(path);
  REQUIRE(back.named.size() == m.named.size());
  for (size_t i = 0; i < m.named.size(); ++i) {
    CHECK(back.named[i].first == m.named[i].first);
    CHECK(back.named[i].second.values() == m.named[i].second.values());
  }
  CHECK(back.cfg.image_size == 32);

  auto bytes = detail_ckpt::read_all(path);
  // truncate by 8 bytes
  {
    auto cut = bytes;
    cut.resize(cut.size() - 8);
    const std::string p2 = (dir / "trunc.ffck").string();
    detail_ckpt::write_all(p2, cut);
    CHECK_THROWS_AS(load_checkpoint(p2), TruncatedFileError);
  }
  // corrupt magic
  {
    auto bad = bytes;
    bad[0] = 'X';
    const std::string p3 = (dir / "magic.ffck").string();
    detail_ckpt::write_all(p3, bad);
    CHECK_THROWS_AS(load_checkpoint(p3), BadMagicError);
  }
  // unsupported version
  {
    auto bad = bytes;
    bad[4] = 9;
    const std::string p4 = (dir / "version.ffck").string();
    detail_ckpt::write_all(p4, bad);
    CHECK_THROWS_AS(load_checkpoint(p4), BadVersionError);
  }
  // config echo promising a different parameter set
  {
    auto bad = bytes;
    const std::string old_cfg = m.cfg.to_json().dump();
    bad.resize(bad.size() - old_cfg.size() - 4);
    ModelConfig other = cfg;
    other.fusion = FusionMode::Concat;
    const std::string new_cfg = other.to_json().dump();
    detail_ckpt::put_u32(bad, static_cast<uint32_t>(new_cfg.size()));
    bad.insert(bad.end(), new_cfg.begin(), new_cfg.end());
    const std::string p5 = (dir / "mismatch.ffck").string();
    detail_ckpt::write_all(p5, bad);
    CHECK_THROWS_AS(load_checkpoint(p5), ShapeMismatchError);
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ffck").string()), IoError);
}

TEST_CASE("feature tensor dump round trips") {
  Rng rng(53);
  Tensor t({5, 7, 3});
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-4.0, 4.0);
  auto dir = temp_dir();
  const std::string path = (dir / "feat.fftn").string();
  save_feature_tensor(t, path);
  Tensor back = load_feature_tensor(path);
  CHECK(back.shape() == t.shape());
  CHECK(back.values() == t.values());
}

TEST_CASE("full model forward: shapes, determinism, branch masking") {
  ModelConfig cfg;
  cfg.image_size = 32;
  Model m = Model::init(cfg, 7);
  Rng rng(77);
  Tensor img({32, 32, 3});
  for (size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  SampleFeatures f = compute_sample_features(img, cfg, 7);
  Graph g;
  g.set_recording(false);
  ModelOutputs out = model_forward(g, m, f);
  CHECK(out.y_hat.shape() == Shape{1, 2});
  CHECK(out.type_hat.shape() == Shape{1, 7});
  CHECK(out.mask_hat.shape() == Shape{32, 32, 1});
  double ts = 0.0;
  for (size_t i = 0; i < 7; ++i) ts += out.type_hat[i];
  CHECK(std::fabs(ts - 1.0) <= 1e-12);
  for (size_t i = 0; i < out.mask_hat.size(); ++i) {
    CHECK(out.mask_hat[i] > 0.0);
    CHECK(out.mask_hat[i] < 1.0);
  }

  // same seed, fresh everything -> identical outputs
  Model m2 = Model::init(cfg, 7);
  SampleFeatures f2 = compute_sample_features(img, cfg, 7);
  Graph g2;
  g2.set_recording(false);
  ModelOutputs out2 = model_forward(g2, m2, f2);
  CHECK(out.y_hat.values() == out2.y_hat.values());
  CHECK(out.mask_hat.values() == out2.mask_hat.values());
  CHECK(out.type_hat.values() == out2.type_hat.values());

  BranchMask none;
  none.low = none.mid = none.high = false;
  CHECK_THROWS_AS(model_forward(g, m, f, none), ContractError);
}
