// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/model.hpp"

#include <cmath>

#include "microlab/error.hpp"

namespace microlab {

namespace {

const ConvSpec kStem{1, 1, Padding::same};
const ConvSpec kDown{2, 1, Padding::same};
const ConvSpec kPoint{1, 1, Padding::same};
const ConvSpec kDilated{1, 2, Padding::same};
const ConvSpec kFuse{1, 1, Padding::same};

std::string enc_name(std::size_t stage) { return stage == 0 ? "stem" : "enc" + std::to_string(stage); }

std::size_t conv_count(std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; }

void add_conv(ParameterSet& p, const std::string& block, const std::string& prefix, std::size_t cin,
              std::size_t cout, std::size_t k, Rng& rng) {
  Tensor kernel({cout, cin, k, k});
  const double std_dev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  for (auto& v : kernel.data()) v = std_dev * normal01(rng);
  p.add_param(block, prefix + ".conv.kernel", std::move(kernel));
  p.add_param(block, prefix + ".conv.bias", Tensor({cout}));
}

void add_bn(ParameterSet& p, const std::string& block, const std::string& prefix, std::size_t c) {
  p.add_param(block, prefix + ".bn.gamma", Tensor({c}, 1.0));
  p.add_param(block, prefix + ".bn.beta", Tensor({c}, 0.0));
  p.add_stat(block, prefix + ".bn.running_mean", Tensor({c}, 0.0));
  p.add_stat(block, prefix + ".bn.running_var", Tensor({c}, 1.0));
}

Tensor cbr_forward(ParameterSet& p, const std::string& prefix, const Tensor& x, const ConvSpec& spec,
                   Mode mode, const BatchNormConfig& bn, bool activate, CbrCache* cache) {
  Tensor conv = conv2d(x, p.param(prefix + ".conv.kernel"), p.param(prefix + ".conv.bias"), spec);
  BatchNormCache* bn_cache = cache ? &cache->bn : nullptr;
  Tensor normed = batchnorm(conv, p.param(prefix + ".bn.gamma"), p.param(prefix + ".bn.beta"),
                            p.stat(prefix + ".bn.running_mean"), p.stat(prefix + ".bn.running_var"),
                            mode, bn, bn_cache);
  Tensor out = activate ? relu(normed) : normed;
  if (cache) {
    cache->input = x;
    cache->pre_bn = std::move(conv);
    cache->pre_act = std::move(normed);
  }
  return out;
}

// Returns dL/dx; writes parameter gradients under the unit's prefix.
Tensor cbr_backward(const ParameterSet& p, const std::string& prefix, const CbrCache& cache,
                    const Tensor& grad_out, const ConvSpec& spec, bool activate, GradMap& grads) {
  Tensor g = activate ? relu_backward(cache.pre_act, grad_out) : grad_out;
  LayerGradients bn = batchnorm_backward(cache.bn, p.param(prefix + ".bn.gamma"), g);
  grads[prefix + ".bn.gamma"] = std::move(bn.grad_params.at("gamma"));
  grads[prefix + ".bn.beta"] = std::move(bn.grad_params.at("beta"));
  LayerGradients conv = conv2d_backward(cache.input, p.param(prefix + ".conv.kernel"), bn.grad_input, spec);
  grads[prefix + ".conv.kernel"] = std::move(conv.grad_params.at("kernel"));
  grads[prefix + ".conv.bias"] = std::move(conv.grad_params.at("bias"));
  return std::move(conv.grad_input);
}

}  // namespace

void ModelConfig::validate() const {
  require(encoder_stages >= 1, "ModelConfig: encoder_stages must be >= 1");
  require(base_channels >= 1, "ModelConfig: base_channels must be >= 1");
  require(rsd_out_channels >= 1, "ModelConfig: rsd_out_channels must be >= 1");
  require(input_hw > 0 && input_hw % (std::size_t{1} << encoder_stages) == 0,
          "ModelConfig: input_hw " + std::to_string(input_hw) + " must be divisible by 2^" +
              std::to_string(encoder_stages));
  require(rsd_skip_stage < encoder_stages,
          "ModelConfig: rsd_skip_stage must be below encoder_stages");
  require(num_output_channels >= 2, "ModelConfig: num_output_channels must be >= 2");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "ModelConfig: dropout_rate must lie in [0, 1)");
}

std::size_t expected_param_count(const ModelConfig& cfg) {
  std::size_t n = conv_count(1, cfg.base_channels, 3) + 2 * cfg.base_channels;
  for (std::size_t i = 1; i <= cfg.encoder_stages; ++i)
    n += conv_count(cfg.stage_channels(i - 1), cfg.stage_channels(i), 3) + 2 * cfg.stage_channels(i);
  const std::size_t cin = cfg.rsd_input_channels(), r = cfg.rsd_out_channels;
  n += conv_count(cin, r, 1) + 2 * r;
  n += conv_count(cin, r, 3) + 2 * r;
  n += conv_count(2 * r + cin, r, 3) + 2 * r;
  if (cfg.has_projection()) n += conv_count(cin, r, 1) + 2 * r;
  n += conv_count(r, cfg.num_output_channels, 1);
  return n;
}

SegmentationNet::SegmentationNet(ModelConfig cfg) : cfg_(cfg) { cfg_.validate(); }

ParameterSet SegmentationNet::build(Rng& rng) const {
  ParameterSet p;
  for (std::size_t stage = 0; stage <= cfg_.encoder_stages; ++stage) {
    const std::string name = enc_name(stage);
    const std::size_t cin = stage == 0 ? 1 : cfg_.stage_channels(stage - 1);
    add_conv(p, name, name, cin, cfg_.stage_channels(stage), 3, rng);
    add_bn(p, name, name, cfg_.stage_channels(stage));
  }
  const std::size_t cin = cfg_.rsd_input_channels(), r = cfg_.rsd_out_channels;
  add_conv(p, "rsd", "rsd.a", cin, r, 1, rng);
  add_bn(p, "rsd", "rsd.a", r);
  add_conv(p, "rsd", "rsd.b", cin, r, 3, rng);
  add_bn(p, "rsd", "rsd.b", r);
  add_conv(p, "rsd", "rsd.fuse", 2 * r + cin, r, 3, rng);
  add_bn(p, "rsd", "rsd.fuse", r);
  if (cfg_.has_projection()) {
    add_conv(p, "rsd", "rsd.proj", cin, r, 1, rng);
    add_bn(p, "rsd", "rsd.proj", r);
  }
  add_conv(p, "head", "head", r, cfg_.num_output_channels, 1, rng);
  return p;
}

void SegmentationNet::reinit_head(ParameterSet& params, std::size_t channels, Rng& rng) const {
  require(channels >= 2, "reinit_head: need at least two output channels");
  params.remove_block("head");
  add_conv(params, "head", "head", cfg_.rsd_out_channels, channels, 1, rng);
}

Tensor SegmentationNet::rsd_block(ParameterSet& params, const Tensor& features,
                                  const Tensor& skip_features, Mode mode, RsdCache* cache) const {
  require(features.rank() == 4 && skip_features.rank() == 4, "rsd_block: expected 4-D inputs");
  require(features.dim(2) == skip_features.dim(2) && features.dim(3) == skip_features.dim(3),
          "rsd_block: spatial mismatch between features " + features.shape_string() +
              " and skip features " + skip_features.shape_string());
  Tensor x = concat_channels(skip_features, features);
  const std::size_t h = x.dim(2), w = x.dim(3);

  CbrCache* ca = cache ? &cache->branch_1x1 : nullptr;
  CbrCache* cb = cache ? &cache->branch_dilated : nullptr;
  CbrCache* cf = cache ? &cache->fuse : nullptr;
  CbrCache* cp = cache ? &cache->proj : nullptr;

  Tensor a = cbr_forward(params, "rsd.a", x, kPoint, mode, bn_, true, ca);
  Tensor b = cbr_forward(params, "rsd.b", x, kDilated, mode, bn_, true, cb);
  Tensor c = broadcast_spatial(global_avgpool(x), h, w);
  const Tensor* parts[] = {&a, &b, &c};
  Tensor joined = concat_channels(parts);
  Tensor out = cbr_forward(params, "rsd.fuse", joined, kFuse, mode, bn_, true, cf);
  if (cfg_.has_projection())
    out += cbr_forward(params, "rsd.proj", x, kPoint, mode, bn_, false, cp);
  else
    out += x;

  if (cache) {
    cache->skip_channels = skip_features.dim(1);
    cache->fuse_split = {a.dim(1), b.dim(1), c.dim(1)};
    cache->input = std::move(x);
  }
  return out;
}

std::pair<Tensor, Tensor> SegmentationNet::rsd_backward(const ParameterSet& params,
                                                        const RsdCache& cache,
                                                        const Tensor& grad_out,
                                                        GradMap& grads) const {
  const Tensor& x = cache.input;
  Tensor dx = cfg_.has_projection()
                  ? cbr_backward(params, "rsd.proj", cache.proj, grad_out, kPoint, false, grads)
                  : grad_out;
  Tensor djoined = cbr_backward(params, "rsd.fuse", cache.fuse, grad_out, kFuse, true, grads);
  std::vector<Tensor> parts = split_channels(djoined, cache.fuse_split);
  dx += cbr_backward(params, "rsd.a", cache.branch_1x1, parts[0], kPoint, true, grads);
  dx += cbr_backward(params, "rsd.b", cache.branch_dilated, parts[1], kDilated, true, grads);
  dx += global_avgpool_backward(broadcast_spatial_backward(parts[2]), x.dim(2), x.dim(3));

  const std::size_t skip_c = cache.skip_channels;
  const std::size_t channels[] = {skip_c, x.dim(1) - skip_c};
  std::vector<Tensor> split = split_channels(dx, channels);
  return {std::move(split[0]), std::move(split[1])};
}

Tensor SegmentationNet::forward(ParameterSet& params, const Tensor& images, Mode mode, Rng& rng,
                                ForwardCache* cache, std::optional<double> dropout_rate) const {
  require(images.rank() == 4 && images.dim(1) == 1 && images.dim(2) == cfg_.input_hw &&
              images.dim(3) == cfg_.input_hw,
          "forward: images must be (N, 1, " + std::to_string(cfg_.input_hw) + ", " +
              std::to_string(cfg_.input_hw) + "), got " + images.shape_string());
  const std::size_t k = cfg_.encoder_stages, s = cfg_.rsd_skip_stage;
  if (cache) {
    cache->mode = mode;
    cache->encoder.assign(k + 1, CbrCache{});
  }

  std::vector<Tensor> feats;
  feats.reserve(k + 1);
  for (std::size_t stage = 0; stage <= k; ++stage) {
    const Tensor& in = stage == 0 ? images : feats.back();
    feats.push_back(cbr_forward(params, enc_name(stage), in, stage == 0 ? kStem : kDown, mode, bn_,
                                true, cache ? &cache->encoder[stage] : nullptr));
  }
  Tensor up = bilinear_upsample(feats[k], 1 << (k - s));
  Tensor decoded = rsd_block(params, up, feats[s], mode, cache ? &cache->rsd : nullptr);

  const double rate = dropout_rate.value_or(cfg_.dropout_rate);
  Tensor mask;
  Tensor dropped = dropout(decoded, rate, mode, rng, cache ? &mask : nullptr);
  Tensor logits = conv2d(dropped, params.param("head.conv.kernel"), params.param("head.conv.bias"), kPoint);
  Tensor probs = softmax_channels(bilinear_upsample(logits, 1 << s));
  if (cache) {
    cache->dropout_mask = std::move(mask);
    cache->head_input = std::move(dropped);
    cache->probs = probs;
  }
  return probs;
}

Tensor SegmentationNet::predict_probs(const ParameterSet& params, const Tensor& images) const {
  // Inference-mode batch norm reads the running statistics without writing them.
  Rng unused(0);
  return forward(const_cast<ParameterSet&>(params), images, Mode::inference, unused);
}

GradMap SegmentationNet::backward(const ParameterSet& params, const ForwardCache& cache,
                                  const Tensor& grad_probs) const {
  const std::size_t k = cfg_.encoder_stages, s = cfg_.rsd_skip_stage;
  require(cache.encoder.size() == k + 1, "backward: cache does not hold a forward pass");
  GradMap grads;

  Tensor dlogits_full = softmax_channels_backward(cache.probs, grad_probs);
  Tensor dlogits = bilinear_upsample_backward(dlogits_full, 1 << s);
  LayerGradients head = conv2d_backward(cache.head_input, params.param("head.conv.kernel"), dlogits, kPoint);
  grads["head.conv.kernel"] = std::move(head.grad_params.at("kernel"));
  grads["head.conv.bias"] = std::move(head.grad_params.at("bias"));
  Tensor ddecoded = dropout_backward(cache.dropout_mask, head.grad_input);

  auto [dskip, dup] = rsd_backward(params, cache.rsd, ddecoded, grads);

  std::vector<Tensor> dfeat(k + 1);
  dfeat[k] = bilinear_upsample_backward(dup, 1 << (k - s));
  dfeat[s] = std::move(dskip);
  for (std::size_t stage = k + 1; stage-- > 0;) {
    Tensor dx = cbr_backward(params, enc_name(stage), cache.encoder[stage], dfeat[stage],
                             stage == 0 ? kStem : kDown, true, grads);
    if (stage > 0) {
      if (dfeat[stage - 1].empty())
        dfeat[stage - 1] = std::move(dx);
      else
        dfeat[stage - 1] += dx;
    }
  }
  return grads;
}

Tensor predict_mask(const Tensor& probs) {
  require(probs.rank() == 4, "predict_mask: expected (N, C, H, W) probabilities");
  const std::size_t n_img = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  Tensor mask({n_img, 1, probs.dim(2), probs.dim(3)});
  for (std::size_t n = 0; n < n_img; ++n) {
    const double* p = probs.raw() + n * c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      for (std::size_t ch = 1; ch < c; ++ch)
        if (p[ch * hw + i] > p[best * hw + i]) best = ch;
      mask[n * hw + i] = static_cast<double>(best);
    }
  }
  return mask;
}

Tensor predict_mask(const SegmentationNet& net, const ParameterSet& params, const Tensor& images) {
  return predict_mask(net.predict_probs(params, images));
}

}  // namespace microlab
