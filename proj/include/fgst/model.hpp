#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgst/blocks.hpp"
#include "fgst/config.hpp"
#include "fgst/flow.hpp"
#include "fgst/io.hpp"
#include "fgst/tape.hpp"

namespace fgst {

struct ModelConfig {
  std::size_t t = 3;   // training sequence length
  std::size_t c = 8;   // base channel width
  std::size_t h = 32;
  std::size_t w = 32;
  int r = 1;           // temporal radius
  std::size_t m = 3;   // attention window size
  std::size_t heads = 2;
  std::size_t levels = 2;           // encoder/decoder stage count
  std::size_t fgabs_per_stage = 2;
  std::size_t io_res_blocks = 5;
  std::uint64_t seed = 1;
  bool use_re = true;
  AttentionMode attention_mode = AttentionMode::flow_guided;

  void validate() const {
    if (t < 1) throw std::invalid_argument("config: t must be >= 1");
    if (c < 1 || heads < 1 || c % heads != 0)
      throw std::invalid_argument("config: c must be a positive multiple of heads");
    std::size_t div = static_cast<std::size_t>(1) << levels;
    if (h % div != 0 || w % div != 0)
      throw std::invalid_argument("config: H and W must be divisible by 2^levels");
    if (m < 1 || m % 2 == 0) throw std::invalid_argument("config: m must be odd");
    if (r < 0) throw std::invalid_argument("config: r must be >= 0");
    if (fgabs_per_stage < 1) throw std::invalid_argument("config: fgabs_per_stage must be >= 1");
    for (std::size_t i = 0; i <= levels; ++i)
      if (((c << i) % heads) != 0)
        throw std::invalid_argument("config: stage width not divisible by heads");
  }

  std::size_t stage_width(std::size_t level) const { return c << level; }
};

inline const char* attention_mode_name(AttentionMode m) {
  return m == AttentionMode::prewarp ? "prewarp" : "flow_guided";
}

inline AttentionMode attention_mode_from_name(const std::string& s) {
  if (s == "prewarp") return AttentionMode::prewarp;
  if (s == "flow_guided") return AttentionMode::flow_guided;
  throw std::invalid_argument("unknown attention mode: " + s);
}

// U-shaped restorer: input residual stack, per-level FGAB stages joined by
// patch merging, a bottleneck, the mirrored decoder with skip fusion, an
// output residual stack, and a residual add onto the input frames.
struct FgstModel {
  ModelConfig config;
  TensorPtr head_kernel, head_bias;  // 3 -> C
  std::vector<ResBlockParams> input_blocks;
  std::vector<std::vector<FgabParams>> encoder;  // [level][fgab]
  std::vector<TensorPtr> merge_kernels, merge_biases;
  std::vector<FgabParams> bottleneck;
  std::vector<TensorPtr> expand_kernels, expand_biases;  // index = target level
  std::vector<TensorPtr> fuse_kernels, fuse_biases;      // 1x1 fusion at target level
  std::vector<std::vector<FgabParams>> decoder;          // [level][fgab]
  std::vector<ResBlockParams> output_blocks;
  TensorPtr tail_kernel, tail_bias;  // C -> 3
  std::shared_ptr<FlowEstimator> estimator;
};

inline void for_each_param(const FgstModel& model,
                           const std::function<void(const std::string&, const TensorPtr&)>& fn) {
  auto res_block = [&](const std::string& prefix, const ResBlockParams& rb) {
    fn(prefix + ".k1", rb.k1);
    fn(prefix + ".b1", rb.b1);
    fn(prefix + ".k2", rb.k2);
    fn(prefix + ".b2", rb.b2);
  };
  auto fgab = [&](const std::string& prefix, const FgabParams& p) {
    fn(prefix + ".ln.gain", p.ln_gain);
    fn(prefix + ".ln.bias", p.ln_bias);
    for (std::size_t h = 0; h < p.attn.n; ++h) {
      std::string hs = std::to_string(h);
      fn(prefix + ".attn.u" + hs, p.attn.u[h]);
      fn(prefix + ".attn.v" + hs, p.attn.v[h]);
      fn(prefix + ".attn.wp" + hs, p.attn.wp[h]);
      fn(prefix + ".attn.w" + hs, p.attn.w[h]);
    }
    fn(prefix + ".fc.kernel", p.fc_kernel);
    fn(prefix + ".fc.bias", p.fc_bias);
    for (std::size_t i = 0; i < p.ffn.size(); ++i)
      res_block(prefix + ".ffn" + std::to_string(i), p.ffn[i]);
  };

  fn("head.kernel", model.head_kernel);
  fn("head.bias", model.head_bias);
  for (std::size_t i = 0; i < model.input_blocks.size(); ++i)
    res_block("in_block" + std::to_string(i), model.input_blocks[i]);
  for (std::size_t lv = 0; lv < model.encoder.size(); ++lv) {
    for (std::size_t g = 0; g < model.encoder[lv].size(); ++g)
      fgab("enc" + std::to_string(lv) + ".fgab" + std::to_string(g), model.encoder[lv][g]);
    fn("merge" + std::to_string(lv) + ".kernel", model.merge_kernels[lv]);
    fn("merge" + std::to_string(lv) + ".bias", model.merge_biases[lv]);
  }
  for (std::size_t g = 0; g < model.bottleneck.size(); ++g)
    fgab("bottleneck.fgab" + std::to_string(g), model.bottleneck[g]);
  for (std::size_t lv = model.decoder.size(); lv-- > 0;) {
    fn("expand" + std::to_string(lv) + ".kernel", model.expand_kernels[lv]);
    fn("expand" + std::to_string(lv) + ".bias", model.expand_biases[lv]);
    fn("fuse" + std::to_string(lv) + ".kernel", model.fuse_kernels[lv]);
    fn("fuse" + std::to_string(lv) + ".bias", model.fuse_biases[lv]);
    for (std::size_t g = 0; g < model.decoder[lv].size(); ++g)
      fgab("dec" + std::to_string(lv) + ".fgab" + std::to_string(g), model.decoder[lv][g]);
  }
  for (std::size_t i = 0; i < model.output_blocks.size(); ++i)
    res_block("out_block" + std::to_string(i), model.output_blocks[i]);
  fn("tail.kernel", model.tail_kernel);
  fn("tail.bias", model.tail_bias);
}

// Builds the parameter tree. With random_init the weights draw from the
// fan-in-scaled uniform (seeded by config.seed) and LN gains start at 1;
// otherwise every tensor is zero, which makes forward the identity.
inline FgstModel make_model(const ModelConfig& config, std::shared_ptr<FlowEstimator> estimator,
                            bool random_init = true) {
  config.validate();
  FgstModel model;
  model.config = config;
  model.estimator = std::move(estimator);
  std::mt19937_64 rng(config.seed);
  std::size_t c = config.c;

  model.head_kernel = make_param({c, 3, 3, 3});
  model.head_bias = make_param({c});
  if (random_init) init_fan_in(*model.head_kernel, 3 * 9, rng);
  for (std::size_t i = 0; i < config.io_res_blocks; ++i) {
    model.input_blocks.push_back(make_res_block(c));
    if (random_init) init_res_block(model.input_blocks.back(), rng);
  }
  for (std::size_t lv = 0; lv < config.levels; ++lv) {
    std::size_t wc = config.stage_width(lv);
    model.encoder.emplace_back();
    for (std::size_t g = 0; g < config.fgabs_per_stage; ++g) {
      model.encoder.back().push_back(make_fgab_params(wc, config.heads));
      if (random_init) init_fgab_params(model.encoder.back().back(), rng);
    }
    model.merge_kernels.push_back(make_param({2 * wc, wc, 4, 4}));
    model.merge_biases.push_back(make_param({2 * wc}));
    if (random_init) init_fan_in(*model.merge_kernels.back(), wc * 16, rng);
  }
  for (std::size_t g = 0; g < config.fgabs_per_stage; ++g) {
    model.bottleneck.push_back(make_fgab_params(config.stage_width(config.levels), config.heads));
    if (random_init) init_fgab_params(model.bottleneck.back(), rng);
  }
  model.expand_kernels.resize(config.levels);
  model.expand_biases.resize(config.levels);
  model.fuse_kernels.resize(config.levels);
  model.fuse_biases.resize(config.levels);
  model.decoder.resize(config.levels);
  for (std::size_t lv = config.levels; lv-- > 0;) {
    std::size_t wc = config.stage_width(lv);
    model.expand_kernels[lv] = make_param({2 * wc, wc, 2, 2});
    model.expand_biases[lv] = make_param({wc});
    if (random_init) init_fan_in(*model.expand_kernels[lv], 2 * wc * 4, rng);
    model.fuse_kernels[lv] = make_param({wc, 2 * wc, 1, 1});
    model.fuse_biases[lv] = make_param({wc});
    if (random_init) init_fan_in(*model.fuse_kernels[lv], 2 * wc, rng);
    for (std::size_t g = 0; g < config.fgabs_per_stage; ++g) {
      model.decoder[lv].push_back(make_fgab_params(wc, config.heads));
      if (random_init) init_fgab_params(model.decoder[lv].back(), rng);
    }
  }
  for (std::size_t i = 0; i < config.io_res_blocks; ++i) {
    model.output_blocks.push_back(make_res_block(c));
    if (random_init) init_res_block(model.output_blocks.back(), rng);
  }
  model.tail_kernel = make_param({3, c, 3, 3});
  model.tail_bias = make_param({3});
  // The tail stays zero so a fresh model is the identity map and training
  // starts from the input video rather than from random residual noise.
  return model;
}

// Restores a whole sequence. The video is T frames of [3,H,W]; T may differ
// from config.t (full-length sequences at test time). Flows may be supplied;
// otherwise they are estimated from the input frames.
inline FrameSeq forward(Tape& tape, const FgstModel& model, const FrameSeq& video,
                        AttnTrace* trace = nullptr, const FlowPyramid* flows_in = nullptr) {
  const ModelConfig& cfg = model.config;
  if (video.empty()) throw std::invalid_argument("forward: empty video");
  for (const auto& fr : video)
    if (!fr || fr->rank() != 3 || fr->shape[0] != 3 || fr->shape[1] != cfg.h ||
        fr->shape[2] != cfg.w)
      throw std::invalid_argument("forward: frames must be [3," + std::to_string(cfg.h) + "," +
                                  std::to_string(cfg.w) + "]");

  FlowPyramid local;
  const FlowPyramid* flows = flows_in;
  if (!flows) {
    if (!model.estimator) throw std::invalid_argument("forward: no flow estimator configured");
    local = compute_flow_pyramid(video, *model.estimator, cfg.r, static_cast<int>(cfg.levels));
    flows = &local;
  }

  auto scoped = [&](const std::string& s) {
    if (trace) trace->scope = s;
  };
  auto run_stage = [&](FrameSeq seq, const std::vector<FgabParams>& stage, std::size_t level,
                       const std::string& name) {
    for (std::size_t g = 0; g < stage.size(); ++g) {
      scoped(name + ".fgab" + std::to_string(g));
      seq = fgab_layer(tape, seq, flows->at_level(static_cast<int>(level)), stage[g], cfg.m, cfg.r,
                       cfg.use_re, cfg.attention_mode, trace);
    }
    return seq;
  };

  FrameSeq seq;
  for (const auto& fr : video) {
    auto x = conv2d(tape, fr, model.head_kernel, model.head_bias, 1, 1);
    for (const auto& rb : model.input_blocks) x = residual_block(tape, x, rb);
    seq.push_back(x);
  }

  std::vector<FrameSeq> skips;
  for (std::size_t lv = 0; lv < cfg.levels; ++lv) {
    seq = run_stage(std::move(seq), model.encoder[lv], lv, "enc" + std::to_string(lv));
    skips.push_back(seq);
    FrameSeq merged;
    for (const auto& x : seq)
      merged.push_back(patch_merge(tape, x, model.merge_kernels[lv], model.merge_biases[lv]));
    seq = std::move(merged);
  }

  seq = run_stage(std::move(seq), model.bottleneck, cfg.levels, "bottleneck");

  for (std::size_t lv = cfg.levels; lv-- > 0;) {
    FrameSeq up;
    for (const auto& x : seq)
      up.push_back(patch_expand(tape, x, model.expand_kernels[lv], model.expand_biases[lv]));
    FrameSeq fused;
    for (std::size_t t = 0; t < up.size(); ++t) {
      auto cat = concat_channels(tape, up[t], skips[lv][t]);
      fused.push_back(conv2d(tape, cat, model.fuse_kernels[lv], model.fuse_biases[lv], 1, 0));
    }
    seq = run_stage(std::move(fused), model.decoder[lv], lv, "dec" + std::to_string(lv));
  }

  FrameSeq out;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    auto x = seq[t];
    for (const auto& rb : model.output_blocks) x = residual_block(tape, x, rb);
    auto residual = conv2d(tape, x, model.tail_kernel, model.tail_bias, 1, 1);
    out.push_back(add(tape, video[t], residual));
  }
  return out;
}

inline std::size_t count_params(const FgstModel& model) {
  std::size_t n = 0;
  for_each_param(model, [&](const std::string&, const TensorPtr& p) { n += p->numel(); });
  return n;
}

struct MacBreakdown {
  std::uint64_t conv = 0;
  std::uint64_t attention = 0;
  std::uint64_t total() const { return conv + attention; }
};

// Analytic cost of one forward pass over a length-T sequence at the
// configured resolution. Convolutions use the dense formula; the attention
// term is the windowed closed form summed over every FGAB layer.
inline MacBreakdown count_macs(const FgstModel& model, std::size_t t_frames = 0) {
  const ModelConfig& cfg = model.config;
  std::uint64_t t = t_frames ? t_frames : cfg.t;
  MacBreakdown mb;
  auto conv_cost = [&](std::size_t cin, std::size_t cout, std::size_t k, std::size_t oh,
                       std::size_t ow) {
    return static_cast<std::uint64_t>(cin) * cout * k * k * oh * ow;
  };
  auto level_dims = [&](std::size_t lv) {
    return std::pair(cfg.h >> lv, cfg.w >> lv);
  };
  auto fgab_cost = [&](std::size_t lv) {
    auto [h, w] = level_dims(lv);
    std::size_t c = cfg.stage_width(lv);
    // fusion conv + FFN convs per frame
    std::uint64_t conv = conv_cost(2 * c, c, 3, h, w) + 10 * conv_cost(c, c, 3, h, w);
    mb.conv += t * conv;
    mb.attention += mac_count(AttentionKind::fgsw, t, h, w, c, static_cast<std::uint64_t>(cfg.r),
                              cfg.m);
  };

  mb.conv += t * conv_cost(3, cfg.c, 3, cfg.h, cfg.w);
  mb.conv += t * 2 * cfg.io_res_blocks * conv_cost(cfg.c, cfg.c, 3, cfg.h, cfg.w);
  for (std::size_t lv = 0; lv < cfg.levels; ++lv) {
    for (std::size_t g = 0; g < cfg.fgabs_per_stage; ++g) fgab_cost(lv);
    auto [h, w] = level_dims(lv + 1);
    mb.conv += t * conv_cost(cfg.stage_width(lv), cfg.stage_width(lv + 1), 4, h, w);
  }
  for (std::size_t g = 0; g < cfg.fgabs_per_stage; ++g) fgab_cost(cfg.levels);
  for (std::size_t lv = cfg.levels; lv-- > 0;) {
    auto [h, w] = level_dims(lv);
    std::size_t wc = cfg.stage_width(lv);
    mb.conv += t * static_cast<std::uint64_t>(2 * wc) * wc * 4 * (h / 2) * (w / 2);
    mb.conv += t * conv_cost(2 * wc, wc, 1, h, w);
    for (std::size_t g = 0; g < cfg.fgabs_per_stage; ++g) fgab_cost(lv);
  }
  mb.conv += t * 2 * cfg.io_res_blocks * conv_cost(cfg.c, cfg.c, 3, cfg.h, cfg.w);
  mb.conv += t * conv_cost(cfg.c, 3, 3, cfg.h, cfg.w);
  return mb;
}

inline std::string config_to_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "model.t = " << cfg.t << "\n";
  os << "model.c = " << cfg.c << "\n";
  os << "model.h = " << cfg.h << "\n";
  os << "model.w = " << cfg.w << "\n";
  os << "model.r = " << cfg.r << "\n";
  os << "model.m = " << cfg.m << "\n";
  os << "model.heads = " << cfg.heads << "\n";
  os << "model.levels = " << cfg.levels << "\n";
  os << "model.fgabs_per_stage = " << cfg.fgabs_per_stage << "\n";
  os << "model.io_res_blocks = " << cfg.io_res_blocks << "\n";
  os << "model.seed = " << cfg.seed << "\n";
  os << "model.use_re = " << (cfg.use_re ? 1 : 0) << "\n";
  os << "model.attention_mode = " << attention_mode_name(cfg.attention_mode) << "\n";
  return os.str();
}

// Reads the model.* keys, filling anything absent with the defaults above.
// A trailing reject pass catches misspelled keys.
inline ModelConfig apply_model_keys(KvMap& kv) {
  ModelConfig cfg;
  cfg.t = kv.get_u64("model.t", cfg.t);
  cfg.c = kv.get_u64("model.c", cfg.c);
  cfg.h = kv.get_u64("model.h", cfg.h);
  cfg.w = kv.get_u64("model.w", cfg.w);
  cfg.r = static_cast<int>(kv.get_i64("model.r", cfg.r));
  cfg.m = kv.get_u64("model.m", cfg.m);
  cfg.heads = kv.get_u64("model.heads", cfg.heads);
  cfg.levels = kv.get_u64("model.levels", cfg.levels);
  cfg.fgabs_per_stage = kv.get_u64("model.fgabs_per_stage", cfg.fgabs_per_stage);
  cfg.io_res_blocks = kv.get_u64("model.io_res_blocks", cfg.io_res_blocks);
  cfg.seed = kv.get_u64("model.seed", cfg.seed);
  cfg.use_re = kv.get_bool("model.use_re", cfg.use_re);
  cfg.attention_mode = attention_mode_from_name(
      kv.get_string("model.attention_mode", attention_mode_name(cfg.attention_mode)));
  return cfg;
}

inline ModelConfig config_from_text(const std::string& text) {
  KvMap kv = KvMap::parse(text);
  ModelConfig cfg = apply_model_keys(kv);
  kv.reject_unknown();
  cfg.validate();
  return cfg;
}

// Checkpoint layout: <dir>/manifest.txt with one "name shape file" line per
// parameter, <dir>/config.txt, and one raw tensor file per parameter.
inline void save_checkpoint(const FgstModel& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream manifest;
  for_each_param(model, [&](const std::string& name, const TensorPtr& p) {
    std::string file = name + ".fgt";
    std::string shape;
    for (std::size_t i = 0; i < p->shape.size(); ++i)
      shape += (i ? "x" : "") + std::to_string(p->shape[i]);
    manifest << name << " " << shape << " " << file << "\n";
    write_tensor((fs::path(dir) / file).string(), *p);
  });
  write_text_file((fs::path(dir) / "manifest.txt").string(), manifest.str());
  write_text_file((fs::path(dir) / "config.txt").string(), config_to_text(model.config));
}

inline FgstModel load_checkpoint(const std::string& dir,
                                 std::shared_ptr<FlowEstimator> estimator) {
  namespace fs = std::filesystem;
  ModelConfig cfg = config_from_text(read_text_file((fs::path(dir) / "config.txt").string()));
  FgstModel model = make_model(cfg, std::move(estimator), false);
  std::map<std::string, TensorPtr> by_name;
  for_each_param(model, [&](const std::string& name, const TensorPtr& p) { by_name[name] = p; });

  std::istringstream manifest(read_text_file((fs::path(dir) / "manifest.txt").string()));
  std::string line;
  std::size_t loaded = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, shape, file;
    if (!(ls >> name >> shape >> file))
      throw std::runtime_error("checkpoint: malformed manifest line: " + line);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown parameter " + name);
    auto t = read_tensor((fs::path(dir) / file).string());
    if (t->shape != it->second->shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    it->second->data = t->data;
    ++loaded;
  }
  if (loaded != by_name.size())
    throw std::runtime_error("checkpoint: manifest lists " + std::to_string(loaded) + " of " +
                             std::to_string(by_name.size()) + " parameters");
  return model;
}

}  // namespace fgst
