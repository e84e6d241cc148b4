// Command-line surface: self checks, cost sweeps, toy training, restoration,
// and attention diagnostics on top of the header library.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "fgst/attention.hpp"
#include "fgst/blocks.hpp"
#include "fgst/config.hpp"
#include "fgst/flow.hpp"
#include "fgst/io.hpp"
#include "fgst/metrics.hpp"
#include "fgst/model.hpp"
#include "fgst/ops.hpp"
#include "fgst/optim.hpp"
#include "fgst/synth.hpp"
#include "fgst/tape.hpp"
#include "fgst/tensor.hpp"
#include "fgst/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;       // bad flags, missing/unreadable config file
constexpr int kExitConfig = 3;      // config that parses but fails validation
constexpr int kExitCheckFailed = 4; // a self check reported a mismatch
constexpr int kExitRuntime = 5;     // I/O or numeric fault during the run

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "fgst_out";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

// Missing file is a usage error; a file that parses but contains bad values
// is a config error. The two phases are separated so exit codes stay honest.
fgst::KvMap load_kv(const std::string& path) {
  std::string text;
  try {
    text = fgst::read_text_file(path);
  } catch (const std::exception& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    std::exit(kExitUsage);
  }
  return fgst::KvMap::parse(text);
}

fgst::ModelConfig model_config_from(const CommonArgs& args, fgst::KvMap& kv) {
  fgst::ModelConfig cfg = fgst::apply_model_keys(kv);
  if (args.seed_set) cfg.seed = args.seed;
  cfg.validate();
  return cfg;
}

struct DataArgs {
  std::size_t sequences = 4;
  std::size_t holdout = 2;
  std::size_t t = 0;  // 0: use the model sequence length
  std::size_t shapes = 3;
  std::size_t exposure = 5;
  double max_speed = 3.0;
  std::uint64_t data_seed = 123;
  std::size_t flow_block = 4;
  int flow_radius = 3;
};

DataArgs data_args_from(const CommonArgs& args, fgst::KvMap& kv) {
  DataArgs d;
  d.sequences = kv.get_u64("train.sequences", d.sequences);
  d.holdout = kv.get_u64("train.holdout", d.holdout);
  d.t = kv.get_u64("train.t", d.t);
  d.shapes = kv.get_u64("train.shapes", d.shapes);
  d.exposure = kv.get_u64("train.exposure_samples", d.exposure);
  d.max_speed = kv.get_double("train.max_speed", d.max_speed);
  d.data_seed = kv.get_u64("train.data_seed", d.data_seed);
  d.flow_block = kv.get_u64("flow.block", d.flow_block);
  d.flow_radius = static_cast<int>(kv.get_i64("flow.radius", d.flow_radius));
  if (args.seed_set) d.data_seed = args.seed;
  return d;
}

std::shared_ptr<fgst::FlowEstimator> make_estimator(const DataArgs& d) {
  return std::make_shared<fgst::BlockMatchingFlowEstimator>(d.flow_block, d.flow_radius);
}

std::vector<fgst::SyntheticSequence> make_dataset(const fgst::ModelConfig& cfg, const DataArgs& d,
                                                  std::size_t count, std::uint64_t seed_base) {
  std::vector<fgst::SyntheticSequence> out;
  std::size_t t = d.t ? d.t : cfg.t;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(fgst::generate_sequence(seed_base + i, t, cfg.h, cfg.w, d.shapes, d.exposure,
                                          d.max_speed));
  return out;
}

struct LineFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LineFit f;
  double den = n * sxx - sx * sx;
  if (den == 0.0) return f;
  f.slope = (n * sxy - sx * sy) / den;
  f.intercept = (sy - f.slope * sx) / n;
  double mean = sy / n, ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double pred = f.slope * x[i] + f.intercept;
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  f.r2 = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return f;
}

fgst::FlowLevelSet zero_flows(int t_count, int r, std::size_t h, std::size_t w) {
  fgst::FlowLevelSet set;
  for (int t = 0; t < t_count; ++t)
    for (int f = std::max(0, t - r); f <= std::min(t_count - 1, t + r); ++f)
      set.fields.emplace(std::pair(t, f), fgst::estimate_constant(h, w, 0.0, 0.0, t, f));
  return set;
}

fgst::FrameSeq random_feature_frames(int t_count, std::size_t c, std::size_t h, std::size_t w,
                                     std::uint64_t seed) {
  fgst::FrameSeq frames;
  for (int t = 0; t < t_count; ++t) {
    auto fr = fgst::make_tensor({c, h, w});
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(t));
    fgst::fill_uniform(*fr, rng, -1.0, 1.0);
    frames.push_back(fr);
  }
  return frames;
}

// ---------------------------------------------------------------- check ----

struct CheckReport {
  bool all_pass = true;
  void line(const std::string& name, bool pass) {
    std::cout << "check " << name << (pass ? " pass" : " fail") << "\n";
    if (!pass) all_pass = false;
  }
};

// Straight-line per-head attention over an explicit key list, kept separate
// from the production kernel so the two can disagree.
std::vector<double> plain_attend(const std::vector<double>& q,
                                 const std::vector<std::vector<double>>& keys,
                                 const fgst::AttentionParams& p) {
  std::size_t c = p.c, n = p.n, d = p.d;
  std::vector<double> out(c, 0.0);
  for (std::size_t h = 0; h < n; ++h) {
    std::vector<double> uq(d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t ch = 0; ch < c; ++ch) uq[a] += p.u[h]->data[a * c + ch] * q[ch];
    std::vector<double> logits(keys.size(), 0.0);
    for (std::size_t k = 0; k < keys.size(); ++k) {
      double kv = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) s += p.v[h]->data[a * c + ch] * keys[k][ch];
        kv += uq[a] * s;
      }
      logits[k] = kv / std::sqrt(static_cast<double>(d));
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double mass = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      mass += l;
    }
    std::vector<double> head(d, 0.0);
    for (std::size_t k = 0; k < keys.size(); ++k) {
      double a_w = logits[k] / mass;
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) s += p.wp[h]->data[a * c + ch] * keys[k][ch];
        head[a] += a_w * s;
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t a = 0; a < d; ++a) out[ch] += p.w[h]->data[ch * d + a] * head[a];
  }
  return out;
}

int cmd_check(const CommonArgs& args, bool inject_fault) {
  fgst::KvMap kv = args.config_path.empty() ? fgst::KvMap::parse("")
                                            : load_kv(args.config_path);
  fgst::ModelConfig cfg;
  try {
    if (!args.config_path.empty()) {
      cfg = model_config_from(args, kv);
      kv.reject_unknown();
    } else {
      cfg.t = 2;
      cfg.c = 4;
      cfg.h = 8;
      cfg.w = 8;
      cfg.levels = 1;
      cfg.fgabs_per_stage = 1;
      cfg.io_res_blocks = 1;
      cfg.seed = args.seed_set ? args.seed : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  CheckReport rep;
  try {
    // raw tensor container round trip
    {
      auto t = fgst::make_tensor({2, 3}, {0.1, -2.5, 1e300, 5e-324, -0.0, 42.0});
      auto path = (std::filesystem::temp_directory_path() / "fgst_check_roundtrip.fgt").string();
      fgst::write_tensor(path, *t);
      auto back = fgst::read_tensor(path);
      bool ok = back->shape == t->shape &&
                std::memcmp(back->data.data(), t->data.data(), 6 * sizeof(double)) == 0;
      std::filesystem::remove(path);
      rep.line("tensor_roundtrip", ok);
    }

    std::mt19937_64 rng(cfg.seed);

    // convolution transpose identity: <conv(x), y> == <x, deconv(y)>
    {
      auto x = fgst::make_tensor({2, 6, 6});
      auto y = fgst::make_tensor({2, 12, 12});
      auto k = fgst::make_param({2, 2, 2, 2});
      fgst::fill_uniform(*x, rng, -1.0, 1.0);
      fgst::fill_uniform(*y, rng, -1.0, 1.0);
      fgst::fill_uniform(*k, rng, -1.0, 1.0);
      fgst::Tape tape;
      auto up = fgst::deconv2d(tape, x, k, 2);
      auto down = fgst::conv2d(tape, y, k, 2, 0);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < up->data.size(); ++i) lhs += up->data[i] * y->data[i];
      for (std::size_t i = 0; i < down->data.size(); ++i) rhs += down->data[i] * x->data[i];
      rep.line("conv_transpose_identity", std::abs(lhs - rhs) < 1e-10);
    }

    // softmax mass
    {
      fgst::Tape tape;
      auto logits = fgst::make_tensor({7});
      fgst::fill_uniform(*logits, rng, -30.0, 30.0);
      auto sm = fgst::softmax(tape, logits);
      double mass = 0.0;
      for (double v : sm->data) mass += v;
      rep.line("softmax_mass", std::abs(mass - 1.0) <= 1e-12);
    }

    // windowed attention against a straight-line reference
    {
      std::size_t c = 8, h = 8, w = 8, m = 3;
      int t_count = 3, r = 1, t = 1;
      auto params = fgst::make_attention_params(c, 2);
      fgst::init_attention_params(params, rng);
      auto frames = random_feature_frames(t_count, c, h, w, cfg.seed + 17);
      fgst::FlowLevelSet flows;
      for (int tt = 0; tt < t_count; ++tt)
        for (int f = std::max(0, tt - r); f <= std::min(t_count - 1, tt + r); ++f)
          flows.fields.emplace(std::pair(tt, f),
                               fgst::estimate_constant(h, w, f == tt ? 0.0 : 1.3,
                                                       f == tt ? 0.0 : -0.7, tt, f));
      fgst::Tape tape;
      auto got = fgst::fgsw_msa(tape, frames, t, flows, params, m, r);
      if (inject_fault) got->data[0] += 1e-3;

      fgst::GridBounds bounds{t_count, static_cast<int>(h), static_cast<int>(w)};
      fgst::WindowGrid grid(h, w, m);
      double max_dev = 0.0;
      for (const auto& wnd : grid.windows) {
        // shared pool: union of per-site key sets, canonical ascending order
        std::vector<fgst::KeyCoord> pool;
        for (std::size_t i = wnd.r0; i < wnd.r1; ++i)
          for (std::size_t j = wnd.c0; j < wnd.c1; ++j) {
            auto omega = fgst::build_omega(static_cast<int>(i), static_cast<int>(j), t, flows, r,
                                           bounds);
            pool.insert(pool.end(), omega.coords.begin(), omega.coords.end());
          }
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
        std::vector<std::vector<double>> keys;
        for (const auto& kc : pool) {
          std::vector<double> key(c);
          for (std::size_t ch = 0; ch < c; ++ch)
            key[ch] = frames[static_cast<std::size_t>(kc.f)]->at3(
                ch, static_cast<std::size_t>(kc.row), static_cast<std::size_t>(kc.col));
          keys.push_back(std::move(key));
        }
        for (std::size_t i = wnd.r0; i < wnd.r1; ++i)
          for (std::size_t j = wnd.c0; j < wnd.c1; ++j) {
            std::vector<double> q(c);
            for (std::size_t ch = 0; ch < c; ++ch) q[ch] = frames[1]->at3(ch, i, j);
            auto want = plain_attend(q, keys, params);
            for (std::size_t ch = 0; ch < c; ++ch)
              max_dev = std::max(max_dev, std::abs(got->at3(ch, i, j) - want[ch]));
          }
      }
      rep.line("attention_oracle", max_dev < 1e-10);
    }

    // unit window degeneracy: M = 1 equals the per-query form bitwise
    {
      std::size_t c = 4, h = 6, w = 6;
      int t_count = 2, r = 1;
      auto params = fgst::make_attention_params(c, 2);
      fgst::init_attention_params(params, rng);
      auto frames = random_feature_frames(t_count, c, h, w, cfg.seed + 31);
      auto flows = zero_flows(t_count, r, h, w);
      fgst::Tape tape;
      auto windowed = fgst::fgsw_msa(tape, frames, 0, flows, params, 1, r);
      fgst::GridBounds bounds{t_count, static_cast<int>(h), static_cast<int>(w)};
      bool ok = true;
      for (std::size_t i = 0; i < h && ok; ++i)
        for (std::size_t j = 0; j < w && ok; ++j) {
          auto q = fgst::make_tensor({c});
          for (std::size_t ch = 0; ch < c; ++ch) q->data[ch] = frames[0]->at3(ch, i, j);
          auto omega = fgst::build_omega(static_cast<int>(i), static_cast<int>(j), 0, flows, r,
                                         bounds);
          auto single = fgst::fgs_msa(tape, q, omega, frames, params);
          for (std::size_t ch = 0; ch < c; ++ch) {
            double a = windowed->at3(ch, i, j), b = single->data[ch];
            if (std::memcmp(&a, &b, sizeof(double)) != 0) ok = false;
          }
        }
      rep.line("unit_window_reduction", ok);
    }

    // spot finite-difference gradient check through conv + LN + attention
    {
      auto model = fgst::make_model(cfg, std::make_shared<fgst::BlockMatchingFlowEstimator>(2, 2));
      auto seq = fgst::generate_sequence(cfg.seed + 5, cfg.t, cfg.h, cfg.w, 2, 5);
      auto eval_loss = [&]() {
        fgst::Tape local;
        auto out = fgst::forward(local, model, seq.blurry);
        return fgst::sequence_loss(local, out, seq.sharp)->data[0];
      };
      std::vector<fgst::TensorPtr> params;
      fgst::for_each_param(model, [&](const std::string&, const fgst::TensorPtr& p) {
        params.push_back(p);
      });
      for (auto& p : params) p->zero_grad();
      {
        fgst::Tape tape;
        auto out = fgst::forward(tape, model, seq.blurry);
        tape.backward(fgst::sequence_loss(tape, out, seq.sharp));
      }
      bool ok = true;
      // probe a handful of slots spread across the parameter list
      for (std::size_t pi = 0; pi < params.size() && ok; pi += params.size() / 5 + 1) {
        auto& p = *params[pi];
        std::size_t slot = p.data.size() / 2;
        double saved = p.data[slot];
        double h = 1e-5;
        p.data[slot] = saved + h;
        double up = eval_loss();
        p.data[slot] = saved - h;
        double dn = eval_loss();
        p.data[slot] = saved;
        double fd = (up - dn) / (2.0 * h);
        double got = p.grad[slot];
        double denom = std::max(std::abs(fd), std::abs(got));
        if (denom > 1e-12 && std::abs(fd - got) / denom > 1e-4) ok = false;
      }
      rep.line("gradient_spot_check", ok);
    }

    // zero model is the identity
    {
      auto identity = fgst::make_model(cfg, std::make_shared<fgst::BlockMatchingFlowEstimator>(2, 2),
                                       false);
      auto seq = fgst::generate_sequence(cfg.seed + 7, cfg.t, cfg.h, cfg.w, 2, 5);
      fgst::Tape tape;
      auto out = fgst::forward(tape, identity, seq.blurry);
      bool ok = true;
      for (std::size_t t = 0; t < out.size(); ++t)
        if (std::memcmp(out[t]->data.data(), seq.blurry[t]->data.data(),
                        out[t]->data.size() * sizeof(double)) != 0)
          ok = false;
      rep.line("residual_identity", ok);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }

  std::cout << (rep.all_pass ? "check all pass" : "check failures detected") << "\n";
  return rep.all_pass ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------- bench ----

struct SweepEntry {
  std::size_t t, h, w;
};

std::vector<SweepEntry> parse_sweep(const std::string& spec) {
  std::vector<SweepEntry> out;
  if (spec.empty()) return out;
  std::istringstream is(spec);
  std::string item;
  while (std::getline(is, item, ',')) {
    SweepEntry e{};
    char sep1 = 0, sep2 = 0;
    std::istringstream es(item);
    if (!(es >> e.t >> sep1 >> e.h >> sep2 >> e.w) || sep1 != ':' || sep2 != ':' || e.t == 0 ||
        e.h == 0 || e.w == 0)
      throw std::invalid_argument("bench: sweep entries must be T:H:W, got '" + item + "'");
    out.push_back(e);
  }
  return out;
}

int cmd_bench(const CommonArgs& args, const std::string& sweep_flag) {
  std::string sweep_spec = sweep_flag;
  std::size_t c = 8, m = 3, heads = 2, repeats = 3;
  int r = 1;
  std::vector<SweepEntry> sweep;
  try {
    if (!args.config_path.empty()) {
      fgst::KvMap kv = load_kv(args.config_path);
      if (sweep_spec.empty()) sweep_spec = kv.get_string("bench.sweep", "");
      else kv.get_string("bench.sweep", "");  // flag overrides the file value
      c = kv.get_u64("bench.c", c);
      m = kv.get_u64("bench.m", m);
      heads = kv.get_u64("bench.heads", heads);
      repeats = kv.get_u64("bench.repeats", repeats);
      r = static_cast<int>(kv.get_i64("bench.r", r));
      kv.reject_unknown();
    }
    sweep = parse_sweep(sweep_spec);
    if (m < 1 || m % 2 == 0) throw std::invalid_argument("bench: m must be odd");
    if (heads == 0 || c % heads != 0)
      throw std::invalid_argument("bench: c must be a multiple of heads");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  std::printf("# wall-clock columns (fgs_ms, fgsw_ms) are measured and vary between runs\n");
  std::printf("%4s %4s %4s %8s %16s %16s %16s %12s %12s\n", "T", "H", "W", "THW", "global_macs",
              "fgs_macs", "fgsw_macs", "fgs_ms", "fgsw_ms");
  std::vector<double> tokens, fgs_times, fgsw_times;

  try {
    for (const auto& e : sweep) {
      auto params = fgst::make_attention_params(c, heads);
      std::mt19937_64 rng(args.seed_set ? args.seed : 1);
      fgst::init_attention_params(params, rng);
      auto frames = random_feature_frames(static_cast<int>(e.t), c, e.h, e.w, 7);
      auto flows = zero_flows(static_cast<int>(e.t), r, e.h, e.w);
      fgst::GridBounds bounds{static_cast<int>(e.t), static_cast<int>(e.h),
                              static_cast<int>(e.w)};

      auto time_ms = [&](auto&& fn) {
        double best = 1e300;
        for (std::size_t rep = 0; rep < repeats; ++rep) {
          auto t0 = std::chrono::steady_clock::now();
          fn();
          auto t1 = std::chrono::steady_clock::now();
          best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        return best;
      };

      double fgs_ms = time_ms([&] {
        fgst::Tape tape;
        for (int t = 0; t < static_cast<int>(e.t); ++t)
          for (std::size_t i = 0; i < e.h; ++i)
            for (std::size_t j = 0; j < e.w; ++j) {
              auto q = fgst::make_tensor({c});
              for (std::size_t ch = 0; ch < c; ++ch)
                q->data[ch] = frames[static_cast<std::size_t>(t)]->at3(ch, i, j);
              auto omega = fgst::build_omega(static_cast<int>(i), static_cast<int>(j), t, flows,
                                             r, bounds);
              fgst::fgs_msa(tape, q, omega, frames, params);
            }
      });
      double fgsw_ms = time_ms([&] {
        fgst::Tape tape;
        for (int t = 0; t < static_cast<int>(e.t); ++t)
          fgst::fgsw_msa(tape, frames, t, flows, params, m, r);
      });

      std::uint64_t thw = e.t * e.h * e.w;
      std::uint64_t mg = fgst::mac_count(fgst::AttentionKind::global, e.t, e.h, e.w, c, 0, 0);
      std::uint64_t mf = fgst::mac_count(fgst::AttentionKind::fgs, e.t, e.h, e.w, c,
                                         static_cast<std::uint64_t>(r), m);
      std::uint64_t mw = fgst::mac_count(fgst::AttentionKind::fgsw, e.t, e.h, e.w, c,
                                         static_cast<std::uint64_t>(r), m);
      std::printf("%4zu %4zu %4zu %8llu %16llu %16llu %16llu %12.3f %12.3f\n", e.t, e.h, e.w,
                  static_cast<unsigned long long>(thw), static_cast<unsigned long long>(mg),
                  static_cast<unsigned long long>(mf), static_cast<unsigned long long>(mw),
                  fgs_ms, fgsw_ms);
      tokens.push_back(static_cast<double>(thw));
      fgs_times.push_back(fgs_ms);
      fgsw_times.push_back(fgsw_ms);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }

  if (tokens.size() >= 2) {
    auto ff = fit_line(tokens, fgs_times);
    auto fw = fit_line(tokens, fgsw_times);
    std::printf("# fit lines are computed from the wall-clock columns\n");
    std::printf("fit fgs  slope_ms_per_token %.6e r2 %.4f\n", ff.slope, ff.r2);
    std::printf("fit fgsw slope_ms_per_token %.6e r2 %.4f\n", fw.slope, fw.r2);
    double thw = tokens.back();
    double quad = 2.0 * thw * thw * static_cast<double>(c);
    double lin = 4.0 * thw * static_cast<double>(c) * static_cast<double>(c);
    std::printf("global quadratic_share %.4f at THW %.0f\n", quad / (quad + lin), thw);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train ----

int cmd_train(const CommonArgs& args) {
  if (args.config_path.empty()) {
    std::cerr << "usage error: train requires --config\n";
    return kExitUsage;
  }
  fgst::KvMap kv = load_kv(args.config_path);
  fgst::ModelConfig cfg;
  DataArgs data;
  std::size_t iterations = 200;
  double lr = 2e-4;
  std::size_t lr_half_interval = 0;
  try {
    cfg = model_config_from(args, kv);
    data = data_args_from(args, kv);
    iterations = kv.get_u64("train.iterations", iterations);
    lr = kv.get_double("train.lr", lr);
    lr_half_interval = kv.get_u64("train.lr_half_interval", lr_half_interval);
    kv.reject_unknown();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    auto model = fgst::make_model(cfg, make_estimator(data));
    auto train_set = make_dataset(cfg, data, data.sequences, data.data_seed);
    auto holdout_set = make_dataset(cfg, data, data.holdout, data.data_seed + 1000);

    std::vector<std::string> lines;
    auto res = fgst::train_toy(model, train_set, iterations, lr, lr_half_interval, &lines);
    if (res.diverged) {
      std::cerr << "error: training diverged: " << res.message << "\n";
      return kExitRuntime;
    }

    std::filesystem::create_directories(args.out_dir);
    fgst::save_checkpoint(model, (std::filesystem::path(args.out_dir) / "checkpoint").string());
    std::string log_text;
    for (const auto& l : lines) log_text += l + "\n";
    fgst::write_text_file((std::filesystem::path(args.out_dir) / "train_log.txt").string(),
                          log_text);

    std::string metrics;
    char buf[160];
    if (!holdout_set.empty()) {
      auto hold = fgst::evaluate_holdout(model, holdout_set);
      std::snprintf(buf, sizeof buf,
                    "holdout restored_psnr %.6f degraded_psnr %.6f gain_db %.6f restored_l1 "
                    "%.9e\n",
                    hold.mean_restored_psnr, hold.mean_degraded_psnr, hold.gain_db,
                    hold.mean_restored_l1);
      metrics += buf;
    }
    std::snprintf(buf, sizeof buf, "train initial_loss %.9e final_loss %.9e iterations %zu\n",
                  res.initial_loss, res.final_loss, iterations);
    metrics += buf;
    fgst::write_text_file((std::filesystem::path(args.out_dir) / "metrics.txt").string(), metrics);
    std::cout << metrics;
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// --------------------------------------------------------------- deblur ----

std::vector<std::string> list_frames(const std::string& dir, const std::string& ext) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

fgst::FrameSeq read_frames(const std::string& dir) {
  auto fgt = list_frames(dir, ".fgt");
  fgst::FrameSeq frames;
  if (!fgt.empty()) {
    for (const auto& f : fgt) frames.push_back(fgst::read_tensor(f));
  } else {
    auto ppm = list_frames(dir, ".ppm");
    if (ppm.empty())
      throw std::runtime_error("no .fgt or .ppm frames found in " + dir);
    for (const auto& f : ppm) frames.push_back(fgst::read_ppm(f));
  }
  return frames;
}

int cmd_deblur(const CommonArgs& args) {
  if (args.config_path.empty()) {
    std::cerr << "usage error: deblur requires --config\n";
    return kExitUsage;
  }
  fgst::KvMap kv = load_kv(args.config_path);
  std::string ckpt_dir, input_dir, gt_dir;
  DataArgs data;
  try {
    ckpt_dir = kv.require_string("deblur.checkpoint");
    input_dir = kv.require_string("deblur.input");
    gt_dir = kv.get_string("deblur.gt", "");
    data = data_args_from(args, kv);
    kv.reject_unknown();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    auto model = fgst::load_checkpoint(ckpt_dir, make_estimator(data));
    auto video = read_frames(input_dir);
    fgst::Tape tape;
    auto out = fgst::forward(tape, model, video);

    std::filesystem::create_directories(args.out_dir);
    for (std::size_t t = 0; t < out.size(); ++t) {
      char name[64];
      std::snprintf(name, sizeof name, "restored_%03zu", t);
      auto base = (std::filesystem::path(args.out_dir) / name).string();
      fgst::write_tensor(base + ".fgt", *out[t]);
      fgst::write_ppm(base + ".ppm", *out[t]);
    }

    if (!gt_dir.empty()) {
      auto gt = read_frames(gt_dir);
      if (gt.size() != out.size())
        throw std::runtime_error("ground truth frame count does not match input");
      std::vector<fgst::FrameMetrics> frames;
      for (std::size_t t = 0; t < out.size(); ++t) {
        auto pr = fgst::psnr(*out[t], *gt[t]);
        frames.push_back({t, pr.db, pr.exact, fgst::ssim(*out[t], *gt[t])});
      }
      auto text = fgst::format_frame_metrics(frames);
      std::cout << text;
      fgst::write_text_file((std::filesystem::path(args.out_dir) / "metrics.txt").string(), text);
    }
    std::cout << "deblur wrote " << out.size() << " frames to " << args.out_dir << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ------------------------------------------------------- dump-attention ----

int cmd_dump_attention(const CommonArgs& args) {
  if (args.config_path.empty()) {
    std::cerr << "usage error: dump-attention requires --config\n";
    return kExitUsage;
  }
  fgst::KvMap kv = load_kv(args.config_path);
  fgst::ModelConfig cfg;
  DataArgs data;
  std::size_t limit = 4096;
  try {
    cfg = model_config_from(args, kv);
    data = data_args_from(args, kv);
    limit = kv.get_u64("dump.limit", limit);
    kv.reject_unknown();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    auto model = fgst::make_model(cfg, make_estimator(data));
    auto seq = fgst::generate_sequence(data.data_seed, data.t ? data.t : cfg.t, cfg.h, cfg.w,
                                       data.shapes, data.exposure, data.max_speed);
    std::vector<fgst::AttnRecord> records;
    fgst::AttnTrace trace;
    trace.records = &records;
    trace.record_limit = limit;
    fgst::Tape tape;
    fgst::forward(tape, model, seq.blurry, &trace);

    std::filesystem::create_directories(args.out_dir);
    fgst::write_text_file((std::filesystem::path(args.out_dir) / "attention.txt").string(),
                          fgst::format_attention_records(records));
    std::cout << "dump records " << records.size() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-guided sparse transformer toolkit for video deblurring"};
  app.require_subcommand(1);

  CommonArgs common;
  bool inject_fault = false;
  std::string sweep_flag;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "key = value config file");
    sub->add_option("--out", common.out_dir, "output directory");
    auto* seed = sub->add_option("--seed", common.seed, "override the config seed");
    seed->each([&](const std::string&) { common.seed_set = true; });
  };

  auto* check = app.add_subcommand("check", "run the built-in self checks");
  add_common(check);
  check->add_flag("--inject-fault", inject_fault,
                  "corrupt one attention output to prove the oracle can fail");

  auto* bench = app.add_subcommand("bench", "attention cost sweep (analytic MACs + wall time)");
  add_common(bench);
  bench->add_option("--sweep", sweep_flag, "comma-separated T:H:W entries");

  auto* train = app.add_subcommand("train", "train the toy model on generated sequences");
  add_common(train);

  auto* deblur = app.add_subcommand("deblur", "restore a sequence with a saved checkpoint");
  add_common(deblur);

  auto* dump = app.add_subcommand("dump-attention", "write per-query attention records");
  add_common(dump);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (check->parsed()) return cmd_check(common, inject_fault);
  if (bench->parsed()) return cmd_bench(common, sweep_flag);
  if (train->parsed()) return cmd_train(common);
  if (deblur->parsed()) return cmd_deblur(common);
  if (dump->parsed()) return cmd_dump_attention(common);
  return kExitUsage;
}
