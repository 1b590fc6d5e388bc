// Acceptance suite: one check per headline claim, each printed as a
// PASS/FAIL line with the measured values. Run with no arguments for the
// whole battery or with criterion numbers to select a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "optb/checkpoint.hpp"
#include "optb/pipeline.hpp"
#include "optb/rng.hpp"
#include "optb/runner.hpp"
#include "oracles.hpp"

using namespace optb;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, ...) {
  va_list args;
  va_start(args, pattern);
  char buf[512];
  std::vsnprintf(buf, sizeof(buf), pattern, args);
  va_end(args);
  return buf;
}

std::vector<codec::Image> random_images(Rng& rng, std::size_t n) {
  const codec::ImageShape shape{static_cast<std::uint32_t>(1 + rng.next_below(6)),
                                static_cast<std::uint32_t>(1 + rng.next_below(6)),
                                static_cast<std::uint32_t>(1 + rng.next_below(3))};
  std::vector<codec::Image> images(n);
  for (codec::Image& img : images) {
    img.shape = shape;
    img.pixels.resize(shape.pixel_count());
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.next_below(256));
  }
  return images;
}

// ---------------------------------------------------------------- criterion 1
Outcome codec_losslessness() {
  const auto t0 = Clock::now();
  struct ModeCap {
    codec::CodecMode mode;
    std::size_t max_n;
  };
  const ModeCap cases[] = {{codec::CodecMode::ExactInt64, 8},
                           {codec::CodecMode::ExactInt128, 16},
                           {codec::CodecMode::Float64Faithful, 6},
                           {codec::CodecMode::LosslessOffset64, 9}};
  Rng rng(0xACCE551);
  std::size_t trips = 0;
  for (const ModeCap& mc : cases) {
    for (int iter = 0; iter < 1000; ++iter) {
      const std::size_t n = 1 + rng.next_below(mc.max_n);
      const std::vector<codec::Image> images = random_images(rng, n);
      const std::vector<codec::Image> back = codec::decode(codec::encode(images, mc.mode));
      for (std::size_t i = 0; i < n; ++i) {
        if (!(back[i] == images[i])) {
          return {false, fmt("%s corrupted a %zu-image batch", codec::mode_name(mc.mode), n)};
        }
      }
      ++trips;
    }
  }
  const double secs = seconds_since(t0);
  return {secs < 10.0,
          fmt("%zu randomized round-trips bit-exact in %.2f s (limit 10 s)", trips, secs)};
}

// ---------------------------------------------------------------- criterion 2
Outcome gradient_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(0xACCE552);
  int nets = 0;
  double worst_fd = 0.0;
  for (int iter = 0; iter < 50; ++iter) {
    const std::size_t n_layers = 1 + rng.next_below(4);  // <= 4 layers
    std::vector<nn::LayerSpec> specs;
    std::size_t features = 1 + rng.next_below(8);  // <= 8 units
    const std::size_t input_dim = features;
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (l > 0 && rng.next_below(2) == 0) {
        specs.push_back(nn::ActivationSpec{nn::ActivationKind::Sigmoid});
      } else {
        const std::size_t out = 1 + rng.next_below(8);
        specs.push_back(nn::DenseSpec{features, out});
        features = out;
      }
    }
    nn::Network net =
        nn::Network::make(specs, nn::Precision::SinglePrecision, rng.next_u64());
    const std::size_t rows = 1 + rng.next_below(3);
    Tensor input = Tensor::zeros({rows, input_dim});
    for (float& v : input.values()) v = rng.next_uniform(-1.0f, 1.0f);
    Tensor target = Tensor::zeros({rows, features});
    for (float& v : target.values()) v = rng.next_uniform(-1.0f, 1.0f);

    // full-storage route
    nn::ActivationTape tape;
    const Tensor pred = nn::forward(net, input, &tape);
    const nn::LossResult lr = nn::loss(pred, target, nn::LossKind::MSE);
    const nn::Gradients full = nn::backward(net, tape, lr.grad);

    // random segment plan
    checkpoint::SegmentPlan plan;
    plan.indices.push_back(0);
    for (std::size_t b = 1; b < net.layer_count(); ++b) {
      if (rng.next_below(2) == 0) plan.indices.push_back(b);
    }
    plan.indices.push_back(net.layer_count());
    const checkpoint::StepResult ckpt =
        checkpoint::checkpointed_backward(net, input, target, plan, nullptr, nn::LossKind::MSE);

    if (ckpt.grads.dense.size() != full.dense.size()) {
      return {false, "checkpointed route returned a different gradient set"};
    }
    for (std::size_t g = 0; g < full.dense.size(); ++g) {
      const auto aw = full.dense[g].dweight.values();
      const auto bw = ckpt.grads.dense[g].dweight.values();
      for (std::size_t i = 0; i < aw.size(); ++i) {
        if (aw[i] != bw[i]) {
          return {false, fmt("net %d layer %zu: checkpointed gradient differs bitwise", iter,
                             full.dense[g].layer_index)};
        }
      }
      const auto ab = full.dense[g].dbias.values();
      const auto bb = ckpt.grads.dense[g].dbias.values();
      for (std::size_t i = 0; i < ab.size(); ++i) {
        if (ab[i] != bb[i]) return {false, "checkpointed bias gradient differs bitwise"};
      }
    }

    // finite differences against the analytic gradients, step 1e-3, relative
    // to the gradient scale (floor 1 so near-zero entries use absolute 1e-4)
    double grad_inf = 0.0;
    for (const nn::DenseGrad& g : full.dense) {
      for (const float v : g.dweight.values()) {
        grad_inf = std::max(grad_inf, static_cast<double>(std::fabs(v)));
      }
    }
    const double tol = 1e-4 * std::max(1.0, grad_inf);
    for (const nn::DenseGrad& g : full.dense) {
      auto* dense = std::get_if<nn::DenseLayer>(&net.layers[g.layer_index]);
      auto check = [&](Tensor& param, const Tensor& analytic) -> bool {
        std::span<float> pv = param.values();
        for (std::size_t i = 0; i < pv.size(); ++i) {
          const float keep = pv[i];
          pv[i] = keep + 1e-3f;
          const double up = nn::loss(nn::forward(net, input), target, nn::LossKind::MSE).value;
          pv[i] = keep - 1e-3f;
          const double dn = nn::loss(nn::forward(net, input), target, nn::LossKind::MSE).value;
          pv[i] = keep;
          const double fd = (up - dn) / 2e-3;
          const double err = std::fabs(fd - analytic.values()[i]);
          worst_fd = std::max(worst_fd, err / std::max(1.0, grad_inf));
          if (err > tol) return false;
        }
        return true;
      };
      if (!check(dense->weight, g.dweight) || !check(dense->bias, g.dbias)) {
        return {false, fmt("net %d: finite differences disagree beyond 1e-4", iter)};
      }
    }
    ++nets;
  }
  const double secs = seconds_since(t0);
  return {secs < 60.0, fmt("%d nets: checkpointed == full bitwise, fd rel err <= %.2e in %.1f s "
                           "(limit 60 s)",
                           nets, worst_fd, secs)};
}

// ------------------------------------------------------- criteria 3 and 4
struct PipelinePeaks {
  std::size_t activations = 0;
  std::size_t total = 0;
};

PipelinePeaks measure_pipeline(bool mp, const char* sc_plan) {
  cli::RunConfig cfg;
  cfg.blob_examples = 1024;  // one short epoch reaches every per-step peak
  cfg.epochs = 1;
  cfg.mixed_precision = mp;
  cfg.checkpoint_plan = sc_plan;
  const cli::RunResult r = cli::train_run(cfg);
  return {r.peak_bytes[static_cast<std::size_t>(metering::Category::Activations)],
          r.peak_total};
}

Outcome memory_reduction() {
  const auto t0 = Clock::now();
  const PipelinePeaks base = measure_pipeline(false, "full");
  const PipelinePeaks sc = measure_pipeline(false, "auto:4");
  const PipelinePeaks scmp = measure_pipeline(true, "auto:4");
  const double act_ratio =
      static_cast<double>(sc.activations) / static_cast<double>(base.activations);
  const double total_ratio = static_cast<double>(scmp.total) / static_cast<double>(base.total);
  const double secs = seconds_since(t0);
  const bool pass = act_ratio <= 0.50 && total_ratio <= 0.55 && secs < 120.0;
  return {pass, fmt("auto:4 activations %zu/%zu = %.1f%% (limit 50%%); S-C+M-P total %zu/%zu = "
                    "%.1f%% (limit 55%%); %.1f s (limit 120 s)",
                    sc.activations, base.activations, act_ratio * 100.0, scmp.total, base.total,
                    total_ratio * 100.0, secs)};
}

Outcome memory_ordering() {
  const std::size_t b = measure_pipeline(false, "full").total;
  const std::size_t mp = measure_pipeline(true, "full").total;
  const std::size_t sc = measure_pipeline(false, "auto:4").total;
  const std::size_t scmp = measure_pipeline(true, "auto:4").total;
  const bool pass = b > mp && mp > sc && sc > scmp;
  return {pass, fmt("peak totals B %zu > M-P %zu > S-C %zu > S-C+M-P %zu: %s", b, mp, sc, scmp,
                    pass ? "strictly ordered" : "ORDER BROKEN")};
}

// ---------------------------------------------------------------- criterion 5
Outcome time_tradeoff() {
  auto median_step_ms = [](const char* plan) {
    cli::RunConfig cfg;
    cfg.blob_examples = 2560;  // 10 batches per epoch
    cfg.epochs = 10;           // 100 steps
    cfg.checkpoint_plan = plan;
    std::vector<double> steps = cli::train_run(cfg).step_ms;
    std::sort(steps.begin(), steps.end());
    return steps[steps.size() / 2];
  };
  const double base = median_step_ms("full");
  const double sc = median_step_ms("auto:4");
  const double ratio = sc / base;
  const bool pass = ratio >= 1.0 && ratio <= 2.2;
  return {pass, fmt("median step: baseline %.2f ms, S-C %.2f ms, ratio %.3f (required within "
                    "[1.0, 2.2])",
                    base, sc, ratio)};
}

// ---------------------------------------------------------------- criterion 6
Outcome pipeline_overlap() {
  const double train_ms = 100.0;
  const double prep_ms = 25.0;  // P = 0.25 T
  std::vector<double> ratios;
  for (int run_i = 0; run_i < 5; ++run_i) {
    pipeline::PipelineConfig config;
    config.epochs = 10;
    config.batches_per_epoch = 1;
    config.mode = codec::CodecMode::ExactInt64;
    config.injected_prepare_ms = prep_ms;
    Rng rng(7);
    std::vector<codec::Image> images = random_images(rng, 4);
    const pipeline::TimingReport report = pipeline::run(
        config, [&](std::size_t, std::size_t) { return images; },
        [&](const pipeline::EpochBuffer&) {
          std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(train_ms));
        });
    double serialized = 0.0;
    for (const pipeline::EpochTiming& e : report.epochs) {
      serialized += e.prepare_ms + e.train_ms;
    }
    ratios.push_back(report.total_ms / serialized);
  }
  std::sort(ratios.begin(), ratios.end());
  const double median = ratios[ratios.size() / 2];
  return {median <= 0.85,
          fmt("E-D wall clock / serialized: median %.3f over 5 runs (limit 0.85)", median)};
}

// ---------------------------------------------------------------- criterion 7
Outcome accuracy_parity() {
  double worst_diff = 0.0;
  for (const std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    cli::RunConfig base;
    base.seed = seed;
    cli::RunConfig eds = base;
    eds.encoded_batches = true;
    eds.mode = codec::CodecMode::ExactInt128;
    eds.checkpoint_plan = "auto:4";
    const cli::RunResult rb = cli::train_run(base);
    const cli::RunResult re = cli::train_run(eds);
    if (rb.step_losses.size() != re.step_losses.size()) {
      return {false, fmt("seed %llu: step counts differ", (unsigned long long)seed)};
    }
    for (std::size_t i = 0; i < rb.step_losses.size(); ++i) {
      if (rb.step_losses[i] != re.step_losses[i]) {
        return {false, fmt("seed %llu: loss trajectories diverge at step %zu (%.9g vs %.9g)",
                           (unsigned long long)seed, i, rb.step_losses[i], re.step_losses[i])};
      }
    }
    const double diff = std::fabs(rb.final_accuracy - re.final_accuracy) * 100.0;
    worst_diff = std::max(worst_diff, diff);
    if (diff > 1.0) {
      return {false, fmt("seed %llu: accuracy gap %.2f points exceeds 1", (unsigned long long)seed,
                         diff)};
    }
  }
  return {true, fmt("3 seeds: E-D+S-C loss trajectories bit-identical to baseline, accuracy gap "
                    "%.2f points (limit 1)",
                    worst_diff)};
}

// ---------------------------------------------------------------- criterion 8
Outcome sampler_exactness() {
  const std::vector<double> weights = {0.5, 0.25, 0.25};
  // 96 examples: 48, 24, 24 per class; a full epoch is 6 batches of 16
  std::vector<int> labels;
  for (int i = 0; i < 48; ++i) labels.push_back(0);
  for (int i = 0; i < 24; ++i) labels.push_back(1);
  for (int i = 0; i < 24; ++i) labels.push_back(2);

  auto stream = [&](std::uint64_t seed) {
    sampler::BatchCursor cursor(sampler::plan(weights, 16, seed),
                                sampler::ClassIndex::from_labels(labels, 3));
    std::vector<std::vector<sampler::Draw>> batches;
    for (int b = 0; b < 6; ++b) batches.push_back(cursor.next());
    return batches;
  };

  const auto batches = stream(11);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    std::size_t counts[3] = {0, 0, 0};
    for (const sampler::Draw& d : batches[b]) ++counts[d.cls];
    if (counts[0] != 8 || counts[1] != 4 || counts[2] != 4) {
      return {false, fmt("batch %zu composition [%zu,%zu,%zu] != [8,4,4]", b, counts[0],
                         counts[1], counts[2])};
    }
  }
  const auto again = stream(11);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    for (std::size_t i = 0; i < 16; ++i) {
      if (batches[b][i].example != again[b][i].example) {
        return {false, "same seed produced a different batch stream"};
      }
    }
  }
  return {true, "every batch in the epoch is exactly [8,4,4]; stream reproducible under the seed"};
}

// ---------------------------------------------------------------- criterion 9
Outcome placement_recommendation() {
  checkpoint::ActivationSizeProfile narrow;
  narrow.byte_sizes = {100, 10, 100};
  narrow.element_counts = {100, 10, 100};
  const checkpoint::SegmentPlan plan = checkpoint::recommend_plan(narrow, 1);
  if (plan.indices != std::vector<std::size_t>{0, 1, 2}) {
    return {false, fmt("profile [100,10,100] budget 1 picked %s", plan.to_string().c_str())};
  }

  // agreement with the exhaustive oracle: every two-valued profile up to
  // length 9, plus random profiles up to length 12, budgets 0..2
  std::size_t checked = 0;
  auto check_profile = [&](const std::vector<std::size_t>& sizes) -> bool {
    checkpoint::ActivationSizeProfile profile;
    profile.byte_sizes = sizes;
    profile.element_counts = sizes;
    const std::size_t max_budget = std::min<std::size_t>(2, sizes.size() - 2);
    for (std::size_t budget = 0; budget <= max_budget; ++budget) {
      const checkpoint::SegmentPlan got = checkpoint::recommend_plan(profile, budget);
      const oracles::PlanSearchResult want = oracles::best_plan_exhaustive(sizes, budget);
      if (got.indices != want.indices) return false;
      ++checked;
    }
    return true;
  };

  for (std::size_t len = 3; len <= 9; ++len) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << len); ++mask) {
      std::vector<std::size_t> sizes(len);
      for (std::size_t i = 0; i < len; ++i) sizes[i] = (mask >> i) & 1 ? 96 : 4;
      if (!check_profile(sizes)) {
        return {false, fmt("disagreement on a two-valued profile of length %zu", len)};
      }
    }
  }
  Rng rng(0xACCE559);
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<std::size_t> sizes(3 + rng.next_below(10));
    for (auto& s : sizes) s = 1 + rng.next_below(256);
    if (!check_profile(sizes)) return {false, "disagreement on a random profile"};
  }
  return {true, fmt("narrow-boundary pick correct; %zu recommendations match the exhaustive "
                    "oracle exactly",
                    checked)};
}

// --------------------------------------------------------------- criterion 10
Outcome mixed_precision_mechanics() {
  const std::vector<nn::LayerSpec> specs = {
      nn::DenseSpec{64, 64}, nn::ActivationSpec{nn::ActivationKind::ReLU},
      nn::DenseSpec{64, 10}};
  const nn::Network single = nn::Network::make(specs, nn::Precision::SinglePrecision, 1);
  const nn::Network mixed = nn::Network::make(specs, nn::Precision::MixedPrecision, 1);
  if (mixed.param_bytes_stored() * 2 != single.param_bytes_stored()) {
    return {false, fmt("stored weights %zu are not half of %zu", mixed.param_bytes_stored(),
                       single.param_bytes_stored())};
  }

  // master accumulation: ten updates below the half ulp around 1.0
  nn::TrainState state;
  state.network =
      nn::Network::make(std::vector<nn::LayerSpec>{nn::DenseSpec{1, 1}},
                        nn::Precision::MixedPrecision, 1);
  auto& layer = std::get<nn::DenseLayer>(state.network.layers[0]);
  layer.master_weight = Tensor::from_values({1, 1}, std::vector<float>{1.0f});
  layer.weight = convert(layer.master_weight, ElementFormat::Half);
  state.learning_rate = 1.0f;

  const float update = -1e-4f;  // half spacing just below 1.0 is ~4.9e-4
  float oracle = 1.0f;
  for (int i = 0; i < 10; ++i) {
    nn::Gradients grads;
    grads.dense.push_back(nn::DenseGrad{
        0, Tensor::from_values({1, 1}, std::vector<float>{update}), Tensor::zeros({1, 1})});
    nn::sgd_step(state, grads);
    const float step = 1.0f * update;
    oracle = oracle - step;  // the exact single-precision sequential sum
  }
  const float master = layer.master_weight.values()[0];
  if (master != oracle) {
    return {false, fmt("master %.9g != exact single sum %.9g", master, oracle)};
  }
  const std::uint16_t stuck = float_to_half(half_to_float(float_to_half(1.0f)) + 1e-4f);
  if (stuck != float_to_half(1.0f)) {
    return {false, "a single 1e-4 update is not below the half resolution at 1.0"};
  }
  return {true, fmt("stored weights at 50%%; master accumulated to %.9g, matching the single "
                    "sum exactly, while half storage alone cannot move",
                    master)};
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "codec losslessness", codec_losslessness},
      {2, "gradient equivalence", gradient_equivalence},
      {3, "memory reduction", memory_reduction},
      {4, "memory ordering", memory_ordering},
      {5, "time trade-off", time_tradeoff},
      {6, "pipeline overlap", pipeline_overlap},
      {7, "accuracy parity", accuracy_parity},
      {8, "sampler exactness", sampler_exactness},
      {9, "placement recommendation", placement_recommendation},
      {10, "mixed-precision mechanics", mixed_precision_mechanics},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] criterion %2d: %s: %s\n", outcome.pass ? "PASS" : "FAIL", c.number,
                c.name, outcome.detail.c_str());
    std::fflush(stdout);
    if (!outcome.pass) ++failures;
  }
  return failures;
}
