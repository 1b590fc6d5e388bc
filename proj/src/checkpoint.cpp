#include "optb/checkpoint.hpp"

#include <algorithm>
#include <cmath>

namespace optb::checkpoint {

using metering::Category;
using metering::MemoryLedger;

SegmentPlan SegmentPlan::full(std::size_t layer_count) {
  SegmentPlan plan;
  plan.indices.resize(layer_count + 1);
  for (std::size_t i = 0; i <= layer_count; ++i) plan.indices[i] = i;
  return plan;
}

SegmentPlan SegmentPlan::minimal(std::size_t layer_count) {
  SegmentPlan plan;
  plan.indices = layer_count == 0 ? std::vector<std::size_t>{0}
                                  : std::vector<std::size_t>{0, layer_count};
  return plan;
}

SegmentPlan SegmentPlan::uniform(std::size_t layer_count, std::size_t interior) {
  SegmentPlan plan;
  plan.indices.push_back(0);
  if (layer_count > 0) {
    const std::size_t stride = layer_count / (interior + 1);
    for (std::size_t j = 1; j <= interior; ++j) {
      const std::size_t idx = j * std::max<std::size_t>(stride, 1);
      if (idx >= layer_count) break;
      plan.indices.push_back(idx);
    }
    plan.indices.push_back(layer_count);
  }
  return plan;
}

SegmentPlan SegmentPlan::sqrt_default(std::size_t layer_count) {
  if (layer_count == 0) return minimal(0);
  const auto segments =
      static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(layer_count))));
  return uniform(layer_count, segments > 0 ? segments - 1 : 0);
}

void SegmentPlan::validate(std::size_t layer_count) const {
  if (indices.empty() || indices.front() != 0 || indices.back() != layer_count) {
    throw Error("segment plan must include boundary 0 and boundary " +
                std::to_string(layer_count));
  }
  for (std::size_t i = 1; i < indices.size(); ++i) {
    if (indices[i] <= indices[i - 1]) {
      throw Error("segment plan indices must be strictly increasing");
    }
  }
  if (indices.back() > layer_count) {
    throw Error("segment plan index " + std::to_string(indices.back()) + " out of range [0, " +
                std::to_string(layer_count) + "]");
  }
}

bool SegmentPlan::is_full(std::size_t layer_count) const {
  return indices.size() == layer_count + 1;
}

std::string SegmentPlan::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(indices[i]);
  }
  return out;
}

ActivationSizeProfile profile_network(const nn::Network& net, std::size_t batch_rows,
                                      std::size_t input_features) {
  ActivationSizeProfile profile;
  const std::size_t width = net.precision == nn::Precision::MixedPrecision ? 2 : 4;
  // Boundary 0: the raw input. For decode networks it is the encoded batch,
  // which lives in the encoded-batches category, not activations.
  const bool decoded = net.starts_with_decode();
  profile.element_counts.push_back(decoded ? 0 : batch_rows * input_features);
  profile.byte_sizes.push_back(decoded ? 0 : batch_rows * input_features * width);

  std::size_t features = input_features;
  for (const nn::Layer& layer : net.layers) {
    if (const auto* dense = std::get_if<nn::DenseLayer>(&layer)) features = dense->out;
    const std::size_t elems = batch_rows * features;
    profile.element_counts.push_back(elems);
    profile.byte_sizes.push_back(elems * width);
  }
  return profile;
}

std::size_t predict_peak(const ActivationSizeProfile& profile, const SegmentPlan& plan) {
  const std::size_t boundaries = profile.boundary_count();
  if (boundaries == 0) return 0;
  plan.validate(boundaries - 1);
  std::size_t checkpoint_bytes = 0;
  for (const std::size_t idx : plan.indices) checkpoint_bytes += profile.byte_sizes[idx];
  std::size_t worst_interior = 0;
  for (std::size_t s = 0; s + 1 < plan.indices.size(); ++s) {
    std::size_t interior = 0;
    for (std::size_t b = plan.indices[s] + 1; b < plan.indices[s + 1]; ++b) {
      interior += profile.byte_sizes[b];
    }
    worst_interior = std::max(worst_interior, interior);
  }
  return checkpoint_bytes + worst_interior;
}

namespace {

struct Candidate {
  std::size_t peak = 0;
  std::size_t interior_checkpoint_bytes = 0;
  std::vector<std::size_t> interior;

  bool better_than(const Candidate& other) const {
    if (peak != other.peak) return peak < other.peak;
    return interior_checkpoint_bytes < other.interior_checkpoint_bytes;
  }
};

Candidate evaluate(const ActivationSizeProfile& profile, std::vector<std::size_t> interior) {
  SegmentPlan plan;
  plan.indices.push_back(0);
  for (const std::size_t idx : interior) plan.indices.push_back(idx);
  plan.indices.push_back(profile.boundary_count() - 1);
  Candidate c;
  c.peak = predict_peak(profile, plan);
  for (const std::size_t idx : interior) c.interior_checkpoint_bytes += profile.byte_sizes[idx];
  c.interior = std::move(interior);
  return c;
}

// Lexicographic combinations of `budget` indices from [1, last); the first
// minimizer encountered is kept, which resolves full ties to the smallest
// index set.
Candidate exhaustive_best(const ActivationSizeProfile& profile, std::size_t budget) {
  const std::size_t last = profile.boundary_count() - 1;
  std::vector<std::size_t> pick(budget);
  for (std::size_t i = 0; i < budget; ++i) pick[i] = i + 1;
  Candidate best;
  bool have = false;
  while (true) {
    Candidate c = evaluate(profile, pick);
    if (!have || c.better_than(best)) {
      best = std::move(c);
      have = true;
    }
    if (budget == 0) break;
    std::size_t k = budget;
    bool advanced = false;
    while (k-- > 0) {
      if (pick[k] < last - 1 - (budget - 1 - k)) {
        ++pick[k];
        for (std::size_t j = k + 1; j < budget; ++j) pick[j] = pick[j - 1] + 1;
        advanced = true;
        break;
      }
    }
    if (!advanced) break;
  }
  return best;
}

// Each round splits the segment with the heaviest interior at its best
// point. The split is judged by the global predicted peak first, then by the
// heavier of the two halves it creates (so budget is not wasted on
// checkpoints adjacent to existing ones, which tie on the global peak), then
// by the narrower boundary, then the lower index.
Candidate greedy_best(const ActivationSizeProfile& profile, std::size_t budget) {
  const std::size_t last = profile.boundary_count() - 1;
  std::vector<std::size_t> interior;

  const auto interior_bytes = [&](std::size_t lo, std::size_t hi) {
    std::size_t bytes = 0;
    for (std::size_t b = lo + 1; b < hi; ++b) bytes += profile.byte_sizes[b];
    return bytes;
  };

  for (std::size_t round = 0; round < budget; ++round) {
    // locate the heaviest segment
    std::vector<std::size_t> bounds;
    bounds.push_back(0);
    bounds.insert(bounds.end(), interior.begin(), interior.end());
    bounds.push_back(last);
    std::size_t seg = 0;
    std::size_t seg_bytes = 0;
    for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
      const std::size_t bytes = interior_bytes(bounds[s], bounds[s + 1]);
      if (bytes > seg_bytes) {
        seg_bytes = bytes;
        seg = s;
      }
    }
    const std::size_t lo = bounds[seg], hi = bounds[seg + 1];
    if (hi - lo < 2) break;  // nothing left to split

    Candidate best;
    std::size_t best_halves = 0, best_size = 0;
    bool have = false;
    for (std::size_t idx = lo + 1; idx < hi; ++idx) {
      std::vector<std::size_t> trial = interior;
      trial.insert(std::upper_bound(trial.begin(), trial.end(), idx), idx);
      Candidate c = evaluate(profile, std::move(trial));
      const std::size_t halves =
          std::max(interior_bytes(lo, idx), interior_bytes(idx, hi));
      const std::size_t size = profile.byte_sizes[idx];
      const bool better =
          !have || c.peak < best.peak ||
          (c.peak == best.peak &&
           (halves < best_halves || (halves == best_halves && size < best_size)));
      if (better) {
        best = std::move(c);
        best_halves = halves;
        best_size = size;
        have = true;
      }
    }
    interior = std::move(best.interior);
  }
  return evaluate(profile, interior);
}

}  // namespace

SegmentPlan recommend_plan(const ActivationSizeProfile& profile, std::size_t budget) {
  if (profile.boundary_count() < 2) {
    throw Error("recommend_plan: profile must cover at least one layer");
  }
  const std::size_t layer_count = profile.boundary_count() - 1;
  if (budget > layer_count - 1) {
    throw Error("recommend_plan: budget " + std::to_string(budget) + " exceeds " +
                std::to_string(layer_count - 1) + " interior boundaries");
  }
  const Candidate best = layer_count <= 20 ? exhaustive_best(profile, budget)
                                           : greedy_best(profile, budget);
  SegmentPlan plan;
  plan.indices.push_back(0);
  for (const std::size_t idx : best.interior) plan.indices.push_back(idx);
  plan.indices.push_back(layer_count);
  return plan;
}

namespace {

std::size_t parse_plan_number(const std::string& token) {
  std::size_t consumed = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(token, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed != token.size() || token.empty()) {
    throw Error("segment plan: '" + token + "' is not a number");
  }
  return value;
}

}  // namespace

SegmentPlan parse_plan(const std::string& spec, const ActivationSizeProfile& profile) {
  const std::size_t layer_count = profile.boundary_count() - 1;
  if (spec == "full" || spec.empty()) return SegmentPlan::full(layer_count);
  if (spec == "sqrt") return SegmentPlan::sqrt_default(layer_count);
  if (spec.rfind("auto:", 0) == 0) {
    return recommend_plan(profile, parse_plan_number(spec.substr(5)));
  }
  SegmentPlan plan;
  plan.indices.push_back(0);
  std::size_t pos = 0;
  while (pos < spec.size()) {
    std::size_t next = spec.find(',', pos);
    if (next == std::string::npos) next = spec.size();
    const std::size_t idx = parse_plan_number(spec.substr(pos, next - pos));
    if (idx != 0 && idx != layer_count) plan.indices.push_back(idx);
    pos = next + 1;
  }
  plan.indices.push_back(layer_count);
  std::sort(plan.indices.begin(), plan.indices.end());
  plan.indices.erase(std::unique(plan.indices.begin(), plan.indices.end()), plan.indices.end());
  plan.validate(layer_count);
  return plan;
}

namespace {

void ledger_alloc(MemoryLedger* ledger, Category cat, std::size_t bytes, std::string_view label) {
  if (ledger && bytes) ledger->track_alloc(cat, bytes, label);
}

void ledger_free(MemoryLedger* ledger, Category cat, std::size_t bytes, std::string_view label) {
  if (ledger && bytes) ledger->track_free(cat, bytes, label);
}

StepResult run_step(const nn::Network& net, const Tensor* input,
                    std::span<const codec::EncodedBatch> chunks, const Tensor& target,
                    const SegmentPlan& plan, MemoryLedger* ledger, nn::LossKind loss_kind,
                    float loss_scale) {
  const std::size_t layer_count = net.layer_count();
  plan.validate(layer_count);
  const bool decoded = net.starts_with_decode();
  if (decoded && input) throw ShapeError("layer 0: decode layer expects an encoded batch input");
  if (!decoded && !input) throw ShapeError("layer 0: network expects a tensor input");

  std::vector<bool> in_plan(layer_count + 1, false);
  for (const std::size_t idx : plan.indices) in_plan[idx] = true;

  // Forward, keeping only plan boundaries.
  std::vector<Tensor> stored(layer_count + 1);
  if (!decoded) {
    stored[0] = nn::boundary_storage(net, *input);
    ledger_alloc(ledger, Category::Activations, stored[0].byte_size(), "fwd:b0");
  }
  Tensor cur = stored[0];
  for (std::size_t i = 0; i < layer_count; ++i) {
    Tensor raw = (i == 0 && decoded) ? nn::decode_input(net, chunks)
                                     : nn::apply_layer(net, i, nn::boundary_compute(cur));
    Tensor next = nn::boundary_storage(net, raw);
    ledger_alloc(ledger, Category::Activations, next.byte_size(),
                 "fwd:b" + std::to_string(i + 1));
    if (!in_plan[i] && !cur.empty()) {
      ledger_free(ledger, Category::Activations, cur.byte_size(),
                  "fwd:drop:b" + std::to_string(i));
    }
    if (in_plan[i + 1]) stored[i + 1] = next;
    cur = std::move(next);
  }
  cur = Tensor{};

  // Loss at the output boundary.
  const Tensor output = nn::boundary_compute(stored[layer_count]);
  nn::LossResult lr = nn::loss(output, target, loss_kind);
  if (loss_scale != 1.0f) {
    for (float& g : lr.grad.values()) g *= loss_scale;
  }
  ledger_alloc(ledger, Category::Gradients, lr.grad.byte_size(), "bwd:dloss");

  StepResult result;
  result.loss = lr.value;
  Tensor dcur = std::move(lr.grad);

  // Segments, last first. Replay each segment's interior, then sweep it.
  for (std::size_t s = plan.indices.size() - 1; s-- > 0;) {
    const std::size_t lo = plan.indices[s];
    const std::size_t hi = plan.indices[s + 1];

    std::vector<Tensor> interior(layer_count + 1);
    for (std::size_t i = lo; i + 1 < hi; ++i) {
      const Tensor& src = (i == lo) ? stored[lo] : interior[i];
      Tensor raw = (i == 0 && decoded) ? nn::decode_input(net, chunks)
                                       : nn::apply_layer(net, i, nn::boundary_compute(src));
      interior[i + 1] = nn::boundary_storage(net, raw);
      ledger_alloc(ledger, Category::Activations, interior[i + 1].byte_size(),
                   "bwd:replay:b" + std::to_string(i + 1));
    }

    for (std::size_t i = hi; i-- > lo;) {
      const Tensor& x_in = (i == lo) ? stored[lo] : interior[i];
      Tensor& y_out = (i + 1 == hi) ? stored[hi] : interior[i + 1];
      nn::LayerBackward step = nn::layer_backward(net, i, x_in, y_out, dcur);
      if (step.param) {
        ledger_alloc(ledger, Category::Gradients,
                     step.param->dweight.byte_size() + step.param->dbias.byte_size(),
                     "bwd:grad:layer" + std::to_string(i));
        result.grads.dense.push_back(std::move(*step.param));
      }
      if (!step.dx.empty()) {
        ledger_alloc(ledger, Category::Gradients, step.dx.byte_size(),
                     "bwd:dx:b" + std::to_string(i));
      }
      ledger_free(ledger, Category::Gradients, dcur.byte_size(),
                  "bwd:dx:b" + std::to_string(i + 1) + ":done");
      ledger_free(ledger, Category::Activations, y_out.byte_size(),
                  "bwd:consume:b" + std::to_string(i + 1));
      y_out = Tensor{};
      dcur = std::move(step.dx);
      if (dcur.empty() && i != 0) {
        throw Error("backward: gradient flow stopped above layer 0");
      }
    }
  }

  if (!dcur.empty()) {
    ledger_free(ledger, Category::Gradients, dcur.byte_size(), "bwd:dx:b0:done");
  }
  if (!decoded) {
    ledger_free(ledger, Category::Activations, stored[0].byte_size(), "bwd:consume:b0");
  }

  std::reverse(result.grads.dense.begin(), result.grads.dense.end());
  return result;
}

}  // namespace

StepResult checkpointed_backward(const nn::Network& net, const Tensor& input,
                                 const Tensor& target, const SegmentPlan& plan,
                                 MemoryLedger* ledger, nn::LossKind loss_kind,
                                 float loss_scale) {
  return run_step(net, &input, {}, target, plan, ledger, loss_kind, loss_scale);
}

StepResult checkpointed_backward(const nn::Network& net,
                                 std::span<const codec::EncodedBatch> chunks,
                                 const Tensor& target, const SegmentPlan& plan,
                                 MemoryLedger* ledger, nn::LossKind loss_kind,
                                 float loss_scale) {
  return run_step(net, nullptr, chunks, target, plan, ledger, loss_kind, loss_scale);
}

}  // namespace optb::checkpoint
