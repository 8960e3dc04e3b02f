#include "ion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ion/ops.hpp"

namespace ion {

double grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                  const GradCheckOptions& options) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.ensure_grad();
    in.zero_grad();
  }
  Tape<double> tape;
  if (!options.corrupt_op.empty()) tape.corrupt(options.corrupt_op, 1.5);
  Tensor<double> out = f(&tape, inputs);
  if (out.numel() != 1)
    throw std::invalid_argument("grad_check: function must return a scalar, got " +
                                shape_str(out.shape()));
  tape.backward(out);

  const double eps = options.eps;
  double worst = 0;
  for (auto& in : inputs) {
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    for (std::size_t j = 0; j < in.numel(); ++j) {
      auto rel_error = [&](double step) {
        const double saved = in.ptr()[j];
        in.ptr()[j] = saved + step;
        const double up = f(nullptr, inputs).item();
        in.ptr()[j] = saved - step;
        const double down = f(nullptr, inputs).item();
        in.ptr()[j] = saved;
        const double numeric = (up - down) / (2 * step);
        const double a = analytic[j];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        return std::abs(a - numeric) / denom;
      };
      double err = rel_error(eps);
      if (options.refine_above > 0 && err > options.refine_above)
        err = std::min(err, rel_error(eps / 10));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

namespace {

using T4 = Tensor<double>;

T4 uniform(std::mt19937_64& rng, Shape shape, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  T4 t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Values with magnitude in [0.1, 1] and random sign, far from a kink at 0.
T4 away_from_zero(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  T4 t(std::move(shape));
  for (double& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

// Distinct values on a 0.05 grid in random order, so no two candidates of a
// pooling window are within the finite-difference step of each other.
T4 distinct(std::mt19937_64& rng, Shape shape) {
  T4 t(std::move(shape));
  std::vector<std::size_t> order(t.numel());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i)
    t.ptr()[i] = -1.0 + 0.05 * static_cast<double>(order[i]);
  return t;
}

// sum(r * y) with a fixed random r, so every output element matters.
T4 project(Tape<double>* tape, const T4& y, const T4& r) {
  return ops::sum(tape, ops::mul(tape, y, r));
}

}  // namespace

std::vector<GradCheckCase> operator_gradcheck_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> cases;

  {
    T4 r1 = uniform(rng, {2, 3, 5, 5});
    T4 r2 = uniform(rng, {2, 3, 3, 3});
    cases.push_back({"conv2d",
                     [r1, r2](Tape<double>* t, std::vector<T4>& in) {
                       auto same = ops::conv2d(t, in[0], in[1], in[2], 1, 1);
                       auto strided = ops::conv2d(t, in[0], in[1], in[2], 2, 1);
                       return ops::add(t, project(t, same, r1), project(t, strided, r2));
                     },
                     {uniform(rng, {2, 2, 5, 5}), uniform(rng, {3, 2, 3, 3}), uniform(rng, {3})}});
  }
  {
    T4 r1 = uniform(rng, {3, 2, 4, 4});
    T4 r2 = uniform(rng, {3, 2, 4, 4});
    auto train_stats = std::make_shared<ops::BatchNormStats<double>>(2);
    auto eval_stats = std::make_shared<ops::BatchNormStats<double>>(2);
    eval_stats->running_mean = T4(Shape{2}, std::vector<double>{0.2, -0.3});
    eval_stats->running_var = T4(Shape{2}, std::vector<double>{0.8, 1.7});
    eval_stats->updates = 1;
    cases.push_back({"batchnorm2d",
                     [r1, r2, train_stats, eval_stats](Tape<double>* t, std::vector<T4>& in) {
                       auto tr = ops::batchnorm2d(t, in[0], in[1], in[2], *train_stats, {true});
                       auto ev = ops::batchnorm2d(t, in[0], in[1], in[2], *eval_stats, {false});
                       return ops::add(t, project(t, tr, r1), project(t, ev, r2));
                     },
                     {uniform(rng, {3, 2, 4, 4}), uniform(rng, {2}, 0.5, 1.5), uniform(rng, {2})}});
  }
  {
    T4 r = uniform(rng, {2, 3, 4, 4});
    cases.push_back({"leaky_relu",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::leaky_relu(t, in[0], 0.01), r);
                     },
                     {away_from_zero(rng, {2, 3, 4, 4})}});
  }
  {
    T4 r = uniform(rng, {2, 2, 3, 3});
    cases.push_back({"maxpool2d",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::maxpool2d(t, in[0]), r);
                     },
                     {distinct(rng, {2, 2, 6, 6})}});
  }
  {
    T4 r = uniform(rng, {2, 2, 2, 3});
    cases.push_back({"avgpool2d",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::avgpool2d(t, in[0]), r);
                     },
                     {uniform(rng, {2, 2, 4, 6})}});
  }
  {
    T4 r = uniform(rng, {1, 2, 6, 8});
    cases.push_back({"upsample_bicubic",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::upsample_bicubic(t, in[0]), r);
                     },
                     {uniform(rng, {1, 2, 3, 4})}});
  }
  {
    T4 r = uniform(rng, {2, 5, 3, 3});
    cases.push_back({"concat_channels",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::concat_channels(t, in[0], in[1]), r);
                     },
                     {uniform(rng, {2, 2, 3, 3}), uniform(rng, {2, 3, 3, 3})}});
  }
  {
    T4 r = uniform(rng, {2, 2, 3, 3});
    cases.push_back({"slice_channels",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::slice_channels(t, in[0], 1, 2), r);
                     },
                     {uniform(rng, {2, 4, 3, 3})}});
  }
  {
    T4 r = uniform(rng, {2, 3, 4});
    cases.push_back({"tanh",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::tanh(t, ops::tanh(t, in[0])), r);
                     },
                     {uniform(rng, {2, 3, 4}, -2, 2)}});
  }
  {
    T4 r = uniform(rng, {3, 4});
    cases.push_back({"add",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::add(t, in[0], in[1]), r);
                     },
                     {uniform(rng, {3, 4}), uniform(rng, {3, 4})}});
  }
  {
    T4 r = uniform(rng, {3, 4});
    cases.push_back({"mul",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       // x feeds both factors: exercises accumulation from two consumers.
                       auto sq = ops::mul(t, in[0], in[0]);
                       return project(t, ops::mul(t, sq, in[1]), r);
                     },
                     {uniform(rng, {3, 4}), uniform(rng, {3, 4})}});
  }
  {
    T4 r = uniform(rng, {5});
    cases.push_back({"affine",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::affine(t, in[0], -1.7, 0.3), r);
                     },
                     {uniform(rng, {5})}});
  }
  {
    cases.push_back({"sum",
                     [](Tape<double>* t, std::vector<T4>& in) {
                       return ops::sum(t, ops::mul(t, in[0], in[0]));
                     },
                     {uniform(rng, {2, 3})}});
  }
  {
    T4 r = uniform(rng, {2, 3});
    cases.push_back({"global_avg_pool",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::global_avg_pool(t, in[0]), r);
                     },
                     {uniform(rng, {2, 3, 4, 5})}});
  }
  {
    T4 r = uniform(rng, {3, 4});
    cases.push_back({"linear",
                     [r](Tape<double>* t, std::vector<T4>& in) {
                       return project(t, ops::linear(t, in[0], in[1], in[2]), r);
                     },
                     {uniform(rng, {3, 5}), uniform(rng, {4, 5}), uniform(rng, {4})}});
  }
  {
    std::vector<std::int32_t> cls{0, 3, 1, 2};
    std::vector<std::int32_t> dense(2 * 3 * 3);
    std::uniform_int_distribution<std::int32_t> pick(0, 3);
    for (auto& v : dense) v = pick(rng);
    dense[4] = -1;  // ignored position
    cases.push_back({"softmax_cross_entropy",
                     [cls, dense](Tape<double>* t, std::vector<T4>& in) {
                       auto a = ops::softmax_cross_entropy(t, in[0], cls);
                       auto b = ops::softmax_cross_entropy(t, in[1], dense, -1);
                       return ops::add(t, a, b);
                     },
                     {uniform(rng, {4, 4}, -2, 2), uniform(rng, {2, 4, 3, 3}, -2, 2)}});
  }
  {
    // Offsets keep every |a - b| >= 0.1, away from the kink of |.|.
    T4 a = uniform(rng, {2, 6});
    T4 d = away_from_zero(rng, {2, 6});
    T4 b(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) b.ptr()[i] = a.ptr()[i] + d.ptr()[i];
    cases.push_back({"l1_loss",
                     [](Tape<double>* t, std::vector<T4>& in) { return ops::l1_loss(t, in[0], in[1]); },
                     {a, b}});
  }
  {
    cases.push_back({"bce_with_logits",
                     [](Tape<double>* t, std::vector<T4>& in) {
                       return ops::add(t, ops::bce_with_logits(t, in[0], 1.0),
                                       ops::bce_with_logits(t, in[0], 0.0));
                     },
                     {uniform(rng, {3, 1}, -3, 3)}});
  }
  return cases;
}

std::vector<GradCheckOutcome> run_gradcheck_cases(const std::vector<GradCheckCase>& cases,
                                                  const GradCheckOptions& options) {
  std::vector<GradCheckOutcome> outcomes;
  outcomes.reserve(cases.size());
  for (const auto& c : cases) {
    std::vector<Tensor<double>> inputs;
    for (const auto& in : c.inputs) inputs.push_back(in.clone());
    outcomes.push_back({c.name, grad_check(c.f, std::move(inputs), options), c.tolerance});
  }
  return outcomes;
}

}  // namespace ion
