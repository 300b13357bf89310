#pragma once

// Built-in consistency checks run by `strata selfcheck`: finite-difference
// gradients of every primitive, the quantizer against a linear scan, and
// volume rendering against the homogeneous-medium closed form.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "strata/autodiff.hpp"
#include "strata/field.hpp"
#include "strata/rendering.hpp"

namespace strata {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data()) v = d(rng);
  return t;
}

inline CheckResult gradient_case(const std::string& name, const ad::ScalarFn& f, const Tensor& point, double tol) {
  const double err = ad::gradient_check(f, point);
  return {"gradient " + name, err < tol, "max relative error " + kv::number(err)};
}

}  // namespace detail

inline std::vector<CheckResult> gradient_checks(std::uint64_t seed = 1) {
  using namespace ad;
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> out;
  const Tensor x = strata::detail::random_tensor({3, 4}, rng);
  const Tensor pos = strata::detail::random_tensor({3, 4}, rng, 0.5, 2.0);
  const Tensor other = strata::detail::random_tensor({3, 4}, rng);
  const Tensor row = strata::detail::random_tensor({4}, rng);
  const Tensor mat = strata::detail::random_tensor({4, 2}, rng);
  auto with = [](const Tensor& t) { return [t](Graph& g) { return g.constant(t); }; };
  auto c_other = with(other);
  auto c_row = with(row);
  auto c_mat = with(mat);
  auto weighted = [c_other](Graph& g, const Var& y) { return sum(y * c_other(g)); };

  out.push_back(strata::detail::gradient_case("add", [&](Graph& g, const Var& v) { return weighted(g, v + c_row(g)); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("subtract", [&](Graph& g, const Var& v) { return weighted(g, c_other(g) - v); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("multiply", [&](Graph& g, const Var& v) { return sum(v * v * c_other(g)); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("divide", [&](Graph& g, const Var& v) { return weighted(g, c_other(g) / v); }, pos, 1e-5));
  out.push_back(strata::detail::gradient_case("relu", [&](Graph& g, const Var& v) { return weighted(g, relu(v)); }, pos, 1e-5));
  out.push_back(strata::detail::gradient_case("softplus", [&](Graph& g, const Var& v) { return weighted(g, softplus(v)); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("sigmoid", [&](Graph& g, const Var& v) { return weighted(g, sigmoid(v)); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("exp", [&](Graph& g, const Var& v) { return weighted(g, exp(v)); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("log", [&](Graph& g, const Var& v) { return weighted(g, log(v)); }, pos, 1e-5));
  out.push_back(strata::detail::gradient_case("sin", [&](Graph& g, const Var& v) { return weighted(g, sin(v)); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("cos", [&](Graph& g, const Var& v) { return weighted(g, cos(v)); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("square", [&](Graph& g, const Var& v) { return weighted(g, square(v)); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("sqrt", [&](Graph& g, const Var& v) { return weighted(g, sqrt(v)); }, pos, 1e-5));
  out.push_back(strata::detail::gradient_case("matmul", [&](Graph& g, const Var& v) { return sum(square(matmul(v, c_mat(g)))); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("mean", [&](Graph&, const Var& v) { return mean(v * v); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("sum_axis", [&](Graph&, const Var& v) { return sum(square(sum_axis(v, 1))); }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("broadcast", [&](Graph& g, const Var& v) {
    return weighted(g, broadcast_to(reshape(sum_axis(v, 0), Shape{4}), Shape{3, 4}));
  }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("concat", [&](Graph& g, const Var& v) {
    return sum(square(concat({v, c_other(g) * v})));
  }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("gather_rows", [&](Graph&, const Var& v) {
    return sum(square(gather_rows(v, std::vector<std::size_t>{2, 0, 2, 1})));
  }, x, 1e-5));
  out.push_back(strata::detail::gradient_case("slice_cols", [&](Graph&, const Var& v) {
    return sum(square(slice_cols(v, 1, 3)));
  }, x, 1e-5));
  {
    // stop_gradient(x) * x: only the unstopped factor contributes.
    Graph g;
    Var v = g.parameter(x);
    Var y = sum(stop_gradient(v) * v);
    Tensor grad = g.backward(y).of(v);
    bool ok = true;
    for (std::size_t i = 0; i < x.size(); ++i) ok = ok && grad[i] == x[i];
    out.push_back({"gradient stop_gradient", ok, ok ? "gradient equals the stopped factor" : "unexpected gradient"});
  }
  return out;
}

/// Compares quantize against an exhaustive scan with lowest-index ties.
inline CheckResult quantizer_check(int cases = 200, std::uint64_t seed = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> rows_d(1, 64), dim_d(1, 8);
  std::normal_distribution<double> n01(0.0, 1.0);
  int mismatches = 0;
  for (int c = 0; c < cases; ++c) {
    const std::size_t rows = static_cast<std::size_t>(rows_d(rng)), d = static_cast<std::size_t>(dim_d(rng));
    Tensor book(Shape{rows, d});
    for (double& v : book.data()) v = std::round(4.0 * n01(rng)) / 4.0;  // coarse grid invites exact ties
    if (rows > 1 && c % 3 == 0) {
      for (std::size_t k = 0; k < d; ++k) book.at(rows - 1, k) = book.at(0, k);
    }
    std::vector<double> z(d);
    for (double& v : z) v = std::round(4.0 * n01(rng)) / 4.0;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += (z[k] - book.at(r, k)) * (z[k] - book.at(r, k));
      if (s < best_d) {
        best_d = s;
        best = r;
      }
    }
    if (quantize(z, book).index != best) ++mismatches;
  }
  return {"quantizer matches linear scan", mismatches == 0,
          std::to_string(mismatches) + " mismatches in " + std::to_string(cases) + " cases"};
}

/// Homogeneous medium of density sigma and color c over [0, 1] against
/// c (1 - e^-sigma) + e^-sigma bg.
inline CheckResult rendering_check() {
  const double sigma = std::log(2.0);
  const Vec3 c(0.9, 0.4, 0.1), bg(0.2, 0.3, 1.0);
  Ray ray;
  ray.direction = Vec3(0, 0, 1);
  ray.t_near = 0.0;
  ray.t_far = 1.0;
  std::mt19937_64 rng(3);
  SampleSet s = stratified_sample(ray, 256, rng, true);
  FieldFn field = [&](ad::Graph& g, const PointBatch& b) {
    FieldOutput o;
    o.sigma = g.constant(Tensor(Shape{b.size(), 1}, sigma));
    Tensor rgb(Shape{b.size(), 3});
    for (std::size_t i = 0; i < b.size(); ++i) {
      for (int k = 0; k < 3; ++k) rgb.at(i, static_cast<std::size_t>(k)) = c[k];
    }
    o.rgb = g.constant(std::move(rgb));
    return o;
  };
  RenderedRay r = render_ray(ray, s, field, bg);
  const double t = std::exp(-sigma);
  double err = 0;
  for (int k = 0; k < 3; ++k) err = std::max(err, std::abs(r.color[k] - (c[k] * (1 - t) + t * bg[k])));
  return {"rendering matches closed form", err < 1e-3, "max abs error " + kv::number(err)};
}

inline std::vector<CheckResult> run_selfcheck() {
  std::vector<CheckResult> all = gradient_checks();
  all.push_back(quantizer_check());
  all.push_back(rendering_check());
  return all;
}

}  // namespace strata
