#include "nav/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace nav {

GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           ParamStore<double>& params,
                           const GradCheckOptions& opts) {
  params.zero_grad();
  Tensor<double> loss = f();
  NAV_CHECK(loss.numel() == 1, ShapeError, "grad_check: loss must be scalar");
  NAV_CHECK(std::isfinite(loss.item()), NumericError,
            "grad_check: non-finite loss");
  loss.backward();

  // Snapshot analytic gradients before finite differencing mutates params.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, t] : params.items()) {
    (void)name;
    auto& g = t.node()->grad;
    if (g.empty())
      analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    else
      analytic.push_back(g);
  }

  Rng rng(opts.sample_seed);
  GradCheckResult res;
  const double eps = opts.fd_epsilon;
  std::size_t pi = 0;
  for (auto& [name, t] : params.items()) {
    const std::int64_t n = t.numel();
    std::vector<std::int64_t> idx;
    if (opts.max_elements_per_param > 0 &&
        n > opts.max_elements_per_param) {
      for (int k = 0; k < opts.max_elements_per_param; ++k)
        idx.push_back(rng.uniform_int(0, static_cast<int>(n) - 1));
    } else {
      idx.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    }
    double* p = t.data();
    for (std::int64_t i : idx) {
      const double keep = p[i];
      NoGradGuard ng;
      auto central = [&](double h) {
        p[i] = keep + h;
        const double up = f().item();
        p[i] = keep - h;
        const double dn = f().item();
        p[i] = keep;
        NAV_CHECK(std::isfinite(up) && std::isfinite(dn), NumericError,
                  "grad_check: non-finite loss during finite differencing");
        return (up - dn) / (2.0 * h);
      };
      auto rel_err = [](double a, double b) {
        return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
      };
      const double an = analytic[pi][static_cast<std::size_t>(i)];
      double fd = central(eps);
      double rel = rel_err(an, fd);
      if (rel > 1e-5 && std::max(std::fabs(an), std::fabs(fd)) < 1e-6) {
        // Gradient below the rounding noise floor of the difference
        // quotient; a wider step resolves it (the element's influence, and
        // hence its truncation error, is itself negligible).
        fd = central(eps * 32.0);
        rel = std::min(rel, rel_err(an, fd));
      }
      ++res.elements_checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = name;
        res.worst_index = i;
      }
    }
    ++pi;
  }
  return res;
}

}  // namespace nav
