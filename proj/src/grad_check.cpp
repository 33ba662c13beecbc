#include "qmri/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qmri {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (x.dtype() != DType::f64) {
    throw std::invalid_argument("grad_check: f64 input required, got " + dtype_name(x.dtype()));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor loss = f(leaf);
  if (loss.numel() != 1 || loss.ndim() != 0) {
    throw std::invalid_argument("grad_check: f must return a scalar");
  }
  loss.backward();
  const auto analytic = leaf.grad().to_vector();

  NoGradGuard no_grad;
  auto probe = x.to_vector();
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(Tensor(x.shape(), probe)).item();
    probe[i] = saved - eps;
    const double down = f(Tensor(x.shape(), probe)).item();
    probe[i] = saved;
    const double central = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-12});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace qmri
