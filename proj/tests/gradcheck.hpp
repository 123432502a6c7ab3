#ifndef FTL_TESTS_GRADCHECK_HPP_
#define FTL_TESTS_GRADCHECK_HPP_

#include <array>
#include <functional>

#include "ftl/network.hpp"
#include "oracles.hpp"

// Finite-difference gradient checking over every parameter tensor.
namespace gradcheck {

using namespace ftl;

inline constexpr std::array<Module, 4> kModules{Module::kEnc, Module::kDec, Module::kFilter, Module::kFc};

// Init leaves biases at zero; randomize them so their gradients are exercised.
inline NetworkParams random_params(const NetworkConfig& cfg, SeededRng& rng) {
  NetworkParams p = NetworkParams::init(cfg, rng);
  for (LayerStack* s : {&p.enc, &p.dec, &p.filter})
    for (Dense& d : s->layers)
      for (double& b : d.bias) b = rng.uniform(-0.3, 0.3);
  return p;
}

inline Batch random_batch(SeededRng& rng, std::size_t n, std::size_t dim, std::uint32_t classes) {
  Batch b;
  b.x = Matrix(n, dim);
  for (double& v : b.x.data()) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<ClassId>(rng.index(classes)));
  return b;
}

inline double max_gradient_error(NetworkParams p, const NetworkParams& grad,
                          const std::function<double(const NetworkParams&)>& loss) {
  double worst = 0.0;
  for (Module m : kModules) {
    auto values = p.tensors(m);
    auto analytic = grad.tensors(m);
    for (std::size_t t = 0; t < values.size(); ++t) {
      const std::vector<double> numeric =
          oracle::central_difference(values[t], [&] { return loss(p); }, 1e-5);
      for (std::size_t i = 0; i < numeric.size(); ++i)
        worst = std::max(worst, oracle::gradient_error(analytic[t][i], numeric[i]));
    }
  }
  return worst;
}

}  // namespace gradcheck

#endif  // FTL_TESTS_GRADCHECK_HPP_
