#include "ivapcal/synth.hpp"

#include <cmath>
#include <cstdio>

#include "ivapcal/error.hpp"
#include "ivapcal/random.hpp"

namespace ivapcal::synth {

void validate(const SynthConfig& c) {
  if (c.n < 1) throw ValidationError("synth: n must be at least 1");
  if (!(c.prior > 0.0 && c.prior < 1.0)) throw ValidationError("synth: prior must lie in (0, 1)");
  if (!(c.mu > 0.0) || !std::isfinite(c.mu)) throw ValidationError("synth: mu must be positive");
  if (!(c.sigma > 0.0) || !std::isfinite(c.sigma)) throw ValidationError("synth: sigma must be positive");
}

double posterior(const SynthConfig& c, double d) {
  const double x = std::log(c.prior / (1.0 - c.prior)) + 2.0 * c.mu * d / (c.sigma * c.sigma);
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double planted_temperature(const SynthConfig& c) { return c.sigma * c.sigma / (2.0 * c.mu); }

std::vector<LogitRecord> generate(const SynthConfig& config) {
  validate(config);
  const int width = static_cast<int>(std::to_string(config.n - 1).size());
  PortableRng rng(config.seed);
  std::vector<LogitRecord> out;
  out.reserve(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    LogitRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "s%0*zu", width, i);
    r.id = id;
    r.label = rng.uniform() < config.prior ? 1 : 0;
    const double d = (r.label == 1 ? config.mu : -config.mu) + config.sigma * rng.normal();
    r.u_pos = d;
    r.u_neg = 0.0;
    r.true_posterior = posterior(config, d);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ivapcal::synth
