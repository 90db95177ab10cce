#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ivapcal/data.hpp"

namespace ivapcal::synth {

// Labels y ~ Bernoulli(prior); latent margin d ~ N(+mu, sigma) for y = 1 and
// N(-mu, sigma) for y = 0. Records carry u_pos = d, u_neg = 0, so the exact
// posterior is a softmax-2 score at tau* = sigma^2 / (2 mu) when prior = 0.5.
struct SynthConfig {
  std::size_t n = 1000;
  double prior = 0.5;
  double mu = 1.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& config);

// Draw order per example: one uniform for the label, then two uniforms for
// the Box-Muller normal. Ids are "s<index>" zero-padded to a fixed width.
std::vector<LogitRecord> generate(const SynthConfig& config);

double posterior(const SynthConfig& config, double d);

double planted_temperature(const SynthConfig& config);

}  // namespace ivapcal::synth
