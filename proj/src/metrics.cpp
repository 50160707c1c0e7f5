// Copyright Contributors to the mspnf Project
// SPDX-License-Identifier: Apache-2.0
//
#include "mspnf/metrics.hpp"

#include <array>
#include <cmath>

namespace mspnf {

namespace {

void require_same_size(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw Error("image size mismatch: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                std::to_string(b.width) + "x" + std::to_string(b.height));
  }
}

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    w[i] = std::exp(-(x * x) / (2.0 * 1.5 * 1.5));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_size(a, b);
  if (a.data.empty()) throw Error("mse: empty image");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image& a, const Image& b) {
  require_same_size(a, b);
  if (a.width < kWindow || a.height < kWindow) throw Error("ssim: images must be at least 11x11");
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto w = gaussian_window();
  const int out_w = a.width - kWindow + 1;
  const int out_h = a.height - kWindow + 1;

  double channel_total = 0.0;
  for (int c = 0; c < 3; ++c) {
    // Horizontal pass of x, y, x^2, y^2, xy, then vertical pass per output pixel.
    std::vector<std::array<double, 5>> rows(static_cast<std::size_t>(out_w) * a.height);
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < out_w; ++x) {
        std::array<double, 5> acc{};
        for (int k = 0; k < kWindow; ++k) {
          const double va = a.at(x + k, y, c);
          const double vb = b.at(x + k, y, c);
          acc[0] += w[k] * va;
          acc[1] += w[k] * vb;
          acc[2] += w[k] * va * va;
          acc[3] += w[k] * vb * vb;
          acc[4] += w[k] * va * vb;
        }
        rows[static_cast<std::size_t>(y) * out_w + x] = acc;
      }
    }
    double total = 0.0;
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        std::array<double, 5> m{};
        for (int k = 0; k < kWindow; ++k) {
          const auto& r = rows[static_cast<std::size_t>(y + k) * out_w + x];
          for (int j = 0; j < 5; ++j) m[j] += w[k] * r[j];
        }
        const double mu_a = m[0], mu_b = m[1];
        const double var_a = m[2] - mu_a * mu_a;
        const double var_b = m[3] - mu_b * mu_b;
        const double cov = m[4] - mu_a * mu_b;
        total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      }
    }
    channel_total += total / (static_cast<double>(out_w) * out_h);
  }
  return channel_total / 3.0;
}

}  // namespace mspnf
