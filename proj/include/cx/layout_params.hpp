#pragma once

#include <cstddef>
#include <string_view>

namespace cx {

/// Low-dimensional similarity curve 1 / (1 + a * t^(2b)).
struct CurveParams {
  double a = 1.0;
  double b = 1.0;
  double min_dist = 0.1;
  double spread = 1.0;

  bool operator==(const CurveParams&) const = default;
};

enum class InitMethod { Spectral, Random };

InitMethod parse_init_method(std::string_view name);
std::string_view to_string(InitMethod method);

struct LayoutParams {
  double min_dist = 0.1;
  double spread = 1.0;
  /// 0 selects 500 epochs up to 10k points and 200 above.
  std::size_t epochs = 0;
  double initial_lr = 1.0;
  std::size_t neg_samples = 5;
  InitMethod init = InitMethod::Spectral;
  /// Single optimization stream; concurrent mode tolerates racy updates.
  bool deterministic = true;
  std::size_t threads = 0;

  bool operator==(const LayoutParams&) const = default;
};

std::size_t resolve_epochs(const LayoutParams& params, std::size_t n_points);

}  // namespace cx
