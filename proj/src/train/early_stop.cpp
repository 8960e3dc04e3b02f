#include <cmath>
#include <stdexcept>

#include "ion/train/train.hpp"

namespace ion::train {

bool early_stop(std::span<const double> history, std::size_t patience) {
  if (patience < 1) throw std::invalid_argument("early_stop: patience must be >= 1");
  if (history.empty()) return false;
  double best = history[0];
  std::size_t since = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < best - 1e-5 * std::abs(best)) {
      best = history[i];
      since = 0;
    } else {
      ++since;
    }
  }
  return since >= patience;
}

}  // namespace ion::train
