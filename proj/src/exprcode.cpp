#include "expredit/exprcode.hpp"

#include <cmath>
#include <string>

namespace expredit {

ExpressionCode make_code(const ExpressionLabel& y, const std::vector<double>& z_y,
                         const CodeLayout& layout) {
  layout.validate();
  require(int(y.y.size()) == layout.K, "make_code: label length != K");
  require(int(z_y.size()) == layout.d,
          "make_code: z_y length " + std::to_string(z_y.size()) + " != d " +
              std::to_string(layout.d));
  for (double v : z_y) require(std::abs(v) < 1.0, "make_code: |z_y| must be < 1 elementwise");
  const int active = y.active_class();

  ExpressionCode c;
  c.layout = layout;
  c.values.resize(size_t(layout.total()));
  for (int i = 0; i < layout.K; ++i) {
    const double sign = (i == active) ? 1.0 : -1.0;  // 2*y_i - 1
    for (int m = 0; m < layout.d; ++m)
      c.values[size_t(i * layout.d + m)] = std::abs(z_y[size_t(m)]) * sign;
  }
  return c;
}

ExpressionCode sample_code(const ExpressionLabel& y, const CodeLayout& layout, Rng& rng) {
  std::vector<double> z(size_t(layout.d));
  for (auto& v : z) v = rng.uniform(-1.0, 1.0);
  return make_code(y, z, layout);
}

ExpressionCode edit_code(int target_class, const CodeLayout& layout) {
  layout.validate();
  require(target_class >= 0 && target_class < layout.K, "edit_code: class index out of range");
  ExpressionCode c;
  c.layout = layout;
  c.values.assign(size_t(layout.total()), -1.0);
  for (int m = 0; m < layout.d; ++m) c.values[size_t(target_class * layout.d + m)] = 1.0;
  return c;
}

ExpressionCode sweep_code(int target_class, int level, const CodeLayout& layout) {
  layout.validate();
  require(target_class >= 0 && target_class < layout.K, "sweep_code: class index out of range");
  require(level >= 0 && level < layout.d, "sweep_code: level out of range");
  ExpressionCode c;
  c.layout = layout;
  c.values.assign(size_t(layout.total()), -1.0);
  c.values[size_t(target_class * layout.d + level)] = 1.0;
  return c;
}

ExpressionCode neutral_code(const CodeLayout& layout) {
  layout.validate();
  ExpressionCode c;
  c.layout = layout;
  c.values.assign(size_t(layout.total()), -1.0);
  return c;
}

}  // namespace expredit
