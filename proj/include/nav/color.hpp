#pragma once

#include <algorithm>
#include <cmath>

namespace nav {

/// Hue in turns (wraps), saturation/value in [0,1].
inline void hsv_to_rgb(double h, double s, double v, double* r, double* g,
                       double* b) {
  h = h - std::floor(h);
  const double h6 = h * 6.0;
  const int i = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: *r = v; *g = t; *b = p; break;
    case 1: *r = q; *g = v; *b = p; break;
    case 2: *r = p; *g = v; *b = t; break;
    case 3: *r = p; *g = q; *b = v; break;
    case 4: *r = t; *g = p; *b = v; break;
    default: *r = v; *g = p; *b = q; break;
  }
}

/// Inverse of hsv_to_rgb for rgb in [0,1]; hue returned in turns [0,1).
inline void rgb_to_hsv(double r, double g, double b, double* h, double* s,
                       double* v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  *v = mx;
  *s = mx > 0.0 ? delta / mx : 0.0;
  if (delta <= 0.0) {
    *h = 0.0;
    return;
  }
  double hue;
  if (mx == r)
    hue = (g - b) / delta;
  else if (mx == g)
    hue = 2.0 + (b - r) / delta;
  else
    hue = 4.0 + (r - g) / delta;
  hue /= 6.0;
  *h = hue - std::floor(hue);
}

}  // namespace nav
