#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace nerfmd {

// Forward-mode dual number carrying N partial derivatives. Used for exact
// derivatives of small closed-form expressions (rect intersection, pixel
// coverage) with respect to primitive parameters.
template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit by design
  static Dual seed(double value, int index) {
    Dual out(value);
    out.d[index] = 1.0;
    return out;
  }

  Dual operator-() const {
    Dual out(-v);
    for (int i = 0; i < N; ++i) out.d[i] = -d[i];
    return out;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    double inv = 1.0 / o.v;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
    v *= inv;
    return *this;
  }

  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator*(Dual a, const Dual& b) { return a *= b; }
  friend Dual operator/(Dual a, const Dual& b) { return a /= b; }

  friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
  friend bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
  friend bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
};

template <int N>
Dual<N> sqrt(const Dual<N>& x) {
  Dual<N> out(std::sqrt(x.v));
  double g = 0.5 / out.v;
  for (int i = 0; i < N; ++i) out.d[i] = g * x.d[i];
  return out;
}

template <int N>
Dual<N> asin(const Dual<N>& x) {
  Dual<N> out(std::asin(x.v));
  double g = 1.0 / std::sqrt(1.0 - x.v * x.v);
  for (int i = 0; i < N; ++i) out.d[i] = g * x.d[i];
  return out;
}

template <int N>
Dual<N> exp(const Dual<N>& x) {
  Dual<N> out(std::exp(x.v));
  for (int i = 0; i < N; ++i) out.d[i] = out.v * x.d[i];
  return out;
}

template <int N>
double value_of(const Dual<N>& x) {
  return x.v;
}

template <int N>
Dual<N> abs_value(const Dual<N>& x) {
  return x.v < 0.0 ? -x : x;
}

template <int N>
Dual<N> min(const Dual<N>& a, const Dual<N>& b) {
  return a.v <= b.v ? a : b;
}

template <int N>
Dual<N> max(const Dual<N>& a, const Dual<N>& b) {
  return a.v >= b.v ? a : b;
}

}  // namespace nerfmd
