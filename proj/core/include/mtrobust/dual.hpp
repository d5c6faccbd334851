#pragma once

#include <cmath>

#include <Eigen/Core>

namespace mtr {

// Forward-mode dual number with N directional derivatives.
template <int N>
struct Dual {
  using Grad = Eigen::Matrix<double, N, 1>;

  double v = 0.0;
  Grad d = Grad::Zero();

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
  Dual(double value, const Grad& grad) : v(value), d(grad) {}

  static Dual variable(double value, int i) {
    Dual r(value);
    r.d[i] = 1.0;
    return r;
  }

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) {
    d = d * o.v + o.d * v;
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    v *= inv;
    d = (d - o.d * v) * inv;
    return *this;
  }
  Dual& operator+=(double c) { v += c; return *this; }
  Dual& operator-=(double c) { v -= c; return *this; }
  Dual& operator*=(double c) { v *= c; d *= c; return *this; }
  Dual& operator/=(double c) { v /= c; d /= c; return *this; }

  Dual operator-() const { return Dual(-v, -d); }
  Dual operator+() const { return *this; }
};

template <int N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N> Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }
template <int N> Dual<N> operator+(Dual<N> a, double b) { return a += b; }
template <int N> Dual<N> operator-(Dual<N> a, double b) { return a -= b; }
template <int N> Dual<N> operator*(Dual<N> a, double b) { return a *= b; }
template <int N> Dual<N> operator/(Dual<N> a, double b) { return a /= b; }
template <int N> Dual<N> operator+(double a, Dual<N> b) { return b += a; }
template <int N> Dual<N> operator-(double a, const Dual<N>& b) { return Dual<N>(a - b.v, -b.d); }
template <int N> Dual<N> operator*(double a, Dual<N> b) { return b *= a; }
template <int N> Dual<N> operator/(double a, const Dual<N>& b) {
  const double r = a / b.v;
  return Dual<N>(r, b.d * (-r / b.v));
}

template <int N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }
template <int N> bool operator<=(const Dual<N>& a, const Dual<N>& b) { return a.v <= b.v; }
template <int N> bool operator>=(const Dual<N>& a, const Dual<N>& b) { return a.v >= b.v; }
template <int N> bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <int N> bool operator>(const Dual<N>& a, double b) { return a.v > b; }
template <int N> bool operator<=(const Dual<N>& a, double b) { return a.v <= b; }
template <int N> bool operator>=(const Dual<N>& a, double b) { return a.v >= b; }

template <int N> Dual<N> sqrt(const Dual<N>& a) {
  const double s = std::sqrt(a.v);
  return Dual<N>(s, a.d * (0.5 / s));
}
template <int N> Dual<N> sin(const Dual<N>& a) { return Dual<N>(std::sin(a.v), a.d * std::cos(a.v)); }
template <int N> Dual<N> cos(const Dual<N>& a) { return Dual<N>(std::cos(a.v), a.d * -std::sin(a.v)); }
template <int N> Dual<N> exp(const Dual<N>& a) {
  const double e = std::exp(a.v);
  return Dual<N>(e, a.d * e);
}
template <int N> Dual<N> log(const Dual<N>& a) { return Dual<N>(std::log(a.v), a.d / a.v); }
template <int N> Dual<N> abs(const Dual<N>& a) { return a.v < 0.0 ? -a : a; }
template <int N> Dual<N> pow(const Dual<N>& a, double p) {
  const double r = std::pow(a.v, p);
  return Dual<N>(r, a.d * (p * std::pow(a.v, p - 1.0)));
}
template <int N> bool isfinite(const Dual<N>& a) { return std::isfinite(a.v) && a.d.allFinite(); }

inline double value_of(double x) { return x; }
template <int N> double value_of(const Dual<N>& x) { return x.v; }

}  // namespace mtr

namespace Eigen {

template <int N>
struct NumTraits<mtr::Dual<N>> : NumTraits<double> {
  using Real = mtr::Dual<N>;
  using NonInteger = mtr::Dual<N>;
  using Nested = mtr::Dual<N>;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = N + 1,
    AddCost = N + 1,
    MulCost = 2 * N + 1
  };
};

template <int N, typename BinaryOp>
struct ScalarBinaryOpTraits<mtr::Dual<N>, double, BinaryOp> {
  using ReturnType = mtr::Dual<N>;
};
template <int N, typename BinaryOp>
struct ScalarBinaryOpTraits<double, mtr::Dual<N>, BinaryOp> {
  using ReturnType = mtr::Dual<N>;
};

}  // namespace Eigen
