#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace mtr {

template <class S> using Vec3T = Eigen::Matrix<S, 3, 1>;
template <class S> using Vec6T = Eigen::Matrix<S, 6, 1>;

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

// State ordering is (q1, q2, q3, q1dot, q2dot, q3dot) in the Hill frame, km and km/s.
using RelativeState = Vec6;
// Thrust acceleration in km/s^2.
using ControlInput = Vec3;

enum class ErrorKind {
  InvalidInput,
  Domain,
  Config,
  Divergence,
  AssumptionViolation,
  EnvelopeDiverged,
  InfeasibleRecovery,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step)
      : Error(ErrorKind::Divergence, what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class EnvelopeDivergedError : public Error {
 public:
  EnvelopeDivergedError(double blow_up_time)
      : Error(ErrorKind::EnvelopeDiverged,
              "envelope diverges at t = " + std::to_string(blow_up_time)),
        blow_up_(blow_up_time) {}
  double blow_up_time() const { return blow_up_; }

 private:
  double blow_up_;
};

class AssumptionViolation : public Error {
 public:
  AssumptionViolation(const std::string& what, double t)
      : Error(ErrorKind::AssumptionViolation, what + " at t = " + std::to_string(t)), t_(t) {}
  double time() const { return t_; }

 private:
  double t_;
};

}  // namespace mtr
