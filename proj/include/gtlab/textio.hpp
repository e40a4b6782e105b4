#pragma once

#include <cstdio>
#include <istream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace gtlab::textio {

// %.17g: shortest form that round-trips a double exactly.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_row(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ' ';
    out += fmt17(v(i));
  }
  return out;
}

inline void expect_token(std::istream& in, const std::string& expected) {
  std::string tok;
  if (!(in >> tok) || tok != expected) {
    throw std::invalid_argument("malformed file: expected '" + expected +
                                "', got '" + tok + "'");
  }
}

inline int read_int(std::istream& in, const std::string& what) {
  int v;
  if (!(in >> v)) throw std::invalid_argument("malformed file: missing " + what);
  return v;
}

inline double read_double(std::istream& in, const std::string& what) {
  double v;
  if (!(in >> v)) throw std::invalid_argument("malformed file: missing " + what);
  return v;
}

inline Eigen::MatrixXd read_matrix(std::istream& in, int rows, int cols,
                                   const std::string& what) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = read_double(in, what);
  return m;
}

}  // namespace gtlab::textio
