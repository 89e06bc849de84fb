#pragma once

#include <Eigen/Dense>

#include "pcsi/channel_model.hpp"

namespace fixture {

inline pcsi::ScalarDistribution two_point(int a, int b, double pa = 0.5) {
  return pcsi::ScalarDistribution(Eigen::Vector2i(a, b), Eigen::Vector2d(pa, 1.0 - pa));
}

inline pcsi::JointChannelDistribution joint(std::initializer_list<std::initializer_list<int>> rows,
                                           std::initializer_list<double> probs) {
  const auto n = static_cast<Eigen::Index>(rows.begin()->size());
  Eigen::MatrixXi s(static_cast<Eigen::Index>(rows.size()), n);
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (int v : row) s(r, c++) = v;
    ++r;
  }
  Eigen::VectorXd p(static_cast<Eigen::Index>(probs.size()));
  r = 0;
  for (double v : probs) p(r++) = v;
  return pcsi::JointChannelDistribution(s, p);
}

/// Two users, lambda = (0.4, 0.4), i.i.d. rates {0: 0.5, 2: 0.5}.
inline pcsi::JointChannelDistribution reference_channel() {
  return pcsi::JointChannelDistribution::product_form({two_point(0, 2), two_point(0, 2)});
}
inline Eigen::VectorXd reference_lambda() { return Eigen::Vector2d(0.4, 0.4); }

}  // namespace fixture
