#include "afcl/projection.hpp"

#include <stdexcept>

namespace afcl {

bool projector_ingest(ProjectorState& proj, const Eigen::VectorXd& x) {
  if (x.size() != proj.U.rows())
    throw std::invalid_argument("projector_ingest: dimension mismatch");
  const double xn = x.norm();
  if (xn == 0.0) return false;
  Eigen::VectorXd v = proj.apply(x);
  if (v.norm() / xn < kDependenceTol) return false;
  v = proj.apply(v);  // second pass scrubs the first pass's rounding
  v /= v.norm();
  const Eigen::Index r = proj.U.cols();
  proj.U.conservativeResize(Eigen::NoChange, r + 1);
  proj.U.col(r) = v;
  return true;
}

}  // namespace afcl
