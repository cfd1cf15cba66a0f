#include "gproc/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <functional>
#include <set>

namespace gproc {

namespace {

constexpr int kMaxAxisCandidates = 8;
constexpr double kClusterTolerance = 0.1;  // relative, for grouping difference vectors

Vec3 canonical_sign(const Vec3& d, double eps) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) > eps) return d[i] < 0.0 ? Vec3(-d) : d;
  }
  return d;
}

int dominant_axis(const Vec3& v) {
  int best = 0;
  for (int i = 1; i < 3; ++i) {
    if (std::abs(v[i]) > std::abs(v[best]) + 1e-12 * v.norm()) best = i;
  }
  return best;
}

struct DiffCluster {
  Vec3 sum = Vec3::Zero();
  int count = 0;
  Vec3 center() const { return sum / count; }
};

std::vector<Vec3> axis_candidates(const std::vector<Vec3>& pts, double pat, double eps) {
  std::vector<Vec3> diffs;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const Vec3 d = canonical_sign(pts[j] - pts[i], eps);
      if (d.norm() > eps) diffs.push_back(d);
    }
  }
  std::sort(diffs.begin(), diffs.end(), [](const Vec3& a, const Vec3& b) {
    const double na = a.norm(), nb = b.norm();
    if (na != nb) return na < nb;
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  const double rel = std::max(pat, kClusterTolerance);
  std::vector<DiffCluster> clusters;
  for (const Vec3& d : diffs) {
    auto it = std::find_if(clusters.begin(), clusters.end(), [&](const DiffCluster& c) {
      const Vec3 m = c.center();
      return (d - m).norm() <= rel * m.norm() + eps;
    });
    if (it == clusters.end()) {
      clusters.push_back({d, 1});
    } else {
      it->sum += d;
      ++it->count;
    }
  }
  std::stable_sort(clusters.begin(), clusters.end(), [](const DiffCluster& a, const DiffCluster& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.center().norm() < b.center().norm();
  });
  std::vector<Vec3> out;
  for (const auto& c : clusters) {
    if (static_cast<int>(out.size()) == kMaxAxisCandidates) break;
    out.push_back(canonical_sign(c.center(), eps));
  }
  return out;
}

bool independent(const std::vector<Vec3>& axes) {
  if (axes.size() == 1) return true;
  if (axes.size() == 2) {
    return axes[0].cross(axes[1]).norm() > 0.1 * axes[0].norm() * axes[1].norm();
  }
  Mat3 m;
  for (int k = 0; k < 3; ++k) m.col(k) = axes[k].normalized();
  return std::abs(m.determinant()) > 0.05;
}

struct Box {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};  // inclusive
};

/// Largest axis-aligned box of occupied cells; ties keep the lexicographically smallest corner.
Box largest_full_box(const std::vector<char>& occ, const std::array<int, 3>& ext) {
  const auto idx = [&](int a, int b, int c) { return (a * (ext[1] + 1) + b) * (ext[2] + 1) + c; };
  std::vector<int> pre(static_cast<std::size_t>((ext[0] + 1) * (ext[1] + 1) * (ext[2] + 1)), 0);
  for (int a = 0; a < ext[0]; ++a) {
    for (int b = 0; b < ext[1]; ++b) {
      for (int c = 0; c < ext[2]; ++c) {
        pre[idx(a + 1, b + 1, c + 1)] = occ[(a * ext[1] + b) * ext[2] + c] + pre[idx(a, b + 1, c + 1)] +
                                        pre[idx(a + 1, b, c + 1)] + pre[idx(a + 1, b + 1, c)] -
                                        pre[idx(a, b, c + 1)] - pre[idx(a, b + 1, c)] - pre[idx(a + 1, b, c)] +
                                        pre[idx(a, b, c)];
      }
    }
  }
  const auto sum = [&](int a0, int b0, int c0, int a1, int b1, int c1) {
    ++a1, ++b1, ++c1;
    return pre[idx(a1, b1, c1)] - pre[idx(a0, b1, c1)] - pre[idx(a1, b0, c1)] - pre[idx(a1, b1, c0)] +
           pre[idx(a0, b0, c1)] + pre[idx(a0, b1, c0)] + pre[idx(a1, b0, c0)] - pre[idx(a0, b0, c0)];
  };
  Box best;
  int bestVol = 0;
  for (int a0 = 0; a0 < ext[0]; ++a0) {
    for (int b0 = 0; b0 < ext[1]; ++b0) {
      for (int c0 = 0; c0 < ext[2]; ++c0) {
        if (!occ[(a0 * ext[1] + b0) * ext[2] + c0]) continue;
        for (int a1 = a0; a1 < ext[0]; ++a1) {
          if (sum(a0, b0, c0, a1, b0, c0) != a1 - a0 + 1) break;
          for (int b1 = b0; b1 < ext[1]; ++b1) {
            if (sum(a0, b0, c0, a1, b1, c0) != (a1 - a0 + 1) * (b1 - b0 + 1)) break;
            for (int c1 = c0; c1 < ext[2]; ++c1) {
              const int vol = (a1 - a0 + 1) * (b1 - b0 + 1) * (c1 - c0 + 1);
              if (sum(a0, b0, c0, a1, b1, c1) != vol) break;
              if (vol > bestVol) {
                bestVol = vol;
                best = {{a0, b0, c0}, {a1, b1, c1}};
              }
            }
          }
        }
      }
    }
  }
  return best;
}

struct TranslationFit {
  Vec3 origin = Vec3::Zero();
  std::vector<Vec3> axes;
  std::array<int, 3> counts{1, 1, 1};
  std::vector<int> cells;  // slot per cell, row-major
  double rms = 0.0;
  int coverage() const { return static_cast<int>(cells.size()); }
};

/// Least-squares origin and axes for p_i ~ o + sum_k n_ik axis_k. Axes whose
/// coordinates do not vary keep their input value.
void refit(const std::vector<Vec3>& pts, const std::vector<std::array<int, 3>>& coords, Vec3& origin,
           std::vector<Vec3>& axes) {
  const int m = static_cast<int>(pts.size());
  const int k = static_cast<int>(axes.size());
  std::vector<int> vary;
  for (int a = 0; a < k; ++a) {
    const auto [lo, hi] = std::minmax_element(coords.begin(), coords.end(),
                                              [a](const auto& x, const auto& y) { return x[a] < y[a]; });
    if ((*lo)[a] != (*hi)[a]) vary.push_back(a);
  }
  Eigen::MatrixXd X(m, 1 + static_cast<int>(vary.size()));
  Eigen::MatrixXd Y(m, 3);
  for (int i = 0; i < m; ++i) {
    X(i, 0) = 1.0;
    Vec3 rhs = pts[i];
    for (int a = 0; a < k; ++a) {
      const auto pos = std::find(vary.begin(), vary.end(), a);
      if (pos == vary.end()) rhs -= coords[i][a] * axes[a];
      else X(i, 1 + static_cast<int>(pos - vary.begin())) = coords[i][a];
    }
    Y.row(i) = rhs.transpose();
  }
  const Eigen::MatrixXd beta = X.completeOrthogonalDecomposition().solve(Y);
  origin = beta.row(0).transpose();
  for (std::size_t v = 0; v < vary.size(); ++v) axes[vary[v]] = beta.row(1 + static_cast<int>(v)).transpose();
}

std::optional<TranslationFit> try_axes(const std::vector<Vec3>& pts, std::vector<Vec3> axes, double pat, double eps) {
  const int n = static_cast<int>(pts.size());
  const int k = static_cast<int>(axes.size());
  Eigen::MatrixXd B(3, k);
  for (int a = 0; a < k; ++a) B.col(a) = axes[a];
  Eigen::MatrixXd pinv = B.completeOrthogonalDecomposition().pseudoInverse();
  double minStep = axes[0].norm();
  for (const auto& a : axes) minStep = std::min(minStep, a.norm());
  const double tol = pat * minStep + eps;

  Vec3 origin = pts[0];
  std::vector<std::array<int, 3>> coords(n);
  std::vector<double> resid(n);
  const auto assign = [&]() {
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd c = pinv * (pts[i] - origin);
      Vec3 pred = origin;
      coords[i] = {0, 0, 0};
      for (int a = 0; a < k; ++a) {
        coords[i][a] = static_cast<int>(std::lround(c[a]));
        pred += coords[i][a] * axes[a];
      }
      resid[i] = (pts[i] - pred).norm();
    }
  };
  assign();
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<Vec3> inPts;
    std::vector<std::array<int, 3>> inCoords;
    for (int i = 0; i < n; ++i) {
      if (resid[i] <= tol) {
        inPts.push_back(pts[i]);
        inCoords.push_back(coords[i]);
      }
    }
    if (inPts.size() < 2) return std::nullopt;
    refit(inPts, inCoords, origin, axes);
    for (int a = 0; a < k; ++a) B.col(a) = axes[a];
    pinv = B.completeOrthogonalDecomposition().pseudoInverse();
    assign();
  }

  std::array<int, 3> lo{0, 0, 0}, hi{0, 0, 0};
  bool any = false;
  for (int i = 0; i < n; ++i) {
    if (resid[i] > tol) continue;
    for (int a = 0; a < 3; ++a) {
      lo[a] = any ? std::min(lo[a], coords[i][a]) : coords[i][a];
      hi[a] = any ? std::max(hi[a], coords[i][a]) : coords[i][a];
    }
    any = true;
  }
  if (!any) return std::nullopt;
  std::array<int, 3> ext{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  const long long cellsTotal = 1LL * ext[0] * ext[1] * ext[2];
  if (cellsTotal > 8LL * n + 8) return std::nullopt;
  std::vector<int> slotAt(static_cast<std::size_t>(cellsTotal), -1);
  for (int i = 0; i < n; ++i) {
    if (resid[i] > tol) continue;
    const int c = ((coords[i][0] - lo[0]) * ext[1] + (coords[i][1] - lo[1])) * ext[2] + (coords[i][2] - lo[2]);
    if (slotAt[c] < 0 || resid[i] < resid[slotAt[c]]) slotAt[c] = i;
  }
  std::vector<char> occ(slotAt.size());
  for (std::size_t c = 0; c < slotAt.size(); ++c) occ[c] = slotAt[c] >= 0;
  const Box box = largest_full_box(occ, ext);

  TranslationFit fit;
  std::vector<Vec3> boxPts;
  std::vector<std::array<int, 3>> boxCoords;
  for (int a = box.lo[0]; a <= box.hi[0]; ++a) {
    for (int b = box.lo[1]; b <= box.hi[1]; ++b) {
      for (int c = box.lo[2]; c <= box.hi[2]; ++c) {
        const int s = slotAt[(a * ext[1] + b) * ext[2] + c];
        fit.cells.push_back(s);
        boxPts.push_back(pts[s]);
        boxCoords.push_back({a - box.lo[0], b - box.lo[1], c - box.lo[2]});
      }
    }
  }
  std::vector<Vec3> fitAxes = axes;
  Vec3 o = boxPts[0];
  if (boxPts.size() > 1) refit(boxPts, boxCoords, o, fitAxes);
  double sq = 0.0;
  for (std::size_t i = 0; i < boxPts.size(); ++i) {
    Vec3 pred = o;
    for (int a = 0; a < k; ++a) pred += boxCoords[i][a] * fitAxes[a];
    sq += (boxPts[i] - pred).squaredNorm();
  }
  fit.rms = std::sqrt(sq / static_cast<double>(boxPts.size()));
  fit.origin = o;
  fit.axes.resize(3, Vec3::Zero());
  fit.counts = {1, 1, 1};
  for (int a = 0; a < k; ++a) {
    fit.axes[a] = fitAxes[a];
    fit.counts[a] = box.hi[a] - box.lo[a] + 1;
  }
  return fit;
}

int effective_axes(const TranslationFit& f) {
  return static_cast<int>((f.counts[0] > 1) + (f.counts[1] > 1) + (f.counts[2] > 1));
}

double step_sum(const TranslationFit& f) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (f.counts[a] > 1) s += f.axes[a].norm();
  }
  return s;
}

bool better(const TranslationFit& a, const TranslationFit& b) {
  if (a.coverage() != b.coverage()) return a.coverage() > b.coverage();
  if (effective_axes(a) != effective_axes(b)) return effective_axes(a) < effective_axes(b);
  if (std::abs(a.rms - b.rms) > 1e-12) return a.rms < b.rms;
  return step_sum(a) < step_sum(b) - 1e-12;
}

/// Drops unit axes, orders the rest by dominant world component and flips them
/// to point along it, reindexing the cells accordingly.
void normalize_axes(TranslationFit& fit) {
  struct Ax {
    Vec3 step;
    int count;
    int old;
  };
  std::vector<Ax> used;
  for (int a = 0; a < 3; ++a) {
    if (fit.counts[a] > 1) used.push_back({fit.axes[a], fit.counts[a], a});
  }
  std::stable_sort(used.begin(), used.end(), [](const Ax& x, const Ax& y) {
    const int dx = dominant_axis(x.step), dy = dominant_axis(y.step);
    if (dx != dy) return dx < dy;
    return x.step.norm() < y.step.norm();
  });
  std::array<bool, 3> flip{false, false, false};
  for (auto& ax : used) {
    if (ax.step[dominant_axis(ax.step)] < 0.0) {
      fit.origin += (ax.count - 1) * ax.step;
      ax.step = -ax.step;
      flip[ax.old] = true;
    }
  }
  const auto oldCounts = fit.counts;
  std::array<int, 3> newCounts{1, 1, 1};
  std::vector<Vec3> newAxes(3, Vec3::Zero());
  std::array<int, 3> srcAxis{-1, -1, -1};
  for (std::size_t i = 0; i < used.size(); ++i) {
    newCounts[i] = used[i].count;
    newAxes[i] = used[i].step;
    srcAxis[i] = used[i].old;
  }
  std::vector<int> cells(fit.cells.size());
  for (int a = 0; a < newCounts[0]; ++a) {
    for (int b = 0; b < newCounts[1]; ++b) {
      for (int c = 0; c < newCounts[2]; ++c) {
        std::array<int, 3> oldIdx{0, 0, 0};
        const int idx[3] = {a, b, c};
        for (int i = 0; i < 3; ++i) {
          if (srcAxis[i] < 0) continue;
          oldIdx[srcAxis[i]] = flip[srcAxis[i]] ? oldCounts[srcAxis[i]] - 1 - idx[i] : idx[i];
        }
        const int o = (oldIdx[0] * oldCounts[1] + oldIdx[1]) * oldCounts[2] + oldIdx[2];
        cells[(a * newCounts[1] + b) * newCounts[2] + c] = fit.cells[o];
      }
    }
  }
  fit.cells = std::move(cells);
  fit.counts = newCounts;
  fit.axes = newAxes;
}

TranslationFit fit_translation(const std::vector<Vec3>& pts, double pat, double eps) {
  TranslationFit best;
  best.axes.assign(3, Vec3::Zero());
  best.origin = pts.front();
  best.cells = {0};
  if (pts.size() < 2) return best;
  const auto cand = axis_candidates(pts, pat, eps);
  const int m = static_cast<int>(cand.size());
  const auto consider = [&](const std::vector<Vec3>& axes) {
    if (!independent(axes)) return;
    if (auto f = try_axes(pts, axes, pat, eps); f && better(*f, best)) best = std::move(*f);
  };
  for (int i = 0; i < m; ++i) {
    consider({cand[i]});
    for (int j = i + 1; j < m; ++j) {
      consider({cand[i], cand[j]});
      for (int l = j + 1; l < m; ++l) consider({cand[i], cand[j], cand[l]});
    }
  }
  normalize_axes(best);
  return best;
}

Mat3 average_rotation(const std::vector<Mat3>& rs) {
  Eigen::Quaterniond ref(rs.front());
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  for (const auto& r : rs) {
    Eigen::Quaterniond q(r);
    if (q.coeffs().dot(ref.coeffs()) < 0.0) q.coeffs() = -q.coeffs();
    acc += q.coeffs();
  }
  Eigen::Quaterniond q;
  q.coeffs() = acc.normalized();
  return q.toRotationMatrix();
}

struct RotationFit {
  RigidTransform origin;
  Vec3 axis = Vec3::UnitZ();
  Vec3 center = Vec3::Zero();
  double step = 0.0;  // radians
  Vec3 shift = Vec3::Zero();
  std::vector<int> cells;
  int coverage() const { return static_cast<int>(cells.size()); }
};

RigidTransform rot_about(const Vec3& center, const Vec3& axis, double angle) {
  return RigidTransform::translate(center) * RigidTransform::rotate(axis, angle) * RigidTransform::translate(-center);
}

std::optional<RotationFit> fit_rotation(const std::vector<RigidTransform>& slots, double pat, double eps) {
  const int n = static_cast<int>(slots.size());
  const Mat3 r0t = slots[0].rotation.transpose();
  int widest = 0;
  double widestAngle = 0.0;
  std::vector<Eigen::AngleAxisd> rel(n);
  for (int i = 0; i < n; ++i) {
    rel[i] = Eigen::AngleAxisd(Mat3(slots[i].rotation * r0t));
    if (rel[i].angle() > widestAngle) {
      widestAngle = rel[i].angle();
      widest = i;
    }
  }
  if (widestAngle < 1e-9) return std::nullopt;
  Vec3 axis = rel[widest].axis().normalized();
  axis = canonical_sign(axis, 1e-9);
  std::vector<double> phi(n, 0.0);
  std::vector<int> onAxis;
  for (int i = 0; i < n; ++i) {
    phi[i] = rel[i].angle() < 1e-12 ? 0.0 : rel[i].angle() * (rel[i].axis().dot(axis) < 0.0 ? -1.0 : 1.0);
    const Mat3 err = Eigen::AngleAxisd(phi[i], axis).toRotationMatrix().transpose() * slots[i].rotation * r0t;
    if (Eigen::AngleAxisd(err).angle() <= 0.05 + pat * std::abs(phi[i])) onAxis.push_back(i);
  }
  if (onAxis.size() < 2) return std::nullopt;

  std::vector<double> diffs;
  for (std::size_t i = 0; i < onAxis.size(); ++i) {
    for (std::size_t j = i + 1; j < onAxis.size(); ++j) {
      const double d = std::abs(phi[onAxis[j]] - phi[onAxis[i]]);
      if (d > 1e-6) diffs.push_back(d);
    }
  }
  std::sort(diffs.begin(), diffs.end());
  std::vector<std::pair<double, int>> steps;  // (mean, count)
  std::vector<double> sums;
  for (double d : diffs) {
    bool placed = false;
    for (std::size_t s = 0; s < steps.size(); ++s) {
      if (std::abs(d - steps[s].first) <= kClusterTolerance * steps[s].first) {
        sums[s] += d;
        ++steps[s].second;
        steps[s].first = sums[s] / steps[s].second;
        placed = true;
        break;
      }
    }
    if (!placed) {
      steps.push_back({d, 1});
      sums.push_back(d);
    }
  }
  std::stable_sort(steps.begin(), steps.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (steps.size() > static_cast<std::size_t>(kMaxAxisCandidates)) steps.resize(kMaxAxisCandidates);

  std::optional<RotationFit> best;
  for (const auto& [step, count] : steps) {
    std::map<int, int> at;  // coordinate -> slot
    for (int i : onAxis) {
      const int c = static_cast<int>(std::lround(phi[i] / step));
      if (std::abs(phi[i] - c * step) > pat * step + 1e-9) continue;
      const auto it = at.find(c);
      if (it == at.end() || std::abs(phi[i] - c * step) < std::abs(phi[it->second] - c * step)) at[c] = i;
    }
    // Longest run of consecutive coordinates; earliest on ties.
    int runStart = 0, runLen = 0;
    for (auto it = at.begin(); it != at.end();) {
      const int start = it->first;
      int len = 0;
      while (it != at.end() && it->first == start + len) {
        ++len;
        ++it;
      }
      if (len > runLen) {
        runLen = len;
        runStart = start;
      }
    }
    if (runLen < 2) continue;
    std::vector<int> run;
    for (int c = 0; c < runLen; ++c) run.push_back(at[runStart + c]);

    std::vector<Mat3> aligned;
    for (int c = 0; c < runLen; ++c) {
      aligned.push_back(Eigen::AngleAxisd(-c * step, axis).toRotationMatrix() * slots[run[c]].rotation);
    }
    const Mat3 rO = average_rotation(aligned);
    // Unknowns: t_O (3), centre (3), helical shift along the axis (1).
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3 * runLen + 1, 7);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(3 * runLen + 1);
    for (int c = 0; c < runLen; ++c) {
      const Mat3 rot = Eigen::AngleAxisd(c * step, axis).toRotationMatrix();
      A.block<3, 3>(3 * c, 0) = rot;
      A.block<3, 3>(3 * c, 3) = Mat3::Identity() - rot;
      A.block<3, 1>(3 * c, 6) = c * axis;
      b.segment<3>(3 * c) = slots[run[c]].translation;
    }
    A.block<1, 3>(3 * runLen, 3) = axis.transpose();
    const Eigen::VectorXd x = A.completeOrthogonalDecomposition().solve(b);
    RotationFit fit;
    fit.origin = {rO, x.segment<3>(0)};
    fit.axis = axis;
    fit.center = x.segment<3>(3);
    fit.step = step;
    fit.shift = std::abs(x[6]) > eps ? Vec3(x[6] * axis) : Vec3::Zero();
    const auto place = [&](int c) {
      return RigidTransform::translate(c * fit.shift) * rot_about(fit.center, axis, c * step) * fit.origin;
    };
    const double chord = (place(1).translation - place(0).translation).norm();
    bool ok = true;
    for (int c = 0; c < runLen && ok; ++c) {
      const RigidTransform p = place(c);
      const double dt = (p.translation - slots[run[c]].translation).norm();
      const double dr = Eigen::AngleAxisd(Mat3(p.rotation.transpose() * slots[run[c]].rotation)).angle();
      ok = dt <= pat * chord + eps && dr <= pat * step + 1e-9;
    }
    if (!ok) continue;
    fit.cells = run;
    if (!best || fit.coverage() > best->coverage()) best = std::move(fit);
  }
  return best;
}

}  // namespace

RigidTransform average_transforms(const std::vector<RigidTransform>& xs) {
  if (xs.empty()) throw Error("average of no transforms");
  Vec3 t = Vec3::Zero();
  std::vector<Mat3> rs;
  for (const auto& x : xs) {
    t += x.translation;
    rs.push_back(x.rotation);
  }
  return {average_rotation(rs), t / static_cast<double>(xs.size())};
}

LatticeFit fit_lattice(const std::vector<RigidTransform>& placements, double pat, double ins, double diagonal,
                       const Vec3& anchor) {
  if (placements.empty()) throw Error("lattice fit of no placements");
  std::vector<RigidTransform> slots;
  for (const auto& p : placements) slots.push_back(p * RigidTransform::translate(anchor));
  const double eps = 1e-9 * std::max(diagonal, 1e-12);
  const int n = static_cast<int>(slots.size());
  const double rotTol = ins * std::numbers::pi + 1e-9;

  // Groups of placements sharing a rotation (leader clustering).
  std::vector<std::vector<int>> groups;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (auto& g : groups) {
      if (Eigen::AngleAxisd(Mat3(slots[g.front()].rotation.transpose() * slots[i].rotation)).angle() <= rotTol) {
        g.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) groups.push_back({i});
  }
  const auto largest = std::max_element(groups.begin(), groups.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
  std::vector<Vec3> pts;
  for (int i : *largest) pts.push_back(slots[i].translation);
  TranslationFit tf = fit_translation(pts, pat, eps);
  for (int& c : tf.cells) c = (*largest)[c];

  std::optional<RotationFit> rf;
  if (groups.size() > 1) rf = fit_rotation(slots, pat, eps);

  LatticeFit out;
  std::set<int> used;
  if (rf && rf->coverage() > tf.coverage()) {
    out.origin = rf->origin;
    out.repetition = {rf->coverage(), 1, 1};
    out.spacing[0] = rf->shift;
    out.rotation = RotationPattern{rf->axis, rf->center, rf->step * 180.0 / std::numbers::pi};
    out.cells = rf->cells;
  } else {
    std::vector<Mat3> rs;
    for (int c : tf.cells) rs.push_back(slots[c].rotation);
    out.origin = {average_rotation(rs), tf.origin};
    out.repetition = tf.counts;
    for (int a = 0; a < 3; ++a) out.spacing[a] = tf.axes[a];
    out.cells = tf.cells;
  }
  out.origin = out.origin * RigidTransform::translate(-anchor);
  used.insert(out.cells.begin(), out.cells.end());
  for (int i = 0; i < n; ++i) {
    if (!used.count(i)) out.leftovers.push_back(i);
  }
  return out;
}

std::vector<RigidTransform> Rule::expand() const {
  std::vector<RigidTransform> out;
  out.reserve(static_cast<std::size_t>(expanded_count()));
  RigidTransform o = origin;
  o.rotation = orthonormalize(o.rotation);
  for (int a = 0; a < repetition[0]; ++a) {
    RigidTransform base = o;
    if (rotation && rotation->stepDeg != 0.0) {
      base = rot_about(rotation->center, rotation->axis, a * rotation->stepDeg * std::numbers::pi / 180.0) * o;
    }
    for (int b = 0; b < repetition[1]; ++b) {
      for (int c = 0; c < repetition[2]; ++c) {
        const Vec3 shift = a * spacing[0] + b * spacing[1] + c * spacing[2];
        out.push_back(RigidTransform::translate(shift) * base);
      }
    }
  }
  for (const auto& s : splitOps) {
    out.push_back({orthonormalize(s.rotation), s.translation});
  }
  return out;
}

std::map<int, std::string> symbol_ids(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps) {
  std::vector<const RepresentativeInstance*> sorted;
  for (const auto& r : reps) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->label < b->label; });
  std::map<int, std::string> ids;
  int t = 0, n = 0;
  for (const auto* r : sorted) {
    if (tree.node(r->medoid).synthetic) ids[r->label] = "root";
    else if (r->terminal) ids[r->label] = "t" + std::to_string(t++);
    else ids[r->label] = "n" + std::to_string(n++);
  }
  return ids;
}

namespace {

/// Largest corner displacement of the produced symbol's local box.
double placement_deviation(const RigidTransform& a, const RigidTransform& b, const Vec3& size) {
  double worst = 0.0;
  for (const Vec3& c : BoundingBox::of_corners(Vec3::Zero(), size).corners()) {
    worst = std::max(worst, (a.apply(c) - b.apply(c)).norm());
  }
  return worst;
}

void snap(double& v, double eps) {
  if (std::abs(v) <= eps) v = 0.0;
}

void snap(Vec3& v, double eps) {
  for (int i = 0; i < 3; ++i) snap(v[i], eps);
}

/// Clears floating-point noise so exported values read cleanly.
void snap(RigidTransform& t, double eps) {
  for (int i = 0; i < 9; ++i) snap(t.rotation.data()[i], 1e-12);
  snap(t.translation, eps);
}

double extent_along(const Mat3& rotation, const Vec3& size, const Vec3& dir) {
  double e = 0.0;
  for (int i = 0; i < 3; ++i) e += std::abs(rotation.col(i).dot(dir)) * size[i];
  return e;
}

}  // namespace

std::vector<RuleSite> rule_sites(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps) {
  std::map<int, const RepresentativeInstance*> byLabel;
  for (const auto& r : reps) byLabel[r.label] = &r;
  std::vector<RuleSite> sites;
  for (const auto& [label, rep] : byLabel) {
    if (rep->terminal) continue;
    std::vector<int> parents{rep->medoid};
    for (int m : rep->members) {
      if (m != rep->medoid) parents.push_back(m);
    }
    std::vector<int> childLabels;
    for (int p : parents) {
      for (int c : tree.node(p).children) {
        const int l = tree.node(c).label;
        if (std::find(childLabels.begin(), childLabels.end(), l) == childLabels.end()) childLabels.push_back(l);
      }
    }
    for (int x : childLabels) {
      RuleSite site;
      site.lhsLabel = label;
      site.childLabel = x;
      for (int p : parents) {
        int n = 0;
        for (int c : tree.node(p).children) n += tree.node(c).label == x;
        if (n == 0) continue;
        if (site.reference < 0) {
          site.reference = p;
          site.slotCount = n;
        }
        site.parents.push_back(p);
      }
      sites.push_back(std::move(site));
    }
  }
  return sites;
}

GrammarValues estimate_values(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps) {
  GrammarValues v;
  std::map<int, bool> synthetic;
  for (const auto& r : reps) {
    synthetic[r.label] = tree.node(r.medoid).synthetic;
    if (r.terminal) v.alp += 1.0;
    else if (!synthetic[r.label]) v.non += 1.0;
  }
  const auto sites = rule_sites(tree, reps);
  double total = 0.0;
  std::map<int, std::vector<const RuleSite*>> byLhs;
  for (const auto& s : sites) {
    total += s.slotCount;
    byLhs[s.lhsLabel].push_back(&s);
  }
  v.fan = sites.empty() ? 0.0 : total / static_cast<double>(sites.size());
  std::map<int, double> memo;
  const std::function<double(int)> count = [&](int label) -> double {
    if (const auto it = memo.find(label); it != memo.end()) return it->second;
    double c = synthetic[label] ? 0.0 : 1.0;
    for (const RuleSite* s : byLhs[label]) c += s->slotCount * count(s->childLabel);
    return memo[label] = c;
  };
  v.rep = count(tree.node(tree.root).label);
  return v;
}

std::vector<Rule> extract_patterns(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps,
                                   const PatternParams& params) {
  const double D = tree.diagonal;
  std::vector<Rule> rules;
  for (const RuleSite& site : rule_sites(tree, reps)) {
    const int label = site.lhsLabel;
    const int x = site.childLabel;
    const auto& parents = site.parents;
    const int ref = site.reference;
    const auto kids = [&](int p) {
      std::vector<int> out;
      for (int c : tree.node(p).children) {
        if (tree.node(c).label == x) out.push_back(c);
      }
      return out;
    };
    const auto refKids = kids(ref);
    std::vector<std::vector<RigidTransform>> slotMembers(refKids.size());
    for (std::size_t k = 0; k < refKids.size(); ++k) slotMembers[k].push_back(tree.node(refKids[k]).edge);
    std::vector<std::pair<int, RigidTransform>> unmatched;  // (parent, edge)
    for (int p : parents) {
      if (p == ref) continue;
      const auto pk = kids(p);
      struct Pair {
        double d;
        int slot, child;
      };
      std::vector<Pair> pairs;
      for (std::size_t k = 0; k < refKids.size(); ++k) {
        for (std::size_t c = 0; c < pk.size(); ++c) {
          pairs.push_back({transform_distance(tree.node(refKids[k]).edge, tree.node(pk[c]).edge, D),
                           static_cast<int>(k), static_cast<int>(c)});
        }
      }
      std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.d < b.d; });
      std::vector<char> slotUsed(refKids.size(), 0), childUsed(pk.size(), 0);
      for (const auto& pr : pairs) {
        if (pr.d > params.ins || slotUsed[pr.slot] || childUsed[pr.child]) continue;
        slotUsed[pr.slot] = childUsed[pr.child] = 1;
        slotMembers[pr.slot].push_back(tree.node(pk[pr.child]).edge);
      }
      for (std::size_t c = 0; c < pk.size(); ++c) {
        if (!childUsed[c]) unmatched.push_back({p, tree.node(pk[c]).edge});
      }
    }
    std::vector<RigidTransform> slots;
    for (const auto& ms : slotMembers) slots.push_back(average_transforms(ms));
    const Vec3 size = tree.node(refKids.front()).localSize;
    const LatticeFit fit = fit_lattice(slots, params.pat, params.ins, D, 0.5 * size);

    Rule rule;
    rule.lhs = std::to_string(label);
    rule.produces = std::to_string(x);
    rule.origin = fit.origin;
    rule.repetition = fit.repetition;
    rule.spacing = fit.spacing;
    rule.rotation = fit.rotation;
    for (int l : fit.leftovers) rule.splitOps.push_back(slots[l]);

    for (int a = 0; a < 3; ++a) {
      const double len = rule.spacing[a].norm();
      if (len > 0.0 && !(a == 0 && rule.rotation)) {
        rule.gap[a] = len - extent_along(rule.origin.rotation, size, rule.spacing[a] / len);
      }
    }
    const auto placed = rule.expand();
    std::vector<int> slotPlace(slots.size(), -1);
    for (std::size_t c = 0; c < fit.cells.size(); ++c) slotPlace[fit.cells[c]] = static_cast<int>(c);
    for (std::size_t l = 0; l < fit.leftovers.size(); ++l) {
      slotPlace[fit.leftovers[l]] = static_cast<int>(fit.cells.size() + l);
    }
    for (std::size_t k = 0; k < slots.size(); ++k) {
      for (const auto& m : slotMembers[k]) {
        rule.residual = std::max(rule.residual, placement_deviation(m, placed[slotPlace[k]], size));
      }
    }
    for (const auto& [p, edge] : unmatched) {
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& pl : placed) nearest = std::min(nearest, placement_deviation(edge, pl, size));
      rule.residual = std::max(rule.residual, nearest);
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

SplitGrammar export_grammar(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps,
                            std::vector<Rule> rules, const Model& model, const ComponentSet& set) {
  const auto ids = symbol_ids(tree, reps);
  SplitGrammar g;
  g.meta.dataType = model.type();
  g.meta.axiomFrame = tree.node(tree.root).frame;
  snap(g.meta.axiomFrame, 1e-9 * tree.diagonal);
  g.axiom = ids.at(tree.node(tree.root).label);

  std::vector<const RepresentativeInstance*> sorted;
  for (const auto& r : reps) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->label < b->label; });
  for (const auto* r : sorted) {
    const TreeNode& m = tree.node(r->medoid);
    GrammarSymbol s;
    s.id = ids.at(r->label);
    s.label = r->label;
    s.terminal = r->terminal;
    s.synthetic = m.synthetic;
    s.size = m.localSize;
    if (!m.synthetic) {
      const RigidTransform toLocal = m.frame.inverse();
      const auto& elems = set.components.at(m.component).elements;
      if (model.is_mesh()) {
        std::vector<Triangle> tris;
        std::map<int, int> vmap;
        for (int e : elems) {
          Triangle t = model.triangles()[e];
          for (int k = 0; k < 3; ++k) {
            t.v[k] = toLocal.apply(t.v[k]);
            if (t.vid[k] >= 0) t.vid[k] = vmap.try_emplace(t.vid[k], static_cast<int>(vmap.size())).first->second;
          }
          tris.push_back(t);
        }
        s.geometry = std::make_shared<const Model>(Model::mesh(std::move(tris)));
      } else {
        std::vector<Point> pts;
        for (int e : elems) {
          Point p = model.points()[e];
          p.p = toLocal.apply(p.p);
          if (p.normal) p.normal = toLocal.apply_vector(*p.normal);
          pts.push_back(p);
        }
        s.geometry = std::make_shared<const Model>(Model::cloud(std::move(pts)));
      }
    }
    (s.terminal ? g.terminals : g.nonterminals).push_back(std::move(s));
  }

  const double eps = 1e-9 * tree.diagonal;
  int next = 0;
  for (auto& r : rules) {
    snap(r.origin, eps);
    for (auto& sp : r.spacing) snap(sp, eps);
    for (auto& gp : r.gap) snap(gp, eps);
    for (auto& op : r.splitOps) snap(op, eps);
    if (r.rotation) snap(r.rotation->center, eps);
    snap(r.residual, eps);
    r.id = "r" + std::to_string(next++);
    r.lhs = ids.at(std::stoi(r.lhs));
    r.produces = ids.at(std::stoi(r.produces));
    g.meta.residual = std::max(g.meta.residual, r.residual);
  }
  g.rules = std::move(rules);

  // Every placed node must be produced by a rule of its parent's symbol.
  std::set<std::pair<std::string, std::string>> produced;
  for (const auto& r : g.rules) produced.insert({r.lhs, r.produces});
  for (int i : tree.bfs()) {
    const TreeNode& nd = tree.node(i);
    if (nd.parent < 0) continue;
    if (!produced.count({ids.at(tree.node(nd.parent).label), ids.at(nd.label)})) {
      throw Error("internal consistency: node " + std::to_string(i) + " is not covered by any rule");
    }
  }
  g.check_well_formed();
  g.meta.gamma = evaluate(g);
  return g;
}

}  // namespace gproc
