#include "forge/rotation.hpp"

#include <cmath>

#include "forge/error.hpp"

namespace forge {

namespace {

using Mat3 = std::array<double, 9>;  // row major
using Quat = std::array<double, 4>;  // w, x, y, z

constexpr double kDegenerate = 1e-8;  // condition floor for 6D columns
constexpr double kTaylorTheta = 1e-6;

double dot3(const double* a, const double* b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

void cross3(const double* a, const double* b, double* out) {
  out[0] = a[1] * b[2] - a[2] * b[1];
  out[1] = a[2] * b[0] - a[0] * b[2];
  out[2] = a[0] * b[1] - a[1] * b[0];
}

Quat quat_normalize_positive(Quat q) {
  double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (n < kDegenerate)
    raise(FORGE_ERR_DEGENERATE_ROTATION, "quaternion norm " + std::to_string(n));
  double s = (q[0] < 0.0 ? -1.0 : 1.0) / n;
  return {q[0] * s, q[1] * s, q[2] * s, q[3] * s};
}

Mat3 quat_to_mat(const Quat& q) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
          2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
}

// Shepperd's branch selection keeps every component away from cancellation.
Quat mat_to_quat(const Mat3& m) {
  double t = m[0] + m[4] + m[8];
  Quat q;
  if (t > 0.0) {
    double s = std::sqrt(t + 1.0) * 2.0;
    q = {0.25 * s, (m[7] - m[5]) / s, (m[2] - m[6]) / s, (m[3] - m[1]) / s};
  } else if (m[0] > m[4] && m[0] > m[8]) {
    double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2.0;
    q = {(m[7] - m[5]) / s, 0.25 * s, (m[1] + m[3]) / s, (m[2] + m[6]) / s};
  } else if (m[4] > m[8]) {
    double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2.0;
    q = {(m[2] - m[6]) / s, (m[1] + m[3]) / s, 0.25 * s, (m[5] + m[7]) / s};
  } else {
    double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2.0;
    q = {(m[3] - m[1]) / s, (m[2] + m[6]) / s, (m[5] + m[7]) / s, 0.25 * s};
  }
  return quat_normalize_positive(q);
}

Mat3 euler_to_mat(const double* e) {
  double cx = std::cos(e[0]), sx = std::sin(e[0]);
  double cy = std::cos(e[1]), sy = std::sin(e[1]);
  double cz = std::cos(e[2]), sz = std::sin(e[2]);
  // Rz * Ry * Rx
  return {cz * cy, -sz * cx + cz * sy * sx, sz * sx + cz * sy * cx,
          sz * cy, cz * cx + sz * sy * sx, -cz * sx + sz * sy * cx,
          -sy, cy * sx, cy * cx};
}

std::vector<double> mat_to_euler(const Mat3& m) {
  double sy = -m[6];
  sy = std::max(-1.0, std::min(1.0, sy));
  double ry = std::asin(sy);
  double cy = std::cos(ry);
  double rx, rz;
  if (std::abs(cy) > 1e-9) {
    rx = std::atan2(m[7], m[8]);
    rz = std::atan2(m[3], m[0]);
  } else {
    // gimbal lock: split is not unique, push everything into rx
    rx = std::atan2(-m[5], m[4]);
    rz = 0.0;
  }
  return {rx, ry, rz};
}

Mat3 axis_angle_to_mat(const double* r) {
  double theta2 = dot3(r, r);
  double theta = std::sqrt(theta2);
  double s1, s2;  // sin(t)/t, (1-cos(t))/t^2
  if (theta < kTaylorTheta) {
    s1 = 1.0 - theta2 / 6.0;
    s2 = 0.5 - theta2 / 24.0;
  } else {
    s1 = std::sin(theta) / theta;
    s2 = (1.0 - std::cos(theta)) / theta2;
  }
  double x = r[0], y = r[1], z = r[2];
  // I + s1*K + s2*K^2 with K = [r]x
  return {1 - s2 * (y * y + z * z), -s1 * z + s2 * x * y, s1 * y + s2 * x * z,
          s1 * z + s2 * x * y, 1 - s2 * (x * x + z * z), -s1 * x + s2 * y * z,
          -s1 * y + s2 * x * z, s1 * x + s2 * y * z, 1 - s2 * (x * x + y * y)};
}

std::vector<double> quat_to_axis_angle(const Quat& q) {
  double m = std::sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  double theta = 2.0 * std::atan2(m, q[0]);
  double factor;
  if (m < 1e-12) {
    factor = 2.0 / q[0];  // w ~ 1 here, r ~ 2v
  } else {
    factor = theta / m;
  }
  return {q[1] * factor, q[2] * factor, q[3] * factor};
}

Mat3 sixd_to_mat(const double* d) {
  double a1[3] = {d[0], d[1], d[2]};
  double a2[3] = {d[3], d[4], d[5]};
  double n1 = std::sqrt(dot3(a1, a1));
  if (n1 < kDegenerate)
    raise(FORGE_ERR_DEGENERATE_ROTATION, "rotation_6d: first column near zero");
  double b1[3] = {a1[0] / n1, a1[1] / n1, a1[2] / n1};
  double proj = dot3(b1, a2);
  double u[3] = {a2[0] - proj * b1[0], a2[1] - proj * b1[1],
                 a2[2] - proj * b1[2]};
  double n2 = std::sqrt(dot3(u, u));
  if (n2 < kDegenerate)
    raise(FORGE_ERR_DEGENERATE_ROTATION,
          "rotation_6d: columns are (near-)parallel");
  double b2[3] = {u[0] / n2, u[1] / n2, u[2] / n2};
  double b3[3];
  cross3(b1, b2, b3);
  return {b1[0], b2[0], b3[0], b1[1], b2[1], b3[1], b1[2], b2[2], b3[2]};
}

Mat3 validate_matrix(const Mat3& m) {
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += m[3 * k + i] * m[3 * k + j];
      err = std::max(err, std::abs(d - (i == j ? 1.0 : 0.0)));
    }
  double det = m[0] * (m[4] * m[8] - m[5] * m[7]) -
               m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (err > 1e-6 || std::abs(det - 1.0) > 1e-6)
    raise(FORGE_ERR_DEGENERATE_ROTATION,
          "matrix is not a rotation: orthonormality error " +
              std::to_string(err) + ", det " + std::to_string(det));
  return m;
}

Mat3 to_mat(const Rotation& r) {
  const double* d = r.data.data();
  switch (r.kind) {
    case RotKind::quaternion:
      return quat_to_mat(quat_normalize_positive({d[0], d[1], d[2], d[3]}));
    case RotKind::euler_xyz:
      return euler_to_mat(d);
    case RotKind::axis_angle:
      return axis_angle_to_mat(d);
    case RotKind::rotation_6d:
      return sixd_to_mat(d);
    case RotKind::matrix:
      return validate_matrix(
          {d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8]});
  }
  raise(FORGE_ERR_INTERNAL, "unreachable rotation kind");
}

Rotation from_mat(const Mat3& m, RotKind target) {
  switch (target) {
    case RotKind::quaternion: {
      Quat q = mat_to_quat(m);
      return {target, {q[0], q[1], q[2], q[3]}};
    }
    case RotKind::euler_xyz:
      return {target, mat_to_euler(m)};
    case RotKind::axis_angle:
      return {target, quat_to_axis_angle(mat_to_quat(m))};
    case RotKind::rotation_6d:
      return {target, {m[0], m[3], m[6], m[1], m[4], m[7]}};
    case RotKind::matrix:
      return {target, {m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]}};
  }
  raise(FORGE_ERR_INTERNAL, "unreachable rotation kind");
}

}  // namespace

RotKind rot_kind_from_string(const std::string& name) {
  if (name == "quaternion") return RotKind::quaternion;
  if (name == "euler_xyz") return RotKind::euler_xyz;
  if (name == "axis_angle") return RotKind::axis_angle;
  if (name == "rotation_6d") return RotKind::rotation_6d;
  if (name == "matrix") return RotKind::matrix;
  raise(FORGE_ERR_UNKNOWN_ROTATION_TYPE, "rotation kind '" + name + "'");
}

const char* rot_kind_name(RotKind kind) {
  switch (kind) {
    case RotKind::quaternion: return "quaternion";
    case RotKind::euler_xyz: return "euler_xyz";
    case RotKind::axis_angle: return "axis_angle";
    case RotKind::rotation_6d: return "rotation_6d";
    case RotKind::matrix: return "matrix";
  }
  return "?";
}

int rot_kind_width(RotKind kind) {
  switch (kind) {
    case RotKind::quaternion: return 4;
    case RotKind::euler_xyz: return 3;
    case RotKind::axis_angle: return 3;
    case RotKind::rotation_6d: return 6;
    case RotKind::matrix: return 9;
  }
  return 0;
}

Rotation make_rotation(RotKind kind, std::vector<double> data) {
  if (static_cast<int>(data.size()) != rot_kind_width(kind))
    raise(FORGE_ERR_WIDTH_MISMATCH,
          std::string(rot_kind_name(kind)) + " needs " +
              std::to_string(rot_kind_width(kind)) + " entries, got " +
              std::to_string(data.size()));
  return {kind, std::move(data)};
}

Rotation identity_rotation(RotKind kind) {
  switch (kind) {
    case RotKind::quaternion: return {kind, {1, 0, 0, 0}};
    case RotKind::euler_xyz: return {kind, {0, 0, 0}};
    case RotKind::axis_angle: return {kind, {0, 0, 0}};
    case RotKind::rotation_6d: return {kind, {1, 0, 0, 0, 1, 0}};
    case RotKind::matrix: return {kind, {1, 0, 0, 0, 1, 0, 0, 0, 1}};
  }
  raise(FORGE_ERR_INTERNAL, "unreachable rotation kind");
}

Rotation convert(const Rotation& r, RotKind target) {
  if (static_cast<int>(r.data.size()) != rot_kind_width(r.kind))
    raise(FORGE_ERR_WIDTH_MISMATCH,
          std::string(rot_kind_name(r.kind)) + " carries " +
              std::to_string(r.data.size()) + " entries");
  return from_mat(to_mat(r), target);
}

double rotation_angle_between(const Rotation& a, const Rotation& b) {
  Quat qa = mat_to_quat(to_mat(a));
  Quat qb = mat_to_quat(to_mat(b));
  // qa * conj(qb)
  double w = qa[0] * qb[0] + qa[1] * qb[1] + qa[2] * qb[2] + qa[3] * qb[3];
  double x = -qa[0] * qb[1] + qa[1] * qb[0] - qa[2] * qb[3] + qa[3] * qb[2];
  double y = -qa[0] * qb[2] + qa[2] * qb[0] - qa[3] * qb[1] + qa[1] * qb[3];
  double z = -qa[0] * qb[3] + qa[3] * qb[0] - qa[1] * qb[2] + qa[2] * qb[1];
  double m = std::sqrt(x * x + y * y + z * z);
  return 2.0 * std::atan2(m, std::abs(w));
}

Rotation random_rotation(Rng& rng) {
  Quat q = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  q = quat_normalize_positive(q);
  return {RotKind::quaternion, {q[0], q[1], q[2], q[3]}};
}

Rotation random_rotation_with_angle(Rng& rng, double angle) {
  double a[3] = {rng.normal(), rng.normal(), rng.normal()};
  double n = std::sqrt(dot3(a, a));
  while (n < 1e-6) {
    a[0] = rng.normal();
    a[1] = rng.normal();
    a[2] = rng.normal();
    n = std::sqrt(dot3(a, a));
  }
  double h = angle / 2.0;
  double s = std::sin(h) / n;
  Quat q = {std::cos(h), a[0] * s, a[1] * s, a[2] * s};
  return {RotKind::quaternion, {q[0], q[1], q[2], q[3]}};
}

double matrix_orthonormality_error(const Rotation& r) {
  if (r.kind != RotKind::matrix)
    raise(FORGE_ERR_USAGE, "orthonormality check needs a matrix");
  const auto& m = r.data;
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += m[3 * k + i] * m[3 * k + j];
      err = std::max(err, std::abs(d - (i == j ? 1.0 : 0.0)));
    }
  return err;
}

double matrix_det(const Rotation& r) {
  if (r.kind != RotKind::matrix)
    raise(FORGE_ERR_USAGE, "determinant needs a matrix");
  const auto& m = r.data;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) -
         m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

}  // namespace forge
