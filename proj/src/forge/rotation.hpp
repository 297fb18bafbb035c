#pragma once

#include <array>
#include <string>
#include <vector>

#include "forge/rng.hpp"

namespace forge {

// Representation conventions, fixed across the codebase and recorded in
// modality.json rotation_type tags:
//   quaternion   (w,x,y,z), unit norm, w >= 0 after every conversion
//   euler_xyz    (rx,ry,rz) radians, R = Rz(rz) * Ry(ry) * Rx(rx)
//   axis_angle   rotation vector, angle * unit axis, radians
//   rotation_6d  first two COLUMNS of R: (r00,r10,r20, r01,r11,r21)
//   matrix       row-major 3x3, orthonormal, det +1
enum class RotKind { quaternion, euler_xyz, axis_angle, rotation_6d, matrix };

struct Rotation {
  RotKind kind;
  std::vector<double> data;  // 4 / 3 / 3 / 6 / 9 entries
};

RotKind rot_kind_from_string(const std::string& name);
const char* rot_kind_name(RotKind kind);
int rot_kind_width(RotKind kind);

Rotation make_rotation(RotKind kind, std::vector<double> data);
Rotation identity_rotation(RotKind kind);

// Same rotation, different coordinates. 6D passes through Gram-Schmidt; a
// (near-)dependent column pair below condition 1e-8 is refused.
Rotation convert(const Rotation& r, RotKind target);

// Angle of a * b^-1, computed through quaternions so values far below the
// trace formula's 1e-8 resolution floor remain measurable.
double rotation_angle_between(const Rotation& a, const Rotation& b);

// Haar-uniform via four normal deviates.
Rotation random_rotation(Rng& rng);
// Small rotation of exactly the given angle about a random axis.
Rotation random_rotation_with_angle(Rng& rng, double angle);

// Orthonormality / determinant diagnostics for a matrix-kind rotation.
double matrix_orthonormality_error(const Rotation& m);
double matrix_det(const Rotation& m);

}  // namespace forge
