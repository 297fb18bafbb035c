#pragma once

#include <string>
#include <vector>

#include "forge/dataset.hpp"
#include "forge/modality.hpp"

namespace forge {

// Affine map per dimension from [min,max] onto [-1,1]; a dimension with
// min == max maps to 0 and inverts back to that constant.
std::vector<double> normalize_vec(const std::vector<double>& x,
                                  const std::vector<double>& mn,
                                  const std::vector<double>& mx);
std::vector<double> denormalize_vec(const std::vector<double>& x,
                                    const std::vector<double>& mn,
                                    const std::vector<double>& mx);

// Same, but dimensions belonging to fields tagged normalization=none pass
// through untouched.
std::vector<double> normalize_fields(const std::vector<double>& x,
                                     const std::vector<FieldSpec>& fields,
                                     const std::vector<double>& mn,
                                     const std::vector<double>& mx);
std::vector<double> denormalize_fields(const std::vector<double>& x,
                                       const std::vector<FieldSpec>& fields,
                                       const std::vector<double>& mn,
                                       const std::vector<double>& mx);

// Field roles inferred from names: substrings rot / pos / grip classify the
// block, left / right pick the arm. Anything else refuses to reorder.
enum class FieldRole { rotation, position, gripper };
FieldRole classify_field(const std::string& name);
int field_arm(const std::string& name);  // 0 = left or only arm, 1 = right

struct Reordering {
  std::vector<FieldSpec> fields;  // canonical order, ranges recomputed
  std::vector<int> perm;          // out[i] = in[perm[i]]
  std::vector<int> inv;           // in[j] = out[inv[j]]
};

// Canonical order: per arm [rotation, position, gripper], left arm first.
Reordering canonical_reordering(const std::vector<FieldSpec>& fields);
std::vector<double> apply_perm(const std::vector<double>& x,
                               const std::vector<int>& perm);

// Rewrites a dataset: fields in canonical order, rotation states as
// rotation_6d, rotation actions as axis-angle, fresh stats at the output.
void standardize_dataset(const std::string& root, const std::string& out_root);

}  // namespace forge
