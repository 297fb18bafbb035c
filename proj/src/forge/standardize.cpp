#include "forge/standardize.hpp"

#include <algorithm>
#include <cctype>

#include "forge/error.hpp"
#include "forge/rotation.hpp"

namespace forge {

namespace {

void check_dims(const std::vector<double>& x, const std::vector<double>& mn,
                const std::vector<double>& mx) {
  if (x.size() != mn.size() || x.size() != mx.size())
    raise(FORGE_ERR_DIM_MISMATCH,
          "normalize: vector of " + std::to_string(x.size()) +
              " dims against stats of " + std::to_string(mn.size()) + "/" +
              std::to_string(mx.size()));
}

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

std::vector<double> normalize_vec(const std::vector<double>& x,
                                  const std::vector<double>& mn,
                                  const std::vector<double>& mx) {
  check_dims(x, mn, mx);
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double span = mx[i] - mn[i];
    out[i] = span > 0.0 ? 2.0 * (x[i] - mn[i]) / span - 1.0 : 0.0;
  }
  return out;
}

std::vector<double> denormalize_vec(const std::vector<double>& x,
                                    const std::vector<double>& mn,
                                    const std::vector<double>& mx) {
  check_dims(x, mn, mx);
  std::vector<double> out(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double span = mx[i] - mn[i];
    out[i] = span > 0.0 ? (x[i] + 1.0) * 0.5 * span + mn[i] : mn[i];
  }
  return out;
}

namespace {

template <class Fn>
std::vector<double> per_field(const std::vector<double>& x,
                              const std::vector<FieldSpec>& fields,
                              const std::vector<double>& mn,
                              const std::vector<double>& mx, Fn fn) {
  check_dims(x, mn, mx);
  std::vector<double> out = x;
  for (const auto& f : fields) {
    if (f.normalization != "min_max") continue;
    for (int i = f.start; i < f.end; ++i) {
      double span = mx[static_cast<size_t>(i)] - mn[static_cast<size_t>(i)];
      out[static_cast<size_t>(i)] =
          fn(x[static_cast<size_t>(i)], mn[static_cast<size_t>(i)], span);
    }
  }
  return out;
}

}  // namespace

std::vector<double> normalize_fields(const std::vector<double>& x,
                                     const std::vector<FieldSpec>& fields,
                                     const std::vector<double>& mn,
                                     const std::vector<double>& mx) {
  return per_field(x, fields, mn, mx, [](double v, double lo, double span) {
    return span > 0.0 ? 2.0 * (v - lo) / span - 1.0 : 0.0;
  });
}

std::vector<double> denormalize_fields(const std::vector<double>& x,
                                       const std::vector<FieldSpec>& fields,
                                       const std::vector<double>& mn,
                                       const std::vector<double>& mx) {
  return per_field(x, fields, mn, mx, [](double v, double lo, double span) {
    return span > 0.0 ? (v + 1.0) * 0.5 * span + lo : lo;
  });
}

FieldRole classify_field(const std::string& name) {
  std::string n = lower(name);
  if (n.find("rot") != std::string::npos) return FieldRole::rotation;
  if (n.find("pos") != std::string::npos) return FieldRole::position;
  if (n.find("grip") != std::string::npos) return FieldRole::gripper;
  raise(FORGE_ERR_UNKNOWN_FIELD,
        "field '" + name + "' matches no role (rot/pos/grip)");
}

int field_arm(const std::string& name) {
  std::string n = lower(name);
  if (n.find("right") != std::string::npos) return 1;
  return 0;
}

Reordering canonical_reordering(const std::vector<FieldSpec>& fields) {
  struct Keyed {
    int arm;
    int role;
    size_t original;
  };
  std::vector<Keyed> keyed;
  for (size_t i = 0; i < fields.size(); ++i)
    keyed.push_back({field_arm(fields[i].name),
                     static_cast<int>(classify_field(fields[i].name)), i});
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const Keyed& a, const Keyed& b) {
                     if (a.arm != b.arm) return a.arm < b.arm;
                     return a.role < b.role;
                   });
  Reordering r;
  int cursor = 0;
  int width = 0;
  for (const auto& f : fields) width = std::max(width, f.end);
  r.perm.reserve(static_cast<size_t>(width));
  for (const auto& k : keyed) {
    FieldSpec f = fields[k.original];
    for (int i = f.start; i < f.end; ++i) r.perm.push_back(i);
    int w = f.width();
    f.start = cursor;
    f.end = cursor + w;
    cursor += w;
    r.fields.push_back(std::move(f));
  }
  r.inv.assign(r.perm.size(), 0);
  for (size_t i = 0; i < r.perm.size(); ++i)
    r.inv[static_cast<size_t>(r.perm[i])] = static_cast<int>(i);
  return r;
}

std::vector<double> apply_perm(const std::vector<double>& x,
                               const std::vector<int>& perm) {
  if (x.size() != perm.size())
    raise(FORGE_ERR_DIM_MISMATCH,
          "permute: " + std::to_string(x.size()) + " dims, permutation of " +
              std::to_string(perm.size()));
  std::vector<double> out(x.size());
  for (size_t i = 0; i < perm.size(); ++i)
    out[i] = x[static_cast<size_t>(perm[i])];
  return out;
}

namespace {

// Target representation the standardized dataset declares for a rotation
// block: continuous 6D for states, compact axis-angle for actions.
std::string target_rotation(bool is_state, const std::string& current) {
  if (current == "none") return current;
  return is_state ? "rotation_6d" : "axis_angle";
}

struct FieldPlan {
  FieldSpec in;    // position in the source vector
  FieldSpec out;   // position and representation in the output vector
};

std::vector<FieldPlan> plan_fields(const std::vector<FieldSpec>& fields,
                                   bool is_state) {
  Reordering r = canonical_reordering(fields);
  std::vector<FieldPlan> plan;
  int cursor = 0;
  for (const auto& f : r.fields) {
    FieldPlan p;
    // recover the source range from the untouched name
    for (const auto& src : fields)
      if (src.name == f.name) p.in = src;
    p.out = f;
    p.out.rotation_type = target_rotation(is_state, f.rotation_type);
    int w = p.out.rotation_type == "none"
                ? p.in.width()
                : rotation_width(p.out.rotation_type);
    p.out.start = cursor;
    p.out.end = cursor + w;
    cursor += w;
    plan.push_back(std::move(p));
  }
  return plan;
}

std::vector<double> apply_plan(const std::vector<double>& x,
                               const std::vector<FieldPlan>& plan,
                               int out_width) {
  std::vector<double> out(static_cast<size_t>(out_width));
  for (const auto& p : plan) {
    std::vector<double> block(x.begin() + p.in.start, x.begin() + p.in.end);
    if (p.out.rotation_type != p.in.rotation_type) {
      Rotation src = make_rotation(rot_kind_from_string(p.in.rotation_type),
                                   std::move(block));
      block = convert(src, rot_kind_from_string(p.out.rotation_type)).data;
    }
    std::copy(block.begin(), block.end(), out.begin() + p.out.start);
  }
  return out;
}

}  // namespace

void standardize_dataset(const std::string& root,
                         const std::string& out_root) {
  Dataset ds = open_dataset(root);
  auto state_plan = plan_fields(ds.config.state_fields, true);
  auto action_plan = plan_fields(ds.config.action_fields, false);

  ModalityConfig out_config = ds.config;
  out_config.state_fields.clear();
  out_config.action_fields.clear();
  for (const auto& p : state_plan) out_config.state_fields.push_back(p.out);
  for (const auto& p : action_plan) out_config.action_fields.push_back(p.out);

  int sw = out_config.state_width();
  int aw = out_config.action_width();
  std::vector<Episode> episodes;
  for (size_t i = 0; i < ds.index.size(); ++i) {
    Episode e = load_episode(ds, i);
    for (auto& f : e.frames) {
      f.state = apply_plan(f.state, state_plan, sw);
      f.action = apply_plan(f.action, action_plan, aw);
    }
    episodes.push_back(std::move(e));
  }
  save_dataset(out_root, out_config, episodes, ds.annotations);
}

}  // namespace forge
