#include "ant/layout.hpp"

#include <algorithm>

#include "ant/errors.hpp"

namespace ant {

Eigen::Index StateLayout::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError(machine + " layout has no coordinate '" + name + "'");
  return it - names.begin();
}

bool StateLayout::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::vector<Eigen::Index> StateLayout::of_role(CoordRole role) const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == role) out.push_back(static_cast<Eigen::Index>(i));
  return out;
}

Eigen::Index StateLayout::parameter() const {
  const auto p = of_role(CoordRole::parameter);
  if (p.size() != 1) throw ConfigError(machine + " layout needs exactly one parameter");
  return p.front();
}

void StateLayout::add(std::string name, CoordRole role, int shift) {
  names.push_back(std::move(name));
  roles.push_back(role);
  shift_from.push_back(shift);
}

namespace {

void add_history(StateLayout& l, int history_len) {
  if (history_len < 2) throw ConfigError("history needs at least two slots");
  for (int h = 0; h < history_len; ++h)
    for (int p = 0; p < kSizes; ++p)
      l.add("in_h" + std::to_string(h) + "_" + kSizeNames[p], h == 0 ? CoordRole::input : CoordRole::history,
            h == 0 ? -1 : 3 * (h - 1) + p);
}

}  // namespace

StateLayout siever_layout(int history_len) {
  StateLayout l;
  l.machine = "siever";
  add_history(l, history_len);
  for (int o = 0; o < kSizes; ++o)
    for (int p = 0; p < kSizes; ++p)
      l.add(std::string("out_") + kSizeNames[o] + "_" + kSizeNames[p], CoordRole::output);
  l.add("speed", CoordRole::parameter);
  return l;
}

StateLayout conveyor_layout(int history_len) {
  StateLayout l;
  l.machine = "conveyor";
  add_history(l, history_len);
  for (int p = 0; p < kSizes; ++p) l.add(std::string("out_") + kSizeNames[p], CoordRole::output);
  return l;
}

StateLayout magsorter_layout() {
  StateLayout l;
  l.machine = "magsorter";
  for (int m = 0; m < kMaterials; ++m)
    for (int p = 0; p < kSizes; ++p)
      l.add(std::string("in_") + kMaterialNames[m] + "_" + kSizeNames[p], CoordRole::input);
  for (int o = 0; o < kMaterials; ++o)
    for (int m = 0; m < kMaterials; ++m)
      for (int p = 0; p < kSizes; ++p)
        l.add(std::string("out_") + kMaterialNames[o] + "_" + kMaterialNames[m] + "_" + kSizeNames[p],
              CoordRole::output);
  l.add("height", CoordRole::parameter);
  return l;
}

}  // namespace ant
