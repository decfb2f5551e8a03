#pragma once

// Frozen per-machine state layouts. Flow coordinates are in kg/s, the
// siever parameter in rpm and the magnetic sorter parameter in cm.

#include <string>
#include <vector>

#include <Eigen/Core>

namespace ant {

enum class CoordRole { input, history, output, parameter };

inline constexpr int kSizes = 3;  // S, M, L
inline constexpr const char* kSizeNames[kSizes] = {"S", "M", "L"};
inline constexpr int kMaterials = 2;  // FM, NFM
inline constexpr const char* kMaterialNames[kMaterials] = {"FM", "NFM"};

struct StateLayout {
  std::string machine;
  std::vector<std::string> names;
  std::vector<CoordRole> roles;
  /// For history coordinates, the x_t coordinate they are shifted from
  /// (same class, one slot younger); -1 otherwise.
  std::vector<int> shift_from;

  Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(names.size()); }
  /// Throws ConfigError for unknown names.
  Eigen::Index index(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<Eigen::Index> of_role(CoordRole role) const;
  Eigen::Index parameter() const;  // the single parameter coordinate

  void add(std::string name, CoordRole role, int shift = -1);
};

/// hist[h][p] at 3h+p (h = 0 is the current input window), out[o][p] at
/// 3*history_len + 3o + p, speed last. Names: in_h{h}_{p}, out_{o}_{p}, speed.
StateLayout siever_layout(int history_len = 8);

/// hist[h][p] at 3h+p, out[p] at 3*history_len + p.
/// Names: in_h{h}_{p}, out_{p}.
StateLayout conveyor_layout(int history_len = 8);

/// in[m][p] at 3m+p (m: FM=0, NFM=1), out[o][m][p] at 6 + 6o + 3m + p
/// (o: FM outlet=0, NFM outlet=1), height last.
/// Names: in_{m}_{p}, out_{o}_{m}_{p}, height.
StateLayout magsorter_layout();

}  // namespace ant
