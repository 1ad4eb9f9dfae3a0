#pragma once

#include <span>
#include <vector>

#include "hacseg/raster.hpp"

namespace hacseg {

/// Exact Euclidean distance from every pixel to the nearest unset pixel of
/// `mask` (0 on unset pixels). Pixels outside the raster are not background.
std::vector<double> distance_transform(const BinaryMask& mask);

/// Parallel Zhang-Suen thinning (isolated 2x2 blocks keep one pixel), then a
/// staircase cleanup so that the result is 8-thin. Preserves the number of
/// 8-connected components.
BinaryMask thin(const BinaryMask& mask);

/// Skeleton neighbours under mixed (m-) adjacency: 4-neighbours always, a
/// diagonal neighbour only when no shared 4-neighbour is set. Components are
/// identical to 8-connectivity but corner triangles do not form spurious links.
std::vector<Point> skeleton_neighbors(const BinaryMask& skel, Point p);

struct SkeletonBranch {
  std::vector<Point> path;  // ordered; first/last are nodes unless `loop`
  bool loop = false;
};

struct SkeletonGraph {
  int width = 0;
  int height = 0;
  BinaryMask pixels;
  std::vector<int> degree;     // per raster pixel, 0 off-skeleton
  std::vector<double> radius;  // per raster pixel, distance transform of the source
  std::vector<Point> junctions;  // degree >= 3
  std::vector<Point> endpoints;  // degree == 1
  std::vector<Point> isolated;   // degree == 0
  std::vector<SkeletonBranch> branches;
  Components components;

  bool empty() const { return pixels.empty() || pixels.count() == 0; }
  int degree_at(Point p) const {
    return degree[static_cast<std::size_t>(p.y) * width + p.x];
  }
  double radius_at(Point p) const {
    return radius[static_cast<std::size_t>(p.y) * width + p.x];
  }
  /// Length of each component (indexed by label-1), see skeleton_length.
  std::vector<double> component_lengths() const;
  double total_length() const;
};

/// Builds the graph of an already-thin skeleton. `radius` may be empty.
SkeletonGraph build_skeleton_graph(const BinaryMask& skel,
                                   std::span<const double> radius = {});

SkeletonGraph skeletonize(const BinaryMask& mask);

/// Centre-to-centre chain length: 1 per axial step, sqrt(2) per diagonal.
double chain_length(std::span<const Point> path);

/// Pixel-extent length of a skeleton pixel set: summed link lengths plus one
/// per component, so a straight run of n pixels measures n.
double skeleton_length(const BinaryMask& skel);

struct PruneResult {
  BinaryMask target;            // re-thickened M*
  BinaryMask pruned_skeleton;   // centreline of M*
  SkeletonGraph original;       // skeleton graph of the input annotation
};

PruneResult prune_targets_detailed(const BinaryMask& annotation,
                                   double min_path_px = 100.0);

inline BinaryMask prune_targets(const BinaryMask& annotation,
                                double min_path_px = 100.0) {
  return prune_targets_detailed(annotation, min_path_px).target;
}

}  // namespace hacseg
