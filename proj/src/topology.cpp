#include "hacseg/topology.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <unordered_set>

namespace hacseg {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas).
void edt_1d(std::span<const double> f, std::span<double> d, std::vector<int>& v,
            std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  // Skip leading infinite samples: they never form part of the envelope.
  int first = 0;
  while (first < n && std::isinf(f[first])) ++first;
  if (first == n) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (int q = first + 1; q < n; ++q) {
    if (std::isinf(f[q])) continue;
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) /
          (2.0 * q - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Neighbour order: N, NE, E, SE, S, SW, W, NW.
constexpr std::array<int, 8> kDx = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr std::array<int, 8> kDy = {-1, -1, 0, 1, 1, 1, 0, -1};

std::array<bool, 8> ring(const BinaryMask& m, int x, int y) {
  std::array<bool, 8> n{};
  for (int i = 0; i < 8; ++i) n[i] = m.get_or_false(x + kDx[i], y + kDy[i]);
  return n;
}

int count_set(const std::array<bool, 8>& n) {
  return static_cast<int>(std::count(n.begin(), n.end(), true));
}

// Number of 0->1 transitions walking around the ring.
int crossings(const std::array<bool, 8>& n) {
  int a = 0;
  for (int i = 0; i < 8; ++i) a += (!n[i] && n[(i + 1) % 8]) ? 1 : 0;
  return a;
}

int find_root(std::array<int, 8>& parent, int i) {
  while (parent[i] != i) i = parent[i] = parent[parent[i]];
  return i;
}

// Simple point test for (8,4) topology.
bool is_simple(const std::array<bool, 8>& n) {
  std::array<int, 8> fg{};
  std::iota(fg.begin(), fg.end(), 0);
  auto unite = [&](int a, int b) { fg[find_root(fg, a)] = find_root(fg, b); };
  for (int i = 0; i < 8; ++i) {
    const int j = (i + 1) % 8;
    if (n[i] && n[j]) unite(i, j);
    if (i % 2 == 0) {
      const int k = (i + 2) % 8;
      if (n[i] && n[k]) unite(i, k);
    }
  }
  int fg_components = 0;
  for (int i = 0; i < 8; ++i) {
    if (n[i] && find_root(fg, i) == i) ++fg_components;
  }
  if (fg_components != 1) return false;

  std::array<int, 8> bg{};
  std::iota(bg.begin(), bg.end(), 0);
  for (int i = 0; i < 8; ++i) {
    const int j = (i + 1) % 8;
    if (!n[i] && !n[j]) bg[find_root(bg, i)] = find_root(bg, j);
  }
  std::array<bool, 8> touching{};
  for (int i = 0; i < 8; i += 2) {
    if (!n[i]) touching[find_root(bg, i)] = true;
  }
  return std::count(touching.begin(), touching.end(), true) == 1;
}

bool zhang_suen_candidate(const std::array<bool, 8>& n, bool first_pass) {
  const int b = count_set(n);
  if (b < 2 || b > 6 || crossings(n) != 1) return false;
  const bool p2 = n[0], p4 = n[2], p6 = n[4], p8 = n[6];
  if (first_pass) return !(p2 && p4 && p6) && !(p4 && p6 && p8);
  return !(p2 && p4 && p8) && !(p2 && p6 && p8);
}

// Parallel Zhang-Suen deletes an isolated 2x2 block outright; keep its
// top-left pixel.
bool last_of_isolated_square(const BinaryMask& m, Point p) {
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx)
      if (!m.get_or_false(p.x + dx, p.y + dy)) return false;
  for (int dy = -1; dy <= 2; ++dy) {
    for (int dx = -1; dx <= 2; ++dx) {
      const bool inside = dx >= 0 && dx < 2 && dy >= 0 && dy < 2;
      if (!inside && m.get_or_false(p.x + dx, p.y + dy)) return false;
    }
  }
  return true;
}

std::uint64_t edge_key(std::size_t a, std::size_t b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

double step_length(Point a, Point b) {
  return (a.x != b.x && a.y != b.y) ? kSqrt2 : 1.0;
}

}  // namespace

std::vector<double> distance_transform(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) grid[i] = mask.at(i) ? inf : 0.0;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> f(std::max(w, h));
  std::vector<double> d(std::max(w, h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
    edt_1d(std::span(f).first(h), std::span(d).first(h), v, z);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = grid[static_cast<std::size_t>(y) * w + x];
    edt_1d(std::span(f).first(w), std::span(d).first(w), v, z);
    for (int x = 0; x < w; ++x) grid[static_cast<std::size_t>(y) * w + x] = d[x];
  }
  // A mask with no background has no finite distance; cap at the diagonal.
  const double cap = std::hypot(w, h);
  for (double& g : grid) g = std::isinf(g) ? cap : std::sqrt(g);
  return grid;
}

BinaryMask thin(const BinaryMask& mask) {
  BinaryMask skel = mask;
  std::vector<Point> candidates;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const bool first_pass : {true, false}) {
      candidates.clear();
      for (int y = 0; y < skel.height(); ++y) {
        for (int x = 0; x < skel.width(); ++x) {
          if (skel(x, y) && zhang_suen_candidate(ring(skel, x, y), first_pass)) {
            candidates.push_back({x, y});
          }
        }
      }
      for (const Point p : candidates) {
        if (!last_of_isolated_square(skel, p)) {
          skel.set(p.x, p.y, false);
          changed = true;
        }
      }
    }
  }

  // Staircase cleanup: drop simple corner pixels whose two orthogonal
  // 4-neighbours stay diagonally connected without them.
  changed = true;
  while (changed) {
    changed = false;
    for (int y = 0; y < skel.height(); ++y) {
      for (int x = 0; x < skel.width(); ++x) {
        if (!skel(x, y)) continue;
        const auto n = ring(skel, x, y);
        if (count_set(n) < 2) continue;
        const bool corner = (n[0] && n[2]) || (n[2] && n[4]) || (n[4] && n[6]) ||
                            (n[6] && n[0]);
        if (corner && is_simple(n)) {
          skel.set(x, y, false);
          changed = true;
        }
      }
    }
  }
  return skel;
}

std::vector<Point> skeleton_neighbors(const BinaryMask& skel, Point p) {
  std::vector<Point> out;
  out.reserve(4);
  for (int i = 0; i < 8; ++i) {
    const int x = p.x + kDx[i];
    const int y = p.y + kDy[i];
    if (!skel.get_or_false(x, y)) continue;
    if (i % 2 == 1 &&
        (skel.get_or_false(p.x + kDx[i], p.y) || skel.get_or_false(p.x, p.y + kDy[i]))) {
      continue;
    }
    out.push_back({x, y});
  }
  return out;
}

double chain_length(std::span<const Point> path) {
  double len = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) len += step_length(path[i - 1], path[i]);
  return len;
}

namespace {

// Sum of link lengths per component label plus one per component.
std::vector<double> lengths_by_component(const BinaryMask& skel, const Components& comps) {
  std::vector<double> len(comps.count(), 1.0);
  for (int y = 0; y < skel.height(); ++y) {
    for (int x = 0; x < skel.width(); ++x) {
      if (!skel(x, y)) continue;
      const Point p{x, y};
      const int label = comps.labels[static_cast<std::size_t>(y) * skel.width() + x];
      for (const Point q : skeleton_neighbors(skel, p)) {
        if (p < q) len[label - 1] += step_length(p, q);
      }
    }
  }
  return len;
}

}  // namespace

double skeleton_length(const BinaryMask& skel) {
  const auto len = lengths_by_component(skel, label_components(skel));
  return std::accumulate(len.begin(), len.end(), 0.0);
}

std::vector<double> SkeletonGraph::component_lengths() const {
  return lengths_by_component(pixels, components);
}

double SkeletonGraph::total_length() const {
  const auto len = component_lengths();
  return std::accumulate(len.begin(), len.end(), 0.0);
}

SkeletonGraph build_skeleton_graph(const BinaryMask& skel, std::span<const double> radius) {
  SkeletonGraph g;
  g.width = skel.width();
  g.height = skel.height();
  g.pixels = skel;
  g.degree.assign(skel.size(), 0);
  if (radius.size() == skel.size()) {
    g.radius.assign(radius.begin(), radius.end());
  } else {
    g.radius.assign(skel.size(), 0.0);
  }
  g.components = label_components(skel);

  const auto idx = [&](Point p) { return static_cast<std::size_t>(p.y) * g.width + p.x; };
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      if (!skel(x, y)) continue;
      const Point p{x, y};
      const int deg = static_cast<int>(skeleton_neighbors(skel, p).size());
      g.degree[idx(p)] = deg;
      if (deg >= 3) g.junctions.push_back(p);
      if (deg == 1) g.endpoints.push_back(p);
      if (deg == 0) g.isolated.push_back(p);
    }
  }

  std::unordered_set<std::uint64_t> used;
  auto trace = [&](Point start, Point next) {
    SkeletonBranch b;
    b.path.push_back(start);
    Point prev = start;
    Point cur = next;
    used.insert(edge_key(idx(prev), idx(cur)));
    while (g.degree[idx(cur)] == 2 && cur != start) {
      b.path.push_back(cur);
      Point following = cur;
      for (const Point q : skeleton_neighbors(skel, cur)) {
        if (q != prev && !used.contains(edge_key(idx(cur), idx(q)))) {
          following = q;
          break;
        }
      }
      if (following == cur) break;
      used.insert(edge_key(idx(cur), idx(following)));
      prev = cur;
      cur = following;
    }
    b.path.push_back(cur);
    b.loop = cur == start && g.degree[idx(start)] == 2;
    return b;
  };

  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const Point p{x, y};
      if (!skel(x, y) || g.degree[idx(p)] == 2) continue;
      for (const Point q : skeleton_neighbors(skel, p)) {
        if (!used.contains(edge_key(idx(p), idx(q)))) g.branches.push_back(trace(p, q));
      }
    }
  }
  // Whatever remains untraversed are node-free closed loops.
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const Point p{x, y};
      if (!skel(x, y) || g.degree[idx(p)] != 2) continue;
      for (const Point q : skeleton_neighbors(skel, p)) {
        if (!used.contains(edge_key(idx(p), idx(q)))) {
          SkeletonBranch b = trace(p, q);
          b.loop = true;
          g.branches.push_back(std::move(b));
        }
      }
    }
  }
  return g;
}

SkeletonGraph skeletonize(const BinaryMask& mask) {
  if (mask.empty()) return {};
  const BinaryMask skel = thin(mask);
  const auto dt = distance_transform(mask);
  return build_skeleton_graph(skel, dt);
}

namespace {

// Farthest skeleton pixel from `source` (geodesic, link-length weighted)
// restricted to endpoints, by Dijkstra over the skeleton graph.
Point farthest_endpoint(const SkeletonGraph& g, Point source) {
  const auto idx = [&](Point p) { return static_cast<std::size_t>(p.y) * g.width + p.x; };
  std::vector<double> dist(g.pixels.size(), std::numeric_limits<double>::infinity());
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  dist[idx(source)] = 0.0;
  heap.push({0.0, idx(source)});
  while (!heap.empty()) {
    const auto [d, i] = heap.top();
    heap.pop();
    if (d > dist[i]) continue;
    const Point p{static_cast<int>(i % g.width), static_cast<int>(i / g.width)};
    for (const Point q : skeleton_neighbors(g.pixels, p)) {
      const double nd = d + step_length(p, q);
      if (nd < dist[idx(q)]) {
        dist[idx(q)] = nd;
        heap.push({nd, idx(q)});
      }
    }
  }
  Point best = source;
  double best_d = -1.0;
  for (const Point e : g.endpoints) {
    const double d = dist[idx(e)];
    if (std::isfinite(d) && d > best_d) {
      best_d = d;
      best = e;
    }
  }
  return best;
}

// Ends of the longest endpoint-to-endpoint path of every junction-bearing
// component (double sweep; exact on trees).
std::vector<Point> trunk_endpoints(const SkeletonGraph& g) {
  std::vector<bool> has_junction(g.components.count() + 1, false);
  for (const Point j : g.junctions) {
    has_junction[g.components.labels[static_cast<std::size_t>(j.y) * g.width + j.x]] = true;
  }
  std::vector<bool> done(g.components.count() + 1, false);
  std::vector<Point> ends;
  for (const Point e : g.endpoints) {
    const int label = g.components.labels[static_cast<std::size_t>(e.y) * g.width + e.x];
    if (done[label] || !has_junction[label]) continue;
    done[label] = true;
    const Point a = farthest_endpoint(g, e);
    const Point b = farthest_endpoint(g, a);
    if (a != b) {
      ends.push_back(a);
      ends.push_back(b);
    }
  }
  return ends;
}

BinaryMask drop_short_components(const BinaryMask& skel, double min_length) {
  const Components comps = label_components(skel);
  const auto len = lengths_by_component(skel, comps);
  BinaryMask out = skel;
  for (std::size_t i = 0; i < comps.labels.size(); ++i) {
    const int label = comps.labels[i];
    if (label != 0 && len[label - 1] < min_length) out.set(i, false);
  }
  return out;
}

}  // namespace

PruneResult prune_targets_detailed(const BinaryMask& annotation, double min_path_px) {
  PruneResult result;
  if (annotation.empty()) return result;
  result.target = BinaryMask(annotation.width(), annotation.height());
  result.pruned_skeleton = result.target;
  if (annotation.count() == 0) {
    result.original = build_skeleton_graph(result.target);
    return result;
  }
  result.original = skeletonize(annotation);
  const SkeletonGraph& g = result.original;

  BinaryMask kept = drop_short_components(g.pixels, min_path_px);

  // Single pass over terminal branches of junction-bearing components. The
  // two terminal branches that bound the component's trunk (longest
  // endpoint-to-endpoint path) are kept.
  const std::vector<Point> trunk_ends = trunk_endpoints(g);
  auto is_trunk_end = [&](Point p) {
    return std::find(trunk_ends.begin(), trunk_ends.end(), p) != trunk_ends.end();
  };
  for (const SkeletonBranch& b : g.branches) {
    if (b.loop || b.path.size() < 2) continue;
    const Point front = b.path.front();
    const Point back = b.path.back();
    const int df = g.degree_at(front);
    const int db = g.degree_at(back);
    const bool terminal = (df == 1 && db >= 3) || (db == 1 && df >= 3);
    if (!terminal || !kept(front.x, front.y)) continue;
    const Point junction = df >= 3 ? front : back;
    const Point end = df >= 3 ? back : front;
    if (is_trunk_end(end)) continue;
    for (const Point p : b.path) {
      if (p != junction) kept.set(p.x, p.y, false);
    }
  }
  // Pruning can shorten a component below the threshold; re-apply it.
  result.pruned_skeleton = drop_short_components(kept, min_path_px);

  BinaryMask& target = result.target;
  const int w = annotation.width();
  const int h = annotation.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!result.pruned_skeleton(x, y)) continue;
      const double r = g.radius_at({x, y});
      const int reach = static_cast<int>(std::ceil(r));
      for (int dy = -reach; dy <= reach; ++dy) {
        for (int dx = -reach; dx <= reach; ++dx) {
          if (dx * dx + dy * dy < r * r && target.contains(x + dx, y + dy)) {
            target.set(x + dx, y + dy, true);
          }
        }
      }
    }
  }
  return result;
}

}  // namespace hacseg
