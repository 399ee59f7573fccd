#include "hpf/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "hpf/error.hpp"

namespace hpf {

namespace {

bool in_halfspace(const Halfspace& hs, const Vector& x) {
  const double v = hs.normal.dot(x) - hs.offset;
  return hs.side > 0 ? v >= 0.0 : v < 0.0;
}

bool in_grid(const GridRect& r, const Vector& x) {
  const auto n = static_cast<std::size_t>(x.size());
  if (r.axis_x >= n || r.axis_y >= n) {
    throw InvalidArgument("grid predicate axis exceeds feature dimension");
  }
  const double px = x[static_cast<Eigen::Index>(r.axis_x)];
  const double py = x[static_cast<Eigen::Index>(r.axis_y)];
  return px >= r.x0 && px < r.x1 && py >= r.y0 && py < r.y1;
}

bool in_interval(const Interval& iv, const Vector& x) {
  if (iv.axis >= static_cast<std::size_t>(x.size())) {
    throw InvalidArgument("interval predicate axis exceeds feature dimension");
  }
  const double v = x[static_cast<Eigen::Index>(iv.axis)];
  return v >= iv.lower && v < iv.upper;
}

void check_dimension(const Halfspace& hs, const Vector& x) {
  if (hs.normal.size() != x.size()) {
    throw InvalidArgument("halfspace normal dimension " + std::to_string(hs.normal.size()) +
                          " does not match feature dimension " + std::to_string(x.size()));
  }
}

}  // namespace

bool contains(const SegmentPredicate& predicate, const Vector& x) {
  return std::visit(
      [&](const auto& p) -> bool {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Universal>) {
          return true;
        } else if constexpr (std::is_same_v<T, GridRect>) {
          return in_grid(p, x);
        } else if constexpr (std::is_same_v<T, Interval>) {
          return in_interval(p, x);
        } else {
          for (const auto& hs : p.constraints) {
            check_dimension(hs, x);
            if (!in_halfspace(hs, x)) return false;
          }
          return true;
        }
      },
      predicate);
}

bool contains_given_parent(const SegmentPredicate& predicate, const Vector& x) {
  if (const auto* chain = std::get_if<HalfspaceChain>(&predicate)) {
    if (chain->constraints.empty()) return true;
    const auto& last = chain->constraints.back();
    check_dimension(last, x);
    return in_halfspace(last, x);
  }
  return contains(predicate, x);
}

// ---------------------------------------------------------------------------

HierarchicalPartition::Builder::Builder(SegmentPredicate root_predicate) {
  Segment root;
  root.id = 0;
  root.predicate = std::move(root_predicate);
  root.depth = 1;
  segments_.push_back(std::move(root));
}

SegmentId HierarchicalPartition::Builder::add_child(SegmentId parent, SegmentPredicate predicate) {
  if (parent >= segments_.size()) {
    throw InvalidArgument("unknown parent segment " + std::to_string(parent));
  }
  Segment s;
  s.id = segments_.size();
  s.parent = parent;
  s.predicate = std::move(predicate);
  s.depth = segments_[parent].depth + 1;
  segments_[parent].children.push_back(s.id);
  segments_.push_back(std::move(s));
  return segments_.back().id;
}

HierarchicalPartition HierarchicalPartition::Builder::build() && {
  return HierarchicalPartition(std::move(segments_));
}

HierarchicalPartition::HierarchicalPartition(std::vector<Segment> segments)
    : segments_(std::move(segments)) {
  validate(segments_);
}

HierarchicalPartition HierarchicalPartition::from_segments(std::vector<Segment> segments) {
  return HierarchicalPartition(std::move(segments));
}

void HierarchicalPartition::validate(std::vector<Segment>& segments) {
  if (segments.empty()) throw InvalidArgument("hierarchical partition has no segments");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Segment& s = segments[i];
    if (s.id != i) throw InvalidArgument("segment ids must equal their index");
    if (i == 0 && s.parent) throw InvalidArgument("root segment must not have a parent");
    if (i > 0) {
      if (!s.parent) throw InvalidArgument("non-root segment " + std::to_string(i) + " has no parent");
      // parents precede children, which rules out cycles
      if (*s.parent >= i) throw InvalidArgument("parent must precede child " + std::to_string(i));
      const auto& siblings = segments[*s.parent].children;
      if (std::count(siblings.begin(), siblings.end(), i) != 1) {
        throw InvalidArgument("segment " + std::to_string(i) + " not listed once by its parent");
      }
    }
    if (s.children.size() == 1) {
      throw InvalidArgument("segment " + std::to_string(i) + " has exactly one child");
    }
    for (SegmentId c : s.children) {
      if (c >= segments.size() || segments[c].parent != i) {
        throw InvalidArgument("inconsistent child link at segment " + std::to_string(i));
      }
    }
    if (const auto* chain = std::get_if<HalfspaceChain>(&s.predicate)) {
      for (const auto& hs : chain->constraints) {
        if (std::abs(hs.normal.norm() - 1.0) > 1e-12) {
          throw InvalidArgument("halfspace normal is not unit length");
        }
        if (hs.side != 1 && hs.side != -1) throw InvalidArgument("halfspace side must be +1 or -1");
      }
    }
    if (const auto* r = std::get_if<GridRect>(&s.predicate)) {
      if (r->x1 <= r->x0 || r->y1 <= r->y0) throw InvalidArgument("empty grid rectangle");
    }
    if (const auto* iv = std::get_if<Interval>(&s.predicate)) {
      if (!(iv->upper > iv->lower)) throw InvalidArgument("empty interval");
    }
  }
  // recompute depths so from_segments accepts documents without them
  segments[0].depth = 1;
  for (std::size_t i = 1; i < segments.size(); ++i) {
    segments[i].depth = segments[*segments[i].parent].depth + 1;
  }
}

std::size_t HierarchicalPartition::depth() const {
  std::size_t d = 0;
  for (const auto& s : segments_) d = std::max(d, s.depth);
  return d;
}

std::vector<SegmentId> HierarchicalPartition::leaves() const {
  std::vector<SegmentId> out;
  for (const auto& s : segments_) {
    if (!s.divisible()) out.push_back(s.id);
  }
  return out;
}

std::size_t HierarchicalPartition::divisible_count() const {
  return static_cast<std::size_t>(
      std::count_if(segments_.begin(), segments_.end(), [](const Segment& s) { return s.divisible(); }));
}

bool HierarchicalPartition::contains(SegmentId id, const Vector& x) const {
  // A segment's region is the intersection of its own predicate with all
  // ancestors' predicates.
  std::optional<SegmentId> cur = id;
  while (cur) {
    const Segment& s = segment(*cur);
    if (!hpf::contains(s.predicate, x)) return false;
    cur = s.parent;
  }
  return true;
}

std::vector<SegmentId> HierarchicalPartition::route(const Vector& x) const {
  std::vector<SegmentId> path;
  if (segments_.empty()) throw InvalidArgument("empty hierarchical partition");
  if (!hpf::contains(segments_[0].predicate, x)) {
    throw OutOfDomain("feature vector outside the root segment");
  }
  SegmentId cur = 0;
  path.push_back(cur);
  while (segments_[cur].divisible()) {
    const auto& children = segments_[cur].children;
    auto it = std::find_if(children.begin(), children.end(), [&](SegmentId c) {
      return contains_given_parent(segments_[c].predicate, x);
    });
    if (it == children.end()) {
      throw OutOfDomain("no child of segment " + std::to_string(cur) + " contains the feature vector");
    }
    cur = *it;
    path.push_back(cur);
  }
  return path;
}

bool HierarchicalPartition::is_ancestor_or_self(SegmentId ancestor, SegmentId descendant) const {
  std::optional<SegmentId> cur = descendant;
  while (cur) {
    if (*cur == ancestor) return true;
    cur = segment(*cur).parent;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

HierarchicalPartition build_quadtree(int width, int height, int levels) {
  if (levels < 1) throw InvalidArgument("quadtree needs at least one level");
  if (levels > 30) throw InvalidArgument("quadtree depth too large");
  const long long min_extent = 1LL << (levels - 1);
  if (width < min_extent || height < min_extent) {
    throw InvalidArgument("grid " + std::to_string(width) + "x" + std::to_string(height) +
                          " too small for " + std::to_string(levels) + " quadtree levels");
  }
  HierarchicalPartition::Builder builder(GridRect{0, width, 0, height});
  // breadth-first so ids grow level by level
  std::vector<std::pair<SegmentId, GridRect>> frontier{{0, GridRect{0, width, 0, height}}};
  for (int level = 1; level < levels; ++level) {
    std::vector<std::pair<SegmentId, GridRect>> next;
    for (const auto& [id, r] : frontier) {
      const int xm = r.x0 + r.width() / 2;
      const int ym = r.y0 + r.height() / 2;
      const GridRect quads[4] = {{r.x0, xm, r.y0, ym}, {xm, r.x1, r.y0, ym},
                                 {r.x0, xm, ym, r.y1}, {xm, r.x1, ym, r.y1}};
      for (const auto& q : quads) next.emplace_back(builder.add_child(id, q), q);
    }
    frontier = std::move(next);
  }
  return std::move(builder).build();
}

HierarchicalPartition build_random_halfspaces(std::size_t dim, std::size_t depth, double mu,
                                              double sigma, std::uint64_t seed) {
  return build_random_halfspaces(dim, depth, std::vector<HalfspaceSplitParams>{{mu, sigma}}, seed);
}

HierarchicalPartition build_random_halfspaces(std::size_t dim, std::size_t depth,
                                              const std::vector<HalfspaceSplitParams>& per_depth,
                                              std::uint64_t seed) {
  if (dim < 1) throw InvalidArgument("halfspace partition needs dim >= 1");
  if (depth > 24) throw InvalidArgument("halfspace partition depth too large");
  if (per_depth.empty()) throw InvalidArgument("missing halfspace split parameters");
  for (const auto& p : per_depth) {
    if (!(p.sigma >= 0.0) || !std::isfinite(p.mu) || !std::isfinite(p.sigma)) {
      throw InvalidArgument("halfspace offset variance must be finite and >= 0");
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  HierarchicalPartition::Builder builder(Universal{});
  std::vector<std::pair<SegmentId, HalfspaceChain>> frontier{{0, HalfspaceChain{}}};
  for (std::size_t level = 0; level < depth; ++level) {
    const auto& params = per_depth[std::min(level, per_depth.size() - 1)];
    std::vector<std::pair<SegmentId, HalfspaceChain>> next;
    for (const auto& [id, chain] : frontier) {
      Vector a(static_cast<Eigen::Index>(dim));
      do {
        for (Eigen::Index k = 0; k < a.size(); ++k) a[k] = normal(rng);
      } while (a.norm() == 0.0);
      a /= a.norm();
      const double b = params.mu + std::sqrt(params.sigma) * normal(rng);
      for (int side : {1, -1}) {
        HalfspaceChain child = chain;
        child.constraints.push_back(Halfspace{a, b, side});
        const SegmentId cid = builder.add_child(id, child);
        next.emplace_back(cid, std::move(child));
      }
    }
    frontier = std::move(next);
  }
  return std::move(builder).build();
}

// ---------------------------------------------------------------------------
// Induced partitions
// ---------------------------------------------------------------------------

namespace {

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  if (a != 0 && b > kMax / a) return kMax;
  return a * b;
}

std::uint64_t count_from(const HierarchicalPartition& h, SegmentId id) {
  const Segment& s = h.segment(id);
  if (!s.divisible()) return 1;
  std::uint64_t prod = 1;
  for (SegmentId c : s.children) prod = sat_mul(prod, count_from(h, c));
  return prod == std::numeric_limits<std::uint64_t>::max() ? prod : prod + 1;
}

std::vector<std::vector<SegmentId>> enumerate_from(const HierarchicalPartition& h, SegmentId id) {
  std::vector<std::vector<SegmentId>> out{{id}};
  const Segment& s = h.segment(id);
  if (!s.divisible()) return out;
  std::vector<std::vector<SegmentId>> combos{{}};
  for (SegmentId c : s.children) {
    const auto sub = enumerate_from(h, c);
    std::vector<std::vector<SegmentId>> grown;
    grown.reserve(combos.size() * sub.size());
    for (const auto& prefix : combos) {
      for (const auto& tail : sub) {
        auto merged = prefix;
        merged.insert(merged.end(), tail.begin(), tail.end());
        grown.push_back(std::move(merged));
      }
    }
    combos = std::move(grown);
  }
  out.insert(out.end(), std::make_move_iterator(combos.begin()), std::make_move_iterator(combos.end()));
  return out;
}

}  // namespace

std::uint64_t count_induced_partitions(const HierarchicalPartition& h) {
  return count_from(h, h.root());
}

std::vector<InducedPartition> enumerate_induced_partitions(const HierarchicalPartition& h,
                                                           std::uint64_t cap) {
  const std::uint64_t count = count_induced_partitions(h);
  if (count > cap) {
    throw ResourceLimit("hierarchical partition induces " + std::to_string(count) +
                        " partitions, above the cap of " + std::to_string(cap));
  }
  auto raw = enumerate_from(h, h.root());
  std::vector<InducedPartition> out;
  out.reserve(raw.size());
  for (auto& ids : raw) {
    std::sort(ids.begin(), ids.end());
    out.push_back(InducedPartition{std::move(ids)});
  }
  return out;
}

bool is_induced(const HierarchicalPartition& h, const InducedPartition& p) {
  std::vector<char> member(h.size(), 0);
  for (SegmentId id : p.segment_ids) {
    if (id >= h.size() || member[id]) return false;
    member[id] = 1;
  }
  // every leaf must be covered by exactly one member on its root path
  for (SegmentId leaf : h.leaves()) {
    int hits = 0;
    std::optional<SegmentId> cur = leaf;
    while (cur) {
      hits += member[*cur];
      cur = h.segment(*cur).parent;
    }
    if (hits != 1) return false;
  }
  return true;
}

std::size_t count_divisible_supersets(const HierarchicalPartition& h, const InducedPartition& p) {
  if (!is_induced(h, p)) throw InvalidArgument("partition is not induced by the hierarchy");
  std::vector<char> marked(h.size(), 0);
  for (SegmentId id : p.segment_ids) {
    std::optional<SegmentId> cur = id;
    while (cur && !marked[*cur]) {
      marked[*cur] = 1;
      cur = h.segment(*cur).parent;
    }
  }
  std::size_t count = 0;
  for (const auto& s : h.segments()) {
    if (marked[s.id] && s.divisible()) ++count;
  }
  return count;
}

SegmentId member_containing(const HierarchicalPartition& h, const InducedPartition& p,
                            const Vector& x) {
  for (SegmentId id : h.route(x)) {
    if (std::binary_search(p.segment_ids.begin(), p.segment_ids.end(), id)) return id;
  }
  throw OutOfDomain("no member of the induced partition contains the feature vector");
}

}  // namespace hpf
