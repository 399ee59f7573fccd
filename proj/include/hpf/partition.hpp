#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace hpf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SegmentId = std::size_t;

// ---------------------------------------------------------------------------
// Segment predicates
// ---------------------------------------------------------------------------

/// Whole feature space.
struct Universal {};

/// Axis-aligned pixel rectangle [x0, x1) x [y0, y1). Lower edges are closed and
/// upper edges open, so every point of the parent lands in exactly one quadrant.
struct GridRect {
  int x0 = 0;
  int x1 = 0;
  int y0 = 0;
  int y1 = 0;
  std::size_t axis_x = 0;  ///< coordinate of the routing vector read as x
  std::size_t axis_y = 1;  ///< coordinate of the routing vector read as y

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
};

/// One oriented halfspace: side = +1 keeps {x : normal.x - offset >= 0},
/// side = -1 keeps the strict complement.
struct Halfspace {
  Vector normal;  ///< unit length
  double offset = 0.0;
  int side = 1;
};

/// Intersection of the halfspaces met on the way from the root. The last entry
/// is the test that separates a segment from its sibling.
struct HalfspaceChain {
  std::vector<Halfspace> constraints;
};

/// Half-open interval [lower, upper) on one coordinate.
struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t axis = 0;
};

using SegmentPredicate = std::variant<Universal, GridRect, HalfspaceChain, Interval>;

/// Full membership test of a predicate.
bool contains(const SegmentPredicate& predicate, const Vector& x);

/// Membership test assuming x already lies in the parent segment. For halfspace
/// chains only the last constraint is evaluated.
bool contains_given_parent(const SegmentPredicate& predicate, const Vector& x);

// ---------------------------------------------------------------------------
// Hierarchical partition
// ---------------------------------------------------------------------------

struct Segment {
  SegmentId id = 0;
  std::optional<SegmentId> parent;
  std::vector<SegmentId> children;  ///< empty <=> indivisible
  SegmentPredicate predicate;
  std::size_t depth = 1;  ///< root has depth 1

  bool divisible() const { return !children.empty(); }
};

/// Tree of segments where the children of a segment partition it. Immutable
/// once built; construct through Builder or one of the build_* functions.
class HierarchicalPartition {
 public:
  class Builder {
   public:
    explicit Builder(SegmentPredicate root_predicate = Universal{});

    /// Appends a child of `parent` and returns its id. Ids are dense and
    /// assigned in insertion order starting with 0 for the root.
    SegmentId add_child(SegmentId parent, SegmentPredicate predicate);

    /// Validates the tree (children count 0 or >= 2, unit halfspace normals)
    /// and returns the partition. Throws InvalidArgument.
    HierarchicalPartition build() &&;

   private:
    std::vector<Segment> segments_;
  };

  HierarchicalPartition() = default;

  SegmentId root() const { return 0; }
  std::size_t size() const { return segments_.size(); }
  const Segment& segment(SegmentId id) const { return segments_.at(id); }
  const std::vector<Segment>& segments() const { return segments_; }
  bool divisible(SegmentId id) const { return segment(id).divisible(); }

  /// Number of levels (depth of the deepest leaf).
  std::size_t depth() const;
  std::vector<SegmentId> leaves() const;
  std::size_t divisible_count() const;

  bool contains(SegmentId id, const Vector& x) const;

  /// Path root -> leaf of segments containing x. Throws OutOfDomain if x is
  /// outside the root region.
  std::vector<SegmentId> route(const Vector& x) const;

  /// True if `ancestor` is `descendant` or one of its ancestors.
  bool is_ancestor_or_self(SegmentId ancestor, SegmentId descendant) const;

  /// Rebuilds a partition from an explicit segment list (ids must equal their
  /// index, root first). Validates like Builder::build().
  static HierarchicalPartition from_segments(std::vector<Segment> segments);

 private:
  explicit HierarchicalPartition(std::vector<Segment> segments);
  static void validate(std::vector<Segment>& segments);

  std::vector<Segment> segments_;
};

/// Quad-tree over the pixel grid [0, width) x [0, height) with `levels` levels.
/// Children order: top-left, top-right, bottom-left, bottom-right (y grows
/// downwards); odd extents split at the floor midpoint.
HierarchicalPartition build_quadtree(int width, int height, int levels);

struct HalfspaceSplitParams {
  double mu = 0.0;
  double sigma = 1.0;  ///< variance of the offset draw
};

/// Complete binary tree of random hyperplane splits. Normals are drawn from
/// N(0, I) and normalised, offsets from N(mu, sigma) with sigma the variance.
/// Child 0 keeps the non-negative side.
HierarchicalPartition build_random_halfspaces(std::size_t dim, std::size_t depth, double mu,
                                              double sigma, std::uint64_t seed);

/// Same, with split parameters chosen per depth (entry k is used for splits of
/// segments at depth k + 1; the last entry repeats).
HierarchicalPartition build_random_halfspaces(std::size_t dim, std::size_t depth,
                                              const std::vector<HalfspaceSplitParams>& per_depth,
                                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Induced partitions
// ---------------------------------------------------------------------------

struct InducedPartition {
  std::vector<SegmentId> segment_ids;  ///< sorted ascending

  std::size_t size() const { return segment_ids.size(); }
  bool operator==(const InducedPartition&) const = default;
};

inline constexpr std::uint64_t kDefaultInducedPartitionCap = 1'000'000;

/// count(S) = 1 for leaves, 1 + prod count(children) otherwise. Saturates at
/// UINT64_MAX.
std::uint64_t count_induced_partitions(const HierarchicalPartition& h);

/// All subsets of h that partition the root region. Throws ResourceLimit when
/// the count exceeds `cap`.
std::vector<InducedPartition> enumerate_induced_partitions(
    const HierarchicalPartition& h, std::uint64_t cap = kDefaultInducedPartitionCap);

bool is_induced(const HierarchicalPartition& h, const InducedPartition& p);

/// Number of divisible segments that contain (or equal) some member of p.
std::size_t count_divisible_supersets(const HierarchicalPartition& h, const InducedPartition& p);

/// Member of p containing x. Throws OutOfDomain.
SegmentId member_containing(const HierarchicalPartition& h, const InducedPartition& p,
                            const Vector& x);

}  // namespace hpf
