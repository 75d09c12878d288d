#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gshs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a model, mode or scenario violates a declared invariant.
/// The message starts with the offending field path, e.g. `modes[1].box[0]`.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class EscapedTruncation : public Error {
 public:
  using Error::Error;
};

class Unsupported : public Error {
 public:
  using Error::Error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Interval {
  double lo = -kInf;
  double hi = kInf;

  bool bounded() const { return lo > -kInf && hi < kInf; }
  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

enum class Side { lower, upper };

/// A boundary face of a mode box declared to belong to the guard set.
struct GuardFace {
  std::size_t axis = 0;
  Side side = Side::upper;
  /// Restriction on the other axes; empty means the whole face. When present it
  /// has one entry per axis and the entry for `axis` is ignored.
  std::vector<Interval> extent;
};

struct ModeSpec {
  int id = 0;
  std::size_t dim = 0;
  std::vector<Interval> box;
  std::vector<GuardFace> guard_faces;

  bool discrete() const { return dim == 0; }
  double face_coordinate(const GuardFace& face) const {
    return face.side == Side::lower ? box[face.axis].lo : box[face.axis].hi;
  }
};

/// Checks the ModeSpec invariants; `path` prefixes error field names.
void validate_mode(const ModeSpec& mode, const std::string& path);

struct HybridState {
  int q = 0;
  std::vector<double> z;

  friend bool operator==(const HybridState&, const HybridState&) = default;
};

/// True iff z lies within `tol` (per axis) of one of the guard faces of `mode`.
bool in_guard(const ModeSpec& mode, std::span<const double> z, double tol);

/// Per-mode regular grid. `cells` is empty for a purely discrete mode, which
/// then contributes a single atom.
struct ModeGrid {
  std::vector<std::size_t> cells;
  std::vector<Interval> truncation;

  std::size_t dim() const { return cells.size(); }
};

/// Disjoint union of per-mode rectangular grids. Cells are numbered mode by
/// mode; within a mode the linear index runs with axis 0 fastest.
class Partition {
 public:
  explicit Partition(std::vector<ModeGrid> grids);

  std::size_t size() const { return offsets_.back(); }
  std::size_t mode_count() const { return grids_.size(); }
  const ModeGrid& grid(int q) const { return grids_.at(static_cast<std::size_t>(q)); }
  std::size_t dim(int q) const { return grid(q).dim(); }
  std::size_t max_dim() const { return max_dim_; }
  std::size_t offset(int q) const { return offsets_[static_cast<std::size_t>(q)]; }
  std::size_t mode_cells(int q) const {
    return offsets_[static_cast<std::size_t>(q) + 1] - offsets_[static_cast<std::size_t>(q)];
  }
  int mode_of(std::size_t cell) const;
  double spacing(int q, std::size_t axis) const;
  double cell_volume(std::size_t cell) const;
  /// Lebesgue volume of all truncation boxes plus one per atom.
  double total_volume() const;

  std::vector<std::size_t> multi_index(std::size_t cell) const;
  std::size_t linear_index(int q, std::span<const std::size_t> idx) const;
  std::vector<double> center(std::size_t cell) const;
  void center(std::size_t cell, std::span<double> out) const;

  /// Cell holding (q, z), or nullopt outside the truncation box. Points on a
  /// face shared by two cells go to the lower-indexed one.
  std::optional<std::size_t> try_locate(int q, std::span<const double> z) const;
  std::size_t locate(const HybridState& x) const;

  friend bool operator==(const Partition& a, const Partition& b) {
    return a.size() == b.size() && a.same_layout(b);
  }

 private:
  bool same_layout(const Partition& other) const;

  std::vector<ModeGrid> grids_;
  std::vector<std::size_t> offsets_;
  std::size_t max_dim_ = 0;
};

/// nu(union of cells): Lebesgue volume on continuous modes plus atom count.
double volume(const Partition& partition, std::span<const std::size_t> cells);

/// Piecewise data on a partition: one value per cell.
struct GridField {
  std::shared_ptr<const Partition> partition;
  std::vector<double> values;

  /// Multilinear interpolation between cell centres of mode q, constant within
  /// half a cell of the truncation edge, zero outside. Atoms return their value.
  double interpolate(int q, std::span<const double> z) const;
  /// Value of the cell holding (q, z); zero outside the truncation.
  double lookup(int q, std::span<const double> z) const;
};

}  // namespace gshs
