#include "gshs/state_space.hpp"

#include <algorithm>
#include <cmath>

namespace gshs {

void validate_mode(const ModeSpec& mode, const std::string& path) {
  if (mode.dim == 0) {
    if (!mode.box.empty()) throw ValidationError(path + ".box", "must be empty for a discrete mode");
    if (!mode.guard_faces.empty())
      throw ValidationError(path + ".guard_faces", "must be empty for a discrete mode");
    return;
  }
  if (mode.box.size() != mode.dim)
    throw ValidationError(path + ".box", "expected " + std::to_string(mode.dim) + " axes");
  for (std::size_t a = 0; a < mode.dim; ++a) {
    const auto& iv = mode.box[a];
    if (std::isnan(iv.lo) || std::isnan(iv.hi) || !(iv.lo < iv.hi))
      throw ValidationError(path + ".box[" + std::to_string(a) + "]", "lower bound must be below upper bound");
  }
  for (std::size_t g = 0; g < mode.guard_faces.size(); ++g) {
    const auto& face = mode.guard_faces[g];
    const std::string fpath = path + ".guard_faces[" + std::to_string(g) + "]";
    if (face.axis >= mode.dim) throw ValidationError(fpath + ".axis", "axis out of range");
    if (!std::isfinite(mode.face_coordinate(face)))
      throw ValidationError(fpath, "face lies at an infinite bound, not on the box boundary");
    if (!face.extent.empty() && face.extent.size() != mode.dim)
      throw ValidationError(fpath + ".extent", "needs one interval per axis");
  }
}

bool in_guard(const ModeSpec& mode, std::span<const double> z, double tol) {
  for (const auto& face : mode.guard_faces) {
    if (std::abs(z[face.axis] - mode.face_coordinate(face)) > tol) continue;
    bool inside = true;
    if (!face.extent.empty()) {
      for (std::size_t a = 0; a < mode.dim && inside; ++a) {
        if (a == face.axis) continue;
        inside = z[a] >= face.extent[a].lo - tol && z[a] <= face.extent[a].hi + tol;
      }
    }
    if (inside) return true;
  }
  return false;
}

Partition::Partition(std::vector<ModeGrid> grids) : grids_(std::move(grids)) {
  if (grids_.empty()) throw ValidationError("partition", "needs at least one mode");
  offsets_.reserve(grids_.size() + 1);
  offsets_.push_back(0);
  for (std::size_t q = 0; q < grids_.size(); ++q) {
    const auto& g = grids_[q];
    const std::string path = "partition.modes[" + std::to_string(q) + "]";
    if (g.truncation.size() != g.cells.size())
      throw ValidationError(path + ".truncation", "needs one interval per axis");
    std::size_t n = 1;
    for (std::size_t a = 0; a < g.dim(); ++a) {
      if (g.cells[a] == 0) throw ValidationError(path + ".cells", "cell count must be positive");
      if (!g.truncation[a].bounded() || !(g.truncation[a].lo < g.truncation[a].hi))
        throw ValidationError(path + ".truncation[" + std::to_string(a) + "]", "must be a finite non-empty interval");
      n *= g.cells[a];
    }
    max_dim_ = std::max(max_dim_, g.dim());
    offsets_.push_back(offsets_.back() + n);
  }
}

int Partition::mode_of(std::size_t cell) const {
  if (cell >= size()) throw Error("invalid cell index " + std::to_string(cell));
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), cell);
  return static_cast<int>(it - offsets_.begin()) - 1;
}

double Partition::spacing(int q, std::size_t axis) const {
  const auto& g = grid(q);
  return g.truncation[axis].width() / static_cast<double>(g.cells[axis]);
}

double Partition::cell_volume(std::size_t cell) const {
  const int q = mode_of(cell);
  double v = 1.0;
  for (std::size_t a = 0; a < dim(q); ++a) v *= spacing(q, a);
  return v;
}

double Partition::total_volume() const {
  double v = 0.0;
  for (std::size_t q = 0; q < grids_.size(); ++q) {
    double m = 1.0;
    for (const auto& iv : grids_[q].truncation) m *= iv.width();
    v += m;
  }
  return v;
}

std::vector<std::size_t> Partition::multi_index(std::size_t cell) const {
  const int q = mode_of(cell);
  const auto& g = grid(q);
  std::size_t local = cell - offset(q);
  std::vector<std::size_t> idx(g.dim());
  for (std::size_t a = 0; a < g.dim(); ++a) {
    idx[a] = local % g.cells[a];
    local /= g.cells[a];
  }
  return idx;
}

std::size_t Partition::linear_index(int q, std::span<const std::size_t> idx) const {
  const auto& g = grid(q);
  std::size_t local = 0;
  std::size_t stride = 1;
  for (std::size_t a = 0; a < g.dim(); ++a) {
    if (idx[a] >= g.cells[a]) throw Error("cell multi-index out of range");
    local += idx[a] * stride;
    stride *= g.cells[a];
  }
  return offset(q) + local;
}

std::vector<double> Partition::center(std::size_t cell) const {
  std::vector<double> c(dim(mode_of(cell)));
  center(cell, c);
  return c;
}

void Partition::center(std::size_t cell, std::span<double> out) const {
  const int q = mode_of(cell);
  const auto& g = grid(q);
  std::size_t local = cell - offset(q);
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const std::size_t i = local % g.cells[a];
    local /= g.cells[a];
    out[a] = g.truncation[a].lo + (static_cast<double>(i) + 0.5) * spacing(q, a);
  }
}

std::optional<std::size_t> Partition::try_locate(int q, std::span<const double> z) const {
  if (q < 0 || static_cast<std::size_t>(q) >= grids_.size()) return std::nullopt;
  const auto& g = grid(q);
  if (z.size() != g.dim()) return std::nullopt;
  std::size_t local = 0;
  std::size_t stride = 1;
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const auto& iv = g.truncation[a];
    if (!(z[a] >= iv.lo && z[a] <= iv.hi)) return std::nullopt;
    const double n = static_cast<double>(g.cells[a]);
    const double u = (z[a] - iv.lo) / iv.width() * n;
    // Snap points sitting on a face (up to rounding) so the lower cell wins.
    const double k = std::round(u);
    const double pos = std::abs(u - k) <= 1e-12 * std::max(1.0, n) ? k : std::ceil(u);
    const double i = std::clamp(pos - 1.0, 0.0, n - 1.0);
    local += static_cast<std::size_t>(i) * stride;
    stride *= g.cells[a];
  }
  return offset(q) + local;
}

std::size_t Partition::locate(const HybridState& x) const {
  auto c = try_locate(x.q, x.z);
  if (!c) throw EscapedTruncation("state in mode " + std::to_string(x.q) + " escaped the truncation box");
  return *c;
}

bool Partition::same_layout(const Partition& other) const {
  if (grids_.size() != other.grids_.size()) return false;
  for (std::size_t q = 0; q < grids_.size(); ++q) {
    const auto& a = grids_[q];
    const auto& b = other.grids_[q];
    if (a.cells != b.cells) return false;
    for (std::size_t i = 0; i < a.dim(); ++i)
      if (a.truncation[i].lo != b.truncation[i].lo || a.truncation[i].hi != b.truncation[i].hi) return false;
  }
  return true;
}

double volume(const Partition& partition, std::span<const std::size_t> cells) {
  double v = 0.0;
  for (auto c : cells) {
    if (c >= partition.size()) throw Error("invalid cell index " + std::to_string(c));
    v += partition.cell_volume(c);
  }
  return v;
}

double GridField::interpolate(int q, std::span<const double> z) const {
  const auto& part = *partition;
  const auto& g = part.grid(q);
  const std::size_t d = g.dim();
  if (d == 0) return values[part.offset(q)];
  for (std::size_t a = 0; a < d; ++a)
    if (!g.truncation[a].contains(z[a])) return 0.0;

  // Lower corner index and weight per axis.
  std::vector<std::size_t> base(d);
  std::vector<double> w(d);
  for (std::size_t a = 0; a < d; ++a) {
    const double h = part.spacing(q, a);
    const double s = (z[a] - g.truncation[a].lo) / h - 0.5;
    const double n = static_cast<double>(g.cells[a]);
    if (s <= 0.0) {
      base[a] = 0;
      w[a] = 0.0;
    } else if (s >= n - 1.0) {
      base[a] = g.cells[a] - 1;
      w[a] = 0.0;
    } else {
      const double f = std::floor(s);
      base[a] = static_cast<std::size_t>(f);
      w[a] = s - f;
    }
  }
  double acc = 0.0;
  std::vector<std::size_t> idx(d);
  for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
    double weight = 1.0;
    for (std::size_t a = 0; a < d; ++a) {
      const bool up = (corner >> a) & 1U;
      weight *= up ? w[a] : 1.0 - w[a];
      idx[a] = std::min(base[a] + (up ? 1 : 0), g.cells[a] - 1);
    }
    if (weight != 0.0) acc += weight * values[part.linear_index(q, idx)];
  }
  return acc;
}

double GridField::lookup(int q, std::span<const double> z) const {
  auto c = partition->try_locate(q, z);
  return c ? values[*c] : 0.0;
}

}  // namespace gshs
