#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fbsdelab/errors.hpp"

namespace fbsdelab {

// Finite compact action set: a list of atoms in R^dim. Atom order is part of
// the identity (controls index into it), so equality is order-sensitive.
class ActionSpace {
 public:
  ActionSpace(std::vector<std::vector<double>> atoms) : atoms_(std::move(atoms)) {
    if (atoms_.empty()) throw ValidationError("atoms", "action space is empty");
    dim_ = atoms_.front().size();
    if (dim_ == 0) throw ValidationError("atoms", "atom dimension is zero");
    for (std::size_t j = 0; j < atoms_.size(); ++j) {
      if (atoms_[j].size() != dim_)
        throw ValidationError("atoms",
                              "atom " + std::to_string(j) + " has mixed dimension");
      for (double c : atoms_[j])
        if (!std::isfinite(c))
          throw ValidationError("atoms",
                                "atom " + std::to_string(j) + " is not finite");
    }
  }

  static ActionSpace scalar(std::vector<double> values) {
    std::vector<std::vector<double>> atoms;
    atoms.reserve(values.size());
    for (double v : values) atoms.push_back({v});
    return ActionSpace(std::move(atoms));
  }

  // `count` equispaced scalar atoms spanning [lo, hi].
  static ActionSpace equispaced(double lo, double hi, int count) {
    if (count < 1) throw ValidationError("count", "must be >= 1");
    std::vector<double> v(static_cast<std::size_t>(count));
    for (int j = 0; j < count; ++j)
      v[static_cast<std::size_t>(j)] =
          count == 1 ? lo : lo + (hi - lo) * j / (count - 1);
    return scalar(std::move(v));
  }

  std::size_t size() const noexcept { return atoms_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> atom(std::size_t j) const { return atoms_.at(j); }

  friend bool operator==(const ActionSpace& a, const ActionSpace& b) noexcept {
    return a.atoms_ == b.atoms_;
  }

 private:
  std::vector<std::vector<double>> atoms_;
  std::size_t dim_ = 0;
};

}  // namespace fbsdelab
