#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hblu {

// All dimensions and entry counts use 64-bit signed indices so that block
// offset arithmetic never overflows on large inputs.
using index_t = std::int64_t;

enum class ErrorKind {
  bad_input,          // malformed file, invalid triplets, dimension mismatch
  structurally_singular,
  numerically_singular,
  unsupported,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

// Structural singularity: no perfect matching exists. Carries the size of the
// best matching found so the caller can report the structural rank.
class StructurallySingularError : public Error {
public:
  StructurallySingularError(index_t max_cardinality, const std::string& msg)
      : Error(ErrorKind::structurally_singular, msg),
        max_cardinality_(max_cardinality) {}
  index_t max_cardinality() const { return max_cardinality_; }

private:
  index_t max_cardinality_;
};

// Numeric singularity: a pivot column had no usable nonzero. The column index
// is global unless the message says otherwise.
class SingularError : public Error {
public:
  SingularError(index_t column, const std::string& msg)
      : Error(ErrorKind::numerically_singular, msg), column_(column) {}
  index_t column() const { return column_; }

private:
  index_t column_;
};

// A permutation kept in both directions: forward[old] = new, inverse[new] = old.
struct Permutation {
  std::vector<index_t> forward;
  std::vector<index_t> inverse;

  Permutation() = default;

  static Permutation identity(index_t n) {
    Permutation p;
    p.forward.resize(n);
    p.inverse.resize(n);
    for (index_t i = 0; i < n; ++i) {
      p.forward[i] = i;
      p.inverse[i] = i;
    }
    return p;
  }

  // Builds from the forward map and checks it is a bijection.
  static Permutation from_forward(std::vector<index_t> fwd) {
    Permutation p;
    const index_t n = static_cast<index_t>(fwd.size());
    p.inverse.assign(n, -1);
    for (index_t i = 0; i < n; ++i) {
      index_t j = fwd[i];
      if (j < 0 || j >= n || p.inverse[j] != -1)
        throw Error(ErrorKind::bad_input, "not a permutation");
      p.inverse[j] = i;
    }
    p.forward = std::move(fwd);
    return p;
  }

  static Permutation from_inverse(std::vector<index_t> inv) {
    Permutation p = from_forward(std::move(inv));
    std::swap(p.forward, p.inverse);
    return p;
  }

  index_t size() const { return static_cast<index_t>(forward.size()); }

  bool is_identity() const {
    for (index_t i = 0; i < size(); ++i)
      if (forward[i] != i) return false;
    return true;
  }

  Permutation inverted() const {
    Permutation p;
    p.forward = inverse;
    p.inverse = forward;
    return p;
  }

  // Composition: (other_after * this).forward[i] = other_after.forward[this->forward[i]].
  Permutation then(const Permutation& after) const {
    Permutation p;
    p.forward.resize(size());
    for (index_t i = 0; i < size(); ++i)
      p.forward[i] = after.forward[forward[i]];
    return from_forward(std::move(p.forward));
  }
};

}  // namespace hblu
