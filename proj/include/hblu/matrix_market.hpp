#pragma once

#include <iosfwd>
#include <string>

#include "hblu/csc.hpp"

namespace hblu {

// Reads a Matrix Market coordinate file (real or integer values, general or
// symmetric). Indices are converted to 0-based; symmetric storage is expanded
// by mirroring off-diagonal entries. Array format, complex values and
// pattern-only files are rejected. Parse errors name the line number.
Triplets mm_read(const std::string& path);
Triplets mm_read(std::istream& in, const std::string& name);

// Writes coordinate/real/general with 1-based indices and %.17g values, which
// round-trips doubles exactly.
void mm_write(const std::string& path, const CscMatrix& a);
void mm_write(std::ostream& out, const CscMatrix& a);

}  // namespace hblu
