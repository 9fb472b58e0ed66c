#include "hblu/matrix_market.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hblu {

namespace {

[[noreturn]] void fail(const std::string& name, index_t line,
                       const std::string& what) {
  throw Error(ErrorKind::bad_input,
              name + ":" + std::to_string(line) + ": " + what);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

Triplets mm_read(std::istream& in, const std::string& name) {
  std::string line;
  index_t lineno = 0;

  if (!std::getline(in, line)) fail(name, 1, "empty file");
  ++lineno;
  std::istringstream header(line);
  std::string banner, object, format, field, symmetry;
  header >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket") fail(name, lineno, "missing MatrixMarket banner");
  object = lower(object);
  format = lower(format);
  field = lower(field);
  symmetry = lower(symmetry);
  if (object != "matrix") fail(name, lineno, "unsupported object: " + object);
  if (format != "coordinate")
    fail(name, lineno, "unsupported format: " + format + " (coordinate only)");
  if (field != "real" && field != "integer")
    fail(name, lineno, "unsupported field: " + field + " (real or integer only)");
  if (symmetry != "general" && symmetry != "symmetric")
    fail(name, lineno,
         "unsupported symmetry: " + symmetry + " (general or symmetric only)");
  const bool symmetric = symmetry == "symmetric";

  // Size line: first non-comment, non-blank line.
  index_t nrows = 0, ncols = 0, nnz_header = 0;
  for (;;) {
    if (!std::getline(in, line)) fail(name, lineno + 1, "missing size line");
    ++lineno;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream sz(line);
    if (!(sz >> nrows >> ncols >> nnz_header))
      fail(name, lineno, "malformed size line");
    break;
  }
  if (nrows < 0 || ncols < 0 || nnz_header < 0)
    fail(name, lineno, "negative size");
  if (symmetric && nrows != ncols)
    fail(name, lineno, "symmetric matrix must be square");

  Triplets t;
  t.nrows = nrows;
  t.ncols = ncols;
  t.row.reserve(symmetric ? 2 * nnz_header : nnz_header);
  t.col.reserve(symmetric ? 2 * nnz_header : nnz_header);
  t.val.reserve(symmetric ? 2 * nnz_header : nnz_header);

  index_t seen = 0;
  while (seen < nnz_header) {
    if (!std::getline(in, line))
      fail(name, lineno + 1,
           "unexpected end of file: expected " + std::to_string(nnz_header) +
               " entries, got " + std::to_string(seen));
    ++lineno;
    if (line.empty() || line[0] == '%') continue;
    std::istringstream es(line);
    index_t i = 0, j = 0;
    double v = 0.0;
    if (!(es >> i >> j >> v)) fail(name, lineno, "malformed entry");
    if (i < 1 || i > nrows || j < 1 || j > ncols)
      fail(name, lineno, "entry index out of range");
    t.add(i - 1, j - 1, v);
    if (symmetric && i != j) t.add(j - 1, i - 1, v);
    ++seen;
  }
  return t;
}

Triplets mm_read(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::bad_input, "cannot open " + path);
  return mm_read(in, path);
}

void mm_write(std::ostream& out, const CscMatrix& a) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << a.nrows << " " << a.ncols << " " << a.nnz() << "\n";
  char buf[96];
  for (index_t j = 0; j < a.ncols; ++j)
    for (index_t p = a.col_ptr[j]; p < a.col_ptr[j + 1]; ++p) {
      std::snprintf(buf, sizeof(buf), "%lld %lld %.17g\n",
                    static_cast<long long>(a.row_idx[p] + 1),
                    static_cast<long long>(j + 1), a.values[p]);
      out << buf;
    }
}

void mm_write(const std::string& path, const CscMatrix& a) {
  std::ofstream out(path);
  if (!out)
    throw Error(ErrorKind::bad_input, "cannot open " + path + " for writing");
  mm_write(out, a);
  if (!out) throw Error(ErrorKind::bad_input, "write failed: " + path);
}

}  // namespace hblu
