#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "dbgcrot/sparse.hpp"

namespace dbgcrot {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  std::ostringstream msg;
  msg << "matrix market line " << line << ": " << what;
  throw FormatError(msg.str());
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

SparseMatrix<double> read_matrix_market(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) fail(1, "empty input");
  ++line_no;

  std::istringstream header(line);
  std::string banner, object, format, field, symmetry;
  header >> banner >> object >> format >> field >> symmetry;
  if (banner != "%%MatrixMarket") fail(line_no, "missing %%MatrixMarket banner");
  if (lower(object) != "matrix") fail(line_no, "object '" + object + "' is not 'matrix'");
  if (lower(format) != "coordinate") fail(line_no, "format '" + format + "' unsupported, need 'coordinate'");
  field = lower(field);
  if (field != "real" && field != "integer") fail(line_no, "field '" + field + "' unsupported, need 'real'");
  symmetry = lower(symmetry);
  if (symmetry != "general" && symmetry != "symmetric")
    fail(line_no, "symmetry '" + symmetry + "' unsupported, need 'general' or 'symmetric'");
  const bool symmetric = symmetry == "symmetric";

  // Size line, after comments.
  long long rows = 0, cols = 0, nnz = 0;
  for (;;) {
    if (!std::getline(in, line)) fail(line_no + 1, "missing size line");
    ++line_no;
    if (line.empty() || line[0] == '%' || blank(line)) continue;
    std::istringstream size(line);
    if (!(size >> rows >> cols >> nnz)) fail(line_no, "malformed size line");
    break;
  }
  if (rows < 1 || cols < 1 || nnz < 0) fail(line_no, "invalid dimensions");
  if (rows != cols) fail(line_no, "matrix is not square");
  if (rows > std::numeric_limits<int>::max() || nnz > std::numeric_limits<int>::max() / 2)
    fail(line_no, "dimensions overflow the index type");

  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(symmetric ? 2 * nnz : nnz));
  long long seen = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '%' || blank(line)) continue;
    if (seen == nnz) fail(line_no, "more entries than declared");
    std::istringstream entry(line);
    long long i = 0, j = 0;
    double v = 0;
    if (!(entry >> i >> j >> v)) fail(line_no, "malformed entry");
    if (i < 1 || i > rows || j < 1 || j > cols) fail(line_no, "index out of range");
    if (!std::isfinite(v)) fail(line_no, "non-finite value");
    entries.emplace_back(static_cast<int>(i - 1), static_cast<int>(j - 1), v);
    if (symmetric && i != j) entries.emplace_back(static_cast<int>(j - 1), static_cast<int>(i - 1), v);
    ++seen;
  }
  if (seen != nnz) fail(line_no, "fewer entries than declared");
  return sparse_from_triplets<double>(static_cast<Index>(rows), entries);
}

SparseMatrix<double> read_matrix_market_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open matrix file '" + path + "'");
  return read_matrix_market(in);
}

void write_matrix_market(std::ostream& out, const SparseMatrix<double>& a) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << a.rows() << ' ' << a.cols() << ' ' << a.nonZeros() << '\n';
  out << std::setprecision(17);
  for (Index r = 0; r < a.outerSize(); ++r) {
    for (SparseMatrix<double>::InnerIterator it(a, r); it; ++it) {
      out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
    }
  }
}

SparseMatrix<double> convection_diffusion(Index grid, double beta) {
  if (grid < 1) throw UsageError("convection_diffusion: grid must be positive");
  const Index n = grid * grid;
  const double h = 1.0 / static_cast<double>(grid + 1);
  const double up = -1.0 + 0.5 * beta * h;    // u_{i+1}
  const double down = -1.0 - 0.5 * beta * h;  // u_{i-1}
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(5 * n));
  auto id = [grid](Index x, Index y) { return static_cast<int>(y * grid + x); };
  for (Index y = 0; y < grid; ++y) {
    for (Index x = 0; x < grid; ++x) {
      const int row = id(x, y);
      entries.emplace_back(row, row, 4.0);
      if (x > 0) entries.emplace_back(row, id(x - 1, y), down);
      if (x + 1 < grid) entries.emplace_back(row, id(x + 1, y), up);
      if (y > 0) entries.emplace_back(row, id(x, y - 1), down);
      if (y + 1 < grid) entries.emplace_back(row, id(x, y + 1), up);
    }
  }
  return sparse_from_triplets<double>(n, entries);
}

}  // namespace dbgcrot
