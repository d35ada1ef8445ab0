#include "nmpc/qp/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace nmpc::qp {

namespace {

constexpr const char* kMagic = "ocpqp";
constexpr int kVersion = 1;

void put_value(std::ostream& os, double v) {
  if (std::isinf(v))
    os << (v > 0 ? "inf" : "-inf");
  else {
    char buf[32];
    snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
  }
}

void put_matrix(std::ostream& os, const char* label, const DenseMatrix& m) {
  os << label << ' ' << m.rows() << ' ' << m.cols();
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      os << ' ';
      put_value(os, m(i, j));
    }
  os << '\n';
}

void put_vector(std::ostream& os, const char* label, const Vec& v) {
  os << label << ' ' << v.size();
  for (double x : v) {
    os << ' ';
    put_value(os, x);
  }
  os << '\n';
}

double get_value(std::istream& is, const char* what) {
  std::string tok;
  if (!(is >> tok)) throw ConfigError(std::string("qp dump: missing value in ") + what);
  if (tok == "inf") return kInf;
  if (tok == "-inf") return -kInf;
  try {
    size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("qp dump: bad number '") + tok + "' in " + what);
  }
}

void expect_label(std::istream& is, const std::string& label) {
  std::string tok;
  if (!(is >> tok) || tok != label)
    throw ConfigError("qp dump: expected '" + label + "', got '" + tok + "'");
}

DenseMatrix get_matrix(std::istream& is, const std::string& label) {
  expect_label(is, label);
  int rows = 0, cols = 0;
  if (!(is >> rows >> cols) || rows < 0 || cols < 0)
    throw ConfigError("qp dump: bad shape for " + label);
  DenseMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = get_value(is, label.c_str());
  return m;
}

Vec get_vector(std::istream& is, const std::string& label) {
  expect_label(is, label);
  int n = 0;
  if (!(is >> n) || n < 0) throw ConfigError("qp dump: bad length for " + label);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = get_value(is, label.c_str());
  return v;
}

std::vector<int> get_ints(std::istream& is, const std::string& label, int count) {
  expect_label(is, label);
  std::vector<int> v(count);
  for (int& x : v)
    if (!(is >> x)) throw ConfigError("qp dump: bad integer list for " + label);
  return v;
}

}  // namespace

void write_ocp_qp(std::ostream& os, const OcpQp& qp) {
  qp.validate();
  const int N = qp.dims.N;
  os << kMagic << ' ' << kVersion << '\n';
  os << "N " << N << '\n';
  auto put_ints = [&](const char* label, const std::vector<int>& v) {
    os << label;
    for (int x : v) os << ' ' << x;
    os << '\n';
  };
  put_ints("nx", qp.dims.nx);
  put_ints("nu", qp.dims.nu);
  put_ints("ng", qp.dims.ng);
  put_ints("ns", qp.dims.ns);
  for (int k = 0; k <= N; ++k) {
    const OcpQpStage& st = qp.stages[k];
    os << "stage " << k << '\n';
    put_matrix(os, "Q", st.Q);
    put_matrix(os, "S", st.S);
    put_matrix(os, "R", st.R);
    put_vector(os, "q", st.q);
    put_vector(os, "r", st.r);
    if (k < N) {
      put_matrix(os, "A", st.A);
      put_matrix(os, "B", st.B);
      put_vector(os, "b", st.b);
    }
    put_matrix(os, "Gx", st.Gx);
    put_matrix(os, "Gu", st.Gu);
    put_vector(os, "lg", st.lg);
    put_vector(os, "ug", st.ug);
    put_matrix(os, "Js", st.Js);
    put_vector(os, "P", st.P_diag);
    put_vector(os, "p", st.p_slack);
  }
}

OcpQp read_ocp_qp(std::istream& is) {
  expect_label(is, kMagic);
  int version = 0;
  if (!(is >> version) || version != kVersion)
    throw ConfigError("qp dump: unsupported version " + std::to_string(version));
  expect_label(is, "N");
  int N = 0;
  if (!(is >> N) || N < 0) throw ConfigError("qp dump: bad horizon");

  OcpQpDims dims;
  dims.N = N;
  dims.nx = get_ints(is, "nx", N + 1);
  dims.nu = get_ints(is, "nu", N);
  dims.ng = get_ints(is, "ng", N + 1);
  dims.ns = get_ints(is, "ns", N + 1);
  dims.validate();

  OcpQp qp = OcpQp::zeros(dims);
  for (int k = 0; k <= N; ++k) {
    expect_label(is, "stage");
    int idx = -1;
    if (!(is >> idx) || idx != k) throw ConfigError("qp dump: stage index out of order");
    OcpQpStage& st = qp.stages[k];
    st.Q = get_matrix(is, "Q");
    st.S = get_matrix(is, "S");
    st.R = get_matrix(is, "R");
    st.q = get_vector(is, "q");
    st.r = get_vector(is, "r");
    if (k < N) {
      st.A = get_matrix(is, "A");
      st.B = get_matrix(is, "B");
      st.b = get_vector(is, "b");
    }
    st.Gx = get_matrix(is, "Gx");
    st.Gu = get_matrix(is, "Gu");
    st.lg = get_vector(is, "lg");
    st.ug = get_vector(is, "ug");
    st.Js = get_matrix(is, "Js");
    st.P_diag = get_vector(is, "P");
    st.p_slack = get_vector(is, "p");
  }
  qp.validate();
  return qp;
}

void write_ocp_qp_file(const std::string& path, const OcpQp& qp) {
  std::ofstream os(path);
  if (!os) throw ConfigError("qp dump: cannot open " + path + " for writing");
  write_ocp_qp(os, qp);
}

OcpQp read_ocp_qp_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("qp dump: cannot open " + path);
  return read_ocp_qp(is);
}

}  // namespace nmpc::qp
