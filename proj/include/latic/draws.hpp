#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latic/dataset.hpp"
#include "latic/model.hpp"

namespace latic {

// Retained draws, chain-major rows: row = chain * n_iter + iter. Columns are
// omega | psi | zeta in layout order.
struct DrawMatrix {
  int n_chains = 0, n_iter = 0;
  int omega_dim = 0, psi_dim = 0, zeta_dim = 0;
  std::vector<std::string> names;
  Eigen::MatrixXd data;

  int total() const { return n_chains * n_iter; }
  int cols() const { return omega_dim + psi_dim + zeta_dim; }

  Eigen::VectorXd omega(int s) const { return data.row(s).segment(0, omega_dim); }
  Eigen::VectorXd psi(int s) const { return data.row(s).segment(omega_dim, psi_dim); }
  Eigen::VectorXd zeta(int s) const { return data.row(s).segment(omega_dim + psi_dim, zeta_dim); }

  Eigen::Ref<const Eigen::MatrixXd> omega_block() const { return data.leftCols(omega_dim); }
  Eigen::Ref<const Eigen::MatrixXd> psi_block() const { return data.middleCols(omega_dim, psi_dim); }
  Eigen::Ref<const Eigen::MatrixXd> zeta_block() const { return data.rightCols(zeta_dim); }

  // posterior means on the stored (natural) scale
  ParamPoint posterior_mean() const {
    ParamPoint p;
    const Eigen::VectorXd m = data.colwise().mean();
    p.omega = m.segment(0, omega_dim);
    p.psi = m.segment(omega_dim, psi_dim);
    p.zeta = m.segment(omega_dim + psi_dim, zeta_dim);
    return p;
  }

  std::vector<Eigen::VectorXd> column_chains(int col) const {
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(n_chains));
    for (int c = 0; c < n_chains; ++c) out.emplace_back(data.col(col).segment(c * n_iter, n_iter));
    return out;
  }
};

inline std::vector<std::string> draw_column_names(const Layout& lay, int n_zeta) {
  std::vector<std::string> names = lay.omega_names;
  names.insert(names.end(), lay.psi_names.begin(), lay.psi_names.end());
  for (int j = 0; j < n_zeta; ++j) names.push_back("zeta_" + std::to_string(j + 1));
  return names;
}

inline void write_draws_csv(const DrawMatrix& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
  out << "chain,iter";
  for (const auto& n : d.names) out << ',' << n;
  out << '\n';
  out << std::setprecision(17);
  for (int c = 0; c < d.n_chains; ++c)
    for (int t = 0; t < d.n_iter; ++t) {
      out << c + 1 << ',' << t + 1;
      const int s = c * d.n_iter + t;
      for (int k = 0; k < d.cols(); ++k) out << ',' << d.data(s, k);
      out << '\n';
    }
}

// The layout fixes which columns are omega/psi; remaining zeta_* columns give
// the latent block. Column names must match the layout exactly, so draws
// produced by an external sampler need the same naming.
inline DrawMatrix read_draws_csv(const std::string& path, const Layout& lay) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "chain" || header[1] != "iter")
    throw std::invalid_argument(path + ":1: header must start with chain,iter");

  DrawMatrix d;
  d.names.assign(header.begin() + 2, header.end());
  d.omega_dim = lay.n_omega;
  d.psi_dim = lay.n_psi;
  d.zeta_dim = static_cast<int>(d.names.size()) - lay.n_omega - lay.n_psi;
  if (d.zeta_dim < 0) throw std::invalid_argument(path + ": fewer columns than the model's parameters");
  for (int k = 0; k < lay.n_omega; ++k)
    if (d.names[static_cast<std::size_t>(k)] != lay.omega_names[static_cast<std::size_t>(k)])
      throw std::invalid_argument(path + ": column '" + d.names[static_cast<std::size_t>(k)] +
                                  "' does not match expected parameter '" +
                                  lay.omega_names[static_cast<std::size_t>(k)] + "'");
  for (int k = 0; k < lay.n_psi; ++k)
    if (d.names[static_cast<std::size_t>(lay.n_omega + k)] != lay.psi_names[static_cast<std::size_t>(k)])
      throw std::invalid_argument(path + ": psi column mismatch at '" + lay.psi_names[static_cast<std::size_t>(k)] + "'");

  std::vector<double> values;
  int rows = 0, max_chain = 0;
  std::vector<int> chain_of_row;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": wrong field count");
    const int chain = std::stoi(f[0]);
    chain_of_row.push_back(chain);
    max_chain = std::max(max_chain, chain);
    for (std::size_t k = 2; k < f.size(); ++k) values.push_back(std::stod(f[k]));
    ++rows;
  }
  if (rows == 0) throw std::invalid_argument(path + ": no draws");
  d.n_chains = max_chain;
  if (rows % max_chain != 0) throw std::invalid_argument(path + ": chains have unequal lengths");
  d.n_iter = rows / max_chain;
  for (int r = 0; r < rows; ++r)
    if (chain_of_row[static_cast<std::size_t>(r)] != r / d.n_iter + 1)
      throw std::invalid_argument(path + ": rows must be grouped by chain in order");
  d.data = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), rows, static_cast<Eigen::Index>(d.names.size()));
  return d;
}

}  // namespace latic
