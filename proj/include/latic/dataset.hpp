#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace latic {

// One cluster j: responses y_i with unit indices, cluster-level covariates x
// (leading entry is the constant 1), optional group label (0-based).
struct Cluster {
  long id = 0;
  Eigen::VectorXd y;
  std::vector<int> units;  // 0-based unit/item/indicator index per response
  Eigen::VectorXd x;       // length K incl. constant; K=1 when no covariates
  int group = 0;
  double known_sd = std::numeric_limits<double>::quiet_NaN();  // fixed unit SD (eight-schools)
};

struct ClusteredDataset {
  std::vector<Cluster> clusters;
  int n_groups = 1;
  bool has_groups = false;
  std::vector<std::string> covariate_names;  // excl. constant

  int n_clusters() const { return static_cast<int>(clusters.size()); }
  int total_units() const {
    int n = 0;
    for (const auto& c : clusters) n += static_cast<int>(c.y.size());
    return n;
  }
  int n_covariates() const { return static_cast<int>(covariate_names.size()) + 1; }

  void validate() const {
    for (const auto& c : clusters) {
      if (c.y.size() < 1) throw std::invalid_argument("cluster " + std::to_string(c.id) + " has no units");
      if (c.y.size() != static_cast<Eigen::Index>(c.units.size()))
        throw std::invalid_argument("unit index / response length mismatch");
      if (c.x.size() < 1 || c.x[0] != 1.0) throw std::invalid_argument("covariate vector must start with constant 1");
      if (has_groups && (c.group < 0 || c.group >= n_groups))
        throw std::invalid_argument("group label out of range");
    }
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    while (!tok.empty() && (tok.back() == '\r' || tok.back() == ' ')) tok.pop_back();
    while (!tok.empty() && tok.front() == ' ') tok.erase(tok.begin());
    out.push_back(tok);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

// Long format: cluster,unit,response[,cov...][,group]. Covariates and group
// are cluster-level; values must agree across a cluster's rows.
inline ClusteredDataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path + ": empty file");
  auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "cluster" || header[1] != "unit" || header[2] != "response")
    throw std::invalid_argument(path + ":1: header must start with cluster,unit,response");

  const bool has_group = !header.empty() && header.back() == "group";
  const std::size_t n_cov = header.size() - 3 - (has_group ? 1 : 0);

  ClusteredDataset data;
  data.has_groups = has_group;
  for (std::size_t k = 0; k < n_cov; ++k) data.covariate_names.push_back(header[3 + k]);

  std::map<long, std::size_t> index_of;
  std::vector<std::vector<double>> ys;
  std::vector<std::vector<int>> units;
  int max_group = -1;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    try {
      const long cid = std::stol(f[0]);
      const int unit = std::stoi(f[1]);
      const double y = std::stod(f[2]);
      Eigen::VectorXd x(n_cov + 1);
      x[0] = 1.0;
      for (std::size_t k = 0; k < n_cov; ++k) x[static_cast<Eigen::Index>(k) + 1] = std::stod(f[3 + k]);
      const int group = has_group ? std::stoi(f.back()) - 1 : 0;

      auto [it, inserted] = index_of.try_emplace(cid, data.clusters.size());
      if (inserted) {
        data.clusters.push_back(Cluster{cid, {}, {}, x, group});
        ys.emplace_back();
        units.emplace_back();
      } else {
        const Cluster& c = data.clusters[it->second];
        if (c.group != group || c.x != x)
          throw std::invalid_argument("covariate/group values differ within cluster " + f[0]);
      }
      ys[it->second].push_back(y);
      units[it->second].push_back(unit - 1);
      max_group = std::max(max_group, group);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (std::size_t j = 0; j < data.clusters.size(); ++j) {
    data.clusters[j].y = Eigen::Map<Eigen::VectorXd>(ys[j].data(), static_cast<Eigen::Index>(ys[j].size()));
    data.clusters[j].units = std::move(units[j]);
  }
  data.n_groups = has_group ? max_group + 1 : 1;
  data.validate();
  return data;
}

inline void write_csv(const ClusteredDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
  out << "cluster,unit,response";
  for (const auto& n : data.covariate_names) out << ',' << n;
  if (data.has_groups) out << ",group";
  out << '\n';
  out.precision(17);
  for (const auto& c : data.clusters) {
    for (Eigen::Index i = 0; i < c.y.size(); ++i) {
      out << c.id << ',' << c.units[static_cast<std::size_t>(i)] + 1 << ',' << c.y[i];
      for (Eigen::Index k = 1; k < c.x.size(); ++k) out << ',' << c.x[k];
      if (data.has_groups) out << ',' << c.group + 1;
      out << '\n';
    }
  }
}

// Rubin (1981) SAT coaching effects; responses scaled by s_scale, standard
// errors left unscaled (the stress test from the WAIC/LOO comparison).
inline Eigen::VectorXd eight_schools_sigmas() {
  Eigen::VectorXd s(8);
  s << 15, 10, 16, 11, 9, 11, 10, 18;
  return s;
}

inline ClusteredDataset eight_schools_dataset(double s_scale = 1.0) {
  Eigen::VectorXd y(8);
  y << 28, 8, -3, 7, -1, 1, 18, 12;
  ClusteredDataset data;
  const Eigen::VectorXd sig = eight_schools_sigmas();
  for (int j = 0; j < 8; ++j) {
    Cluster c;
    c.id = j + 1;
    c.y = Eigen::VectorXd::Constant(1, y[j] * s_scale);
    c.units = {0};
    c.x = Eigen::VectorXd::Ones(1);
    c.known_sd = sig[j];
    data.clusters.push_back(std::move(c));
  }
  return data;
}

}  // namespace latic
