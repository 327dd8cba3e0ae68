#include "cbc/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

#include "cbc/error.hpp"

namespace cbc::data {

namespace {

bool all_finite(const Eigen::VectorXd &v) { return v.allFinite(); }

void append_array(std::string &out, const Eigen::VectorXd &v) {
  char buf[40];
  out.push_back('[');
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) {
      out.push_back(',');
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    out += buf;
  }
  out.push_back(']');
}

Eigen::VectorXd read_vector(const nlohmann::json &record, const char *key, std::size_t line) {
  const auto it = record.find(key);
  if (it == record.end() || !it->is_array()) {
    throw ParseError(line, std::string("record lacks array field \"") + key + "\"");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(it->size()));
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto &x = (*it)[i];
    if (!x.is_number()) {
      throw ParseError(line, std::string("non-numeric entry in \"") + key + "\"");
    }
    v[static_cast<Eigen::Index>(i)] = x.get<double>();
  }
  if (!all_finite(v)) {
    throw ParseError(line, std::string("non-finite entry in \"") + key + "\"");
  }
  return v;
}

} // namespace

Dataset::Dataset(int state_dim, int action_dim, nlohmann::json provenance)
    : state_dim_(state_dim), action_dim_(action_dim), provenance_(std::move(provenance)) {
  if (state_dim < 1 || action_dim < 1) {
    throw InvalidInput("dataset dimensions must be positive");
  }
  if (provenance_.is_null()) {
    provenance_ = nlohmann::json::object();
  }
}

void Dataset::add(StateActionPair pair) {
  if (pair.s.size() != state_dim_ || pair.a.size() != action_dim_) {
    throw InvalidInput("pair dims (" + std::to_string(pair.s.size()) + ", " +
                       std::to_string(pair.a.size()) + ") differ from dataset dims (" +
                       std::to_string(state_dim_) + ", " + std::to_string(action_dim_) + ")");
  }
  if (!all_finite(pair.s) || !all_finite(pair.a)) {
    throw InvalidInput("pair contains non-finite entries");
  }
  pairs_.push_back(std::move(pair));
}

void save_jsonl(const Dataset &ds, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  const nlohmann::json header = {{"format_version", kJsonlFormatVersion},
                                 {"state_dim", ds.state_dim()},
                                 {"action_dim", ds.action_dim()},
                                 {"provenance", ds.provenance()}};
  out << header.dump() << '\n';
  std::string line;
  for (const auto &pair : ds.pairs()) {
    line.clear();
    line += "{\"s\":";
    append_array(line, pair.s);
    line += ",\"a\":";
    append_array(line, pair.a);
    line += "}\n";
    out << line;
  }
  if (!out) {
    throw Error("write to '" + path.string() + "' failed");
  }
}

Dataset load_jsonl(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open '" + path.string() + "'");
  }
  std::string text;
  std::size_t line_no = 0;

  // Header.
  nlohmann::json header;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty()) {
      break;
    }
  }
  if (text.empty()) {
    throw SchemaError(line_no == 0 ? 1 : line_no, "header missing (empty file)");
  }
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    throw ParseError(line_no, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("state_dim") || !header.contains("action_dim") ||
      !header.contains("format_version")) {
    throw SchemaError(line_no, "header missing (expected format_version, state_dim, action_dim)");
  }
  if (header["format_version"] != kJsonlFormatVersion) {
    throw SchemaError(line_no, "unsupported format_version " + header["format_version"].dump());
  }
  const auto state_dim = header["state_dim"].get<int>();
  const auto action_dim = header["action_dim"].get<int>();
  if (state_dim < 1 || action_dim < 1) {
    throw SchemaError(line_no, "header dims must be positive");
  }
  Dataset ds(state_dim, action_dim, header.value("provenance", nlohmann::json::object()));

  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) {
      continue;
    }
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
      throw ParseError(line_no, std::string("not valid JSON: ") + e.what());
    }
    if (!record.is_object()) {
      throw ParseError(line_no, "record is not a JSON object");
    }
    auto s = read_vector(record, "s", line_no);
    auto a = read_vector(record, "a", line_no);
    if (s.size() != state_dim) {
      throw SchemaError(line_no, "state has " + std::to_string(s.size()) +
                                     " entries, header declares " + std::to_string(state_dim));
    }
    if (a.size() != action_dim) {
      throw SchemaError(line_no, "action has " + std::to_string(a.size()) +
                                     " entries, header declares " + std::to_string(action_dim));
    }
    ds.add(StateActionPair{std::move(s), std::move(a)});
  }
  return ds;
}

Dataset subsample(const Dataset &ds, std::size_t k, Rng &rng) {
  const std::size_t n = ds.size();
  if (k < 1 || k > n) {
    throw InvalidInput("subsample: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) +
                       "]");
  }
  std::vector<std::size_t> index(n);
  std::iota(index.begin(), index.end(), std::size_t{0});
  Dataset out(ds.state_dim(), ds.action_dim(), ds.provenance());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(index[i], index[pick(rng)]);
    out.add(ds[index[i]]);
  }
  return out;
}

NormalizationStats NormalizationStats::identity(int dim) {
  return NormalizationStats{Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Eigen::VectorXd NormalizationStats::apply(const Eigen::VectorXd &s) const {
  if (s.size() != mean.size()) {
    throw InvalidInput("normalizer: state width mismatch");
  }
  return ((s - mean).array() / std.array()).matrix();
}

Eigen::MatrixXd NormalizationStats::apply_columns(const Eigen::MatrixXd &states) const {
  if (states.rows() != mean.size()) {
    throw InvalidInput("normalizer: state width mismatch");
  }
  return (states.colwise() - mean).array().colwise() / std.array();
}

NormalizationStats fit_normalizer(const Dataset &ds) {
  if (ds.size() < 2) {
    throw InvalidInput("fit_normalizer needs at least 2 pairs, got " + std::to_string(ds.size()));
  }
  const auto n = static_cast<double>(ds.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(ds.state_dim());
  for (const auto &p : ds.pairs()) {
    mean += p.s;
  }
  mean /= n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(ds.state_dim());
  for (const auto &p : ds.pairs()) {
    var += (p.s - mean).cwiseAbs2();
  }
  var /= n;
  Eigen::VectorXd std = var.cwiseSqrt().cwiseMax(NormalizationStats::kStdFloor);
  return NormalizationStats{std::move(mean), std::move(std)};
}

} // namespace cbc::data
