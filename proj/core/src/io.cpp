#include "dive/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dive/sigmoid.hpp"

namespace dive {

namespace {

constexpr char kValuesMagic[8] = {'D', 'I', 'V', 'E', 'M', 'T', 'R', 'X'};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_write(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw Error(ErrorCode::io_format, "cannot open for writing: " + path);
  return f;
}

FilePtr open_read(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw Error(ErrorCode::io_format, "cannot open: " + path);
  return f;
}

// %.17g keeps doubles round-trippable and byte-stable across runs.
void put_double(std::FILE* f, double v) { std::fprintf(f, "%.17g", v); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& file, std::int64_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw Error(ErrorCode::io_format,
                file + ":" + std::to_string(line) + ": not a number: '" + s + "'");
  return v;
}

std::int64_t parse_int(const std::string& s, const std::string& file, std::int64_t line) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw Error(ErrorCode::io_format,
                file + ":" + std::to_string(line) + ": not an integer: '" + s + "'");
  return v;
}

bool looks_like_header(const std::string& line) {
  for (char ch : line)
    if ((ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z')) return true;
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Values matrix

void save_values_binary(const std::string& path, const Eigen::MatrixXd& values) {
  auto f = open_write(path);
  std::fwrite(kValuesMagic, 1, 8, f.get());
  const std::uint32_t rows = static_cast<std::uint32_t>(values.rows());
  const std::uint32_t cols = static_cast<std::uint32_t>(values.cols());
  std::fwrite(&rows, 4, 1, f.get());
  std::fwrite(&cols, 4, 1, f.get());
  // row-major payload
  std::vector<double> buf(values.cols());
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) buf[c] = values(r, c);
    std::fwrite(buf.data(), 8, buf.size(), f.get());
  }
}

void save_values_csv(const std::string& path, const Eigen::MatrixXd& values) {
  auto f = open_write(path);
  for (Eigen::Index c = 0; c < values.cols(); ++c)
    std::fprintf(f.get(), c ? ",v%lld" : "v%lld", static_cast<long long>(c));
  std::fputc('\n', f.get());
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) std::fputc(',', f.get());
      put_double(f.get(), values(r, c));
    }
    std::fputc('\n', f.get());
  }
}

Eigen::MatrixXd load_values(const std::string& path) {
  auto f = open_read(path);
  char magic[8] = {};
  const std::size_t got = std::fread(magic, 1, 8, f.get());
  if (got == 8 && std::memcmp(magic, kValuesMagic, 8) == 0) {
    std::uint32_t rows = 0, cols = 0;
    if (std::fread(&rows, 4, 1, f.get()) != 1 || std::fread(&cols, 4, 1, f.get()) != 1)
      throw Error(ErrorCode::io_corrupt, path + ": truncated header");
    Eigen::MatrixXd values(rows, cols);
    std::vector<double> buf(cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      if (std::fread(buf.data(), 8, cols, f.get()) != cols)
        throw Error(ErrorCode::io_corrupt,
                    path + ": truncated payload at row " + std::to_string(r));
      for (std::uint32_t c = 0; c < cols; ++c) values(r, c) = buf[c];
    }
    if (!values.allFinite())
      throw Error(ErrorCode::io_format, path + ": non-finite value in matrix");
    return values;
  }

  // CSV fall-back
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_format, "cannot open: " + path);
  std::string line;
  std::int64_t lineno = 0;
  std::vector<std::vector<double>> rows_data;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && looks_like_header(line)) continue;
    const auto fields = split_csv(line);
    if (width == 0) width = fields.size();
    if (fields.size() != width)
      throw Error(ErrorCode::io_format, path + ":" + std::to_string(lineno) +
                                            ": expected " + std::to_string(width) + " columns");
    std::vector<double> row(width);
    for (std::size_t c = 0; c < width; ++c) {
      row[c] = parse_double(fields[c], path, lineno);
      if (!std::isfinite(row[c]))
        throw Error(ErrorCode::io_format,
                    path + ":" + std::to_string(lineno) + ": non-finite value");
    }
    rows_data.push_back(std::move(row));
  }
  if (rows_data.empty()) throw Error(ErrorCode::io_format, path + ": no data rows");
  Eigen::MatrixXd values(rows_data.size(), width);
  for (std::size_t r = 0; r < rows_data.size(); ++r)
    for (std::size_t c = 0; c < width; ++c) values(r, c) = rows_data[r][c];
  return values;
}

// ---------------------------------------------------------------------------
// Rows and adjacency

void save_rows_csv(const std::string& path, const std::vector<Dataset::Row>& rows) {
  auto f = open_write(path);
  std::fprintf(f.get(), "subject_id,visit_id,age\n");
  for (const auto& r : rows) {
    std::fprintf(f.get(), "%lld,%lld,", static_cast<long long>(r.subject_id),
                 static_cast<long long>(r.visit_id));
    put_double(f.get(), r.age);
    std::fputc('\n', f.get());
  }
}

void save_adjacency_csv(const std::string& path,
                        const std::vector<std::vector<std::int32_t>>& adjacency) {
  auto f = open_write(path);
  std::fprintf(f.get(), "l1,l2\n");
  for (std::size_t l = 0; l < adjacency.size(); ++l)
    for (std::int32_t n : adjacency[l])
      std::fprintf(f.get(), "%lld,%d\n", static_cast<long long>(l), n);
}

Dataset load_dataset(const std::string& values_path, const std::string& rows_path,
                     const std::string& adjacency_path) {
  Dataset data;
  data.values = load_values(values_path);
  const std::int64_t L = data.values.cols();

  {
    std::ifstream in(rows_path);
    if (!in) throw Error(ErrorCode::io_format, "cannot open: " + rows_path);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (lineno == 1 && looks_like_header(line)) continue;
      const auto fields = split_csv(line);
      if (fields.size() != 3)
        throw Error(ErrorCode::io_format,
                    rows_path + ":" + std::to_string(lineno) + ": expected subject_id,visit_id,age");
      Dataset::Row row;
      row.subject_id = parse_int(fields[0], rows_path, lineno);
      row.visit_id = parse_int(fields[1], rows_path, lineno);
      row.age = parse_double(fields[2], rows_path, lineno);
      data.rows.push_back(row);
    }
  }
  if (static_cast<std::int64_t>(data.rows.size()) != data.values.rows())
    throw Error(ErrorCode::io_format,
                rows_path + ": " + std::to_string(data.rows.size()) + " rows but value matrix has " +
                    std::to_string(data.values.rows()));

  {
    std::ifstream in(adjacency_path);
    if (!in) throw Error(ErrorCode::io_format, "cannot open: " + adjacency_path);
    data.adjacency.assign(L, {});
    std::vector<std::pair<std::int32_t, std::int32_t>> edges;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (lineno == 1 && looks_like_header(line)) continue;
      const auto fields = split_csv(line);
      if (fields.size() != 2)
        throw Error(ErrorCode::io_format,
                    adjacency_path + ":" + std::to_string(lineno) + ": expected l1,l2");
      const std::int64_t a = parse_int(fields[0], adjacency_path, lineno);
      const std::int64_t b = parse_int(fields[1], adjacency_path, lineno);
      if (a < 0 || a >= L || b < 0 || b >= L)
        throw Error(ErrorCode::io_format, adjacency_path + ":" + std::to_string(lineno) +
                                              ": vertex index out of range for L=" +
                                              std::to_string(L));
      if (a == b)
        throw Error(ErrorCode::io_format,
                    adjacency_path + ":" + std::to_string(lineno) + ": self-loop");
      edges.emplace_back(static_cast<std::int32_t>(a), static_cast<std::int32_t>(b));
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    std::int64_t symmetrized = 0;
    for (const auto& [a, b] : edges) {
      data.adjacency[a].push_back(b);
      if (!std::binary_search(edges.begin(), edges.end(), std::make_pair(b, a))) {
        data.adjacency[b].push_back(a);
        ++symmetrized;
      }
    }
    if (symmetrized > 0)
      std::cerr << "warning: " << adjacency_path << ": symmetrized " << symmetrized
                << " one-directional edge(s)\n";
  }

  data.finalize();
  return data;
}

// ---------------------------------------------------------------------------
// Ground truth

void save_ground_truth(const std::string& dir, const GroundTruth& truth,
                       const std::vector<std::int64_t>& subject_ids) {
  {
    auto f = open_write(dir + "/truth_labels.csv");
    std::fprintf(f.get(), "vertex,label\n");
    for (std::size_t l = 0; l < truth.labels.size(); ++l)
      std::fprintf(f.get(), "%lld,%d\n", static_cast<long long>(l), truth.labels[l]);
  }
  {
    auto f = open_write(dir + "/truth_stages.csv");
    std::fprintf(f.get(), "subject_id,alpha,beta\n");
    for (std::size_t i = 0; i < truth.stages.size(); ++i) {
      std::fprintf(f.get(), "%lld,", static_cast<long long>(subject_ids[i]));
      put_double(f.get(), truth.stages[i].alpha);
      std::fputc(',', f.get());
      put_double(f.get(), truth.stages[i].beta);
      std::fputc('\n', f.get());
    }
  }
  {
    auto f = open_write(dir + "/truth_trajectories.csv");
    std::fprintf(f.get(), "cluster,a,b,c,d,noise_sigma\n");
    for (std::size_t k = 0; k < truth.trajectories.size(); ++k) {
      const auto& t = truth.trajectories[k];
      std::fprintf(f.get(), "%lld,", static_cast<long long>(k));
      put_double(f.get(), t.a);
      std::fputc(',', f.get());
      put_double(f.get(), t.b);
      std::fputc(',', f.get());
      put_double(f.get(), t.c);
      std::fputc(',', f.get());
      put_double(f.get(), t.d);
      std::fputc(',', f.get());
      put_double(f.get(), truth.noise_sigma);
      std::fputc('\n', f.get());
    }
  }
}

std::vector<std::int32_t> load_label_file(const std::string& path, std::int64_t expected_count) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_format, "cannot open: " + path);
  std::vector<std::int32_t> labels(expected_count, -1);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && looks_like_header(line)) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 2)
      throw Error(ErrorCode::io_format,
                  path + ":" + std::to_string(lineno) + ": expected vertex,label");
    const std::int64_t v = parse_int(fields[0], path, lineno);
    if (v < 0 || v >= expected_count)
      throw Error(ErrorCode::io_format,
                  path + ":" + std::to_string(lineno) + ": vertex index out of range");
    labels[v] = static_cast<std::int32_t>(parse_int(fields[1], path, lineno));
  }
  for (std::int64_t v = 0; v < expected_count; ++v)
    if (labels[v] < 0)
      throw Error(ErrorCode::io_format, path + ": no label for vertex " + std::to_string(v));
  return labels;
}

GroundTruth load_ground_truth(const Dataset& data, const std::string& labels_path,
                              const std::string& stages_path,
                              const std::string& trajectories_path) {
  GroundTruth truth;
  truth.labels = load_label_file(labels_path, data.vertex_count());

  {
    std::ifstream in(stages_path);
    if (!in) throw Error(ErrorCode::io_format, "cannot open: " + stages_path);
    std::map<std::int64_t, SubjectStage> by_id;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (lineno == 1 && looks_like_header(line)) continue;
      const auto fields = split_csv(line);
      if (fields.size() != 3)
        throw Error(ErrorCode::io_format,
                    stages_path + ":" + std::to_string(lineno) + ": expected subject_id,alpha,beta");
      const std::int64_t id = parse_int(fields[0], stages_path, lineno);
      by_id[id] = SubjectStage{parse_double(fields[1], stages_path, lineno),
                               parse_double(fields[2], stages_path, lineno)};
    }
    truth.stages.reserve(data.subject_ids.size());
    for (std::int64_t id : data.subject_ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end())
        throw Error(ErrorCode::io_format,
                    stages_path + ": no stage for subject " + std::to_string(id));
      truth.stages.push_back(it->second);
    }
  }

  {
    std::ifstream in(trajectories_path);
    if (!in) throw Error(ErrorCode::io_format, "cannot open: " + trajectories_path);
    std::string line;
    std::int64_t lineno = 0;
    std::map<std::int64_t, TrajectoryParams> by_cluster;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (lineno == 1 && looks_like_header(line)) continue;
      const auto fields = split_csv(line);
      if (fields.size() != 6)
        throw Error(ErrorCode::io_format, trajectories_path + ":" + std::to_string(lineno) +
                                              ": expected cluster,a,b,c,d,noise_sigma");
      const std::int64_t k = parse_int(fields[0], trajectories_path, lineno);
      by_cluster[k] = TrajectoryParams{
          parse_double(fields[1], trajectories_path, lineno),
          parse_double(fields[2], trajectories_path, lineno),
          parse_double(fields[3], trajectories_path, lineno),
          parse_double(fields[4], trajectories_path, lineno)};
      truth.noise_sigma = parse_double(fields[5], trajectories_path, lineno);
    }
    truth.trajectories.resize(by_cluster.size());
    for (const auto& [k, t] : by_cluster) {
      if (k < 0 || k >= static_cast<std::int64_t>(by_cluster.size()))
        throw Error(ErrorCode::io_format, trajectories_path + ": non-contiguous cluster ids");
      truth.trajectories[k] = t;
    }
  }
  return truth;
}

// ---------------------------------------------------------------------------
// Covariates

void save_covariates_csv(const std::string& path, const Dataset& data,
                         const std::vector<Covariate>& covariates) {
  auto f = open_write(path);
  std::fprintf(f.get(), "subject_id,visit_id,name,value\n");
  for (const auto& cov : covariates) {
    for (std::size_t r = 0; r < cov.values.size(); ++r) {
      std::fprintf(f.get(), "%lld,%lld,%s,", static_cast<long long>(data.rows[r].subject_id),
                   static_cast<long long>(data.rows[r].visit_id), cov.name.c_str());
      put_double(f.get(), cov.values[r]);
      std::fputc('\n', f.get());
    }
  }
}

std::vector<Covariate> load_covariates_csv(const std::string& path, const Dataset& data) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_format, "cannot open: " + path);

  std::map<std::pair<std::int64_t, std::int64_t>, std::int32_t> row_of;
  for (std::int64_t r = 0; r < data.row_count(); ++r)
    row_of[{data.rows[r].subject_id, data.rows[r].visit_id}] = static_cast<std::int32_t>(r);

  std::vector<Covariate> covs;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && looks_like_header(line)) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 4)
      throw Error(ErrorCode::io_format,
                  path + ":" + std::to_string(lineno) + ": expected subject_id,visit_id,name,value");
    const std::int64_t sid = parse_int(fields[0], path, lineno);
    const std::int64_t vid = parse_int(fields[1], path, lineno);
    const auto it = row_of.find({sid, vid});
    if (it == row_of.end())
      throw Error(ErrorCode::io_format, path + ":" + std::to_string(lineno) +
                                            ": no dataset row for subject " + std::to_string(sid) +
                                            " visit " + std::to_string(vid));
    auto [cit, inserted] = index.try_emplace(fields[2], covs.size());
    if (inserted) {
      covs.push_back({fields[2], std::vector<double>(data.row_count(),
                                                     std::numeric_limits<double>::quiet_NaN())});
    }
    covs[cit->second].values[it->second] = parse_double(fields[3], path, lineno);
  }
  for (const auto& cov : covs)
    for (std::size_t r = 0; r < cov.values.size(); ++r)
      if (std::isnan(cov.values[r]))
        throw Error(ErrorCode::io_format, path + ": covariate '" + cov.name +
                                              "' missing a value for dataset row " +
                                              std::to_string(r));
  return covs;
}

// ---------------------------------------------------------------------------
// Model checkpoints

DatasetFingerprint dataset_fingerprint(const Dataset& data) {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a 64
  auto mix = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (Eigen::Index r = 0; r < data.values.rows(); ++r)
    for (Eigen::Index c = 0; c < data.values.cols(); ++c) {
      const double v = data.values(r, c);
      mix(&v, 8);
    }
  for (const auto& row : data.rows) {
    mix(&row.subject_id, 8);
    mix(&row.visit_id, 8);
    mix(&row.age, 8);
  }
  for (const auto& nbrs : data.adjacency)
    for (std::int32_t n : nbrs) mix(&n, 4);

  DatasetFingerprint fp;
  fp.rows = static_cast<std::uint32_t>(data.row_count());
  fp.vertices = static_cast<std::uint32_t>(data.vertex_count());
  fp.hash = h;
  return fp;
}

void save_model(const std::string& path, const ModelState& model,
                const DatasetFingerprint& fingerprint) {
  auto f = open_write(path);
  std::fprintf(f.get(), "DIVE-MODEL v1\n");
  std::fprintf(f.get(), "fingerprint %u %u %016llx\n", fingerprint.rows, fingerprint.vertices,
               static_cast<unsigned long long>(fingerprint.hash));
  std::fprintf(f.get(), "k %d\n", model.K);
  std::fprintf(f.get(), "lambda %a\n", model.mrf.lambda);
  for (int k = 0; k < model.K; ++k) {
    const auto& t = model.trajectories[k];
    std::fprintf(f.get(), "trajectory %d %a %a %a %a\n", k, t.a, t.b, t.c, t.d);
  }
  for (int k = 0; k < model.K; ++k) std::fprintf(f.get(), "sigma %d %a\n", k, model.sigmas[k]);
  for (std::size_t i = 0; i < model.stages.size(); ++i)
    std::fprintf(f.get(), "stage %zu %a %a\n", i, model.stages[i].alpha, model.stages[i].beta);
  std::fprintf(f.get(), "posteriors %lld %d\n", static_cast<long long>(model.posteriors.rows()),
               model.K);
  for (Eigen::Index l = 0; l < model.posteriors.rows(); ++l) {
    for (int k = 0; k < model.K; ++k)
      std::fprintf(f.get(), k ? " %a" : "%a", model.posteriors(l, k));
    std::fputc('\n', f.get());
  }
  std::fprintf(f.get(), "end\n");
}

namespace {

std::vector<std::string> tokens_of(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double parse_hex_double(const std::string& s, const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw Error(ErrorCode::io_corrupt, path + ": bad float payload '" + s + "'");
  return v;
}

}  // namespace

ModelCheckpoint load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_format, "cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::io_corrupt, path + ": empty file");
  {
    const auto t = tokens_of(line);
    if (t.size() != 2 || t[0] != "DIVE-MODEL")
      throw Error(ErrorCode::io_format, path + ": not a DIVE model file");
    if (t[1] != "v1")
      throw Error(ErrorCode::io_version, path + ": unsupported version '" + t[1] + "'");
  }

  ModelCheckpoint cp;
  auto next_tokens = [&](const char* what) {
    if (!std::getline(in, line))
      throw Error(ErrorCode::io_corrupt, path + ": truncated before " + std::string(what));
    return tokens_of(line);
  };

  {
    const auto t = next_tokens("fingerprint");
    if (t.size() != 4 || t[0] != "fingerprint")
      throw Error(ErrorCode::io_corrupt, path + ": expected fingerprint line");
    cp.fingerprint.rows = static_cast<std::uint32_t>(std::stoul(t[1]));
    cp.fingerprint.vertices = static_cast<std::uint32_t>(std::stoul(t[2]));
    cp.fingerprint.hash = std::stoull(t[3], nullptr, 16);
  }
  {
    const auto t = next_tokens("k");
    if (t.size() != 2 || t[0] != "k") throw Error(ErrorCode::io_corrupt, path + ": expected k line");
    cp.model.K = static_cast<int>(std::stol(t[1]));
    if (cp.model.K < 1) throw Error(ErrorCode::io_corrupt, path + ": bad K");
  }
  {
    const auto t = next_tokens("lambda");
    if (t.size() != 2 || t[0] != "lambda")
      throw Error(ErrorCode::io_corrupt, path + ": expected lambda line");
    cp.model.mrf.lambda = parse_hex_double(t[1], path);
  }
  cp.model.trajectories.resize(cp.model.K);
  for (int k = 0; k < cp.model.K; ++k) {
    const auto t = next_tokens("trajectory");
    if (t.size() != 6 || t[0] != "trajectory" || std::stol(t[1]) != k)
      throw Error(ErrorCode::io_corrupt, path + ": expected trajectory " + std::to_string(k));
    cp.model.trajectories[k] = TrajectoryParams{
        parse_hex_double(t[2], path), parse_hex_double(t[3], path),
        parse_hex_double(t[4], path), parse_hex_double(t[5], path)};
  }
  cp.model.sigmas.resize(cp.model.K);
  for (int k = 0; k < cp.model.K; ++k) {
    const auto t = next_tokens("sigma");
    if (t.size() != 3 || t[0] != "sigma" || std::stol(t[1]) != k)
      throw Error(ErrorCode::io_corrupt, path + ": expected sigma " + std::to_string(k));
    cp.model.sigmas[k] = parse_hex_double(t[2], path);
  }
  // stages run until the posteriors header
  std::vector<SubjectStage> stages;
  while (true) {
    const auto t = next_tokens("stage or posteriors");
    if (!t.empty() && t[0] == "posteriors") {
      if (t.size() != 3) throw Error(ErrorCode::io_corrupt, path + ": bad posteriors header");
      const std::int64_t L = std::stoll(t[1]);
      const int K = static_cast<int>(std::stol(t[2]));
      if (K != cp.model.K) throw Error(ErrorCode::io_corrupt, path + ": posterior K mismatch");
      cp.model.posteriors.resize(L, K);
      for (std::int64_t l = 0; l < L; ++l) {
        const auto row = next_tokens("posterior row");
        if (static_cast<int>(row.size()) != K)
          throw Error(ErrorCode::io_corrupt,
                      path + ": posterior row " + std::to_string(l) + " has wrong arity");
        for (int k = 0; k < K; ++k) cp.model.posteriors(l, k) = parse_hex_double(row[k], path);
      }
      break;
    }
    if (t.size() != 4 || t[0] != "stage")
      throw Error(ErrorCode::io_corrupt, path + ": expected stage or posteriors line");
    if (std::stoll(t[1]) != static_cast<std::int64_t>(stages.size()))
      throw Error(ErrorCode::io_corrupt, path + ": stage index out of order");
    stages.push_back(
        SubjectStage{parse_hex_double(t[2], path), parse_hex_double(t[3], path)});
  }
  cp.model.stages = std::move(stages);
  {
    const auto t = next_tokens("end");
    if (t.size() != 1 || t[0] != "end")
      throw Error(ErrorCode::io_corrupt, path + ": missing end marker");
  }
  return cp;
}

// ---------------------------------------------------------------------------
// Run outputs

void write_trace_csv(const std::string& path, const FitReport& report) {
  auto f = open_write(path);
  std::fprintf(f.get(), "iter,step,index,objective\n");
  if (!report.outer_objectives.empty()) {
    std::fprintf(f.get(), "0,init,-1,");
    put_double(f.get(), report.outer_objectives.front());
    std::fputc('\n', f.get());
  }
  for (const auto& s : report.substeps) {
    std::fprintf(f.get(), "%d,%s,%d,", s.iter, substep_name(s.kind), s.index);
    put_double(f.get(), s.objective);
    std::fputc('\n', f.get());
  }
}

void write_trajectories_csv(const std::string& path, const ModelState& model, const Dataset& data,
                            int samples) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::int64_t r = 0; r < data.row_count(); ++r) {
    const double s = dps(model.stages[data.row_subject[r]], data.rows[r].age);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.1 * (hi - lo);
  lo -= pad;
  hi += pad;

  auto f = open_write(path);
  std::fprintf(f.get(), "cluster,s,value\n");
  for (int k = 0; k < model.K; ++k)
    for (int i = 0; i < samples; ++i) {
      const double s = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(samples - 1);
      std::fprintf(f.get(), "%d,", k);
      put_double(f.get(), s);
      std::fputc(',', f.get());
      put_double(f.get(), sigmoid_eval(s, model.trajectories[k]));
      std::fputc('\n', f.get());
    }
}

void write_stages_csv(const std::string& path, const ModelState& model, const Dataset& data) {
  auto f = open_write(path);
  std::fprintf(f.get(), "subject_id,alpha,beta,baseline_dps\n");
  for (std::int64_t i = 0; i < data.subject_count(); ++i) {
    const double t0 = data.rows[data.baseline_row(static_cast<std::int32_t>(i))].age;
    std::fprintf(f.get(), "%lld,", static_cast<long long>(data.subject_ids[i]));
    put_double(f.get(), model.stages[i].alpha);
    std::fputc(',', f.get());
    put_double(f.get(), model.stages[i].beta);
    std::fputc(',', f.get());
    put_double(f.get(), dps(model.stages[i], t0));
    std::fputc('\n', f.get());
  }
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, double>>& metrics) {
  auto f = open_write(path);
  std::fprintf(f.get(), "metric,value\n");
  for (const auto& [name, value] : metrics) {
    std::fprintf(f.get(), "%s,", name.c_str());
    put_double(f.get(), value);
    std::fputc('\n', f.get());
  }
}

void write_comparison_csv(const std::string& path, const ComparisonReport& report) {
  auto f = open_write(path);
  std::fprintf(f.get(), "model,metric,fold,value\n");
  auto emit = [&](const std::string& model, const std::string& metric,
                  const std::vector<double>& folds, double mean, double sd) {
    for (std::size_t i = 0; i < folds.size(); ++i) {
      std::fprintf(f.get(), "%s,%s,%zu,", model.c_str(), metric.c_str(), i);
      put_double(f.get(), folds[i]);
      std::fputc('\n', f.get());
    }
    std::fprintf(f.get(), "%s,%s,mean,", model.c_str(), metric.c_str());
    put_double(f.get(), mean);
    std::fputc('\n', f.get());
    std::fprintf(f.get(), "%s,%s,sd,", model.c_str(), metric.c_str());
    put_double(f.get(), sd);
    std::fputc('\n', f.get());
  };
  for (std::size_t m = 0; m < report.model_names.size(); ++m) {
    for (std::size_t c = 0; c < report.covariate_names.size(); ++c)
      emit(report.model_names[m], "rho_" + report.covariate_names[c], report.rho[m][c],
           report.rho_mean(static_cast<int>(m), static_cast<int>(c)),
           report.rho_sd(static_cast<int>(m), static_cast<int>(c)));
    emit(report.model_names[m], "rmse", report.rmse[m],
         report.rmse_mean(static_cast<int>(m)), report.rmse_sd(static_cast<int>(m)));
  }
}

void write_audit_csv(const std::string& path, const EquivalenceReport& report) {
  auto f = open_write(path);
  std::fprintf(f.get(), "check,index,deviation\n");
  for (std::size_t k = 0; k < report.theta_grad_deviation.size(); ++k) {
    std::fprintf(f.get(), "theta_gradient,%zu,", k);
    put_double(f.get(), report.theta_grad_deviation[k]);
    std::fputc('\n', f.get());
  }
  for (std::size_t i = 0; i < report.stage_grad_deviation.size(); ++i) {
    std::fprintf(f.get(), "stage_gradient,%zu,", i);
    put_double(f.get(), report.stage_grad_deviation[i]);
    std::fputc('\n', f.get());
  }
  std::fprintf(f.get(), "max_theta_gradient,-1,");
  put_double(f.get(), report.max_theta_deviation);
  std::fputc('\n', f.get());
  std::fprintf(f.get(), "max_stage_gradient,-1,");
  put_double(f.get(), report.max_stage_deviation);
  std::fputc('\n', f.get());
  std::fprintf(f.get(), "pass,-1,%d\n", report.pass ? 1 : 0);
}

// ---------------------------------------------------------------------------
// Scenario configs

namespace {

const char* mesh_name(MeshKind m) { return m == MeshKind::grid ? "grid" : "random_regular"; }
const char* label_name(LabelKind l) { return l == LabelKind::patches ? "patches" : "potts"; }

}  // namespace

std::string scenario_to_json(const ScenarioConfig& c) {
  nlohmann::ordered_json j;
  j["K"] = c.K;
  j["L"] = c.L;
  j["n_subjects"] = c.n_subjects;
  j["visits_per_subject"] = c.visits_per_subject;
  j["visit_spacing_years"] = c.visit_spacing_years;
  j["mesh"] = mesh_name(c.mesh);
  j["grid_width"] = c.grid_width;
  j["regular_degree"] = c.regular_degree;
  j["labels"] = label_name(c.labels);
  j["potts_coupling"] = c.potts_coupling;
  j["potts_sweeps"] = c.potts_sweeps;
  j["separation"] = c.separation;
  j["trajectory_height"] = c.trajectory_height;
  j["noise_sigma"] = c.noise_sigma;
  j["alpha_log_sd"] = c.alpha_log_sd;
  j["dps_baseline_sd"] = c.dps_baseline_sd;
  j["age_mean"] = c.age_mean;
  j["age_sd"] = c.age_sd;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

ScenarioConfig scenario_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_format, "cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_format, path + ": " + e.what());
  }
  ScenarioConfig c;
  try {
    c.K = j.value("K", c.K);
    c.L = j.value("L", c.L);
    c.n_subjects = j.value("n_subjects", c.n_subjects);
    c.visits_per_subject = j.value("visits_per_subject", c.visits_per_subject);
    c.visit_spacing_years = j.value("visit_spacing_years", c.visit_spacing_years);
    if (j.contains("mesh")) {
      const std::string m = j["mesh"];
      if (m == "grid") c.mesh = MeshKind::grid;
      else if (m == "random_regular") c.mesh = MeshKind::random_regular;
      else throw Error(ErrorCode::config, path + ": unknown mesh kind '" + m + "'");
    }
    c.grid_width = j.value("grid_width", c.grid_width);
    c.regular_degree = j.value("regular_degree", c.regular_degree);
    if (j.contains("labels")) {
      const std::string l = j["labels"];
      if (l == "patches") c.labels = LabelKind::patches;
      else if (l == "potts") c.labels = LabelKind::potts;
      else throw Error(ErrorCode::config, path + ": unknown label kind '" + l + "'");
    }
    c.potts_coupling = j.value("potts_coupling", c.potts_coupling);
    c.potts_sweeps = j.value("potts_sweeps", c.potts_sweeps);
    c.separation = j.value("separation", c.separation);
    c.trajectory_height = j.value("trajectory_height", c.trajectory_height);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.alpha_log_sd = j.value("alpha_log_sd", c.alpha_log_sd);
    c.dps_baseline_sd = j.value("dps_baseline_sd", c.dps_baseline_sd);
    c.age_mean = j.value("age_mean", c.age_mean);
    c.age_sd = j.value("age_sd", c.age_sd);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io_format, path + ": " + e.what());
  }
  c.validate();
  return c;
}

void save_scenario_json(const std::string& path, const ScenarioConfig& config) {
  auto f = open_write(path);
  const std::string s = scenario_to_json(config);
  std::fwrite(s.data(), 1, s.size(), f.get());
}

}  // namespace dive
