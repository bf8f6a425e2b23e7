#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "dive/io.hpp"
#include "test_helpers.hpp"

using namespace dive;
using namespace dive::testing;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("dive_test_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_SUITE("io") {

TEST_CASE("binary value matrix round trip is bitwise") {
  TempDir dir;
  std::mt19937_64 rng(100);
  std::normal_distribution<double> n(0.0, 3.0);
  Eigen::MatrixXd m(7, 5);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 5; ++c) m(r, c) = n(rng);

  save_values_binary(dir.file("v.bin"), m);
  const Eigen::MatrixXd back = load_values(dir.file("v.bin"));
  REQUIRE(back.rows() == 7);
  REQUIRE(back.cols() == 5);
  CHECK((back - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("csv value matrix round trips through the sniffing loader") {
  TempDir dir;
  Eigen::MatrixXd m(3, 2);
  m << 1.5, -2.25, 0.0, 1e-17, 3.0, 725.125;
  save_values_csv(dir.file("v.csv"), m);
  const Eigen::MatrixXd back = load_values(dir.file("v.csv"));
  CHECK((back - m).cwiseAbs().maxCoeff() == 0.0);  // %.17g round-trips doubles
}

TEST_CASE("dataset round trip preserves everything") {
  TempDir dir;
  TinyInstance t = tiny_instance(5, 2, 4, 3, 0.3, 101);
  save_values_binary(dir.file("values.bin"), t.data.values);
  save_rows_csv(dir.file("rows.csv"), t.data.rows);
  save_adjacency_csv(dir.file("adjacency.csv"), t.data.adjacency);

  const Dataset d =
      load_dataset(dir.file("values.bin"), dir.file("rows.csv"), dir.file("adjacency.csv"));
  CHECK((d.values - t.data.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.adjacency == t.data.adjacency);
  REQUIRE(d.rows.size() == t.data.rows.size());
  for (std::size_t r = 0; r < d.rows.size(); ++r) {
    CHECK(d.rows[r].subject_id == t.data.rows[r].subject_id);
    CHECK(d.rows[r].visit_id == t.data.rows[r].visit_id);
    CHECK(d.rows[r].age == t.data.rows[r].age);
  }
  CHECK(dataset_fingerprint(d) == dataset_fingerprint(t.data));
}

TEST_CASE("toy two-vertex dataset loads") {
  TempDir dir;
  {
    std::ofstream v(dir.file("values.csv"));
    v << "v0,v1\n0.5,0.25\n";
    std::ofstream r(dir.file("rows.csv"));
    r << "subject_id,visit_id,age\n7,0,70.5\n";
    std::ofstream a(dir.file("adjacency.csv"));
    a << "l1,l2\n0,1\n1,0\n";
  }
  const Dataset d =
      load_dataset(dir.file("values.csv"), dir.file("rows.csv"), dir.file("adjacency.csv"));
  CHECK(d.vertex_count() == 2);
  CHECK(d.row_count() == 1);
  CHECK(d.subject_ids == std::vector<std::int64_t>{7});
}

TEST_CASE("one-directional edges are symmetrized") {
  TempDir dir;
  {
    std::ofstream v(dir.file("values.csv"));
    v << "v0,v1,v2\n1,2,3\n";
    std::ofstream r(dir.file("rows.csv"));
    r << "subject_id,visit_id,age\n0,0,70\n";
    std::ofstream a(dir.file("adjacency.csv"));
    a << "l1,l2\n0,1\n1,0\n1,2\n";  // 1-2 has no reverse
  }
  const Dataset d =
      load_dataset(dir.file("values.csv"), dir.file("rows.csv"), dir.file("adjacency.csv"));
  CHECK(d.adjacency[2] == std::vector<std::int32_t>{1});
}

TEST_CASE("malformed inputs are named with file and line") {
  TempDir dir;
  {
    std::ofstream v(dir.file("values.csv"));
    v << "v0,v1\n1,2\n";
    std::ofstream r(dir.file("rows.csv"));
    r << "subject_id,visit_id,age\n0,0,70\n";
    std::ofstream a(dir.file("adjacency.csv"));
    a << "l1,l2\n0,5\n";  // vertex out of range
  }
  try {
    load_dataset(dir.file("values.csv"), dir.file("rows.csv"), dir.file("adjacency.csv"));
    FAIL("expected io-format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io_format);
    CHECK(std::string(e.what()).find("adjacency.csv:2") != std::string::npos);
  }
}

TEST_CASE("model checkpoint round trip is bitwise") {
  TempDir dir;
  TinyInstance t = tiny_instance(6, 2, 4, 2, 0.2, 102);
  std::mt19937_64 rng(103);
  ModelState m = model_from(t, 2, 0.12345678901234567, random_simplex_rows(6, 2, rng), 1.25);
  m.trajectories[0].b = -0.30000000000000004;  // awkward doubles on purpose
  m.sigmas[1] = 1e-6;

  const DatasetFingerprint fp = dataset_fingerprint(t.data);
  save_model(dir.file("m.dive"), m, fp);
  const ModelCheckpoint cp = load_model(dir.file("m.dive"));

  CHECK(cp.fingerprint == fp);
  CHECK(cp.model.K == 2);
  CHECK(cp.model.mrf.lambda == m.mrf.lambda);
  for (int k = 0; k < 2; ++k) {
    CHECK(cp.model.trajectories[k].a == m.trajectories[k].a);
    CHECK(cp.model.trajectories[k].b == m.trajectories[k].b);
    CHECK(cp.model.trajectories[k].c == m.trajectories[k].c);
    CHECK(cp.model.trajectories[k].d == m.trajectories[k].d);
    CHECK(cp.model.sigmas[k] == m.sigmas[k]);
  }
  for (std::size_t i = 0; i < m.stages.size(); ++i) {
    CHECK(cp.model.stages[i].alpha == m.stages[i].alpha);
    CHECK(cp.model.stages[i].beta == m.stages[i].beta);
  }
  CHECK((cp.model.posteriors - m.posteriors).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("truncated checkpoint is rejected without partial state") {
  TempDir dir;
  TinyInstance t = tiny_instance(4, 1, 3, 2, 0.1, 104);
  ModelState m = model_from(t, 1, 0.5, Eigen::MatrixXd::Ones(4, 1));
  save_model(dir.file("m.dive"), m, dataset_fingerprint(t.data));

  // chop the file short
  std::string content;
  {
    std::ifstream in(dir.file("m.dive"));
    std::getline(in, content, '\0');
  }
  {
    std::ofstream out(dir.file("short.dive"));
    out << content.substr(0, content.size() / 2);
  }
  try {
    load_model(dir.file("short.dive"));
    FAIL("expected io-corrupt");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io_corrupt);
  }
}

TEST_CASE("unsupported checkpoint version is reported as such") {
  TempDir dir;
  {
    std::ofstream out(dir.file("v2.dive"));
    out << "DIVE-MODEL v2\nanything\n";
  }
  try {
    load_model(dir.file("v2.dive"));
    FAIL("expected io-version");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::io_version);
  }
  {
    std::ofstream out(dir.file("junk.dive"));
    out << "not a model\n";
  }
  CHECK_THROWS_AS(load_model(dir.file("junk.dive")), Error);
}

TEST_CASE("ground truth and covariates round trip") {
  TempDir dir;
  ScenarioConfig sc;
  sc.K = 2;
  sc.L = 20;
  sc.grid_width = 4;
  sc.n_subjects = 6;
  sc.seed = 105;
  auto [data, truth] = generate_dataset(sc);
  save_ground_truth(dir.path.string(), truth, data.subject_ids);
  const GroundTruth back =
      load_ground_truth(data, dir.file("truth_labels.csv"), dir.file("truth_stages.csv"),
                        dir.file("truth_trajectories.csv"));
  CHECK(back.labels == truth.labels);
  for (std::size_t i = 0; i < truth.stages.size(); ++i) {
    CHECK(back.stages[i].alpha == truth.stages[i].alpha);
    CHECK(back.stages[i].beta == truth.stages[i].beta);
  }
  for (std::size_t k = 0; k < truth.trajectories.size(); ++k)
    CHECK(back.trajectories[k].c == truth.trajectories[k].c);

  const auto covs = make_covariates(data, truth, default_covariate_specs(), 106);
  save_covariates_csv(dir.file("cov.csv"), data, covs);
  const auto covs_back = load_covariates_csv(dir.file("cov.csv"), data);
  REQUIRE(covs_back.size() == covs.size());
  for (std::size_t c = 0; c < covs.size(); ++c) {
    CHECK(covs_back[c].name == covs[c].name);
    for (std::size_t r = 0; r < covs[c].values.size(); ++r)
      CHECK(covs_back[c].values[r] == covs[c].values[r]);
  }
}

TEST_CASE("scenario json round trip and validation") {
  TempDir dir;
  ScenarioConfig sc = preset_scenario("medium", 9);
  sc.mesh = MeshKind::random_regular;
  sc.regular_degree = 6;
  save_scenario_json(dir.file("s.json"), sc);
  const ScenarioConfig back = scenario_from_json_file(dir.file("s.json"));
  CHECK(back.K == sc.K);
  CHECK(back.noise_sigma == sc.noise_sigma);
  CHECK(back.mesh == MeshKind::random_regular);
  CHECK(back.labels == LabelKind::potts);
  CHECK(back.seed == 9);

  {
    std::ofstream bad(dir.file("bad.json"));
    bad << "{\"mesh\": \"dodecahedron\"}";
  }
  CHECK_THROWS_AS(scenario_from_json_file(dir.file("bad.json")), Error);
}

TEST_CASE("fingerprint distinguishes datasets") {
  TinyInstance a = tiny_instance(5, 2, 3, 2, 0.2, 107);
  TinyInstance b = tiny_instance(5, 2, 3, 2, 0.2, 108);
  CHECK_FALSE(dataset_fingerprint(a.data) == dataset_fingerprint(b.data));
  Dataset copy = a.data;
  copy.values(0, 0) = std::nextafter(copy.values(0, 0), 1e300);
  CHECK_FALSE(dataset_fingerprint(a.data) == dataset_fingerprint(copy));
}

}  // TEST_SUITE
