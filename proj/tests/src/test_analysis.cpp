#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "adua/analysis.hpp"
#include "adua/jsonutil.hpp"

using namespace adua;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("adua_tests_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RawCorpus words(const std::string& id, const std::string& text) {
  RawCorpus c;
  c.domain_id = id;
  c.docs.push_back(text);
  return c;
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

struct WelchCase {
  std::vector<double> a;
  std::vector<double> b;
  double t;
  double df;
  double p;
};

// Reference statistics computed with an independent implementation
// (scipy.stats.ttest_ind, equal_var=False, scipy 1.15.3).
// clang-format off
const std::vector<WelchCase> kWelchCases = {
    {{2.0, 4.0, 6.0},
     {1.0, 2.0, 3.0},
     1.5491933384829668, 2.9411764705882346, 0.22088084049409579},
    {{-3.026058, -0.596562, -6.268085, 2.221185, 4.56713, 5.112689, 4.649834, 2.463809, 2.614483, -0.5703},
     {-3.315646, -1.212191, -1.978537, -1.348242, -3.471912, -4.483684, 0.096172},
     2.5579644742673047, 13.002311323256819, 0.023828049984583297},
    {{0.840815, 0.876028, 0.464093, 1.272521, 0.433936, 0.124823},
     {-3.056621, 0.88408, -1.214661, 4.528158, -0.719557},
     0.45401248150044554, 4.1360414456062058, 0.67262794680568749},
    {{-0.99579, 0.91894, 0.593274},
     {2.633361, 10.930977, -1.835587, 7.143141, 0.949363},
     -1.6159576984226571, 4.51953557605301, 0.17318770344666798},
    {{0.344694, -10.549944, -4.562918, -0.753384, 1.170098, -0.840458, -3.611143, -2.196199, 4.625507, -10.51085, -6.087296},
     {0.821856, -1.612033, 3.084931, -2.951235, -1.044049, 5.171122, 2.283763, 4.650873, 1.000587, 6.915429, -3.772522},
     -2.447049917125248, 18.348562239366789, 0.024678978266684078},
    {{1.794844, 1.008225, 1.426479, 1.528953, 2.357952, 2.339358, 2.426611, 2.375578},
     {-0.944977, -0.663532, 0.301703, 0.37896, 3.960892, 3.79172, 1.518082, 0.160614, -1.054671, 3.61029},
     1.2140064636777954, 10.631905812364764, 0.25102332572904534},
    {{-1.421269, -2.000197, -2.363962, -2.316462},
     {1.602955, 2.623617},
     -7.4633799271888677, 1.3791939525959884, 0.044196624010078331},
    {{1.504397, 2.978765, -0.632597, 6.1448, 1.736334, 1.393461, 6.392173},
     {-1.832101, -0.026533, 0.020867, -7.178122, -8.590628, -2.553774, 0.040374, -2.132962, 4.838533, 0.522633},
     2.8501163709611226, 14.996582824254384, 0.012165782077617088},
    {{0.263536, 4.043183, -2.950139, 1.898162, 0.167332, -0.181887, -1.205493, -2.321863, -0.087902, 1.536547},
     {2.388813, 1.451624, 2.546047},
     -2.7455201407503536, 10.908322916977726, 0.019174809358799311},
    {{1.49502, 0.962045, -1.071341, -0.417096, -0.316805, -0.607545, -1.851088},
     {1.312598, 1.394468, 1.502322, 1.593367, 1.27003, 1.533118, 1.589429, 1.435963, 1.517969, 1.650207},
     -3.9880665085717615, 6.0991683098751635, 0.0069793270316208973},
    {{0.542978, -1.46259, 0.343868, 3.153099, -0.083719, 0.755733, 3.444158, 0.309607, 3.511477, 4.994153},
     {-4.147421, -1.683136},
     3.20388832026131, 1.6241143188670406, 0.11089895291103448},
    {{-2.311949, 2.502755, 0.966105, 6.769502, -0.473844, -3.181297, -5.441674},
     {-3.410151, -3.916506, 0.335203, 1.511433, -1.870707, -1.613341},
     0.75697348045051527, 9.2709283118166486, 0.46786674492695324},
    {{2.981759, 1.726679, -0.042871, -2.941976, 4.087633, 5.116385, 6.425747},
     {-2.048517, -1.380158, -3.651518, -2.194651, 0.460887},
     3.0652473131141629, 8.9596619472287138, 0.013527145851771954},
    {{3.527297, 2.747059, 0.157752, -0.799203, 1.077611, -2.036196, -0.019134, 0.153519, 1.629664, 2.830692, 0.819943},
     {-3.0632, -9.795996, -1.614425, -2.935513, -1.526133, 0.152769, 0.082737, -4.165689, -0.447267, 0.670396, -2.244422},
     3.1269904339943246, 15.918226760849929, 0.006533679450843312},
    {{-4.150012, 0.569611, 4.477212, 3.71004, 6.573115, 0.534331, -0.480308, -0.782725, 2.218948},
     {2.460007, 3.211396, 3.192855, 3.315014, 2.870632, 2.491928, 2.925689, 2.528591},
     -1.3589624142688006, 8.2108348075132458, 0.21030920020975674},
    {{-0.760955, -0.337307, -0.954403, -0.071595},
     {1.130419, 2.084891, 3.135075, 2.604578, 3.180788},
     -6.8772830437729775, 5.9140504055118219, 0.00049578561563074755},
    {{0.44816, -2.074149, 0.137413, 2.214206, -3.793385, -8.533878, 6.002009, -4.013579},
     {0.161213, 0.511651, -6.583674, -2.041403, -4.464854},
     0.61845857976270657, 10.797486361280473, 0.54909703416806666},
    {{-4.100155, -4.142971, -1.618139, -3.926082, -3.050002, -2.83878, -2.681803, -4.462626, -4.568086, -2.820596},
     {2.083806, 2.02992, 2.034863},
     -18.015073551731607, 9.0575903051562161, 2.1052088535789599e-08},
    {{-4.253439, -1.051205, -1.756617, 2.870212, 4.238873},
     {-1.662867, -1.88304, -3.081383, -3.401513, -2.136697, -1.712851},
     1.464022250083018, 4.3059347952838998, 0.21211984434521111},
    {{-2.830675, -3.069757, -1.426762, -3.296411, -2.211786, -2.658637},
     {1.39664, -3.068161, 7.416231, 2.953596, 7.370355, 4.575006, 0.926568, -1.771015},
     -3.6148617709161668, 7.5616614963421469, 0.0075147010968212432},
};
// clang-format on

}  // namespace

TEST_CASE("domain similarity overlap on hand cases") {
  RawCorpus a = words("a", "alpha beta gamma");
  RawCorpus b = words("b", "beta gamma delta");
  CHECK(domain_similarity(a, b, 10) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(domain_similarity(b, a, 10) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(domain_similarity(a, a, 10) == 1.0);
  RawCorpus c = words("c", "x y z");
  CHECK(domain_similarity(a, c, 10) == 0.0);

  // k truncates both frequency rankings before intersecting.
  RawCorpus fa = words("fa", "x x x y y z");
  RawCorpus fb = words("fb", "z z z x");
  CHECK(domain_similarity(fa, fb, 1) == 0.0);   // {x} vs {z}
  CHECK(domain_similarity(fa, fb, 2) == 0.5);   // {x,y} vs {z,x}
  CHECK(domain_similarity(fa, fb, 100) == 0.5); // both lists clamp to length 2

  CHECK_THROWS_AS(domain_similarity(a, b, 0), ConfigError);
  RawCorpus empty = words("e", "   ");
  CHECK_THROWS_AS(domain_similarity(a, empty, 5), DataError);
}

TEST_CASE("similarity matrix is symmetric with unit diagonal") {
  RawCorpus a = words("a", "alpha beta gamma");
  RawCorpus b = words("b", "beta gamma delta");
  RawCorpus c = words("c", "gamma delta epsilon");
  SimilarityMatrix m = similarity_matrix({&a, &b, &c}, 10);
  CHECK(m.domains == std::vector<std::string>{"a", "b", "c"});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(m.at(i, i) == 1.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(m.at(i, j) == m.at(j, i));
  }
  CHECK(m.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.at(0, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  CHECK_THROWS_AS(similarity_matrix({&a}, 10), ContractError);
  CHECK_THROWS_AS(similarity_matrix({&a, nullptr}, 10), ContractError);
}

TEST_CASE("similarity matrix serialization") {
  const fs::path dir = fresh_dir("similarity");
  RawCorpus a = words("books", "alpha beta gamma");
  RawCorpus b = words("film", "beta gamma delta");
  SimilarityMatrix m = similarity_matrix({&a, &b}, 10);

  write_similarity_csv(m, dir / "sim.csv");
  const auto lines = read_lines(dir / "sim.csv");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "domain,books,film");
  CHECK(lines[1] == "books,1,0.6666666667");
  CHECK(lines[2] == "film,0.6666666667,1");

  write_similarity_json(m, dir / "sim.json");
  std::ifstream in(dir / "sim.json");
  const Json j = Json::parse(in);
  CHECK(j.at("domains") == Json::array({"books", "film"}));
  CHECK(j.at("scores").at("books").at("film").get<double>() ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(j.at("scores").at("film").at("film").get<double>() == 1.0);
}

TEST_CASE("welch t-test matches frozen reference values") {
  for (std::size_t i = 0; i < kWelchCases.size(); ++i) {
    const WelchCase& c = kWelchCases[i];
    CAPTURE(i);
    const WelchResult r = welch_t_test(c.a, c.b);
    CHECK(r.t == doctest::Approx(c.t).epsilon(1e-12));
    CHECK(r.df == doctest::Approx(c.df).epsilon(1e-12));
    CHECK(r.p == doctest::Approx(c.p).epsilon(1e-9));
    CHECK_FALSE(r.degenerate);
  }
}

TEST_CASE("welch t-test edge cases") {
  const std::vector<double> one = {1.0};
  const std::vector<double> two = {1.0, 2.0};
  CHECK_THROWS_AS(welch_t_test(one, two), ContractError);
  CHECK_THROWS_AS(welch_t_test(two, one), ContractError);

  // Both constant and equal: indistinguishable samples.
  const std::vector<double> flat = {2.0, 2.0, 2.0};
  WelchResult same = welch_t_test(flat, flat);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);
  CHECK_FALSE(same.degenerate);

  // Both constant but different: unbounded statistic, flagged.
  const std::vector<double> other = {3.0, 3.0};
  WelchResult apart = welch_t_test(flat, other);
  CHECK(apart.degenerate);
  CHECK(apart.p == 0.0);
  CHECK(std::isinf(apart.t));
  CHECK(apart.t < 0.0);

  // One side constant: Welch still works, df collapses to n-1 of the other.
  const std::vector<double> varying = {1.0, 2.0, 3.0};
  WelchResult half = welch_t_test(flat, varying);
  CHECK(half.t == doctest::Approx(0.0).epsilon(1e-15));
  WelchResult shifted = welch_t_test(std::vector<double>{1.0, 1.0, 1.0}, varying);
  CHECK(shifted.t == doctest::Approx(-std::sqrt(3.0)).epsilon(1e-12));
  CHECK(shifted.df == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("incomplete beta against frozen reference values") {
  CHECK(regularized_incomplete_beta(0.5, 0.5, 0.5) == doctest::Approx(0.50000000000000011).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(0.25, 2.0, 3.0) == doctest::Approx(0.26171875).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(0.75, 2.0, 3.0) == doctest::Approx(0.94921875).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(0.1, 5.0, 1.0) == doctest::Approx(1.0000000000000003e-05).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(0.9, 0.5, 2.5) == doctest::Approx(0.99888556245849258).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(0.3, 10.0, 10.0) == doctest::Approx(0.032553356881300934).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(0.999, 1.5, 0.5) == doctest::Approx(0.95974334188496824).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(1e-06, 1.0, 1.0) == doctest::Approx(9.9999999999999995e-07).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(0.42, 7.3, 0.9) == doctest::Approx(0.001419290713457407).epsilon(1e-12));
  CHECK(regularized_incomplete_beta(0.6, 0.2, 0.3) == doctest::Approx(0.64233455268834738).epsilon(1e-12));

  CHECK(regularized_incomplete_beta(0.0, 2.0, 3.0) == 0.0);
  CHECK(regularized_incomplete_beta(1.0, 2.0, 3.0) == 1.0);
  // Symmetry identity: I_x(a,b) = 1 - I_{1-x}(b,a).
  for (double x : {0.05, 0.42, 0.77}) {
    CHECK(regularized_incomplete_beta(x, 1.7, 3.4) ==
          doctest::Approx(1.0 - regularized_incomplete_beta(1.0 - x, 3.4, 1.7)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(regularized_incomplete_beta(-0.1, 1.0, 1.0), ContractError);
  CHECK_THROWS_AS(regularized_incomplete_beta(1.1, 1.0, 1.0), ContractError);
  CHECK_THROWS_AS(regularized_incomplete_beta(0.5, 0.0, 1.0), ContractError);
  CHECK_THROWS_AS(regularized_incomplete_beta(0.5, 1.0, -2.0), ContractError);
}

TEST_CASE("student t two-tailed p-values") {
  CHECK(student_t_two_tailed_p(1.5491933384829668, 2.9411764705882346) == doctest::Approx(0.22088084049409579).epsilon(1e-12));
  CHECK(student_t_two_tailed_p(2.0, 10.0) == doctest::Approx(0.073388034770740393).epsilon(1e-12));
  CHECK(student_t_two_tailed_p(-3.5, 4.2) == doctest::Approx(0.022993742455477393).epsilon(1e-12));
  CHECK(student_t_two_tailed_p(0.0, 7.0) == 1.0);
  CHECK(student_t_two_tailed_p(25.0, 2.0) == doctest::Approx(0.001596170211410334).epsilon(1e-12));
  CHECK(student_t_two_tailed_p(std::numeric_limits<double>::infinity(), 3.0) == 0.0);
  CHECK(student_t_two_tailed_p(4.2, 6.0) == student_t_two_tailed_p(-4.2, 6.0));
  CHECK_THROWS_AS(student_t_two_tailed_p(1.0, 0.0), ContractError);
}

TEST_CASE("pca recovers a rank-one geometry exactly") {
  Matrix x(4, 2);
  const double pts[4][2] = {{1, 2}, {-1, -2}, {3, 6}, {-3, -6}};
  for (std::size_t i = 0; i < 4; ++i) {
    x.at(i, 0) = pts[i][0];
    x.at(i, 1) = pts[i][1];
  }
  Pca2d p = pca_project_2d(x);
  CHECK(p.eigenvalues[0] == doctest::Approx(100.0 / 3.0).epsilon(1e-9));
  CHECK(p.eigenvalues[1] == doctest::Approx(0.0).scale(1.0));
  const double s5 = std::sqrt(5.0);
  // Axis (1,2)/sqrt(5), sign canonicalized so the projections are positive
  // for points in the (+,+) quadrant.
  CHECK(p.points.at(0, 0) == doctest::Approx(s5).epsilon(1e-8));
  CHECK(p.points.at(1, 0) == doctest::Approx(-s5).epsilon(1e-8));
  CHECK(p.points.at(2, 0) == doctest::Approx(3 * s5).epsilon(1e-8));
  CHECK(p.points.at(3, 0) == doctest::Approx(-3 * s5).epsilon(1e-8));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(p.points.at(i, 1) == doctest::Approx(0.0).scale(1.0));
  }
}

TEST_CASE("pca preserves planar geometry embedded in higher dimensions") {
  // Points in the plane spanned by two orthogonal directions of R^5.
  const std::vector<std::pair<double, double>> uv = {
      {0.0, 0.0}, {1.0, 0.5}, {-2.0, 1.5}, {0.5, -1.0}, {2.5, 2.0}, {-1.0, -2.5}};
  const double e1[5] = {0.6, 0.0, 0.8, 0.0, 0.0};
  const double e2[5] = {0.0, 1.0, 0.0, 0.0, 0.0};
  Matrix x(uv.size(), 5);
  for (std::size_t i = 0; i < uv.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      x.at(i, j) = uv[i].first * e1[j] + uv[i].second * e2[j];
    }
  }
  Pca2d p = pca_project_2d(x);

  // Two principal directions capture everything, so pairwise distances in
  // the projection match the originals.
  for (std::size_t i = 0; i < uv.size(); ++i) {
    for (std::size_t j = i + 1; j < uv.size(); ++j) {
      const double du = uv[i].first - uv[j].first;
      const double dv = uv[i].second - uv[j].second;
      const double want = std::sqrt(du * du + dv * dv);
      const double dx = p.points.at(i, 0) - p.points.at(j, 0);
      const double dy = p.points.at(i, 1) - p.points.at(j, 1);
      CHECK(std::sqrt(dx * dx + dy * dy) == doctest::Approx(want).epsilon(1e-7));
    }
  }
  CHECK(p.eigenvalues[0] >= p.eigenvalues[1]);

  // Total variance is preserved by the two components.
  double total = 0.0;
  std::vector<double> mean(5, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < 5; ++j) mean[j] += x.at(i, j);
  }
  for (double& m : mean) m /= static_cast<double>(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const double d = x.at(i, j) - mean[j];
      total += d * d;
    }
  }
  total /= static_cast<double>(x.rows - 1);
  CHECK(p.eigenvalues[0] + p.eigenvalues[1] == doctest::Approx(total).epsilon(1e-7));
}

TEST_CASE("pca contracts and degenerate input") {
  Matrix tall(1, 3);
  CHECK_THROWS_AS(pca_project_2d(tall), ContractError);
  Matrix thin(3, 1);
  CHECK_THROWS_AS(pca_project_2d(thin), ContractError);

  Matrix flat(3, 3);
  for (double& v : flat.data) v = 4.25;
  CHECK_THROWS_AS(pca_project_2d(flat), DegenerateGeometry);
}

TEST_CASE("hidden matrix file round trip") {
  const fs::path dir = fresh_dir("hidden");
  Matrix m(3, 2);
  const std::vector<double> vals = {0.5, -1.25, 3.75, 0.001953125, -0.0078125, 42.0};
  m.data = vals;
  write_hidden_matrix(m, dir / "h.bin");
  Matrix back = read_hidden_matrix(dir / "h.bin");
  CHECK(back.rows == 3);
  CHECK(back.cols == 2);
  // Values pass through f32; these are all exactly representable.
  CHECK(back.data == vals);

  CHECK(fs::file_size(dir / "h.bin") == 16 + 6 * 4);

  std::ofstream trunc(dir / "short.bin", std::ios::binary | std::ios::trunc);
  trunc.write("\x05\x00\x00\x00\x00\x00\x00\x00", 8);
  trunc.close();
  CHECK_THROWS_AS(read_hidden_matrix(dir / "short.bin"), SchemaError);
  CHECK_THROWS_AS(read_hidden_matrix(dir / "absent.bin"), IoError);
}

TEST_CASE("projection csv") {
  const fs::path dir = fresh_dir("projection");
  Pca2d p;
  p.points = Matrix(2, 2);
  p.points.at(0, 0) = 1.5;
  p.points.at(0, 1) = -2.0;
  p.points.at(1, 0) = 0.25;
  p.points.at(1, 1) = 0.0;
  write_projection_csv({"books", "film"}, p, dir / "proj.csv");
  const auto lines = read_lines(dir / "proj.csv");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "domain,pc1,pc2");
  CHECK(lines[1] == "books,1.5,-2");
  CHECK(lines[2] == "film,0.25,0");

  CHECK_THROWS_AS(write_projection_csv({"only"}, p, dir / "bad.csv"), ContractError);
}

TEST_CASE("result aggregation with missing runs") {
  std::vector<RunAccuracy> runs = {
      {"s1", "Full-FT", 1, 0.8},  {"s1", "Full-FT", 2, 0.9},
      {"s1", "Ada-TSA", 1, 0.9},  {"s1", "Ada-TSA", 2, 0.95},
      {"s2", "Full-FT", 1, 0.7},
      {"s2", "Ada-TSA", 1, 0.75}, {"s2", "Ada-TSA", 2, 0.85},
  };
  ResultTable table = aggregate_results(runs);
  CHECK(table.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(table.schemes == std::vector<std::string>{"s1", "s2", "Avg."});
  CHECK(table.variants == std::vector<std::string>{"Full-FT", "Ada-TSA"});

  const ResultCell* c11 = table.find("s1", "Full-FT");
  REQUIRE(c11 != nullptr);
  CHECK(c11->n == 2);
  CHECK(c11->mean == doctest::Approx(0.85).epsilon(1e-15));
  CHECK(c11->stddev == doctest::Approx(std::sqrt(0.005)).epsilon(1e-12));
  CHECK(c11->per_seed[0] == 0.8);
  CHECK(c11->per_seed[1] == 0.9);

  const ResultCell* c21 = table.find("s2", "Full-FT");
  REQUIRE(c21 != nullptr);
  CHECK(c21->n == 1);
  CHECK(c21->mean == 0.7);
  CHECK(c21->stddev == 0.0);
  CHECK(std::isnan(c21->per_seed[1]));

  // Macro average rows: a seed counts only when every scheme has it.
  const ResultCell* avg_full = table.find("Avg.", "Full-FT");
  REQUIRE(avg_full != nullptr);
  CHECK(avg_full->n == 1);
  CHECK(avg_full->per_seed[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(std::isnan(avg_full->per_seed[1]));
  const ResultCell* avg_ada = table.find("Avg.", "Ada-TSA");
  REQUIRE(avg_ada != nullptr);
  CHECK(avg_ada->n == 2);
  CHECK(avg_ada->per_seed[0] == doctest::Approx(0.825).epsilon(1e-15));
  CHECK(avg_ada->per_seed[1] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(avg_ada->mean == doctest::Approx(0.8625).epsilon(1e-15));

  CHECK(table.find("s3", "Full-FT") == nullptr);
  CHECK(table.find("s1", "Nope") == nullptr);

  CHECK_THROWS_AS(aggregate_results({}), ContractError);
  std::vector<RunAccuracy> dup = {{"s", "V", 1, 0.5}, {"s", "V", 1, 0.6}};
  CHECK_THROWS_AS(aggregate_results(dup), ContractError);
  std::vector<RunAccuracy> reserved = {{"Avg.", "V", 1, 0.5}};
  CHECK_THROWS_AS(aggregate_results(reserved), ContractError);
}

TEST_CASE("variant columns follow the canonical method order") {
  std::vector<RunAccuracy> runs = {
      {"s", "Ada-TSA", 1, 0.9}, {"s", "Zeta", 1, 0.1},   {"s", "Ada-FT", 1, 0.8},
      {"s", "Full-TSA", 1, 0.7}, {"s", "Full-FT", 1, 0.6}, {"s", "Alpha", 1, 0.2},
  };
  ResultTable table = aggregate_results(runs);
  CHECK(table.variants == std::vector<std::string>{"Full-FT", "Full-TSA", "Ada-FT",
                                                   "Ada-TSA", "Alpha", "Zeta"});
}

TEST_CASE("pairwise tests compare baselines to the reference") {
  std::vector<RunAccuracy> runs;
  const std::vector<double> ref = {2.0, 4.0, 6.0};
  const std::vector<double> base = {1.0, 2.0, 3.0};
  for (std::uint64_t s = 1; s <= 3; ++s) {
    runs.push_back({"s1", "Ada-TSA", s, ref[s - 1]});
    runs.push_back({"s1", "Full-FT", s, base[s - 1]});
  }
  // A second scheme with only one common seed: skipped.
  runs.push_back({"s2", "Ada-TSA", 1, 0.9});
  runs.push_back({"s2", "Full-FT", 1, 0.8});
  runs.push_back({"s2", "Full-FT", 2, 0.7});

  ResultTable table = aggregate_results(runs);
  std::vector<PairwiseTest> tests = pairwise_vs_reference(table, "Ada-TSA");
  // s1 qualifies; s2 and both Avg. rows lack two common seeds.
  REQUIRE(tests.size() == 1);
  CHECK(tests[0].scheme == "s1");
  CHECK(tests[0].variant == "Full-FT");
  CHECK(tests[0].test.t == doctest::Approx(1.5491933384829668).epsilon(1e-12));
  CHECK(tests[0].test.df == doctest::Approx(2.9411764705882346).epsilon(1e-12));
  CHECK(tests[0].test.p == doctest::Approx(0.22088084049409579).epsilon(1e-9));

  CHECK(pairwise_vs_reference(table, "NoSuchVariant").empty());
}

TEST_CASE("results and ttest csv serialization") {
  const fs::path dir = fresh_dir("results");
  std::vector<RunAccuracy> runs = {
      {"s1", "Full-FT", 1, 0.8}, {"s1", "Full-FT", 2, 0.9},
      {"s1", "Ada-TSA", 1, 0.9}, {"s1", "Ada-TSA", 2, 0.95},
  };
  ResultTable table = aggregate_results(runs);
  write_results_csv(table, dir / "results.csv");
  const auto lines = read_lines(dir / "results.csv");
  REQUIRE(lines.size() == 5);  // header + 2 scheme rows x 2 variants... plus Avg rows
  CHECK(lines[0] == "scheme,variant,mean,std,n,seed_1,seed_2");
  CHECK(lines[1] == "s1,Full-FT," + format_double(0.85) + "," +
                        format_double(std::sqrt(0.005)) + ",2,0.8,0.9");
  CHECK(lines[2] == "s1,Ada-TSA," + format_double(0.925) + "," +
                        format_double(std::sqrt(0.00125)) + ",2,0.9,0.95");
  // Single-scheme table: Avg. duplicates the one scheme row.
  CHECK(lines[3].rfind("Avg.,Full-FT,", 0) == 0);
  CHECK(lines[4].rfind("Avg.,Ada-TSA,", 0) == 0);

  std::vector<PairwiseTest> tests = pairwise_vs_reference(table, "Ada-TSA");
  write_ttest_csv(tests, "Ada-TSA", dir / "ttest.csv");
  const auto tlines = read_lines(dir / "ttest.csv");
  REQUIRE(tlines.size() == 3);
  CHECK(tlines[0] == "scheme,variant,reference,t,df,p,significant_05,significant_01,degenerate");
  CHECK(tlines[1].rfind("s1,Full-FT,Ada-TSA,", 0) == 0);
  CHECK(tlines[1].substr(tlines[1].size() - 6) == ",0,0,0");  // not significant
}

TEST_CASE("rendered table carries significance markers") {
  std::vector<RunAccuracy> runs = {
      {"s1", "Full-FT", 1, 0.601}, {"s1", "Full-FT", 2, 0.6},  {"s1", "Full-FT", 3, 0.602},
      {"s1", "Ada-TSA", 1, 0.9},   {"s1", "Ada-TSA", 2, 0.91}, {"s1", "Ada-TSA", 3, 0.895},
      {"s1", "Ada-FT", 1, 0.88},   {"s1", "Ada-FT", 2, 0.886}, {"s1", "Ada-FT", 3, 0.91},
  };
  ResultTable table = aggregate_results(runs);
  std::vector<PairwiseTest> tests = pairwise_vs_reference(table, "Ada-TSA");

  const std::string text = render_results_table(table, tests, "Ada-TSA");
  CHECK(text.find("scheme") != std::string::npos);
  CHECK(text.find("Full-FT") != std::string::npos);
  CHECK(text.find("Ada-TSA") != std::string::npos);
  CHECK(text.find("+-") != std::string::npos);
  CHECK(text.find("Welch t-test vs Ada-TSA") != std::string::npos);
  // Full-FT sits far below the reference: two stars at p < 0.01. Ada-FT is
  // statistically indistinguishable: no stars after its cell.
  CHECK(text.find("**") != std::string::npos);
  const ResultCell* ada_ft = table.find("s1", "Ada-FT");
  REQUIRE(ada_ft != nullptr);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", ada_ft->mean * 100.0, ada_ft->stddev * 100.0);
  const std::size_t at = text.find(buf);
  REQUIRE(at != std::string::npos);
  CHECK(text.substr(at + std::strlen(buf), 2) != " *");

  // Cells with no data render as a dash.
  std::vector<RunAccuracy> sparse = {
      {"s1", "Full-FT", 1, 0.6}, {"s1", "Full-FT", 2, 0.7},
      {"s2", "Full-FT", 1, 0.6}, {"s2", "Full-FT", 2, 0.7},
      {"s1", "Ada-TSA", 1, 0.9}, {"s1", "Ada-TSA", 2, 0.91},
  };
  const std::string sparse_text =
      render_results_table(aggregate_results(sparse), {}, "Ada-TSA");
  CHECK(sparse_text.find("  -") != std::string::npos);
}

TEST_CASE("hidden state extraction pools per document") {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 12;
  cfg.adapter_dim = 3;
  cfg.vocab_size = 16;
  cfg.max_len = 8;
  ParameterStore<double> params = init_model<double>(cfg, 17);

  DomainCorpus corpus;
  corpus.domain_id = "d";
  corpus.docs = {{4, 5, 6}, {7}, {8, 9}, {10, 11, 12, 13}, {5, 5}};

  Matrix mean_pool = extract_hidden(params, corpus, cfg, 2);
  Matrix first_pool = extract_hidden(params, corpus, cfg, 2, HiddenPooling::kFirstToken);
  CHECK(mean_pool.rows == 5);
  CHECK(mean_pool.cols == 8);

  // Reference: encode each document alone (no padding involved) and pool.
  Tape<double> tape(false);
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    std::vector<TokenId> ids;
    ids.push_back(kBosId);
    ids.insert(ids.end(), corpus.docs[i].begin(), corpus.docs[i].end());
    Tensor<double> hidden = encode(tape, params, ids, 1, ids.size(), cfg);
    for (std::size_t j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < ids.size(); ++t) acc += hidden.values()[t * 8 + j];
      CHECK(mean_pool.at(i, j) == doctest::Approx(acc / static_cast<double>(ids.size()))
                                      .epsilon(1e-12));
      CHECK(first_pool.at(i, j) == hidden.values()[j]);
    }
  }

  // Batch size must not affect the pooled values.
  Matrix whole = extract_hidden(params, corpus, cfg, 5);
  for (std::size_t i = 0; i < whole.data.size(); ++i) {
    CHECK(whole.data[i] == doctest::Approx(mean_pool.data[i]).epsilon(1e-12));
  }

  DomainCorpus empty;
  empty.domain_id = "e";
  CHECK_THROWS_AS(extract_hidden(params, empty, cfg, 2), DataError);
  CHECK_THROWS_AS(extract_hidden(params, corpus, cfg, 0), ConfigError);
}
