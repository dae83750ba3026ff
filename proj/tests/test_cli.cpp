#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "priorstack/errors.hpp"
#include "priorstack/model_io.hpp"
#include "priorstack/simulation.hpp"

using namespace priorstack;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "priorstack-cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

class Workdir {
 public:
  explicit Workdir(const std::string& name) : dir_(fs::temp_directory_path() / ("priorstack-" + name)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workdir() { fs::remove_all(dir_); }
  [[nodiscard]] std::string operator/(const std::string& file) const { return (dir_ / file).string(); }

 private:
  fs::path dir_;
};

struct Toy {
  Dataset data;
  PriorEffects priors;
  std::vector<std::string> names;
};

Toy make_toy(Family family = Family::gaussian) {
  RngStream rng(5, "cli-toy");
  Toy t;
  const int n = 50;
  const int p = 20;
  t.data.family = family;
  t.data.x.resize(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) t.data.x(i, j) = rng.normal();
  }
  Vector beta = Vector::Zero(p);
  for (int j = 0; j < p; j += 3) beta[j] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  t.data.y = t.data.x * beta;
  for (int i = 0; i < n; ++i) {
    t.data.y[i] += 0.5 * rng.normal();
    if (family == Family::binomial) t.data.y[i] = t.data.y[i] > 0.0 ? 1.0 : 0.0;
  }
  t.priors.z.resize(p, 2);
  for (int j = 0; j < p; ++j) {
    t.priors.z(j, 0) = beta[j] + 0.1 * rng.normal();
    t.priors.z(j, 1) = rng.normal();
  }
  t.priors.names = {"good", "noise"};
  for (int j = 0; j < p; ++j) t.names.push_back("f" + std::to_string(j));
  return t;
}

void write_toy(const Toy& t, const Workdir& w) {
  std::string x;
  for (std::size_t j = 0; j < t.names.size(); ++j) x += (j ? "," : "") + t.names[j];
  x += "\n";
  for (Eigen::Index i = 0; i < t.data.n(); ++i) {
    for (Eigen::Index j = 0; j < t.data.p(); ++j) x += (j ? "," : "") + format_double(t.data.x(i, j));
    x += "\n";
  }
  spit(w / "x.csv", x);
  std::string y = "y\n";
  for (Eigen::Index i = 0; i < t.data.n(); ++i) y += format_double(t.data.y[i]) + "\n";
  spit(w / "y.csv", y);
  // Prior rows deliberately in reverse order: the join is by name.
  std::string z = "feature,good,noise\n";
  for (Eigen::Index j = t.data.p() - 1; j >= 0; --j) {
    z += t.names[static_cast<std::size_t>(j)] + "," + format_double(t.priors.z(j, 0)) + "," +
         format_double(t.priors.z(j, 1)) + "\n";
  }
  spit(w / "z.csv", z);
}

Vector read_column(const std::string& path) { return cli::read_csv(path).values.col(0); }

}  // namespace

TEST_CASE("csv parsing") {
  std::istringstream ok("\xEF\xBB\xBF" "a, b\n1,2\n\n-3.5,+4e1\n");
  const cli::CsvTable t = cli::parse_csv(ok, "ok.csv");
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  REQUIRE(t.values.rows() == 2);
  CHECK(t.values(1, 0) == -3.5);
  CHECK(t.values(1, 1) == 40.0);

  std::istringstream labelled("feature,s1\nx,0.5\ny,-1\n");
  const cli::CsvTable l = cli::parse_csv(labelled, "z.csv", true);
  CHECK(l.labels == std::vector<std::string>{"x", "y"});
  CHECK(l.header == std::vector<std::string>{"s1"});

  std::istringstream nan("a,b\n1,2\n3,NaN\n");
  try {
    cli::parse_csv(nan, "bad.csv");
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.csv:3") != std::string::npos);
    CHECK(msg.find("'b'") != std::string::npos);
  }
  std::istringstream ragged("a,b\n1\n");
  CHECK_THROWS_AS(cli::parse_csv(ragged, "r.csv"), DataError);
  std::istringstream empty("");
  CHECK_THROWS_AS(cli::parse_csv(empty, "e.csv"), DataError);
}

TEST_CASE("fit then predict reproduces in-process predictions exactly") {
  Workdir w("roundtrip");
  const Toy toy = make_toy();
  write_toy(toy, w);
  const Run fit = run({"fit", "--features", w / "x.csv", "--target", w / "y.csv", "--priors", w / "z.csv", "--model",
                       w / "m.json", "--out", w / "report.json", "--seed", "3", "--calibration", "exp"});
  REQUIRE_MESSAGE(fit.code == 0, fit.err);
  const Run pred = run({"predict", "--features", w / "x.csv", "--model", w / "m.json", "--out", w / "p.csv"});
  REQUIRE_MESSAGE(pred.code == 0, pred.err);

  StackOptions opts;
  opts.method = CalibrationMethod::exponential;
  opts.seed = 3;
  const StackedModel model = fit_stacked(toy.data, toy.priors, opts);
  const Vector direct = predict(model, toy.data.x);
  const Vector from_cli = read_column(w / "p.csv");
  REQUIRE(from_cli.size() == direct.size());
  for (Eigen::Index i = 0; i < direct.size(); ++i) CHECK(from_cli[i] == direct[i]);

  const std::string report = slurp(w / "report.json");
  CHECK(report.find("\"schema_version\": 1") != std::string::npos);
  CHECK(report.find("\"good\"") != std::string::npos);
}

TEST_CASE("fit without priors reports zero retained sources") {
  Workdir w("noprior");
  write_toy(make_toy(), w);
  const Run fit = run({"fit", "--features", w / "x.csv", "--target", w / "y.csv", "--model", w / "m.json"});
  REQUIRE_MESSAGE(fit.code == 0, fit.err);
  CHECK(fit.out.find("0 sources retained") != std::string::npos);
}

TEST_CASE("prior file naming an unknown feature is a data error") {
  Workdir w("misaligned");
  write_toy(make_toy(), w);
  std::string z = slurp(w / "z.csv");
  z.replace(z.find("f7,"), 3, "f7x,");
  spit(w / "z.csv", z);
  const Run fit =
      run({"fit", "--features", w / "x.csv", "--target", w / "y.csv", "--priors", w / "z.csv", "--model", w / "m.json"});
  CHECK(fit.code == cli::kDataError);
  CHECK(fit.err.find("f7x") != std::string::npos);
}

TEST_CASE("missing prior rows default to zero with a note") {
  Workdir w("missing");
  write_toy(make_toy(), w);
  std::string z = slurp(w / "z.csv");
  const auto at = z.find("f3,");
  z.erase(at, z.find('\n', at) - at + 1);
  spit(w / "z.csv", z);
  const Run fit =
      run({"fit", "--features", w / "x.csv", "--target", w / "y.csv", "--priors", w / "z.csv", "--model", w / "m.json"});
  CHECK(fit.code == 0);
  CHECK(fit.err.find("'f3'") != std::string::npos);
}

TEST_CASE("predict joins features by name") {
  Workdir w("reorder");
  const Toy toy = make_toy();
  write_toy(toy, w);
  REQUIRE(run({"fit", "--features", w / "x.csv", "--target", w / "y.csv", "--priors", w / "z.csv", "--model",
               w / "m.json", "--calibration", "exp"})
              .code == 0);
  const Run base = run({"predict", "--features", w / "x.csv", "--model", w / "m.json"});
  // Same data with the columns reversed.
  const cli::CsvTable x = cli::read_csv(w / "x.csv");
  std::string rev;
  for (std::size_t j = x.header.size(); j-- > 0;) rev += x.header[j] + (j ? "," : "\n");
  for (Eigen::Index i = 0; i < x.values.rows(); ++i) {
    for (Eigen::Index j = x.values.cols(); j-- > 0;) rev += format_double(x.values(i, j)) + (j ? "," : "\n");
  }
  spit(w / "xr.csv", rev);
  const Run reordered = run({"predict", "--features", w / "xr.csv", "--model", w / "m.json"});
  CHECK(reordered.code == 0);
  CHECK(reordered.out == base.out);

  std::string dropped = slurp(w / "x.csv");
  dropped.replace(0, 2, "zz");
  spit(w / "xd.csv", dropped);
  const Run missing = run({"predict", "--features", w / "xd.csv", "--model", w / "m.json"});
  CHECK(missing.code == cli::kDataError);
  CHECK(missing.err.find("'f0'") != std::string::npos);
}

TEST_CASE("outputs are identical across thread counts") {
  Workdir w("threads");
  write_toy(make_toy(), w);
  std::string previous_model;
  std::string previous_report;
  for (const char* threads : {"1", "2", "4"}) {
    const Run fit = run({"fit", "--features", w / "x.csv", "--target", w / "y.csv", "--priors", w / "z.csv",
                         "--model", w / "m.json", "--threads", threads, "--seed", "9"});
    REQUIRE(fit.code == 0);
    const std::string model = slurp(w / "m.json");
    if (!previous_model.empty()) {
      CHECK(model == previous_model);
      CHECK(fit.out == previous_report);
    }
    previous_model = model;
    previous_report = fit.out;
  }
}

TEST_CASE("evaluate metrics") {
  Workdir w("evaluate");
  spit(w / "t.csv", "y\n0\n2\n");
  spit(w / "perfect.csv", "p\n0\n2\n");
  spit(w / "mean.csv", "p\n1\n1\n");
  Run r = run({"evaluate", "--predictions", w / "perfect.csv", "--truth", w / "t.csv"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"relative_loss\": 0.0") != std::string::npos);
  r = run({"evaluate", "--predictions", w / "mean.csv", "--truth", w / "t.csv"});
  CHECK(r.out.find("\"relative_loss\": 100.0") != std::string::npos);

  spit(w / "b.csv", "y\n1\n0\n1\n0\n");
  spit(w / "bp.csv", "p\n0.9\n0.6\n0.3\n0.3\n");
  r = run({"evaluate", "--predictions", w / "bp.csv", "--truth", w / "b.csv", "--family", "binomial"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"cindex\": 0.625") != std::string::npos);

  spit(w / "short.csv", "p\n1\n");
  r = run({"evaluate", "--predictions", w / "short.csv", "--truth", w / "t.csv"});
  CHECK(r.code == cli::kDataError);
}

TEST_CASE("simulate command") {
  const Run empty = run({"simulate", "--protocol", "external", "--family", "gaussian", "--Ka", "5", "--h", "5",
                         "--dense", "--reps", "0", "--seed", "7"});
  CHECK(empty.code == 0);
  CHECK(empty.out == results_csv_header());

  const std::vector<std::string> small = {"simulate", "--protocol", "internal", "--reps", "1", "--n-test", "50",
                                          "--methods", "baseline,exp.sta", "--seed", "4", "--sparse"};
  // Internal default p is large; the run is kept short by the method subset.
  const Run a = run(small);
  const Run b = run(small);
  REQUIRE_MESSAGE(a.code == 0, a.err);
  CHECK(a.out == b.out);
  CHECK(std::count(a.out.begin(), a.out.end(), '\n') == 3);

  CHECK(run({"simulate", "--Ka", "6"}).code == cli::kUsage);
  CHECK(run({"simulate", "--dense", "--sparse"}).code == cli::kUsage);
  CHECK(run({"simulate", "--methods", "ridge"}).code == cli::kUsage);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"fit"}).code == cli::kUsage);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"fit", "--features", "/nonexistent.csv", "--target", "y", "--model", "m"}).code == cli::kDataError);

  Workdir w("codes");
  Toy toy = make_toy(Family::binomial);
  toy.data.y.setOnes();
  write_toy(toy, w);
  const Run single = run({"fit", "--features", w / "x.csv", "--target", w / "y.csv", "--family", "binomial",
                          "--model", w / "m.json"});
  CHECK(single.code == cli::kNumericalError);

  spit(w / "bad.json", "{\"schema_version\": 99}");
  CHECK(run({"predict", "--features", w / "x.csv", "--model", w / "bad.json"}).code == cli::kDataError);
}
