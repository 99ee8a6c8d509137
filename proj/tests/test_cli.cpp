#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ptmm/cli.hpp"
#include "ptmm/imaging.hpp"
#include "support/testing.hpp"

using namespace ptmm;
using namespace ptmm::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "ptmm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ptmm_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_csv(const fs::path& path, const Matrix& m, bool header) {
  std::ofstream f(path);
  if (header) {
    for (Index c = 0; c < m.cols(); ++c) f << (c ? "," : "") << "x" << c;
    f << "\n";
  }
  f.precision(17);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) f << (c ? "," : "") << m(r, c);
    f << "\n";
  }
}

Image textured(Rng& rng, int w, int h, int c) {
  Image im(w, h, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        im.at(x, y, k) = std::round(std::clamp(50.0 + 5.0 * x + 4.0 * y + 10.0 * k + 5.0 * rng.normal(), 0.0, 255.0));
      }
    }
  }
  return im;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  return nlohmann::json::parse(f);
}

}  // namespace

TEST_CASE("parse_csv_matrix") {
  const Matrix a = parse_csv_matrix("a,b\n1,2\n3.5,-4e1\n");
  REQUIRE(a.rows() == 2);
  CHECK(a(1, 1) == -40.0);
  const Matrix b = parse_csv_matrix("1,2\n3,4\n");
  CHECK(b.rows() == 2);
  CHECK_THROWS_AS(parse_csv_matrix("1,2\n3\n"), ParseError);
  CHECK_THROWS_AS(parse_csv_matrix("1,2\n3,x\n"), ParseError);
}

TEST_CASE("write_text_atomic leaves no temporary file") {
  const fs::path dir = scratch("atomic");
  write_text_atomic(dir / "a.txt", "hello\n");
  write_text_atomic(dir / "a.txt", "again\n");
  std::ifstream f(dir / "a.txt");
  std::string line;
  std::getline(f, line);
  CHECK(line == "again");
  CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator()) == 1);
  fs::remove_all(dir);
}

TEST_CASE("fit command") {
  const fs::path dir = scratch("fit");
  Rng rng(81);
  write_csv(dir / "data.csv", normal_matrix(rng, 60, 3), true);

  const Run ok = run({"fit", "--input", (dir / "data.csv").string(), "--output-dir", (dir / "out").string(), "-g",
                      "1", "-q", "1", "--starts", "1"});
  CHECK(ok.code == 0);
  CHECK(fs::exists(dir / "out" / "model.json"));
  CHECK(fs::exists(dir / "out" / "fit_report.json"));
  CHECK(ok.out.find("loglik=") != std::string::npos);
  const MixtureModel m = deserialize(std::string(std::istreambuf_iterator<char>(std::ifstream(dir / "out" / "model.json").rdbuf()), {}));
  CHECK(m.spec.p == 3);

  const Run wide = run({"fit", "--input", (dir / "data.csv").string(), "--output-dir", (dir / "wide").string(), "-q", "3"});
  CHECK(wide.code == 1);
  CHECK(wide.err.find("q must be < p") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "wide" / "model.json"));

  write_csv(dir / "tiny.csv", normal_matrix(rng, 4, 3), false);
  const Run many = run({"fit", "--input", (dir / "tiny.csv").string(), "--output-dir", (dir / "many").string(), "-g",
                        "5", "--starts", "1"});
  CHECK(many.code == 2);

  const Run missing = run({"fit", "--input", (dir / "nope.csv").string()});
  CHECK(missing.code == 1);

  const Run bad_flag = run({"fit", "--input", (dir / "data.csv").string(), "--output-dir", (dir / "bad").string(),
                            "--structure", "XYZ"});
  CHECK(bad_flag.code == 1);
  CHECK_FALSE(fs::exists(dir / "bad" / "model.json"));

  const Run unknown = run({"fit", "--bogus"});
  CHECK(unknown.code == 1);
  fs::remove_all(dir);
}

TEST_CASE("help exits cleanly") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"compress", "--help"}).code == 0);
  CHECK(run({}).code == 1);
}

TEST_CASE("compress command") {
  const fs::path dir = scratch("compress");
  Rng rng(82);
  write_image(dir / "in.png", textured(rng, 16, 16, 3));
  const Run r = run({"compress", "--input", (dir / "in.png").string(), "--output-dir", (dir / "out").string(),
                     "--structure", "CUU", "-g", "2", "-q", "2", "--starts", "2"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("RMSE=", 0) == 0);
  CHECK(r.out.find(" PSNR=") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "reconstructed.png"));
  CHECK(fs::exists(dir / "out" / "model.json"));
  const auto q = read_json(dir / "out" / "quality.json");
  CHECK(q["model_file"] == "model.json");
  CHECK(q["per_channel_mse"].size() == 3);
  CHECK(q["psnr"].is_number());

  Image blocks(16, 16, 1);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) blocks.at(x, y, 0) = ((x / 4 + y / 4) % 2 == 0) ? 30.0 : 180.0;
  }
  write_image(dir / "blocks.pgm", blocks);
  const Run b = run({"compress", "--input", (dir / "blocks.pgm").string(), "--output-dir", (dir / "blocks").string(),
                     "-g", "2", "-q", "1", "--starts", "1"});
  CHECK(b.code == 0);
  CHECK(read_json(dir / "blocks" / "quality.json")["psnr"] == "inf");
  CHECK(b.out.find("PSNR=inf") != std::string::npos);

  CHECK(run({"compress", "--input", (dir / "missing.png").string()}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("faces command") {
  const fs::path dir = scratch("faces");
  Rng rng(83);
  fs::create_directories(dir / "imgs");
  for (int k = 0; k < 11; ++k) write_image(dir / "imgs" / ("f" + std::to_string(k) + ".pgm"), textured(rng, 12, 10, 1));
  const Run r = run({"faces", "--input", (dir / "imgs").string(), "--output-dir", (dir / "out").string(),
                     "--starts", "1", "--max-iter", "200"});
  CHECK(r.code == 0);
  const auto table = read_json(dir / "out" / "faces.json");
  REQUIRE(table["columns"].size() == 7);
  CHECK(table["images"].size() == 11);
  for (const auto& col : table["columns"]) {
    if (col["ok"] == true) CHECK(col["rmse"].size() == 11);
  }

  write_image(dir / "imgs" / "zz.pgm", textured(rng, 8, 8, 1));
  const Run mixed = run({"faces", "--input", (dir / "imgs").string(), "--output-dir", (dir / "mixed").string()});
  CHECK(mixed.code == 1);
  CHECK(mixed.err.find("zz.pgm") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("select command") {
  const fs::path dir = scratch("select");
  Rng rng(84);
  write_csv(dir / "data.csv", normal_matrix(rng, 50, 3), false);
  const Run r = run({"select", "--input", (dir / "data.csv").string(), "--output-dir", (dir / "out").string(),
                     "--grid-g", "1", "--grid-q", "1", "--structure", "UUU", "--starts", "1"});
  CHECK(r.code == 0);
  const auto sel = read_json(dir / "out" / "selection.json");
  CHECK(sel["ranked"].size() == 1);
  CHECK(r.out.rfind("best ", 0) == 0);

  const Run all = run({"select", "--input", (dir / "data.csv").string(), "--output-dir", (dir / "all").string(),
                       "--grid-g", "1", "--grid-q", "1", "--structure", "all", "--starts", "1"});
  CHECK(all.code == 0);
  CHECK(read_json(dir / "all" / "selection.json")["ranked"].size() == 8);

  const Run dead = run({"select", "--input", (dir / "data.csv").string(), "--output-dir", (dir / "dead").string(),
                        "--grid-g", "40", "--grid-q", "1", "--starts", "1"});
  CHECK(dead.code == 2);
  fs::remove_all(dir);
}
