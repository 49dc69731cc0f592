#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "chronokit/tensor.hpp"
#include "support/oracles.hpp"

using namespace chronokit;

namespace {

struct CliRun {
  int exit_code;
  std::string stdout_text;
};

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string(CHRONOKIT_CLI_PATH) + " " + args +
                          " 2>/dev/null";
  std::array<char, 4096> buf{};
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), {});
}

}  // namespace

TEST_CASE("mcnemar subcommand prints the reference line") {
  CliRun r = run_cli("mcnemar --b 659 --c 576 --a 8112 --d 4314");
  CHECK(r.exit_code == 0);
  CHECK(r.stdout_text == "5.445,1.9e-02,true\n");
}

TEST_CASE("unknown subcommands exit with a usage error") {
  CliRun r = run_cli("definitely-not-a-subcommand");
  CHECK(r.exit_code != 0);
}

TEST_CASE("schedule long cycle emits four rows ending at the base") {
  CliRun r = run_cli("schedule --base 32x16x224x224 --cycles long");
  CHECK(r.exit_code == 0);
  std::istringstream is(r.stdout_text);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);  // header + 4 entries
  CHECK(lines[0] == "iteration,batch,frames,height,width,lr");
  CHECK(lines[4].substr(0, 22) == "3,32,16,224,224,0.1000");
}

TEST_CASE("identical argv and seed give byte-identical outputs") {
  namespace fs = std::filesystem;
  const std::string dir = "cli_determinism_test";
  fs::create_directories(dir);
  Rng rng(3);
  Tensor clip = oracles::random_tensor({1, 2, 6, 6, 6}, rng);
  write_stv1(dir + "/clip.stv1", clip);

  const std::string args = "pool --input " + dir + "/clip.stv1 --output " + dir +
                           "/out.stv1 --select 0.5 --csv " + dir + "/sel.csv";
  CliRun r1 = run_cli(args);
  REQUIRE(r1.exit_code == 0);
  const std::string out1 = slurp(dir + "/out.stv1");
  const std::string csv1 = slurp(dir + "/sel.csv");
  CliRun r2 = run_cli(args);
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(dir + "/out.stv1") == out1);
  CHECK(slurp(dir + "/sel.csv") == csv1);
  CHECK(out1.size() > 0);
  fs::remove_all(dir);
}

TEST_CASE("record then backstep round-trips through the bundle") {
  namespace fs = std::filesystem;
  const std::string dir = "cli_backstep_test";
  fs::create_directories(dir);
  {
    std::ofstream spec(dir + "/net.cfg");
    spec << "kind=plain channels=1:3:3\nkind=plain channels=3:3:3\n";
  }
  Rng rng(9);
  Tensor clip = oracles::random_tensor({1, 1, 4, 6, 6}, rng, 0.0, 1.0);
  write_stv1(dir + "/clip.stv1", clip);

  CliRun rec = run_cli("record --netspec " + dir + "/net.cfg --input " + dir +
                       "/clip.stv1 --out-dir " + dir + "/trace --seed 4");
  REQUIRE(rec.exit_code == 0);
  CliRun bs = run_cli("backstep --trace " + dir + "/trace --class 0 --theta 0.3 " +
                      "--depth 3 --mode feature --report " + dir + "/report.csv");
  CHECK(bs.exit_code == 0);
  CHECK(fs::exists(dir + "/report.csv"));

  CliRun sal = run_cli("saliency --trace " + dir + "/trace --class 0 --tau 0.0 " +
                       "--out-dir " + dir + "/heat");
  CHECK(sal.exit_code == 0);
  CHECK(fs::exists(dir + "/heat/frame_0000.pgm"));
  CHECK(fs::exists(dir + "/heat/frame_0003.pgm"));
  fs::remove_all(dir);
}

TEST_CASE("gradcheck subcommand exits zero when every suite passes") {
  CliRun r = run_cli("gradcheck --module lstm --cases 3");
  CHECK(r.exit_code == 0);
  CHECK(r.stdout_text.find("lstm") != std::string::npos);
  CHECK(r.stdout_text.find("pass") != std::string::npos);

  CliRun all = run_cli("gradcheck --all --cases 2");
  CHECK(all.exit_code == 0);
  CHECK(all.stdout_text.find("fail") == std::string::npos);
  for (const char* suite : {"conv3d", "softpool", "gru", "net-2block"})
    CHECK(all.stdout_text.find(suite) != std::string::npos);
}
