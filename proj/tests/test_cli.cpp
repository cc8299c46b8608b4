// CLI contract: exit codes, JSON config handling, stdout artifacts, and
// byte-level determinism of a small pipeline across reruns and --jobs.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef KNLAB_CLI
#error "KNLAB_CLI must point at the kn-lab binary"
#endif

namespace {

struct cli_result {
  int code = -1;
  std::string out;
};

cli_result run_cli(const std::string& args) {
  const std::string cmd = std::string(KNLAB_CLI) + " " + args + " 2>/dev/null";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  cli_result r;
  char buf[4096];
  size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << body;
}

// scratch directory lifetime for one test case
struct scratch_dir {
  std::string dir;
  explicit scratch_dir(const std::string& name) : dir("cli_scratch_" + name) {
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
  }
  ~scratch_dir() { std::filesystem::remove_all(dir); }
  std::string operator/(const std::string& leaf) const { return dir + "/" + leaf; }
};

}  // namespace

TEST_CASE("exit codes follow the usage/data/numeric contract") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("--version").code == 0);
  CHECK(run_cli("gen-corpus --help").code == 0);
  CHECK(run_cli("definitely-not-a-subcommand").code == 1);
  CHECK(run_cli("train").code == 1);                           // missing required --corpus
  CHECK(run_cli("gen-corpus --kind nonsense").code == 1);      // enum check
  CHECK(run_cli("kn-search --maps does_not_exist.jsonl").code == 2);
  CHECK(run_cli("train --corpus does_not_exist.txt").code == 2);
}

TEST_CASE("pipeline artifacts are deterministic across reruns and --jobs") {
  const scratch_dir s("pipe");
  const std::string gen = "gen-corpus --out " + (s / "corpus") + " --pairs 10 --train 60 --seed 3";
  const std::string train = "train --corpus " + (s / "corpus/train.txt") + " --out " + (s / "model") +
                            " --steps 12 --d-model 16 --d-mlp 32 --heads 2 --max-seq 12 --seed 3";
  REQUIRE(run_cli(gen).code == 0);
  REQUIRE(run_cli(train).code == 0);

  const auto attrib = [&](const std::string& out, int jobs) {
    return "attribute --model " + (s / "model/model.ckpt") + " --pairs " + (s / "corpus/pairs.jsonl") +
           " --class plural --limit 4 --steps 4 --out " + (s / out) + " --jobs " +
           std::to_string(jobs);
  };
  REQUIRE(run_cli(attrib("a1", 1)).code == 0);
  REQUIRE(run_cli(attrib("a2", 1)).code == 0);
  REQUIRE(run_cli(attrib("a3", 3)).code == 0);
  const std::string maps = slurp(s / "a1/maps.jsonl");
  CHECK(maps == slurp(s / "a2/maps.jsonl"));  // rerun
  CHECK(maps == slurp(s / "a3/maps.jsonl"));  // worker count

  // KN set goes to stdout; with --out it is also written as kn.json, byte-equal
  const auto kn = run_cli("kn-search --maps " + (s / "a1/maps.jsonl") + " --pi 0.2 --tau 0.7 --out " +
                          (s / "kn"));
  REQUIRE(kn.code == 0);
  CHECK(kn.out == slurp(s / "kn/kn.json"));
  CHECK(kn.out.find("\"neurons\"") != std::string::npos);

  const auto effect = [&](const std::string& out, int jobs) {
    return "edit-effect --model " + (s / "model/model.ckpt") + " --kn " + (s / "kn/kn.json") +
           " --pairs " + (s / "corpus/pairs.jsonl") + " --class plural --limit 4 --out " + (s / out) +
           " --jobs " + std::to_string(jobs);
  };
  REQUIRE(run_cli(effect("e1", 1)).code == 0);
  REQUIRE(run_cli(effect("e2", 4)).code == 0);
  CHECK(slurp(s / "e1/effects.csv") == slurp(s / "e2/effects.csv"));
  CHECK(slurp(s / "e1/effects.svg") == slurp(s / "e2/effects.svg"));

  // every artifact directory carries its run config
  for (const std::string d : {"corpus", "model", "a1", "kn", "e1"})
    CHECK(std::filesystem::exists(s / (d + "/run_config.json")));
}

TEST_CASE("JSON config files fill unset flags and explicit flags win") {
  const scratch_dir s("cfg");
  spit(s / "cfg.json",
       "{\"pairs\": 7, \"train\": 50, \"out\": \"" + (s / "from_config") + "\"}\n");

  const auto r = run_cli("gen-corpus --config " + (s / "cfg.json") + " --pairs 5");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("pairs.jsonl: 5 pairs") != std::string::npos);        // flag beat config
  CHECK(r.out.find("train.txt: 50 sentences") != std::string::npos);     // config applied
  CHECK(std::filesystem::exists(s / "from_config/pairs.jsonl"));

  spit(s / "typo.json", "{\"pares\": 7}\n");
  CHECK(run_cli("gen-corpus --config " + (s / "typo.json")).code == 1);  // unknown key is usage
  spit(s / "broken.json", "not json at all\n");
  CHECK(run_cli("gen-corpus --config " + (s / "broken.json")).code == 1);
}
