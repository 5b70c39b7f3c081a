// End-to-end checks of the command-line surface: artifact schemas, exit
// codes, determinism. Drives the real binary via std::system.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#ifndef RNNG_CLI
#error "RNNG_CLI must point at the built binary"
#endif

namespace {

const std::string kDir = "/tmp/rnng_cli_test";

int run(const std::string& args, std::string* out = nullptr) {
  std::string cmd = std::string(RNNG_CLI) + " " + args;
  if (out) cmd += " > " + kDir + "/stdout.txt 2> " + kDir + "/stderr.txt";
  else cmd += " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  if (out) {
    std::ifstream f(kDir + "/stdout.txt");
    std::stringstream ss;
    ss << f.rdbuf();
    *out = ss.str();
  }
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

struct Fixture {
  Fixture() {
    int rc = std::system(("mkdir -p " + kDir).c_str());
    (void)rc;
    std::ofstream trees(kDir + "/toy.trees");
    trees << "(S (NP the dog) (VP barks))\n"
          << "(NP dog)\n";
    std::ofstream corpus(kDir + "/corpus.trees");
    for (int i = 0; i < 6; ++i)
      corpus << "(S (NP the dog) (VP barks))\n"
             << "(S (NP the cat) (VP sleeps))\n"
             << "(S (NP a bird) (VP sings))\n";
  }
};
Fixture fixture;

bool trained = false;
void ensure_trained() {
  if (trained) return;
  int rc = run("train --train " + kDir + "/corpus.trees --dev " + kDir +
               "/corpus.trees --checkpoint " + kDir +
               "/model --emb-dim 12 --hidden-dim 12 --batch-size 6 --validate-every 10 "
               "--max-epochs 20 --max-steps 20 --seed 5");
  REQUIRE(rc == 0);
  trained = true;
}

}  // namespace

TEST_CASE("oracle emits depths and action sequences") {
  std::string out;
  int rc = run("oracle --train " + kDir + "/toy.trees", &out);
  CHECK(rc == 0);
  auto rows = lines_of(out);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] ==
        "4\tNT(S) NT(NP) GEN(the) GEN(dog) REDUCE NT(VP) GEN(barks) REDUCE REDUCE");
  CHECK(rows[1] == "2\tNT(NP) GEN(dog) REDUCE");
}

TEST_CASE("unknown flags are rejected with exit 1") {
  CHECK(run("oracle --train " + kDir + "/toy.trees --definitely-not-a-flag 3") == 1);
  CHECK(run("bogus-subcommand") == 1);
  CHECK(run("train --checkpoint /tmp/x") == 1);  // missing required --train
}

TEST_CASE("missing inputs exit 2 without partial outputs") {
  CHECK(run("oracle --train " + kDir + "/no-such-file") == 2);
  std::string out_file = kDir + "/should-not-exist.jsonl";
  std::remove(out_file.c_str());
  CHECK(run("parse --checkpoint " + kDir + "/missing.ckpt --test " + kDir +
            "/toy.trees --output " + out_file) == 2);
  std::ifstream probe(out_file);
  CHECK_FALSE(probe.good());
}

TEST_CASE("train writes checkpoint, metrics, vocab, and config echo") {
  ensure_trained();
  CHECK(slurp(kDir + "/model").substr(0, 15) == "rnng-checkpoint");
  auto metrics = lines_of(slurp(kDir + "/model.metrics.csv"));
  REQUIRE(metrics.size() >= 2);
  CHECK(metrics[0] == "step,wallclock_s,train_nll,dev_nll");
  CHECK(slurp(kDir + "/model.config.json").find("\"command\": \"train\"") != std::string::npos);
  CHECK(lines_of(slurp(kDir + "/model.vocab")).size() >= 8);
}

TEST_CASE("parse emits schema-stable JSONL plus F1 against gold trees") {
  ensure_trained();
  std::string out;
  int rc = run("parse --checkpoint " + kDir + "/model --test " + kDir +
                   "/corpus.trees --output " + kDir + "/parse.jsonl --beam-k 10",
               &out);
  CHECK(rc == 0);
  CHECK(out.find("bracket P") != std::string::npos);
  auto rows = lines_of(slurp(kDir + "/parse.jsonl"));
  REQUIRE(rows.size() == 18);
  for (const char* key : {"\"id\"", "\"tree\"", "\"logp\"", "\"prefix_logp\"", "\"surprisal\""})
    CHECK(rows[0].find(key) != std::string::npos);
  // Stable field order pinned.
  CHECK(rows[0].rfind("{\"id\":0,\"tree\":\"(", 0) == 0);

  // Deterministic given seed/inputs/precision.
  run("parse --checkpoint " + kDir + "/model --test " + kDir + "/corpus.trees --output " +
      kDir + "/parse2.jsonl --beam-k 10");
  CHECK(slurp(kDir + "/parse.jsonl") == slurp(kDir + "/parse2.jsonl"));
}

TEST_CASE("ppl emits the scalar and a per-sentence CSV") {
  ensure_trained();
  std::ofstream plain(kDir + "/plain.txt");
  plain << "the dog barks\nthe cat sleeps\n";
  plain.close();
  std::string out;
  int rc = run("ppl --checkpoint " + kDir + "/model --test " + kDir + "/plain.txt --output " +
                   kDir + "/ppl.csv --beam-k 10",
               &out);
  CHECK(rc == 0);
  CHECK(out.find("token-level perplexity") != std::string::npos);
  auto rows = lines_of(slurp(kDir + "/ppl.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "id,tokens,total_logp");
}

TEST_CASE("pairs-eval reports accuracy and per-item JSONL") {
  ensure_trained();
  std::ofstream suite(kDir + "/suite.jsonl");
  suite << R"({"id": "a", "good": {"tokens": ["the", "dog", "barks"], "critical": [2, 3]}, )"
        << R"("bad": {"tokens": ["the", "dog", "sings"], "critical": [2, 3]}})" << "\n";
  suite.close();
  std::string out;
  int rc = run("pairs-eval --checkpoint " + kDir + "/model --suite " + kDir +
                   "/suite.jsonl --output " + kDir + "/pairs.jsonl --beam-k 10",
               &out);
  CHECK(rc == 0);
  CHECK(out.find("accuracy") != std::string::npos);
  auto rows = lines_of(slurp(kDir + "/pairs.jsonl"));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].find("\"good_score\"") != std::string::npos);
}

TEST_CASE("selfcheck passes on a fresh build and fails on a corrupted checkpoint") {
  ensure_trained();
  std::string out;
  CHECK(run("selfcheck", &out) == 0);
  CHECK(lines_of(out).size() == 4);
  for (const auto& line : lines_of(out)) CHECK(line.rfind("[pass]", 0) == 0);

  // Corrupt the vocabulary so the digest check fails, exit 3 with the
  // property named.
  int corrupt_rc = std::system(("cp " + kDir + "/model " + kDir + "/model-corrupt && cp " + kDir +
                                "/model.vocab.nts " + kDir + "/model-corrupt.vocab.nts && "
                                "sed 's/the/thh/' " + kDir + "/model.vocab > " + kDir +
                                "/model-corrupt.vocab")
                                   .c_str());
  REQUIRE(WEXITSTATUS(corrupt_rc) == 0);
  int rc = run("selfcheck --checkpoint " + kDir + "/model-corrupt", &out);
  CHECK(rc == 3);
  CHECK(out.find("[FAIL] checkpoint-integrity") != std::string::npos);
}

TEST_CASE("bench-beam emits the beam-size CSV schema") {
  ensure_trained();
  std::string out;
  int rc = run("bench-beam --checkpoint " + kDir + "/model --test " + kDir +
                   "/corpus.trees --beam-sizes 2,5 --repeats 1 --depth-bound 12",
               &out);
  CHECK(rc == 0);
  auto rows = lines_of(out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "k,k_w,k_s,seconds_per_sentence");
  CHECK(rows[1].rfind("2,1,1,", 0) == 0);
  CHECK(rows[2].rfind("5,1,1,", 0) == 0);
}

TEST_CASE("bench-train emits the batch-size CSV schema") {
  std::string out;
  int rc = run(
      "bench-train --batch-sizes 2,4 --synthetic 48 --seeds 1 --min-sentences 8 "
      "--min-seconds 0.05 --emb-dim 12 --hidden-dim 12",
      &out);
  CHECK(rc == 0);
  auto rows = lines_of(out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "batch_size,sentences_per_sec,sd");
  CHECK(rows[1].rfind("2,", 0) == 0);
  CHECK(rows[2].rfind("4,", 0) == 0);
}
