#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "ctxvec/cli.hpp"

using namespace ctxvec;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("ctxvec_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    auto r = invoke({"synth", "--out", dir_.string(), "--categories", "2", "--words", "6", "--scenes", "150",
                  "--objects", "4", "--sentences", "150", "--feature-dim", "6", "--patches", "2", "--rule",
                  "0:below:1"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string p(const char* name) { return (dir_ / name).string(); }
  static std::vector<std::string> train_args(const std::string& model, const std::string& out) {
    return {"train", "--model", model, "--corpus", p("corpus.txt"), "--scenes", p("scenes.jsonl"),
            "--features", p("features.pfv"), "--visual-vectors", p("appearance.txt"), "--dim", "8",
            "--epochs", "2", "--out", out};
  }
  static void set(std::vector<std::string>& args, const std::string& flag, const std::string& value) {
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
      if (args[i] == flag) {
        args[i + 1] = value;
        return;
      }
    args.insert(args.end(), {flag, value});
  }
  static fs::path dir_;
};
fs::path CliTest::dir_;

}  // namespace

TEST_F(CliTest, TrainTextTwiceIdentical) {
  for (const char* name : {"t1.bin", "t2.bin"})
    ASSERT_EQ(invoke({"train", "--model", "T", "--corpus", p("corpus.txt"), "--out", p(name), "--seed", "1",
                   "--dim", "8", "--epochs", "1"})
                  .code,
              0);
  EXPECT_EQ(slurp(p("t1.bin")), slurp(p("t2.bin")));
  EXPECT_TRUE(is_store_file(p("t1.bin")));
}

TEST_F(CliTest, SpatialBilinearJointWithConfigAlpha) {
  {
    std::ofstream os(p("cfg.txt"));
    os << "alpha=0.3\nnegatives=3\n";
  }
  auto args = train_args("Sp(O,c,b)+T", p("sp.bin"));
  args.insert(args.end(), {"--config", p("cfg.txt"), "--report", p("sp.json")});
  auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(slurp(p("sp.json")));
  EXPECT_EQ(j["model"], "Sp(O,c,b)+T");
  const std::string cfg = j["config"];
  EXPECT_NE(cfg.find("alpha=0.29999999999999999"), std::string::npos);
  EXPECT_NE(cfg.find("negatives=3"), std::string::npos);
  EXPECT_TRUE(j["training"]["epochs"][1]["mean_loss"].contains("Sp(O,c,b)"));
  // a flag overrides the file
  args.insert(args.end(), {"--alpha", "0.5"});
  ASSERT_EQ(invoke(args).code, 0);
  EXPECT_NE(std::string(nlohmann::json::parse(slurp(p("sp.json")))["config"]).find("alpha=0.5"), std::string::npos);
}

TEST_F(CliTest, EvalSimilarityJson) {
  ASSERT_EQ(invoke(train_args("O+T", p("ot.bin"))).code, 0);
  auto r = invoke({"eval", "--task", "similarity", "--pairs", p("similarity.tsv"), "--emb", p("ot.bin"), "--report",
                p("ev.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["similarity"].contains("rho"));
  EXPECT_DOUBLE_EQ(double(j["similarity"]["coverage"]), 1.0);
  EXPECT_EQ(nlohmann::json::parse(slurp(p("ev.json"))), j);
}

TEST_F(CliTest, EvalOtherTasks) {
  ASSERT_EQ(invoke(train_args("T", p("t.bin"))).code, 0);
  auto r = invoke({"eval", "--task", "feature-norm", "--norms", p("norms.tsv"), "--categories",
                   p("norm_categories.tsv"), "--emb", p("t.bin"), "--folds", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(r.out)["feature-norm"]["category_f1"].contains("taxonomic"));
  // twelve rated words are too few for the regression
  EXPECT_EQ(invoke({"eval", "--task", "concreteness", "--concreteness", p("concreteness.tsv"), "--emb", p("t.bin")}).code, 2);
  EXPECT_EQ(invoke({"eval", "--task", "bogus", "--emb", p("t.bin")}).code, 1);
  EXPECT_EQ(invoke({"eval", "--task", "similarity", "--emb", p("t.bin")}).code, 1);

  const auto big = (dir_ / "big").string();
  ASSERT_EQ(invoke({"synth", "--out", big, "--categories", "4", "--words", "8", "--scenes", "100", "--sentences",
                    "300", "--visual-fraction", "0.5", "--feature-dim", "4"})
                .code,
            0);
  ASSERT_EQ(invoke({"train", "--model", "T", "--corpus", big + "/corpus.txt", "--dim", "8", "--epochs", "1", "--out",
                    big + "/t.bin"})
                .code,
            0);
  r = invoke({"eval", "--task", "concreteness", "--concreteness", big + "/concreteness.tsv", "--emb", big + "/t.bin",
              "--folds", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(r.out)["concreteness"].contains("r2"));
}

TEST_F(CliTest, UnknownModelIsUsageErrorWithGrammar) {
  auto r = invoke(train_args("Sp(O,c)+T", p("x.bin")));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("term"), std::string::npos);
  EXPECT_NE(r.err.find("Sp("), std::string::npos);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  EXPECT_EQ(invoke({"train", "--bogus"}).code, 1);
  EXPECT_EQ(invoke({"train", "--model", "T", "--corpus", p("nope.txt"), "--out", p("n.bin")}).code, 2);
  EXPECT_EQ(invoke({"train", "--model", "T", "--out", p("n.bin")}).code, 1);
  EXPECT_EQ(invoke({"train", "--model", "T", "--corpus", p("corpus.txt"), "--out", p("n.bin"), "--deterministic",
                 "--parallel"})
                .code,
            1);
  // spatial model without box data is rejected before training
  {
    std::ofstream os(p("nobox.jsonl"));
    os << R"({"image_id":"a","width":10,"height":10,"objects":[{"word":"c0w0"},{"word":"c0w1"}]})" << '\n';
  }
  EXPECT_EQ(invoke({"train", "--model", "Sp(O,c,b)", "--scenes", p("nobox.jsonl"), "--out", p("n.bin")}).code, 1);
  {
    std::ofstream os(p("broken.jsonl"));
    os << "{oops\n";
  }
  EXPECT_EQ(invoke({"train", "--model", "O", "--scenes", p("broken.jsonl"), "--out", p("n.bin")}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST_F(CliTest, RefusesToOverwriteInputsAndLeavesThemUntouched) {
  const auto before = slurp(p("corpus.txt"));
  EXPECT_EQ(invoke({"train", "--model", "T", "--corpus", p("corpus.txt"), "--out", p("corpus.txt")}).code, 1);
  ASSERT_EQ(invoke(train_args("L+O+T", p("lot.bin"))).code, 0);
  EXPECT_EQ(slurp(p("corpus.txt")), before);
}

TEST_F(CliTest, SequentialWritesMergedEmbeddings) {
  auto r = invoke(train_args("O⊕T", p("seq.txt")));
  ASSERT_EQ(r.code, 0) << r.err;
  auto emb = load_text_embeddings<double>(p("seq.txt"));
  EXPECT_EQ(emb.vectors.cols(), 8u);
  EXPECT_EQ(emb.words.size(), 12u);
  ASSERT_EQ(invoke(train_args("O concat T", p("seq2.txt"))).code, 0);
  EXPECT_EQ(slurp(p("seq.txt")), slurp(p("seq2.txt")));
}

TEST_F(CliTest, InitFromSnapshotThenShiftAnalysis) {
  auto t_args = train_args("T", p("snap.bin"));
  ASSERT_EQ(invoke(t_args).code, 0);
  auto args = train_args("O+T", p("warm.bin"));
  set(args, "--init-from", p("snap.bin"));
  set(args, "--epochs", "1");
  auto done = invoke(args);
  ASSERT_EQ(done.code, 0) << done.err;
  auto snap = load_store<float>(p("snap.bin"));
  auto warm = load_store<float>(p("warm.bin"));
  EXPECT_NE(snap.T, warm.T);
  auto r = invoke({"shift-analysis", "--before", p("snap.bin"), "--after", p("warm.bin"), "--concreteness",
                p("concreteness.tsv")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["covered"], 12);
  EXPECT_TRUE(j.contains("rho"));
}

TEST_F(CliTest, ExportAndBuildVocab) {
  ASSERT_EQ(invoke(train_args("O", p("o.bin"))).code, 0);
  ASSERT_EQ(invoke({"export", "--store", p("o.bin"), "--out", p("o_targets.txt")}).code, 0);
  ASSERT_EQ(invoke({"export", "--store", p("o.bin"), "--out", p("o_objects.txt"), "--what", "objects"}).code, 0);
  EXPECT_EQ(load_text_embeddings<float>(p("o_targets.txt")).words.size(), 12u);
  EXPECT_EQ(slurp(p("o_targets.txt")).substr(0, 5), "12 8\n");
  EXPECT_EQ(invoke({"export", "--store", p("o.bin"), "--out", p("x.txt"), "--what", "nope"}).code, 1);

  auto r = invoke({"build-vocab", "--corpus", p("corpus.txt"), "--out", p("vocab.tsv")});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(Vocabulary::load(p("vocab.tsv")).size(), 12u);
  ASSERT_EQ(invoke({"build-vocab", "--scenes", p("scenes.jsonl"), "--out", p("vocab2.tsv"), "--min-count", "1"}).code, 0);
}

TEST_F(CliTest, VisualOnlyModelsWithoutCorpus) {
  for (const char* model : {"P", "P_full", "Sp(P_full,δ,⊕)", "O", "L"}) {
    auto r = invoke({"train", "--model", model, "--scenes", p("scenes.jsonl"), "--features", p("features.pfv"),
                  "--visual-vectors", p("appearance.txt"), "--dim", "8", "--epochs", "1", "--out", p("v.bin")});
    EXPECT_EQ(r.code, 0) << model << " " << r.err;
  }
}

TEST(CliBinary, ProcessExitCode) {
  EXPECT_EQ(std::system((std::string(CTXVEC_CLI_PATH) + " train --model 'Sp(O' --out /dev/null 2>/dev/null").c_str()) >> 8, 1);
  EXPECT_EQ(std::system((std::string(CTXVEC_CLI_PATH) + " --help >/dev/null").c_str()), 0);
}
