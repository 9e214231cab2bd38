#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "latgeo/checkpoint.hpp"
#include "latgeo/cli.hpp"
#include "latgeo/error.hpp"
#include "latgeo/gradcheck.hpp"
#include "latgeo/scene.hpp"
#include "latgeo/vocab.hpp"
#include "testutil.hpp"

using namespace latgeo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Commands print run summaries; keep the test log readable.
struct QuietIo {
  std::ostringstream sink;
  std::streambuf* out;
  std::streambuf* err;
  QuietIo()
      : out(std::cout.rdbuf(sink.rdbuf())), err(std::cerr.rdbuf(sink.rdbuf())) {}
  ~QuietIo() {
    std::cout.rdbuf(out);
    std::cerr.rdbuf(err);
  }
};

int cli(const std::vector<std::string>& args) {
  QuietIo quiet;
  return run_cli(args);
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / "latgeo_cli_tests" / tag;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Small-model overrides shared by every training-flavored case.
std::vector<std::string> tiny_overrides() {
  return {"--set", "model.d_model=16",    "--set", "model.heads=2",
          "--set", "model.layers=2",      "--set", "model.memory_slots=2",
          "--set", "model.d_feat=16",     "--set", "model.max_len=12",
          "--set", "model.dropout=0.0",   "--set", "vocab.min_count=0",
          "--set", "train.warmup_steps=10"};
}

void synth_corpus(const fs::path& dir) {
  REQUIRE(cli({"synth", "--out", (dir / "train.jsonl").string(), "--n", "10",
               "--seed", "7", "--dfeat", "16", "--classes", "4"}) == 0);
  REQUIRE(cli({"synth", "--out", (dir / "val.jsonl").string(), "--n", "4",
               "--seed", "99", "--dfeat", "16", "--classes", "4"}) == 0);
}

std::vector<std::string> with_corpus(const fs::path& dir,
                                     std::vector<std::string> args) {
  args.insert(args.end(), {"--data", (dir / "train.jsonl").string(), "--val",
                           (dir / "val.jsonl").string()});
  const auto tiny = tiny_overrides();
  args.insert(args.end(), tiny.begin(), tiny.end());
  return args;
}

}  // namespace

TEST_CASE("configuration resolves defaults, then the file, then flags") {
  const ResolvedConfig def = resolve_config("", {});
  CHECK(def.flat == default_flat_config());
  CHECK_FALSE(def.was_set("model.d_model"));
  CHECK(def.model_config().d_model == 64);
  CHECK(def.train_config().patience == 5);
  CHECK(def.vocab_min_count() == 5);

  const fs::path dir = fresh_dir("config");
  const fs::path cfg_path = dir / "cfg.json";
  std::ofstream(cfg_path) << R"({"model.d_model": 32, "train.patience": 9})";

  const ResolvedConfig from_file = resolve_config(cfg_path.string(), {});
  CHECK(from_file.model_config().d_model == 32);
  CHECK(from_file.train_config().patience == 9);
  CHECK(from_file.was_set("model.d_model"));
  CHECK(from_file.was_set("train.patience"));
  CHECK_FALSE(from_file.was_set("model.heads"));

  const ResolvedConfig layered = resolve_config(
      cfg_path.string(),
      {"model.d_model=48", "model.use_geometry=false", "model.connectivity=single",
       "model.skip_memories=[0,2]", "train.rl_temperature=0.5",
       "train.seed=12345"});
  const ModelConfig mc = layered.model_config();
  CHECK(mc.d_model == 48);  // flag beats file
  CHECK_FALSE(mc.use_geometry);
  CHECK(mc.connectivity == Connectivity::single);
  CHECK(mc.skip_memories == std::vector<int>{0, 2});
  CHECK(layered.train_config().rl_temperature == 0.5);
  CHECK(layered.train_config().seed == 12345);
  CHECK(layered.train_config().patience == 9);  // file beats default

  SUBCASE("unknown and ill-typed keys are rejected") {
    CHECK_THROWS_WITH_AS(resolve_config("", {"model.bogus=1"}),
                         doctest::Contains("unknown configuration key"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(resolve_config("", {"no_equals_sign"}),
                         doctest::Contains("key=value"), ConfigError);
    CHECK_THROWS_WITH_AS(resolve_config("", {"model.d_model=fast"}),
                         doctest::Contains("expects a number"), ConfigError);
    CHECK_THROWS_WITH_AS(resolve_config("", {"model.use_lam=7"}),
                         doctest::Contains("expects a boolean"), ConfigError);
    std::ofstream(dir / "bad.json") << R"({"nope": 1})";
    CHECK_THROWS_WITH_AS(resolve_config((dir / "bad.json").string(), {}),
                         doctest::Contains("unknown configuration key"),
                         ConfigError);
    std::ofstream(dir / "list.json") << R"([1, 2])";
    CHECK_THROWS_AS(resolve_config((dir / "list.json").string(), {}),
                    ParseError);
    CHECK_THROWS_AS(resolve_config((dir / "absent.json").string(), {}),
                    IoError);
  }
}

TEST_CASE("a model configuration round-trips through its flat form") {
  ModelConfig m;
  m.d_model = 24;
  m.heads = 3;
  m.layers = 4;
  m.memory_slots = 5;
  m.d_feat = 12;
  m.vocab_size = 77;
  m.max_len = 9;
  m.connectivity = Connectivity::skipped;
  m.skip_memories = {1};
  m.use_geometry = false;
  m.use_lam = false;
  m.use_background = false;
  m.geometry_kind = GeometryKind::l1;
  m.mesh_sqrt_scale = false;
  m.dropout = 0.25;

  const ModelConfig back = model_from_flat(flat_from_model(m));
  CHECK(back.d_model == m.d_model);
  CHECK(back.heads == m.heads);
  CHECK(back.layers == m.layers);
  CHECK(back.memory_slots == m.memory_slots);
  CHECK(back.d_feat == m.d_feat);
  CHECK(back.vocab_size == m.vocab_size);
  CHECK(back.max_len == m.max_len);
  CHECK(back.connectivity == m.connectivity);
  CHECK(back.skip_memories == m.skip_memories);
  CHECK(back.use_geometry == m.use_geometry);
  CHECK(back.use_lam == m.use_lam);
  CHECK(back.use_background == m.use_background);
  CHECK(back.geometry_kind == m.geometry_kind);
  CHECK(back.mesh_sqrt_scale == m.mesh_sqrt_scale);
  CHECK(back.dropout == m.dropout);
}

TEST_CASE("scene synthesis is byte-reproducible and honors a zero count") {
  const fs::path dir = fresh_dir("synth");
  const auto gen = [&](const std::string& name, const std::string& seed,
                       const std::string& n) {
    REQUIRE(cli({"synth", "--out", (dir / name).string(), "--n", n, "--seed",
                 seed, "--dfeat", "16"}) == 0);
  };
  gen("a.jsonl", "11", "6");
  gen("b.jsonl", "11", "6");
  gen("c.jsonl", "12", "6");
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  CHECK(slurp(dir / "a.jsonl") != slurp(dir / "c.jsonl"));

  gen("empty.jsonl", "11", "0");
  CHECK(load_scenes_jsonl((dir / "empty.jsonl").string()).empty());

  const json manifest = json::parse(slurp(dir / "a.jsonl.manifest.json"));
  CHECK(manifest.at("command") == "synth");
  CHECK(manifest.at("seed") == 11);
  CHECK(manifest.at("artifacts").at("scenes") == (dir / "a.jsonl").string());
  CHECK_FALSE(manifest.at("started").get<std::string>().empty());
  CHECK(manifest.at("config").at("n") == 6);
}

TEST_CASE("one supervised epoch leaves a log, checkpoints, and a manifest") {
  const fs::path dir = fresh_dir("train_one");
  synth_corpus(dir);
  const fs::path out = dir / "run";
  REQUIRE(cli(with_corpus(dir, {"train", "--out", out.string(), "--max-epochs",
                                "1"})) == 0);

  const auto log = read_lines(out / "log.csv");
  REQUIRE(log.size() == 3);
  CHECK(log[0] == "epoch,split,loss,cider_d,lr,seconds");
  CHECK(log[1].rfind("1,train,", 0) == 0);
  CHECK(log[2].rfind("1,val,", 0) == 0);

  CHECK(fs::exists(out / "best.ckpt"));
  CHECK(fs::exists(out / "last.ckpt"));
  const Checkpoint last = load_checkpoint((out / "last.ckpt").string());
  CHECK(last.epoch == 1);
  CHECK(last.phase == "xe");
  CHECK(last.config.d_model == 16);
  CHECK(last.config.vocab_size > 4);  // derived from the corpus

  const json manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest.at("command") == "train");
  CHECK(manifest.at("config").at("model.d_model") == 16);
  CHECK(manifest.at("inputs").at("data") == (dir / "train.jsonl").string());
  CHECK(manifest.at("artifacts").at("best") == (out / "best.ckpt").string());

  SUBCASE("the manifest lands even when the model configuration is rejected") {
    const fs::path bad = dir / "bad_run";
    auto args = with_corpus(dir, {"train", "--out", bad.string()});
    args.insert(args.end(), {"--set", "model.heads=5"});  // 5 never divides 16
    CHECK(cli(args) == 1);
    CHECK(fs::exists(bad / "manifest.json"));  // written before the run starts
    CHECK_FALSE(fs::exists(bad / "last.ckpt"));
  }
}

TEST_CASE("training resumes from a checkpoint and rejects silent reshapes") {
  const fs::path dir = fresh_dir("train_resume");
  synth_corpus(dir);
  const fs::path first = dir / "first";
  REQUIRE(cli(with_corpus(dir, {"train", "--out", first.string(),
                                "--max-epochs", "1"})) == 0);

  const fs::path second = dir / "second";
  REQUIRE(cli(with_corpus(dir, {"train", "--out", second.string(),
                                "--max-epochs", "3", "--resume",
                                (first / "last.ckpt").string()})) == 0);
  const Checkpoint resumed = load_checkpoint((second / "last.ckpt").string());
  CHECK(resumed.epoch == 3);
  CHECK(resumed.config.d_model == 16);  // shape came from the checkpoint

  // An explicit flag may reshape, and the mismatch must surface, not vanish.
  auto reshaped = with_corpus(dir, {"train", "--out",
                                    (dir / "reshaped").string(), "--resume",
                                    (first / "last.ckpt").string()});
  reshaped.insert(reshaped.end(), {"--set", "model.d_model=48"});
  CHECK(cli(reshaped) == 1);
}

TEST_CASE("the reward phase requires a supervised start") {
  const fs::path dir = fresh_dir("rl_cli");
  synth_corpus(dir);
  CHECK(cli(with_corpus(dir, {"rl", "--out", (dir / "rl_none").string()})) ==
        1);

  const fs::path xe = dir / "xe";
  REQUIRE(cli(with_corpus(dir, {"train", "--out", xe.string(), "--max-epochs",
                                "1"})) == 0);
  const fs::path rl = dir / "rl";
  REQUIRE(cli(with_corpus(dir, {"rl", "--out", rl.string(), "--max-epochs",
                                "1", "--resume", (xe / "best.ckpt").string(),
                                "--set", "train.beam_k=2"})) == 0);
  const Checkpoint after = load_checkpoint((rl / "last.ckpt").string());
  CHECK(after.phase == "rl");
  CHECK(after.epoch == 1);
}

TEST_CASE("captioning and evaluation close the loop on perfect candidates") {
  const fs::path dir = fresh_dir("cap_eval");
  synth_corpus(dir);
  const fs::path run = dir / "run";
  REQUIRE(cli(with_corpus(dir, {"train", "--out", run.string(), "--max-epochs",
                                "1"})) == 0);
  const std::string ckpt = (run / "best.ckpt").string();
  const std::string val = (dir / "val.jsonl").string();

  const fs::path cands = dir / "cands.jsonl";
  REQUIRE(cli({"caption", "--ckpt", ckpt, "--data", val, "--out",
               cands.string(), "--beam", "2"}) == 0);
  const std::vector<Scene> scenes = load_scenes_jsonl(val);
  const auto lines = read_lines(cands);
  REQUIRE(lines.size() == scenes.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const json j = json::parse(lines[i]);
    CHECK(j.at("id") == scenes[i].id);
    CHECK(j.at("caption").is_string());
  }

  // Feeding each scene's own first reference back is a perfect candidate set.
  const fs::path perfect = dir / "perfect.jsonl";
  {
    std::ofstream out(perfect);
    for (const Scene& s : scenes) {
      out << json{{"id", s.id}, {"caption", s.refs.front()}}.dump() << "\n";
    }
  }
  const fs::path report_path = dir / "report.json";
  REQUIRE(cli({"eval", "--cands", perfect.string(), "--refs", val, "--out",
               report_path.string()}) == 0);
  const json report = json::parse(slurp(report_path));
  CHECK(report.at("bleu1").get<double>() == doctest::Approx(1.0));
  CHECK(report.at("rougeL").get<double>() == doctest::Approx(1.0));
  CHECK(report.at("ciderD").get<double>() > 1.0);
  CHECK_FALSE(report.contains("meteor"));
  CHECK_FALSE(report.contains("spice"));
  REQUIRE(report.contains("per_image"));
  for (const Scene& s : scenes) {
    CHECK(report.at("per_image").contains(s.id));
    CHECK(report.at("per_image").at(s.id).at("bleu1").get<double>() ==
          doctest::Approx(1.0));
  }
  CHECK(fs::exists(dir / "report.json.manifest.json"));

  SUBCASE("candidate and scene id sets must match both ways") {
    std::ofstream(dir / "alien.jsonl")
        << json{{"id", "who"}, {"caption", "a thing"}}.dump() << "\n";
    CHECK(cli({"eval", "--cands", (dir / "alien.jsonl").string(), "--refs",
               val}) == 1);
    std::ofstream(dir / "short.jsonl")
        << json{{"id", scenes[0].id}, {"caption", "a thing"}}.dump() << "\n";
    CHECK(cli({"eval", "--cands", (dir / "short.jsonl").string(), "--refs",
               val}) == 1);
  }
}

TEST_CASE("the attention table is a dense grid with the predicted row count") {
  const fs::path dir = fresh_dir("attn");
  synth_corpus(dir);
  const fs::path run = dir / "run";
  REQUIRE(cli(with_corpus(dir, {"train", "--out", run.string(), "--max-epochs",
                                "1"})) == 0);

  const std::vector<Scene> scenes =
      load_scenes_jsonl((dir / "val.jsonl").string());
  const Scene& scene = scenes.front();
  const Checkpoint ck = load_checkpoint((run / "best.ckpt").string());
  const Vocabulary vocab = Vocabulary::from_json(ck.vocab);

  const fs::path table = dir / "attn.csv";
  REQUIRE(cli({"attn-dump", "--ckpt", (run / "best.ckpt").string(), "--data",
               (dir / "val.jsonl").string(), "--out", table.string(), "--id",
               scene.id}) == 0);

  const long n_obj = static_cast<long>(scene.proposals.size());
  const long n = n_obj + 1;  // background row
  const long h = ck.config.heads;
  const long layers = ck.config.layers;
  const long mem = ck.config.memory_slots;
  std::vector<int> prefix = vocab.encode(scene.refs.front(), ck.config.max_len);
  prefix.pop_back();
  const long t = static_cast<long>(prefix.size());

  const auto lines = read_lines(table);
  REQUIRE(lines.size() > 1);
  CHECK(lines[0] == "entry,kind,head,row,col,value");

  struct Grid {
    long max_row = -1, max_col = -1, count = 0;
  };
  std::map<std::string, Grid> attn, gates;
  long attn_rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv(lines[i]);
    REQUIRE(f.size() == 6);
    const bool is_attn = f[1] == "attention";
    CHECK((is_attn || f[1] == "gate"));
    CHECK(is_attn == !f[2].empty());  // gates carry no head index
    Grid& g = (is_attn ? attn : gates)[f[0] + "#" + f[2]];
    g.max_row = std::max(g.max_row, std::stol(f[3]));
    g.max_col = std::max(g.max_col, std::stol(f[4]));
    ++g.count;
    if (is_attn) ++attn_rows;
  }
  for (const auto& [key, g] : attn) {
    CAPTURE(key);
    CHECK(g.count == (g.max_row + 1) * (g.max_col + 1));  // dense, complete
  }
  for (const auto& [key, g] : gates) {
    CAPTURE(key);
    CHECK(g.count == (g.max_row + 1) * (g.max_col + 1));
  }

  // layers x heads self maps per stack, a fully connected mesh of cross maps,
  // and the label-attention heads.
  CHECK(static_cast<long>(attn.size()) ==
        layers * h + layers * h + layers * layers * h + h);
  CHECK(static_cast<long>(gates.size()) == 1 + layers * layers);

  const long expected_attn_rows = h * layers * n * (n + mem)   // encoder self
                                  + h * layers * t * t         // decoder self
                                  + h * layers * layers * t * n  // cross mesh
                                  + h * n_obj * n_obj;  // label attention
  CHECK(attn_rows == expected_attn_rows);
}

TEST_CASE("the gradient suite covers one hundred cases and passes") {
  const GradCheckReport report = run_gradient_suite(0);
  CHECK(report.total_cases == 100);
  CHECK(report.max_err < 1e-4);
  CHECK(report.passed());
  for (const GradCheckEntry& e : report.checks) {
    CAPTURE(e.name);
    CHECK(e.cases >= 4);
    CHECK(e.worst < 1e-4);
  }

  const fs::path dir = fresh_dir("gradcheck");
  const fs::path out = dir / "gc.json";
  CHECK(cli({"gradcheck", "--out", out.string()}) == 0);
  const json j = json::parse(slurp(out));
  CHECK(j.at("total_cases") == 100);
  CHECK(j.at("passed") == true);
}

TEST_CASE("a one-row grid produces exactly one table row") {
  const fs::path dir = fresh_dir("ablate");
  synth_corpus(dir);
  std::ofstream(dir / "grid.json")
      << R"([{"name": "only", "set": {"model.use_lam": false}}])";
  const fs::path out = dir / "grid_out";
  REQUIRE(cli(with_corpus(dir, {"ablate", "--out", out.string(), "--grid",
                                (dir / "grid.json").string(), "--set",
                                "train.max_epochs=1"})) == 0);
  const auto lines = read_lines(out / "ablation.csv");
  REQUIRE(lines.size() == 2);
  const auto fields = split_csv(lines[1]);
  REQUIRE(fields.size() == 12);
  CHECK(fields[0] == "only");
  CHECK(fields[1] == "ok");
  CHECK(std::stol(fields[2]) > 0);  // parameter count
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "runs" / "only" / "log.csv"));

  SUBCASE("an unknown builtin grid name is rejected") {
    CHECK(cli(with_corpus(dir, {"ablate", "--out", (dir / "x").string(),
                                "--grid", "nonsense"})) == 1);
  }
}

TEST_CASE("failures map onto the documented exit codes") {
  const fs::path dir = fresh_dir("exit_codes");
  synth_corpus(dir);

  CHECK(cli({"train", "--data", (dir / "absent.jsonl").string(), "--val",
             (dir / "val.jsonl").string(), "--out",
             (dir / "out").string()}) == 3);
  CHECK(cli(with_corpus(dir, {"train", "--out", (dir / "out").string(),
                              "--set", "model.bogus=1"})) == 1);
  CHECK(cli({"--help"}) == 0);
  CHECK(cli({"synth"}) == 1);          // missing required flag
  CHECK(cli({"no-such-command"}) == 1);

  // A learning rate far past overflow drives the loss non-finite.
  CHECK(cli(with_corpus(dir, {"train", "--out", (dir / "diverge").string(),
                              "--max-epochs", "3", "--set",
                              "train.lr_scale=1e300"})) == 2);
}

TEST_CASE("the thread cap variable is validated") {
  const fs::path dir = fresh_dir("threads");
  ::setenv("LATGEO_THREADS", "nope", 1);
  CHECK(cli({"synth", "--out", (dir / "t.jsonl").string(), "--n", "1"}) == 1);
  ::setenv("LATGEO_THREADS", "2", 1);
  CHECK(cli({"synth", "--out", (dir / "t.jsonl").string(), "--n", "1"}) == 0);
  ::unsetenv("LATGEO_THREADS");
}
