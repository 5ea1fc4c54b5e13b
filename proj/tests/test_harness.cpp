#include "camvr/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace camvr;
using namespace camvr::harness;

namespace {

ExperimentConfig small_config(const std::string &out) {
  ExperimentConfig c;
  c.model.dims.n_slots = 4;
  c.model.dims.d_mem = c.model.dims.d_enc = c.model.dims.d_vis = c.model.dims.d_txt = 8;
  c.model.dims.d_dec = 8;
  c.model.dims.c_hidden = 2;
  c.train.steps = 15;
  c.train.batch_size = 4;
  c.seeds = {1};
  c.n_train = 40;
  c.n_eval = 12;
  c.timing_turns = 5;
  c.timing_warmup = 1;
  c.out = std::filesystem::temp_directory_path() / out;
  std::filesystem::remove_all(c.out);
  return c;
}

std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace

TEST_CASE("config parsing") {
  std::istringstream in("# comment\nd_mem = 16\nuse_vcmu = false\n\ngranularity = coarse\n"
                        "seeds = 4,5\nlearning_rate = 0.01\ngrid_h = 4\n");
  auto c = parse_config(in);
  CHECK(c.model.dims.d_mem == 16);
  CHECK_FALSE(c.model.flags.use_vcmu);
  CHECK(c.model.flags.granularity == Granularity::coarse);
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.model.dims.grid_h == 4);
  CHECK(c.task.grid_h == 4);
  c.validate();

  std::istringstream again(format_config(c));
  auto d = parse_config(again);
  CHECK(d.model == c.model);
  CHECK(d.seeds == c.seeds);
  CHECK(d.train.learning_rate == c.train.learning_rate);

  auto message = [](const std::string &key, const std::string &value) {
    ExperimentConfig e;
    try {
      apply_setting(e, key, value);
      e.validate();
    } catch (const ConfigError &err) {
      return std::string(err.what());
    }
    return std::string();
  };
  CHECK(message("d_mem", "zero").find("d_mem") != std::string::npos);
  CHECK(message("d_mem", "0").find("d_mem") != std::string::npos);
  CHECK(message("not_a_key", "1").find("not_a_key") != std::string::npos);
  CHECK(message("granularity", "fine").find("granularity") != std::string::npos);
  CHECK(message("use_avfg", "perhaps").find("use_avfg") != std::string::npos);
  CHECK(message("learning_rate", "-1").find("learning_rate") != std::string::npos);
  CHECK(message("d_raw", "9").find("d_raw") != std::string::npos);
  {
    ExperimentConfig e;
    apply_setting(e, "granularity", "coarse");
    apply_setting(e, "grid_w", "5");
    CHECK_THROWS_AS(e.validate(), ConfigError);
  }
  CHECK(message("d_mem", "24") == "");
  for (const auto &k : config_keys())
    CHECK_FALSE(k.empty());
  std::istringstream broken("d_mem 16\n");
  CHECK_THROWS_AS(parse_config(broken), ConfigError);
}

TEST_CASE("buckets") {
  CHECK(bucket_of(1) == 0);
  CHECK(bucket_of(2) == 1);
  CHECK(bucket_of(3) == 1);
  CHECK(bucket_of(4) == 2);
  CHECK(bucket_of(9) == 2);
  CHECK(bucket_labels()[2] == "turn4+");
  BucketStats b;
  CHECK_FALSE(b.accuracy().has_value());
  CHECK_FALSE(b.mda().has_value());
  b.add({0, 1, 0, true});
  CHECK(b.accuracy() == 1.0);
  CHECK_FALSE(b.mda().has_value());
  b.add({0, 2, 1, false});
  CHECK(b.accuracy() == 0.5);
  CHECK(b.mda() == 0.0);
  CHECK(format_metric(std::nullopt) == "NA");
  CHECK(format_metric(0.25) == "0.250000");
}

TEST_CASE("evaluation, records and CSV round trip") {
  auto cfg = small_config("camvr_test_eval");
  for (const auto &v : ablation_variants(cfg.model.flags)) {
    auto cell = run_cell(cfg, v, 1);
    const auto &r = cell.record;
    CHECK_FALSE(r.failed);
    CHECK(r.overall.turns == cfg.n_eval * cfg.task.turns);
    CHECK(buckets_reconcile(r));
    CHECK(r.memoryless_ceiling > 0.0);
    CHECK(r.audit.turns_checked > 0);
    CHECK(r.audit.memory_frozen == !v.flags.use_vcmu);
    CHECK(r.audit.vmod_is_raw == !v.flags.use_avfg);
    CHECK(r.timing.turns == cfg.timing_turns);
    std::size_t sum = 0;
    for (const auto &b : r.buckets)
      sum += b.turns;
    CHECK(sum == r.overall.turns);

    std::ostringstream out;
    write_results_csv(out, {r});
    std::istringstream in(out.str());
    auto back = read_results_csv(in);
    REQUIRE(back.size() == 1);
    std::ostringstream out2;
    write_results_csv(out2, back);
    CHECK(out2.str() == out.str());
    CHECK(back[0].variant == r.variant);
    CHECK(back[0].model.flags == r.model.flags);
    CHECK(back[0].model.dims.n_slots == r.model.dims.n_slots);
    CHECK(back[0].overall.correct == r.overall.correct);
  }
  std::istringstream junk("variant,seed\nfull,1\n");
  CHECK_THROWS_AS(read_results_csv(junk), ParseError);
}

TEST_CASE("small runs are deterministic") {
  auto cfg = small_config("camvr_test_det");
  const Variant full{"full", cfg.model.flags};
  auto a = run_cell(cfg, full, 2);
  auto b = run_cell(cfg, full, 2);
  CHECK(a.record.final_loss == b.record.final_loss);
  CHECK(a.record.overall.correct == b.record.overall.correct);
  auto pa = a.params.blocks();
  auto pb = b.params.blocks();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(*pa[i] == *pb[i]);
}

TEST_CASE("single-turn episodes leave later buckets empty") {
  auto cfg = small_config("camvr_test_single");
  cfg.task.turns = 1;
  auto cell = run_cell(cfg, {"full", cfg.model.flags}, 1);
  CHECK(cell.record.buckets[1].turns == 0);
  CHECK_FALSE(cell.record.buckets[2].accuracy().has_value());
  CHECK(buckets_reconcile(cell.record));
  std::ostringstream out;
  write_per_turn_csv(out, {cell.record});
  CHECK(out.str().find("n=0") != std::string::npos);
  auto drops = turn_drops({cell.record});
  REQUIRE(drops.size() == 1);
  CHECK_FALSE(drops[0].drop.has_value());
}

TEST_CASE("studies write their outputs") {
  auto cfg = small_config("camvr_test_studies");
  auto ab = ablate(cfg);
  CHECK(ab.records.size() == 4);
  CHECK_FALSE(ab.any_failed);
  for (const char *f : {"ablation.csv", "timing.csv", "summary.txt"})
    CHECK(std::filesystem::exists(cfg.out / f));
  std::istringstream in(slurp(cfg.out / "ablation.csv"));
  CHECK(read_results_csv(in).size() == 4);

  auto mem = sweep_memory(cfg, {1, 2, 4});
  CHECK(mem.records.size() == 3);
  CHECK(std::filesystem::exists(cfg.out / "sweep_memory.csv"));

  auto gran = sweep_granularity(cfg);
  CHECK(gran.records.size() == 4);
  CHECK(std::filesystem::exists(cfg.out / "granularity.csv"));
  CHECK(std::filesystem::exists(cfg.out / "attention_maps"));

  auto pt = per_turn(cfg);
  CHECK(pt.records.size() == 2);
  CHECK(std::filesystem::exists(cfg.out / "per_turn.csv"));
  CHECK(std::filesystem::exists(cfg.out / "turn_drop.csv"));
  std::filesystem::remove_all(cfg.out);
}

TEST_CASE("efficiency report") {
  auto cfg = small_config("camvr_test_eff");
  auto rows = efficiency_report(cfg);
  CHECK(rows.size() == 7);
  for (const auto &r : rows) {
    CHECK(r.consistent());
    CHECK(r.timing.turns == cfg.timing_turns);
  }
  EfficiencyRow bad = rows.front();
  bad.counts[0].tally += 1;
  CHECK_FALSE(bad.consistent());
  std::filesystem::remove_all(cfg.out);
}

TEST_CASE("gradient-check suite") {
  const auto suite = gradcheck_suite(1);
  CHECK(suite.size() >= 8);
  for (const auto &e : suite) {
    INFO(e.component);
    CHECK(e.report.max_rel_error < kGradcheckThreshold);
  }
}
