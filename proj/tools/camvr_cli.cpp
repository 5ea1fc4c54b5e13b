#include "camvr/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace camvr;
using namespace camvr::harness;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string out;
  bool no_vcmu = false;
  bool no_avfg = false;
  std::string granularity;
  std::vector<std::size_t> mem_slots;
  std::optional<std::size_t> steps;
  std::vector<std::string> set;
};

void add_common(CLI::App *sub, Common &c) {
  sub->add_option("--config", c.config, "flat key = value config file");
  sub->add_option("--seed", c.seed, "single seed (overrides the seed list)");
  sub->add_option("--seeds", c.seeds, "comma-separated seed list")->delimiter(',');
  sub->add_option("--out", c.out, "output directory");
  sub->add_flag("--no-vcmu", c.no_vcmu, "disable the context memory unit");
  sub->add_flag("--no-avfg", c.no_avfg, "disable focus guidance");
  sub->add_option("--granularity", c.granularity, "global, coarse or native");
  sub->add_option("--mem-slots", c.mem_slots, "memory slots (a list for sweep-mem)")
      ->delimiter(',');
  sub->add_option("--steps", c.steps, "training steps");
  sub->add_option("--set", c.set, "extra key=value override, repeatable");
}

ExperimentConfig resolve(const Common &c, bool sweep) {
  ExperimentConfig cfg;
  if (!c.config.empty())
    cfg = load_config(c.config);
  for (const auto &kv : c.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set: expected key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.seeds.empty())
    cfg.seeds = c.seeds;
  if (c.seed)
    cfg.seeds = {*c.seed};
  if (!c.out.empty())
    cfg.out = c.out;
  if (c.no_vcmu)
    cfg.model.flags.use_vcmu = false;
  if (c.no_avfg)
    cfg.model.flags.use_avfg = false;
  if (!c.granularity.empty())
    apply_setting(cfg, "granularity", c.granularity);
  if (!c.mem_slots.empty() && !sweep) {
    if (c.mem_slots.size() != 1)
      throw ConfigError("mem-slots: one value expected outside sweep-mem");
    cfg.model.dims.n_slots = c.mem_slots.front();
  }
  if (c.steps)
    cfg.train.steps = *c.steps;
  cfg.validate();
  return cfg;
}

int report(const StudyOutput &s) {
  for (const auto &r : s.records) {
    std::printf("%-14s seed=%-4llu n_slots=%-3zu ", r.variant.c_str(),
                static_cast<unsigned long long>(r.seed), r.model.dims.n_slots);
    if (r.failed) {
      std::printf("FAILED %s\n", r.diagnostic.c_str());
      continue;
    }
    std::printf("acc=%s mda=%s ceiling=%s\n", format_metric(r.overall.accuracy()).c_str(),
                format_metric(r.overall.mda()).c_str(),
                format_metric(r.memoryless_ceiling).c_str());
  }
  return s.any_failed ? 1 : 0;
}

int gen_data(const ExperimentConfig &cfg) {
  std::filesystem::create_directories(cfg.out);
  task::AnswerVocab vocab(cfg.task.grid_h, cfg.task.grid_w);
  for (auto seed : cfg.seeds) {
    auto splits = task::make_splits(cfg.task, cfg.n_train, cfg.n_eval, seed);
    for (auto [name, eps] : {std::pair{"train", &splits.train}, {"eval", &splits.eval}}) {
      const auto path = cfg.out / (std::string(name) + "_seed" + std::to_string(seed) + ".txt");
      std::ofstream out(path);
      if (!out)
        throw std::runtime_error("cannot write " + path.string());
      for (const auto &ep : *eps)
        task::write_episode(out, ep, vocab);
    }
    std::printf("seed=%llu train=%zu eval=%zu ceiling=%s\n",
                static_cast<unsigned long long>(seed), splits.train.size(), splits.eval.size(),
                format_metric(task::memoryless_ceiling(splits.eval, vocab)).c_str());
  }
  return 0;
}

int gradcheck_cmd(std::uint64_t seed, bool fault) {
  ops::set_backward_fault(fault);
  const auto suite = gradcheck_suite(seed);
  ops::set_backward_fault(false);
  bool ok = true;
  for (const auto &e : suite) {
    for (const auto &b : e.report.blocks) {
      const bool pass = b.max_rel_error < kGradcheckThreshold;
      ok = ok && pass;
      std::printf("%-36s %-22s n=%-4zu max_rel_error=%.3e %s\n", e.component.c_str(),
                  b.name.c_str(), b.elements, b.max_rel_error, pass ? "ok" : "FAIL");
    }
  }
  std::printf("gradcheck %s (threshold %.0e)\n", ok ? "passed" : "FAILED", kGradcheckThreshold);
  return ok ? 0 : 1;
}

int per_turn_from(const std::string &path, const std::filesystem::path &out_dir) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open " + path);
  const auto records = read_results_csv(in);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "per_turn.csv");
    write_per_turn_csv(out, records);
  }
  const auto drops = turn_drops(records);
  {
    std::ofstream out(out_dir / "turn_drop.csv");
    write_turn_drop_csv(out, drops);
  }
  write_turn_drop_csv(std::cout, drops);
  for (const auto &r : records)
    if (!buckets_reconcile(r)) {
      std::fprintf(stderr, "bucket totals do not reconcile for %s seed %llu\n",
                   r.variant.c_str(), static_cast<unsigned long long>(r.seed));
      return 1;
    }
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"camvr: context memory and visual focus experiments on synthetic grid dialogues"};
  app.require_subcommand(1);

  Common c;
  auto *run = app.add_subcommand("run", "train and evaluate one variant per seed");
  auto *abl = app.add_subcommand("ablate", "base, +vcmu, +avfg and full on shared seeds");
  auto *mem = app.add_subcommand("sweep-mem", "full model over memory slot counts");
  auto *gran = app.add_subcommand("sweep-granularity", "memory only, then global/coarse/native focus");
  auto *turn = app.add_subcommand("per-turn", "accuracy and MDA per turn bucket");
  auto *eff = app.add_subcommand("efficiency", "parameter accounting and time per turn");
  auto *grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto *gen = app.add_subcommand("gen-data", "write train/eval episodes as text");
  for (auto *s : {run, abl, mem, gran, turn, eff, grad, gen})
    add_common(s, c);

  std::string from;
  turn->add_option("--from", from, "results.csv to tabulate instead of training");
  bool fault = false;
  grad->add_flag("--inject-fault", fault)->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (grad->parsed())
      return gradcheck_cmd(c.seed.value_or(c.seeds.empty() ? 1 : c.seeds.front()), fault);
    if (turn->parsed() && !from.empty())
      return per_turn_from(from, std::filesystem::path(c.out.empty() ? "." : c.out));

    const auto cfg = resolve(c, mem->parsed());
    if (run->parsed())
      return report(run_experiment(cfg));
    if (abl->parsed())
      return report(ablate(cfg));
    if (mem->parsed())
      return report(sweep_memory(cfg, c.mem_slots.empty() ? std::vector<std::size_t>{4, 8, 16, 32}
                                                          : c.mem_slots));
    if (gran->parsed())
      return report(sweep_granularity(cfg));
    if (turn->parsed()) {
      auto s = per_turn(cfg);
      write_turn_drop_csv(std::cout, turn_drops(s.records));
      return s.any_failed ? 1 : 0;
    }
    if (eff->parsed()) {
      for (const auto &row : efficiency_report(cfg)) {
        std::size_t total = 0;
        for (const auto &k : row.counts)
          total += k.tally;
        std::printf("%-14s params=%-7zu ms_per_turn=%.4f stdev=%.4f\n", row.variant.c_str(),
                    total, row.timing.mean_ms, row.timing.stdev_ms);
      }
      return 0;
    }
    if (gen->parsed())
      return gen_data(cfg);
  } catch (const ConfigError &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
