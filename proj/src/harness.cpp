#include "camvr/harness.hpp"

#include "camvr/checkpoint.hpp"
#include "camvr/init.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

namespace camvr::harness {
namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string &key, const std::string &v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string &key, const std::string &v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on")
    return true;
  if (v == "false" || v == "0" || v == "no" || v == "off")
    return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string &key, const std::string &v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(parse_size(key, trim(item)));
  if (out.empty())
    throw ConfigError(key + ": empty seed list");
  return out;
}

void require_positive(const std::string &key, std::size_t v) {
  if (v == 0)
    throw ConfigError(key + ": must be positive");
}

std::string variant_name(const ModelFlags &f) {
  if (f.use_vcmu && f.use_avfg)
    return "full";
  if (f.use_vcmu)
    return "+vcmu";
  if (f.use_avfg)
    return "+avfg";
  return "base";
}

std::string slug(const std::string &name) {
  std::string out;
  for (char c : name) {
    if (c == '+')
      out += "with-";
    else if (c == '/' || c == '=' || c == ' ')
      out += '_';
    else
      out += c;
  }
  return out;
}

void check_accounting(const std::vector<ComponentCount> &counts, const std::string &who) {
  for (const auto &c : counts)
    if (c.formula != c.tally)
      throw ContractError("parameter accounting mismatch for " + who + " component " +
                          c.component + ": formula " + std::to_string(c.formula) + ", tally " +
                          std::to_string(c.tally));
}

} // namespace

// ---------------------------------------------------------------- config

std::vector<std::string> config_keys() {
  return {"n_slots",      "d_mem",        "d_enc",         "d_vis",       "d_txt",
          "d_raw",        "d_dec",        "c_hidden",      "grid_h",      "grid_w",
          "use_vcmu",     "use_avfg",     "granularity",   "memory_init", "steps",
          "learning_rate", "batch_size",  "clip_norm",     "seeds",       "n_train",
          "n_eval",       "turns",        "min_objects",   "max_objects", "timing_turns",
          "timing_warmup", "attention_samples", "out"};
}

void apply_setting(ExperimentConfig &cfg, const std::string &key, const std::string &raw) {
  const std::string v = trim(raw);
  auto &d = cfg.model.dims;
  auto &f = cfg.model.flags;
  if (key == "n_slots")
    d.n_slots = parse_size(key, v);
  else if (key == "d_mem")
    d.d_mem = parse_size(key, v);
  else if (key == "d_enc")
    d.d_enc = parse_size(key, v);
  else if (key == "d_vis")
    d.d_vis = parse_size(key, v);
  else if (key == "d_txt")
    d.d_txt = parse_size(key, v);
  else if (key == "d_raw")
    d.d_raw = parse_size(key, v);
  else if (key == "d_dec")
    d.d_dec = parse_size(key, v);
  else if (key == "c_hidden")
    d.c_hidden = parse_size(key, v);
  else if (key == "grid_h")
    d.grid_h = cfg.task.grid_h = parse_size(key, v);
  else if (key == "grid_w")
    d.grid_w = cfg.task.grid_w = parse_size(key, v);
  else if (key == "use_vcmu")
    f.use_vcmu = parse_bool(key, v);
  else if (key == "use_avfg")
    f.use_avfg = parse_bool(key, v);
  else if (key == "granularity") {
    try {
      f.granularity = parse_granularity(v);
    } catch (const ConfigError &) {
      throw ConfigError(key + ": expected global, coarse or native, got '" + v + "'");
    }
  } else if (key == "memory_init") {
    try {
      f.memory_init = parse_memory_init(v);
    } catch (const ConfigError &) {
      throw ConfigError(key + ": expected zeros or learnable, got '" + v + "'");
    }
  } else if (key == "steps")
    cfg.train.steps = parse_size(key, v);
  else if (key == "learning_rate")
    cfg.train.learning_rate = parse_double(key, v);
  else if (key == "batch_size")
    cfg.train.batch_size = parse_size(key, v);
  else if (key == "clip_norm")
    cfg.train.clip_norm = parse_double(key, v);
  else if (key == "seeds")
    cfg.seeds = parse_seeds(key, v);
  else if (key == "n_train")
    cfg.n_train = parse_size(key, v);
  else if (key == "n_eval")
    cfg.n_eval = parse_size(key, v);
  else if (key == "turns")
    cfg.task.turns = parse_size(key, v);
  else if (key == "min_objects")
    cfg.task.min_objects = parse_size(key, v);
  else if (key == "max_objects")
    cfg.task.max_objects = parse_size(key, v);
  else if (key == "timing_turns")
    cfg.timing_turns = parse_size(key, v);
  else if (key == "timing_warmup")
    cfg.timing_warmup = parse_size(key, v);
  else if (key == "attention_samples")
    cfg.attention_samples = parse_size(key, v);
  else if (key == "out") {
    if (v.empty())
      throw ConfigError("out: empty path");
    cfg.out = v;
  } else
    throw ConfigError(key + ": unknown configuration key");
}

ExperimentConfig parse_config(std::istream &in, ExperimentConfig cfg) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path &path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("config: cannot open " + path.string());
  return parse_config(in, std::move(base));
}

void ExperimentConfig::validate() const {
  const auto &d = model.dims;
  require_positive("n_slots", d.n_slots);
  require_positive("d_mem", d.d_mem);
  require_positive("d_enc", d.d_enc);
  require_positive("d_vis", d.d_vis);
  require_positive("d_txt", d.d_txt);
  require_positive("d_dec", d.d_dec);
  require_positive("c_hidden", d.c_hidden);
  if (d.d_raw != task::kRawChannels)
    throw ConfigError("d_raw: the task renders " + std::to_string(task::kRawChannels) +
                      " channels per cell, got " + std::to_string(d.d_raw));
  if (d.grid_h != task.grid_h)
    throw ConfigError("grid_h: model and task disagree");
  if (d.grid_w != task.grid_w)
    throw ConfigError("grid_w: model and task disagree");
  task.validate();
  complete_config(model).validate();
  if (model.flags.use_avfg && model.flags.granularity == Granularity::coarse &&
      (d.grid_h % 2 != 0 || d.grid_w % 2 != 0))
    throw ConfigError("granularity: coarse maps need an even grid");
  require_positive("batch_size", train.batch_size);
  if (!(train.learning_rate >= 0.0))
    throw ConfigError("learning_rate: must be non-negative");
  if (!(train.clip_norm >= 0.0))
    throw ConfigError("clip_norm: must be non-negative");
  if (seeds.empty())
    throw ConfigError("seeds: empty seed list");
  require_positive("n_train", n_train);
  require_positive("n_eval", n_eval);
  if (out.empty())
    throw ConfigError("out: empty path");
}

std::string format_config(const ExperimentConfig &c) {
  std::ostringstream o;
  const auto &d = c.model.dims;
  const auto &f = c.model.flags;
  o << "n_slots = " << d.n_slots << "\nd_mem = " << d.d_mem << "\nd_enc = " << d.d_enc
    << "\nd_vis = " << d.d_vis << "\nd_txt = " << d.d_txt << "\nd_raw = " << d.d_raw
    << "\nd_dec = " << d.d_dec << "\nc_hidden = " << d.c_hidden << "\ngrid_h = " << d.grid_h
    << "\ngrid_w = " << d.grid_w << "\nuse_vcmu = " << (f.use_vcmu ? "true" : "false")
    << "\nuse_avfg = " << (f.use_avfg ? "true" : "false")
    << "\ngranularity = " << to_string(f.granularity)
    << "\nmemory_init = " << to_string(f.memory_init) << "\nsteps = " << c.train.steps
    << "\nlearning_rate = " << c.train.learning_rate << "\nbatch_size = " << c.train.batch_size
    << "\nclip_norm = " << c.train.clip_norm << "\nseeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i)
    o << (i ? "," : "") << c.seeds[i];
  o << "\nn_train = " << c.n_train << "\nn_eval = " << c.n_eval << "\nturns = " << c.task.turns
    << "\nmin_objects = " << c.task.min_objects << "\nmax_objects = " << c.task.max_objects
    << "\ntiming_turns = " << c.timing_turns << "\ntiming_warmup = " << c.timing_warmup
    << "\nattention_samples = " << c.attention_samples << "\nout = " << c.out.string() << "\n";
  return o.str();
}

// ---------------------------------------------------------------- evaluation

std::size_t bucket_of(std::size_t turn) {
  if (turn <= 1)
    return 0;
  return turn <= 3 ? 1 : 2;
}

const std::array<std::string, kBuckets> &bucket_labels() {
  static const std::array<std::string, kBuckets> labels{"turn1", "turn2-3", "turn4+"};
  return labels;
}

std::optional<double> BucketStats::accuracy() const {
  if (turns == 0)
    return std::nullopt;
  return double(correct) / double(turns);
}

std::optional<double> BucketStats::mda() const {
  if (dependent == 0)
    return std::nullopt;
  return double(dependent_correct) / double(dependent);
}

void BucketStats::add(const TurnOutcome &o) {
  ++turns;
  correct += o.correct;
  if (o.depth >= 1) {
    ++dependent;
    dependent_correct += o.correct;
  }
}

Evaluation evaluate(const ModelParams &params, const std::vector<task::Episode> &episodes) {
  const auto &flags = params.config.flags;
  std::vector<std::vector<TurnOutcome>> per(episodes.size());
  std::vector<char> frozen(episodes.size(), 1), raw(episodes.size(), 1);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t e = 0; e < std::ptrdiff_t(episodes.size()); ++e) {
    const auto &ep = episodes[std::size_t(e)];
    auto memory = init_memory(params);
    const Tensor m0 = memory.M;
    for (const auto &turn : ep.turns) {
      auto r = forward_turn(turn, memory, params);
      if (!(r.memory.M == m0))
        frozen[std::size_t(e)] = 0;
      if (!(r.modulated == turn.visual))
        raw[std::size_t(e)] = 0;
      memory = std::move(r.memory);
      per[std::size_t(e)].push_back({std::size_t(e), turn.turn, turn.dependency_depth,
                                     predict(r.logits) == turn.target_answer_id});
    }
  }

  Evaluation ev;
  ev.episodes = episodes.size();
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    bool all = true;
    for (const auto &o : per[e]) {
      all = all && o.correct;
      ev.outcomes.push_back(o);
    }
    ev.episodes_all_correct += all;
    ev.audit.turns_checked += per[e].size();
    ev.audit.memory_frozen = ev.audit.memory_frozen && frozen[e];
    ev.audit.vmod_is_raw = ev.audit.vmod_is_raw && raw[e];
  }
  if (!flags.use_vcmu && !ev.audit.memory_frozen)
    throw ContractError("flag audit: memory changed across turns with the memory unit disabled");
  if (!flags.use_avfg && !ev.audit.vmod_is_raw)
    throw ContractError("flag audit: modulated features differ from raw with focus disabled");
  return ev;
}

Timing time_turns(const ModelParams &params, const std::vector<task::Episode> &episodes,
                  std::size_t turns, std::size_t warmup) {
  Timing t;
  if (episodes.empty() || turns == 0)
    return t;
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  std::vector<double> ms;
  std::size_t e = 0, k = 0;
  auto memory = init_memory(params);
  for (std::size_t i = 0; i < warmup + turns; ++i) {
    const auto &ep = episodes[e];
    const auto start = std::chrono::steady_clock::now();
    auto r = forward_turn(ep.turns[k], memory, params);
    const auto stop = std::chrono::steady_clock::now();
    memory = std::move(r.memory);
    if (i >= warmup)
      ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    if (++k == ep.turns.size()) {
      k = 0;
      e = (e + 1) % episodes.size();
      memory = init_memory(params);
    }
  }
  omp_set_num_threads(threads);
  t.turns = ms.size();
  for (double v : ms)
    t.mean_ms += v;
  t.mean_ms /= double(ms.size());
  for (double v : ms)
    t.stdev_ms += (v - t.mean_ms) * (v - t.mean_ms);
  t.stdev_ms = ms.size() > 1 ? std::sqrt(t.stdev_ms / double(ms.size() - 1)) : 0.0;
  return t;
}

// ---------------------------------------------------------------- records

std::size_t ResultsRecord::total_params() const {
  std::size_t n = 0;
  for (const auto &c : params)
    n += c.tally;
  return n;
}

ResultsRecord make_record(const std::string &variant, std::uint64_t seed,
                          const ModelParams &params, const Evaluation &eval,
                          const std::vector<task::Episode> &episodes) {
  ResultsRecord r;
  r.variant = variant;
  r.seed = seed;
  r.model = params.config;
  for (const auto &o : eval.outcomes) {
    r.buckets[bucket_of(o.turn)].add(o);
    r.overall.add(o);
  }
  r.episode_success = eval.episodes ? double(eval.episodes_all_correct) / double(eval.episodes) : 0.0;
  r.memoryless_ceiling = task::memoryless_ceiling(
      episodes, task::AnswerVocab(params.config.dims.grid_h, params.config.dims.grid_w));
  r.params = parameter_accounting(params);
  check_accounting(r.params, variant);
  r.audit = eval.audit;
  return r;
}

bool buckets_reconcile(const ResultsRecord &r) {
  std::size_t n = 0, c = 0, dn = 0, dc = 0;
  double acc_w = 0.0, mda_w = 0.0;
  for (const auto &b : r.buckets) {
    n += b.turns;
    c += b.correct;
    dn += b.dependent;
    dc += b.dependent_correct;
    if (auto a = b.accuracy())
      acc_w += *a * double(b.turns);
    if (auto m = b.mda())
      mda_w += *m * double(b.dependent);
  }
  if (n != r.overall.turns || c != r.overall.correct || dn != r.overall.dependent ||
      dc != r.overall.dependent_correct)
    return false;
  if (auto a = r.overall.accuracy(); a && std::abs(acc_w / double(n) - *a) > 1e-9)
    return false;
  if (auto m = r.overall.mda(); m && std::abs(mda_w / double(dn) - *m) > 1e-9)
    return false;
  return true;
}

// ---------------------------------------------------------------- runs

std::vector<Variant> ablation_variants(const ModelFlags &flags) {
  std::vector<Variant> out;
  for (auto [v, a] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
    ModelFlags f = flags;
    f.use_vcmu = v;
    f.use_avfg = a;
    out.push_back({variant_name(f), f});
  }
  return out;
}

CellOutput run_cell(const ExperimentConfig &cfg, const Variant &variant, std::uint64_t seed) {
  ModelConfig mc = cfg.model;
  mc.flags = variant.flags;
  auto splits = task::make_splits(cfg.task, cfg.n_train, cfg.n_eval, seed);
  CellOutput out;
  out.params = init_model(mc, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  double final_loss = 0.0;
  try {
    auto result = train(splits.train, out.params, tc);
    if (!result.loss_curve.empty())
      final_loss = result.loss_curve.back();
  } catch (const DivergenceError &e) {
    out.record.variant = variant.name;
    out.record.seed = seed;
    out.record.model = out.params.config;
    out.record.failed = true;
    out.record.diagnostic = e.what();
    out.record.params = parameter_accounting(out.params);
    return out;
  }
  out.evaluation = evaluate(out.params, splits.eval);
  out.record = make_record(variant.name, seed, out.params, out.evaluation, splits.eval);
  out.record.final_loss = final_loss;
  out.record.timing = time_turns(out.params, splits.eval, cfg.timing_turns, cfg.timing_warmup);
  return out;
}

namespace {

void ensure_dir(const std::filesystem::path &p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec)
    throw std::runtime_error("cannot create directory " + p.string() + ": " + ec.message());
}

std::ofstream open_out(const std::filesystem::path &p) {
  std::ofstream out(p, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + p.string());
  return out;
}

void save_cell(const ExperimentConfig &cfg, const CellOutput &cell) {
  if (cell.record.failed)
    return;
  ensure_dir(cfg.out / "checkpoints");
  save_checkpoint(cfg.out / "checkpoints" /
                      (slug(cell.record.variant) + "_seed" + std::to_string(cell.record.seed) +
                       ".camvr"),
                  cell.params);
}

void write_summary(const ExperimentConfig &cfg, const std::string &study,
                   const std::vector<ResultsRecord> &records, const std::string &extra) {
  auto out = open_out(cfg.out / "summary.txt");
  out << "study: " << study << "\n\n[config]\n" << format_config(cfg) << "\n[records]\n";
  for (const auto &r : records) {
    out << r.variant << " seed=" << r.seed << " n_slots=" << r.model.dims.n_slots
        << " granularity=" << to_string(r.model.flags.granularity);
    if (r.failed) {
      out << " FAILED: " << r.diagnostic << "\n";
      continue;
    }
    out << " accuracy=" << format_metric(r.overall.accuracy())
        << " mda=" << format_metric(r.overall.mda())
        << " ceiling=" << format_metric(r.memoryless_ceiling)
        << " episode_success=" << format_metric(r.episode_success)
        << " params=" << r.total_params() << " ms_per_turn=" << format_metric(r.timing.mean_ms)
        << "\n";
  }
  out << extra;
}

StudyOutput finish(const ExperimentConfig &cfg, const std::string &study, const std::string &csv,
                   std::vector<CellOutput> &cells, const std::string &extra = {}) {
  StudyOutput s;
  for (auto &c : cells) {
    s.any_failed = s.any_failed || c.record.failed;
    s.records.push_back(c.record);
  }
  ensure_dir(cfg.out);
  {
    auto out = open_out(cfg.out / csv);
    write_results_csv(out, s.records);
  }
  {
    auto out = open_out(cfg.out / "timing.csv");
    write_timing_csv(out, s.records);
  }
  write_summary(cfg, study, s.records, extra);
  return s;
}

std::string gap_report(const std::vector<ResultsRecord> &records, const std::string &hi,
                       const std::string &lo) {
  std::ostringstream o;
  o << "\n[" << hi << " - " << lo << " MDA per seed]\n";
  for (const auto &a : records) {
    if (a.variant != hi || a.failed)
      continue;
    for (const auto &b : records) {
      if (b.variant != lo || b.seed != a.seed || b.failed)
        continue;
      if (auto ma = a.overall.mda(), mb = b.overall.mda(); ma && mb) {
        const double gap = *ma - *mb;
        o << "seed=" << a.seed << " gap=" << format_metric(gap)
          << " sign=" << (gap > 0 ? "+" : gap < 0 ? "-" : "0") << "\n";
      }
    }
  }
  return o.str();
}

} // namespace

StudyOutput run_experiment(const ExperimentConfig &cfg) {
  cfg.validate();
  const Variant v{variant_name(cfg.model.flags), cfg.model.flags};
  std::vector<CellOutput> cells;
  for (auto seed : cfg.seeds) {
    cells.push_back(run_cell(cfg, v, seed));
    save_cell(cfg, cells.back());
  }
  return finish(cfg, "run", "results.csv", cells);
}

StudyOutput ablate(const ExperimentConfig &cfg) {
  cfg.validate();
  std::vector<CellOutput> cells;
  for (const auto &v : ablation_variants(cfg.model.flags))
    for (auto seed : cfg.seeds) {
      cells.push_back(run_cell(cfg, v, seed));
      save_cell(cfg, cells.back());
    }
  std::vector<ResultsRecord> recs;
  for (auto &c : cells)
    recs.push_back(c.record);
  return finish(cfg, "ablate", "ablation.csv", cells, gap_report(recs, "full", "base"));
}

StudyOutput sweep_memory(const ExperimentConfig &cfg, const std::vector<std::size_t> &slots) {
  cfg.validate();
  if (slots.empty())
    throw ConfigError("mem-slots: empty slot list");
  std::vector<CellOutput> cells;
  for (auto n : slots) {
    require_positive("mem-slots", n);
    ExperimentConfig c = cfg;
    c.model.dims.n_slots = n;
    c.model.flags.use_vcmu = c.model.flags.use_avfg = true;
    for (auto seed : cfg.seeds) {
      cells.push_back(run_cell(c, {"full", c.model.flags}, seed));
      save_cell(c, cells.back());
      std::filesystem::rename(cfg.out / "checkpoints" / ("full_seed" + std::to_string(seed) + ".camvr"),
                              cfg.out / "checkpoints" /
                                  ("full_nslots" + std::to_string(n) + "_seed" +
                                   std::to_string(seed) + ".camvr"));
    }
  }
  return finish(cfg, "sweep-mem", "sweep_memory.csv", cells);
}

StudyOutput sweep_granularity(const ExperimentConfig &cfg) {
  cfg.validate();
  std::vector<Variant> variants;
  ModelFlags f = cfg.model.flags;
  f.use_vcmu = true;
  f.use_avfg = false;
  variants.push_back({"+vcmu", f});
  for (auto g : {Granularity::global, Granularity::coarse, Granularity::native}) {
    f.use_avfg = true;
    f.granularity = g;
    variants.push_back({"full/" + to_string(g), f});
  }

  std::vector<CellOutput> cells;
  for (const auto &v : variants)
    for (auto seed : cfg.seeds) {
      cells.push_back(run_cell(cfg, v, seed));
      save_cell(cfg, cells.back());
      const auto &cell = cells.back();
      if (cell.record.failed || !v.flags.use_avfg)
        continue;
      ensure_dir(cfg.out / "attention_maps");
      auto splits = task::make_splits(cfg.task, 0, 1, seed);
      const auto &ep = splits.eval.front();
      auto memory = init_memory(cell.params);
      for (std::size_t k = 0; k < std::min(cfg.attention_samples, ep.turns.size()); ++k) {
        auto r = forward_turn(ep.turns[k], memory, cell.params);
        memory = r.memory;
        auto out = open_out(cfg.out / "attention_maps" /
                            (slug(v.name) + "_seed" + std::to_string(seed) + "_turn" +
                             std::to_string(k + 1) + ".csv"));
        write_attention_csv(out, r.map->A);
      }
    }
  return finish(cfg, "sweep-granularity", "granularity.csv", cells);
}

StudyOutput per_turn(const ExperimentConfig &cfg) {
  cfg.validate();
  std::vector<CellOutput> cells;
  for (const auto &v : ablation_variants(cfg.model.flags)) {
    if (v.name != "base" && v.name != "full")
      continue;
    for (auto seed : cfg.seeds) {
      cells.push_back(run_cell(cfg, v, seed));
      save_cell(cfg, cells.back());
    }
  }
  auto s = finish(cfg, "per-turn", "results.csv", cells);
  {
    auto out = open_out(cfg.out / "per_turn.csv");
    write_per_turn_csv(out, s.records);
  }
  {
    auto out = open_out(cfg.out / "turn_drop.csv");
    write_turn_drop_csv(out, turn_drops(s.records));
  }
  return s;
}

// ---------------------------------------------------------------- per-turn

std::vector<TurnDrop> turn_drops(const std::vector<ResultsRecord> &records) {
  std::vector<TurnDrop> out;
  for (const auto &r : records) {
    TurnDrop d{r.variant, r.seed, r.buckets[0].accuracy(), r.buckets[2].mda(), std::nullopt};
    if (d.turn1_accuracy && d.late_mda)
      d.drop = *d.turn1_accuracy - *d.late_mda;
    out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------- efficiency

bool EfficiencyRow::consistent() const {
  return std::all_of(counts.begin(), counts.end(),
                     [](const ComponentCount &c) { return c.formula == c.tally; });
}

std::vector<EfficiencyRow> efficiency_report(const ExperimentConfig &cfg) {
  cfg.validate();
  std::vector<Variant> variants = ablation_variants(cfg.model.flags);
  for (auto g : {Granularity::global, Granularity::coarse, Granularity::native}) {
    ModelFlags f = cfg.model.flags;
    f.use_vcmu = f.use_avfg = true;
    f.granularity = g;
    variants.push_back({"full/" + to_string(g), f});
  }
  const auto seed = cfg.seeds.front();
  auto splits = task::make_splits(cfg.task, 0, cfg.n_eval, seed);
  std::vector<EfficiencyRow> rows;
  for (const auto &v : variants) {
    ModelConfig mc = cfg.model;
    mc.flags = v.flags;
    auto params = init_model(mc, seed);
    EfficiencyRow row{v.name, parameter_accounting(params), {}};
    check_accounting(row.counts, v.name);
    row.timing = time_turns(params, splits.eval, cfg.timing_turns, cfg.timing_warmup);
    rows.push_back(std::move(row));
  }

  ensure_dir(cfg.out);
  {
    auto out = open_out(cfg.out / "efficiency.csv");
    out << "variant,component,formula,tally\n";
    for (const auto &r : rows)
      for (const auto &c : r.counts)
        out << r.variant << ',' << c.component << ',' << c.formula << ',' << c.tally << '\n';
  }
  {
    auto out = open_out(cfg.out / "timing.csv");
    out << "variant,seed,turns,mean_ms,stdev_ms\n";
    for (const auto &r : rows)
      out << r.variant << ',' << seed << ',' << r.timing.turns << ','
          << format_metric(r.timing.mean_ms) << ',' << format_metric(r.timing.stdev_ms) << '\n';
  }
  {
    auto out = open_out(cfg.out / "summary.txt");
    out << "study: efficiency\n\n[config]\n" << format_config(cfg) << "\n[variants]\n";
    for (const auto &r : rows) {
      std::size_t total = 0;
      for (const auto &c : r.counts)
        total += c.tally;
      out << r.variant << " params=" << total << " ms_per_turn=" << format_metric(r.timing.mean_ms)
          << " stdev=" << format_metric(r.timing.stdev_ms) << "\n";
    }
  }
  return rows;
}

} // namespace camvr::harness

// ---------------------------------------------------------------- gradcheck

namespace camvr::harness {
namespace {

struct Flat {
  std::vector<Tensor> values;
  std::vector<std::string> names;

  template <template <class> class W> void add(const std::string &prefix, const W<Tensor> &w) {
    w.for_each([&](const std::string &n, const Tensor &t) {
      if (!t.empty()) {
        values.push_back(t);
        names.push_back(prefix + n);
      }
    });
  }
  void add(const std::string &name, const Tensor &t) {
    values.push_back(t);
    names.push_back(name);
  }
};

template <template <class> class W>
W<Var> unflatten(const W<Tensor> &layout, const std::vector<Var> &vars, std::size_t &i) {
  std::vector<bool> present;
  layout.for_each([&](const std::string &, const Tensor &t) { present.push_back(!t.empty()); });
  W<Var> out;
  std::size_t k = 0;
  out.for_each([&](const std::string &, Var &v) {
    if (present[k++])
      v = vars.at(i++);
  });
  return out;
}

template <template <class> class W> void jitter(W<Tensor> &w, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> d(-0.3, 0.3);
  w.for_each([&](const std::string &, Tensor &t) {
    for (auto &v : t.data())
      v += d(rng);
  });
}

Var project_sum(Tape &tape, const Var &x, const Tensor &r) {
  return ops::sum(ops::mul(x, tape.constant(r)));
}

ModelDims tiny_dims() {
  ModelDims d;
  d.n_slots = 2;
  d.d_mem = 3;
  d.d_enc = 3;
  d.d_vis = 3;
  d.d_txt = 3;
  d.d_dec = 4;
  d.c_hidden = 2;
  d.grid_h = 2;
  d.grid_w = 2;
  return d;
}

task::Episode tiny_episode(const ModelDims &d) {
  task::Episode ep;
  ep.scene.height = d.grid_h;
  ep.scene.width = d.grid_w;
  ep.scene.objects = {{0, 0, 0, task::ShapeKind::square, task::Color::red},
                      {1, 1, 1, task::ShapeKind::circle, task::Color::blue}};
  task::AnswerVocab vocab(d.grid_h, d.grid_w);
  const Tensor grid = task::render_grid(ep.scene);
  ep.turns.push_back({1, grid, task::tokenize("where is the red square"), vocab.cell(0, 0), 0});
  ep.turns.push_back({2, grid, task::tokenize("what color is it"), vocab.color(task::Color::red), 1});
  return ep;
}

} // namespace

std::vector<GradcheckSuiteEntry> gradcheck_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ModelDims d = tiny_dims();
  const std::size_t Nt = 3, cells = d.cells();
  std::vector<GradcheckSuiteEntry> out;

  {
    auto enc = vcmu::init_params(d, MemoryInit::zeros, rng).encoder;
    jitter<vcmu::EncoderWeights>(enc, rng);
    Flat f;
    f.add<vcmu::EncoderWeights>("encoder.", enc);
    f.add("input.visual_rows", uniform({cells, d.d_raw}, 1.0, rng));
    f.add("input.tokens", uniform({Nt, d.d_txt}, 1.0, rng));
    const Tensor r = uniform({1, d.d_enc}, 1.0, rng);
    auto fn = [&](Tape &tape, const std::vector<Var> &v) {
      std::size_t i = 0;
      auto w = unflatten<vcmu::EncoderWeights>(enc, v, i);
      return project_sum(tape, vcmu::encode_context(v[i], v[i + 1], w), r);
    };
    out.push_back({"encode_context", gradcheck(fn, f.values, f.names)});
  }
  {
    auto gate = vcmu::init_params(d, MemoryInit::zeros, rng).gate;
    jitter<vcmu::GateWeights>(gate, rng);
    Flat f;
    f.add<vcmu::GateWeights>("gate.", gate);
    f.add("input.encoded", uniform({1, d.d_enc}, 1.0, rng));
    f.add("input.memory", uniform({d.n_slots, d.d_mem}, 1.0, rng));
    const Tensor r = uniform({d.n_slots, d.d_mem}, 1.0, rng);
    auto fn = [&](Tape &tape, const std::vector<Var> &v) {
      std::size_t i = 0;
      auto w = unflatten<vcmu::GateWeights>(gate, v, i);
      return project_sum(tape, vcmu::gated_update(v[i], v[i + 1], w).next, r);
    };
    out.push_back({"gated_update", gradcheck(fn, f.values, f.names)});
  }
  {
    auto ret = vcmu::init_params(d, MemoryInit::zeros, rng).retrieval;
    jitter<vcmu::RetrievalWeights>(ret, rng);
    Flat f;
    f.add<vcmu::RetrievalWeights>("retrieval.", ret);
    f.add("input.tokens", uniform({Nt, d.d_txt}, 1.0, rng));
    f.add("input.memory", uniform({d.n_slots, d.d_mem}, 1.0, rng));
    const Tensor rc = uniform({Nt, d.d_mem}, 1.0, rng);
    const Tensor ra = uniform({Nt, d.n_slots}, 1.0, rng);
    auto fn = [&](Tape &tape, const std::vector<Var> &v) {
      std::size_t i = 0;
      auto w = unflatten<vcmu::RetrievalWeights>(ret, v, i);
      auto tr = vcmu::retrieve(v[i], v[i + 1], w);
      return ops::add(project_sum(tape, tr.context, rc), project_sum(tape, tr.attention, ra));
    };
    out.push_back({"retrieve", gradcheck(fn, f.values, f.names)});
  }
  for (auto g : {Granularity::native, Granularity::coarse, Granularity::global}) {
    auto av = avfg::init_params(d, g, rng);
    jitter<avfg::AvfgWeights>(av, rng);
    Flat f;
    f.add<avfg::AvfgWeights>("avfg.", av);
    f.add("input.visual", uniform({d.grid_h, d.grid_w, d.d_raw}, 1.0, rng));
    f.add("input.context", uniform({Nt, d.d_mem}, 1.0, rng));
    const Tensor r = uniform({d.grid_h, d.grid_w, d.d_raw}, 1.0, rng);
    const auto res = avfg::resolution_for(g, d.grid_h, d.grid_w);
    auto fn = [&](Tape &tape, const std::vector<Var> &v) {
      std::size_t i = 0;
      auto w = unflatten<avfg::AvfgWeights>(av, v, i);
      Var pooled = avfg::pool_context(v[i + 1]);
      if (g == Granularity::global)
        return project_sum(tape, avfg::global_weighting(v[i], pooled, w).modulated, r);
      auto m = avfg::gen_attention_map(v[i], pooled, w, res);
      return project_sum(tape, avfg::modulate(v[i], m.upsampled), r);
    };
    out.push_back({"gen_attention_map+modulate/" + to_string(g),
                   gradcheck(fn, f.values, f.names)});
  }
  {
    ModelConfig mc;
    mc.dims = d;
    auto p = init_model(mc, seed);
    jitter<ProjectionWeights>(p.weights.proj, rng);
    jitter<DecoderWeights>(p.weights.decoder, rng);
    Flat f;
    f.add<ProjectionWeights>("proj.", p.weights.proj);
    f.add<DecoderWeights>("decoder.", p.weights.decoder);
    f.add("input.modulated", uniform({d.grid_h, d.grid_w, d.d_raw}, 1.0, rng));
    f.add("input.tokens", uniform({Nt, d.d_txt}, 1.0, rng));
    f.add("input.context", uniform({Nt, d.d_mem}, 1.0, rng));
    const std::size_t target = 5;
    auto fn = [&](Tape &, const std::vector<Var> &v) {
      std::size_t i = 0;
      auto pw = unflatten<ProjectionWeights>(p.weights.proj, v, i);
      auto dw = unflatten<DecoderWeights>(p.weights.decoder, v, i);
      auto in = build_decoder_input(project_streams(v[i], v[i + 1], v[i + 2], pw));
      return turn_loss(decode(in.rows, dw).logits, target);
    };
    out.push_back({"project+decode+loss", gradcheck(fn, f.values, f.names)});
  }
  {
    ModelConfig mc;
    mc.dims = d;
    mc.flags.memory_init = MemoryInit::learnable;
    auto p = init_model(mc, seed);
    jitter<ModelWeights>(p.weights, rng);
    const auto episode = tiny_episode(p.config.dims);
    Flat f;
    f.add<ModelWeights>("", p.weights);
    auto fn = [&](Tape &tape, const std::vector<Var> &v) {
      std::size_t i = 0;
      auto w = unflatten<ModelWeights>(p.weights, v, i);
      return run_episode(tape, p.config, w, episode).loss;
    };
    out.push_back({"pipeline/2-turn", gradcheck(fn, f.values, f.names)});
  }
  return out;
}

} // namespace camvr::harness
