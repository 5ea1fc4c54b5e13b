#include "camvr/harness.hpp"

#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace camvr::harness {
namespace {

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ','))
    out.push_back(cell);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  return out;
}

std::string sanitize(std::string s) {
  for (char &c : s)
    if (c == ',' || c == '\n' || c == '\r')
      c = ';';
  return s;
}

const char *yes_no(bool b) { return b ? "yes" : "no"; }

} // namespace

std::string format_metric(std::optional<double> v) {
  if (!v)
    return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::vector<std::string> results_csv_header() {
  std::vector<std::string> h = {"variant",   "seed",     "status",    "use_vcmu",    "use_avfg",
                                "granularity", "memory_init", "n_slots", "final_loss", "turns",
                                "correct",   "accuracy", "dep_turns", "dep_correct", "mda"};
  for (const auto &b : bucket_labels())
    for (const char *col : {"turns", "correct", "accuracy", "dep_turns", "dep_correct", "mda"})
      h.push_back(b + "_" + col);
  for (const char *col : {"episode_success", "memoryless_ceiling", "params_total"})
    h.emplace_back(col);
  for (const auto &c : component_names())
    h.push_back("params_" + c);
  for (const char *col : {"audit_turns", "audit_memory_frozen", "audit_vmod_raw", "diagnostic"})
    h.emplace_back(col);
  return h;
}

void write_results_csv(std::ostream &out, const std::vector<ResultsRecord> &records) {
  const auto header = results_csv_header();
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto &r : records) {
    const auto &f = r.model.flags;
    out << r.variant << ',' << r.seed << ',' << (r.failed ? "failed" : "ok") << ','
        << yes_no(f.use_vcmu) << ',' << yes_no(f.use_avfg) << ',' << to_string(f.granularity)
        << ',' << to_string(f.memory_init) << ',' << r.model.dims.n_slots << ','
        << format_metric(r.final_loss);
    auto stats = [&](const BucketStats &b) {
      out << ',' << b.turns << ',' << b.correct << ',' << format_metric(b.accuracy()) << ','
          << b.dependent << ',' << b.dependent_correct << ',' << format_metric(b.mda());
    };
    stats(r.overall);
    for (const auto &b : r.buckets)
      stats(b);
    out << ',' << format_metric(r.episode_success) << ',' << format_metric(r.memoryless_ceiling)
        << ',' << r.total_params();
    for (const auto &name : component_names()) {
      std::size_t n = 0;
      for (const auto &c : r.params)
        if (c.component == name)
          n = c.tally;
      out << ',' << n;
    }
    out << ',' << r.audit.turns_checked << ',' << yes_no(r.audit.memory_frozen) << ','
        << yes_no(r.audit.vmod_is_raw) << ',' << sanitize(r.diagnostic) << '\n';
  }
}

std::vector<ResultsRecord> read_results_csv(std::istream &in) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("results csv: empty input");
  const auto header = split_csv(line);
  if (header != results_csv_header())
    throw ParseError("results csv: unexpected header");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i)
    col[header[i]] = i;

  std::vector<ResultsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw ParseError("results csv: line " + std::to_string(lineno) + " has " +
                       std::to_string(cells.size()) + " fields, expected " +
                       std::to_string(header.size()));
    auto get = [&](const std::string &k) -> const std::string & { return cells[col.at(k)]; };
    auto num = [&](const std::string &k) -> std::size_t {
      try {
        return std::stoull(get(k));
      } catch (const std::exception &) {
        throw ParseError("results csv: line " + std::to_string(lineno) + " column " + k +
                         " is not an integer");
      }
    };
    auto real = [&](const std::string &k) -> double {
      if (get(k) == "NA")
        return 0.0;
      try {
        return std::stod(get(k));
      } catch (const std::exception &) {
        throw ParseError("results csv: line " + std::to_string(lineno) + " column " + k +
                         " is not a number");
      }
    };

    ResultsRecord r;
    r.variant = get("variant");
    r.seed = num("seed");
    r.failed = get("status") == "failed";
    r.model.flags.use_vcmu = get("use_vcmu") == "yes";
    r.model.flags.use_avfg = get("use_avfg") == "yes";
    r.model.flags.granularity = parse_granularity(get("granularity"));
    r.model.flags.memory_init = parse_memory_init(get("memory_init"));
    r.model.dims.n_slots = num("n_slots");
    r.final_loss = real("final_loss");
    auto stats = [&](const std::string &prefix) {
      BucketStats b;
      b.turns = num(prefix + "turns");
      b.correct = num(prefix + "correct");
      b.dependent = num(prefix + "dep_turns");
      b.dependent_correct = num(prefix + "dep_correct");
      return b;
    };
    r.overall = stats("");
    for (std::size_t b = 0; b < kBuckets; ++b)
      r.buckets[b] = stats(bucket_labels()[b] + "_");
    r.episode_success = real("episode_success");
    r.memoryless_ceiling = real("memoryless_ceiling");
    for (const auto &c : component_names()) {
      const auto n = num("params_" + c);
      r.params.push_back({c, n, n});
    }
    r.audit.turns_checked = num("audit_turns");
    r.audit.memory_frozen = get("audit_memory_frozen") == "yes";
    r.audit.vmod_is_raw = get("audit_vmod_raw") == "yes";
    r.diagnostic = get("diagnostic");
    out.push_back(std::move(r));
  }
  return out;
}

void write_timing_csv(std::ostream &out, const std::vector<ResultsRecord> &records) {
  out << "variant,seed,n_slots,granularity,turns,mean_ms,stdev_ms\n";
  for (const auto &r : records)
    out << r.variant << ',' << r.seed << ',' << r.model.dims.n_slots << ','
        << to_string(r.model.flags.granularity) << ',' << r.timing.turns << ','
        << format_metric(r.timing.mean_ms) << ',' << format_metric(r.timing.stdev_ms) << '\n';
}

void write_per_turn_csv(std::ostream &out, const std::vector<ResultsRecord> &records) {
  out << "variant,seed,bucket,turns,correct,accuracy,dep_turns,dep_correct,mda,note\n";
  for (const auto &r : records) {
    auto row = [&](const std::string &label, const BucketStats &b) {
      std::string note;
      if (b.turns == 0)
        note = "n=0";
      else if (b.dependent == 0)
        note = "dep_n=0";
      out << r.variant << ',' << r.seed << ',' << label << ',' << b.turns << ',' << b.correct
          << ',' << format_metric(b.accuracy()) << ',' << b.dependent << ','
          << b.dependent_correct << ',' << format_metric(b.mda()) << ',' << note << '\n';
    };
    for (std::size_t b = 0; b < kBuckets; ++b)
      row(bucket_labels()[b], r.buckets[b]);
    row("all", r.overall);
  }
}

void write_turn_drop_csv(std::ostream &out, const std::vector<TurnDrop> &drops) {
  out << "variant,seed,turn1_accuracy,turn4+_mda,drop\n";
  for (const auto &d : drops)
    out << d.variant << ',' << d.seed << ',' << format_metric(d.turn1_accuracy) << ','
        << format_metric(d.late_mda) << ',' << format_metric(d.drop) << '\n';
}

void write_attention_csv(std::ostream &out, const Tensor &map) {
  const std::size_t h = map.rank() >= 1 ? map.dim(0) : 1;
  const std::size_t w = map.rank() >= 2 ? map.dim(1) : 1;
  char buf[32];
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      std::snprintf(buf, sizeof buf, "%.6f", map[r * w + c]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

} // namespace camvr::harness
