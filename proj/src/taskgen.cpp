#include "camvr/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

namespace camvr::task {

std::string_view name(ShapeKind s) {
  switch (s) {
  case ShapeKind::square:
    return "square";
  case ShapeKind::circle:
    return "circle";
  case ShapeKind::triangle:
    return "triangle";
  }
  return "?";
}

std::string_view name(Color c) {
  switch (c) {
  case Color::red:
    return "red";
  case Color::green:
    return "green";
  case Color::blue:
    return "blue";
  case Color::yellow:
    return "yellow";
  }
  return "?";
}

const Object *Scene::at(std::size_t row, std::size_t col) const {
  for (const auto &o : objects)
    if (o.row == row && o.col == col)
      return &o;
  return nullptr;
}

void TaskConfig::validate() const {
  if (grid_h < 2 || grid_w < 2)
    throw ConfigError("grid: must be at least 2x2");
  if (turns == 0)
    throw ConfigError("turns: must be positive");
  if (min_objects < 3 || min_objects > max_objects)
    throw ConfigError("min_objects: need 3 <= min_objects <= max_objects");
  if (max_objects > kMaxCount || max_objects > grid_h * grid_w)
    throw ConfigError("max_objects: at most " + std::to_string(kMaxCount) +
                      " objects and no more than the grid holds");
}

// ---------------------------------------------------------------- vocabulary

const std::vector<std::string> &query_vocabulary() {
  static const std::vector<std::string> words = {
      "where", "is",       "the",      "how",      "many",  "objects", "what",  "color",
      "shape", "thing",    "it",       "that-one", "left-of", "right-of", "above", "below",
      "red",   "green",    "blue",     "yellow",   "square", "circle",  "triangle"};
  return words;
}

std::size_t query_token(std::string_view word) {
  const auto &v = query_vocabulary();
  auto it = std::find(v.begin(), v.end(), word);
  if (it == v.end())
    throw ParseError("unknown query token '" + std::string(word) + "'");
  return std::size_t(it - v.begin());
}

std::vector<std::size_t> tokenize(std::string_view sentence) {
  std::vector<std::size_t> out;
  std::istringstream in{std::string(sentence)};
  std::string w;
  while (in >> w)
    out.push_back(query_token(w));
  return out;
}

std::string detokenize(const std::vector<std::size_t> &tokens) {
  std::string s;
  for (auto t : tokens) {
    if (!s.empty())
      s += ' ';
    s += query_vocabulary().at(t);
  }
  return s;
}

AnswerVocab::AnswerVocab(std::size_t grid_h, std::size_t grid_w) : grid_w_(grid_w) {
  for (std::size_t r = 0; r < grid_h; ++r)
    for (std::size_t c = 0; c < grid_w; ++c)
      names_.push_back("r" + std::to_string(r) + "c" + std::to_string(c));
  for (auto c : kColors)
    names_.emplace_back(task::name(c));
  for (auto s : kShapes)
    names_.emplace_back(task::name(s));
  for (std::size_t n = 0; n <= kMaxCount; ++n)
    names_.push_back("count-" + std::to_string(n));
  names_.emplace_back("none");
}

std::size_t AnswerVocab::id(std::string_view n) const {
  auto it = std::find(names_.begin(), names_.end(), n);
  if (it == names_.end())
    throw ParseError("unknown answer '" + std::string(n) + "'");
  return std::size_t(it - names_.begin());
}

std::size_t AnswerVocab::color(Color c) const {
  return names_.size() - 1 - (kMaxCount + 1) - kShapes.size() - kColors.size() + std::size_t(c);
}

std::size_t AnswerVocab::shape(ShapeKind s) const {
  return names_.size() - 1 - (kMaxCount + 1) - kShapes.size() + std::size_t(s);
}

std::size_t AnswerVocab::count(std::size_t n) const {
  if (n > kMaxCount)
    throw ContractError("count answer out of range: " + std::to_string(n));
  return names_.size() - 1 - (kMaxCount + 1) + n;
}

// ---------------------------------------------------------------- rendering

Tensor render_grid(const Scene &scene) {
  Tensor t({scene.height, scene.width, kRawChannels});
  for (const auto &o : scene.objects) {
    const std::size_t base = (o.row * scene.width + o.col) * kRawChannels;
    t[base + std::size_t(o.shape)] = 1.0;
    t[base + kShapes.size() + std::size_t(o.color)] = 1.0;
    t[base + kRawChannels - 1] = 1.0;
  }
  return t;
}

Scene parse_grid(const Tensor &visual) {
  if (visual.rank() != 3 || visual.dim(2) != kRawChannels)
    throw DimensionError("parse_grid: expected H x W x " + std::to_string(kRawChannels) +
                         ", got " + to_string(visual.shape()));
  Scene s;
  s.height = visual.dim(0);
  s.width = visual.dim(1);
  int next_id = 0;
  for (std::size_t r = 0; r < s.height; ++r)
    for (std::size_t c = 0; c < s.width; ++c) {
      const std::size_t base = (r * s.width + c) * kRawChannels;
      if (visual[base + kRawChannels - 1] == 0.0)
        continue;
      Object o{next_id++, r, c, ShapeKind::square, Color::red};
      for (std::size_t k = 0; k < kShapes.size(); ++k)
        if (visual[base + k] == 1.0)
          o.shape = kShapes[k];
      for (std::size_t k = 0; k < kColors.size(); ++k)
        if (visual[base + kShapes.size() + k] == 1.0)
          o.color = kColors[k];
      s.objects.push_back(o);
    }
  return s;
}

// ---------------------------------------------------------------- grammar

namespace {

enum class QueryKind {
  establish,   // where is the C S
  count,       // how many (C|S) objects
  where_ref,   // where is P
  color_ref,   // what color is P
  shape_ref,   // what shape is P
  rel_shape,   // what is R P
  rel_color,   // what color is the thing R P
};

enum class Direction { left, right, up, down };

struct Query {
  QueryKind kind{};
  std::optional<Color> color{};
  std::optional<ShapeKind> shape{};
  Direction dir = Direction::left;
};

std::optional<Color> as_color(const std::string &w) {
  for (auto c : kColors)
    if (name(c) == w)
      return c;
  return std::nullopt;
}

std::optional<ShapeKind> as_shape(const std::string &w) {
  for (auto s : kShapes)
    if (name(s) == w)
      return s;
  return std::nullopt;
}

std::optional<Direction> as_direction(const std::string &w) {
  if (w == "left-of")
    return Direction::left;
  if (w == "right-of")
    return Direction::right;
  if (w == "above")
    return Direction::up;
  if (w == "below")
    return Direction::down;
  return std::nullopt;
}

bool is_pronoun(const std::string &w) { return w == "it" || w == "that-one"; }

Query parse_query(const std::vector<std::size_t> &tokens) {
  std::vector<std::string> w;
  for (auto t : tokens) {
    if (t >= query_vocabulary().size())
      throw ParseError("query token id " + std::to_string(t) + " out of range");
    w.push_back(query_vocabulary()[t]);
  }
  auto fail = [&]() -> Query { throw ParseError("ungrammatical query: '" + detokenize(tokens) + "'"); };
  const std::size_t n = w.size();
  if (n == 5 && w[0] == "where" && w[1] == "is" && w[2] == "the") {
    auto c = as_color(w[3]);
    auto s = as_shape(w[4]);
    if (!c || !s)
      return fail();
    return {QueryKind::establish, c, s};
  }
  if (n == 4 && w[0] == "how" && w[1] == "many" && w[3] == "objects") {
    if (auto c = as_color(w[2]))
      return {QueryKind::count, c, std::nullopt};
    if (auto s = as_shape(w[2]))
      return {QueryKind::count, std::nullopt, s};
    return fail();
  }
  if (n == 3 && w[0] == "where" && w[1] == "is" && is_pronoun(w[2]))
    return {QueryKind::where_ref};
  if (n == 4 && w[0] == "what" && w[2] == "is" && is_pronoun(w[3])) {
    if (w[1] == "color")
      return {QueryKind::color_ref};
    if (w[1] == "shape")
      return {QueryKind::shape_ref};
    return fail();
  }
  if (n == 4 && w[0] == "what" && w[1] == "is" && is_pronoun(w[3])) {
    if (auto d = as_direction(w[2]))
      return {QueryKind::rel_shape, std::nullopt, std::nullopt, *d};
    return fail();
  }
  if (n == 7 && w[0] == "what" && w[1] == "color" && w[2] == "is" && w[3] == "the" &&
      w[4] == "thing" && is_pronoun(w[6])) {
    if (auto d = as_direction(w[5]))
      return {QueryKind::rel_color, std::nullopt, std::nullopt, *d};
    return fail();
  }
  return fail();
}

bool needs_referent(QueryKind k) { return k != QueryKind::establish && k != QueryKind::count; }

const Object &resolve(const Scene &scene, Color c, ShapeKind s) {
  const Object *found = nullptr;
  for (const auto &o : scene.objects)
    if (o.color == c && o.shape == s) {
      if (found)
        throw ContractError("referent " + std::string(name(c)) + " " + std::string(name(s)) +
                            " is ambiguous in this scene");
      found = &o;
    }
  if (!found)
    throw ContractError("referent " + std::string(name(c)) + " " + std::string(name(s)) +
                        " is absent from this scene");
  return *found;
}

const Object *nearest(const Scene &scene, const Object &from, Direction d) {
  std::ptrdiff_t r = std::ptrdiff_t(from.row), c = std::ptrdiff_t(from.col);
  const std::ptrdiff_t dr = d == Direction::up ? -1 : d == Direction::down ? 1 : 0;
  const std::ptrdiff_t dc = d == Direction::left ? -1 : d == Direction::right ? 1 : 0;
  for (;;) {
    r += dr;
    c += dc;
    if (r < 0 || c < 0 || r >= std::ptrdiff_t(scene.height) || c >= std::ptrdiff_t(scene.width))
      return nullptr;
    if (const Object *o = scene.at(std::size_t(r), std::size_t(c)))
      return o;
  }
}

std::size_t answer_about(const Scene &scene, const Query &q, const Object &ref,
                         const AnswerVocab &vocab) {
  switch (q.kind) {
  case QueryKind::where_ref:
    return vocab.cell(ref.row, ref.col);
  case QueryKind::color_ref:
    return vocab.color(ref.color);
  case QueryKind::shape_ref:
    return vocab.shape(ref.shape);
  case QueryKind::rel_shape: {
    const Object *o = nearest(scene, ref, q.dir);
    return o ? vocab.shape(o->shape) : vocab.none();
  }
  case QueryKind::rel_color: {
    const Object *o = nearest(scene, ref, q.dir);
    return o ? vocab.color(o->color) : vocab.none();
  }
  default:
    break;
  }
  throw ContractError("answer_about: query does not use a referent");
}

// Referents the generator may establish: objects whose colour/shape pair is
// unique in the scene.
std::vector<const Object *> establishable(const Scene &scene) {
  std::vector<const Object *> out;
  for (const auto &o : scene.objects) {
    std::size_t same = 0;
    for (const auto &p : scene.objects)
      same += p.color == o.color && p.shape == o.shape;
    if (same == 1)
      out.push_back(&o);
  }
  return out;
}

struct Referent {
  const Object *object;
  std::size_t turn; // 1-based turn that established it
};

std::optional<Referent> referent_from_history(const Scene *scene,
                                              const std::vector<std::vector<std::size_t>> &history) {
  std::optional<Referent> top;
  for (std::size_t i = 0; i < history.size(); ++i) {
    Query q = parse_query(history[i]);
    if (q.kind == QueryKind::establish)
      top = Referent{scene ? &resolve(*scene, *q.color, *q.shape) : nullptr, i + 1};
  }
  return top;
}

} // namespace

std::size_t oracle_answer(const Scene &scene, const std::vector<std::vector<std::size_t>> &history,
                          const std::vector<std::size_t> &query, const AnswerVocab &vocab) {
  const Query q = parse_query(query);
  switch (q.kind) {
  case QueryKind::establish: {
    const Object &o = resolve(scene, *q.color, *q.shape);
    return vocab.cell(o.row, o.col);
  }
  case QueryKind::count: {
    std::size_t n = 0;
    for (const auto &o : scene.objects)
      n += q.color ? o.color == *q.color : o.shape == *q.shape;
    return vocab.count(n);
  }
  default:
    break;
  }
  auto ref = referent_from_history(&scene, history);
  if (!ref)
    throw ContractError("query '" + detokenize(query) + "' refers to nothing established yet");
  return answer_about(scene, q, *ref->object, vocab);
}

std::size_t dependency_depth(const std::vector<std::vector<std::size_t>> &history,
                             const std::vector<std::size_t> &query) {
  const Query q = parse_query(query);
  if (!needs_referent(q.kind))
    return 0;
  auto ref = referent_from_history(nullptr, history);
  if (!ref)
    throw ContractError("query '" + detokenize(query) + "' refers to nothing established yet");
  return history.size() + 1 - ref->turn;
}

MemorylessOdds memoryless_odds(const Scene &scene, const std::vector<std::size_t> &query,
                               const AnswerVocab &vocab) {
  const Query q = parse_query(query);
  if (!needs_referent(q.kind))
    return {};
  const auto candidates = establishable(scene);
  if (candidates.empty())
    throw ContractError("memoryless_odds: scene has no establishable referent");
  std::map<std::size_t, std::size_t> hist;
  for (const Object *o : candidates)
    ++hist[answer_about(scene, q, *o, vocab)];
  MemorylessOdds odds{0.0, 0.0};
  const double n = double(candidates.size());
  for (const auto &[answer, k] : hist) {
    const double p = double(k) / n;
    odds.best_probability = std::max(odds.best_probability, p);
    odds.entropy_bits -= p * std::log2(p);
  }
  return odds;
}

double memoryless_ceiling(const std::vector<Episode> &episodes, const AnswerVocab &vocab) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto &e : episodes)
    for (const auto &t : e.turns)
      if (t.dependency_depth >= 1) {
        total += memoryless_odds(e.scene, t.query_tokens, vocab).best_probability;
        ++n;
      }
  return n ? total / double(n) : 0.0;
}

// ---------------------------------------------------------------- generation

namespace {

Scene random_scene(const TaskConfig &cfg, std::mt19937_64 &rng) {
  Scene s;
  s.height = cfg.grid_h;
  s.width = cfg.grid_w;
  std::uniform_int_distribution<std::size_t> count(cfg.min_objects, cfg.max_objects);
  const std::size_t n = count(rng);
  std::vector<std::size_t> cells(cfg.grid_h * cfg.grid_w);
  for (std::size_t i = 0; i < cells.size(); ++i)
    cells[i] = i;
  // partial Fisher-Yates with explicit draws keeps generation reproducible
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
    std::swap(cells[i], cells[pick(rng)]);
  }
  std::sort(cells.begin(), cells.begin() + std::ptrdiff_t(n));
  std::uniform_int_distribution<std::size_t> shape(0, kShapes.size() - 1);
  std::uniform_int_distribution<std::size_t> color(0, kColors.size() - 1);
  for (std::size_t i = 0; i < n; ++i)
    s.objects.push_back(Object{int(i), cells[i] / cfg.grid_w, cells[i] % cfg.grid_w,
                               kShapes[shape(rng)], kColors[color(rng)]});
  return s;
}

const char *kDirections[] = {"left-of", "right-of", "above", "below"};

std::string follow_up(std::mt19937_64 &rng) {
  std::uniform_int_distribution<int> kind(0, 4);
  std::uniform_int_distribution<int> dir(0, 3);
  std::bernoulli_distribution that_one(0.5);
  const std::string pronoun = that_one(rng) ? "that-one" : "it";
  switch (kind(rng)) {
  case 0:
    return "what color is " + pronoun;
  case 1:
    return "what shape is " + pronoun;
  case 2:
    return "where is " + pronoun;
  case 3:
    return std::string("what is ") + kDirections[dir(rng)] + " " + pronoun;
  default:
    return std::string("what color is the thing ") + kDirections[dir(rng)] + " " + pronoun;
  }
}

constexpr double kMinAnswerEntropyBits = 1.0;
constexpr int kFollowUpTries = 24;

} // namespace

Episode gen_episode(const TaskConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  const AnswerVocab vocab(cfg.grid_h, cfg.grid_w);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution count_instead(0.25);
  std::uniform_int_distribution<std::size_t> attribute(0, kColors.size() + kShapes.size() - 1);

  for (;;) {
    Episode ep;
    ep.seed = seed;
    ep.scene = random_scene(cfg, rng);
    const auto candidates = establishable(ep.scene);
    if (candidates.size() < 3)
      continue;

    std::vector<std::vector<std::size_t>> history;
    bool ok = true;
    for (std::size_t t = 0; t < cfg.turns && ok; ++t) {
      std::string q;
      if (t % 3 == 0) {
        if (t > 0 && count_instead(rng)) {
          const std::size_t a = attribute(rng);
          q = "how many " +
              std::string(a < kColors.size() ? name(kColors[a]) : name(kShapes[a - kColors.size()])) +
              " objects";
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
          const Object *ref = candidates[pick(rng)];
          q = "where is the " + std::string(name(ref->color)) + " " + std::string(name(ref->shape));
        }
      } else {
        // the template is accepted on scene statistics alone, never on the
        // hidden referent, so the referent stays uniform given (scene, query)
        ok = false;
        for (int attempt = 0; attempt < kFollowUpTries && !ok; ++attempt) {
          q = follow_up(rng);
          ok = memoryless_odds(ep.scene, tokenize(q), vocab).entropy_bits > kMinAnswerEntropyBits;
        }
        if (!ok)
          break;
      }
      TurnInput turn;
      turn.turn = t + 1;
      turn.visual = render_grid(ep.scene);
      turn.query_tokens = tokenize(q);
      turn.target_answer_id = oracle_answer(ep.scene, history, turn.query_tokens, vocab);
      turn.dependency_depth = dependency_depth(history, turn.query_tokens);
      history.push_back(turn.query_tokens);
      ep.turns.push_back(std::move(turn));
    }
    if (ok)
      return ep;
  }
}

std::vector<std::uint64_t> split_seeds(std::size_t n, std::uint64_t base_seed, bool eval) {
  if (n >= (std::uint64_t(1) << 31))
    throw ConfigError("episode count too large for the seed layout");
  std::vector<std::uint64_t> seeds(n);
  const std::uint64_t base = (base_seed << 32) + (eval ? (std::uint64_t(1) << 31) : 0);
  for (std::size_t i = 0; i < n; ++i)
    seeds[i] = base + i;
  return seeds;
}

Splits make_splits(const TaskConfig &cfg, std::size_t n_train, std::size_t n_eval,
                   std::uint64_t base_seed) {
  Splits s;
  for (auto seed : split_seeds(n_train, base_seed, false))
    s.train.push_back(gen_episode(cfg, seed));
  for (auto seed : split_seeds(n_eval, base_seed, true))
    s.eval.push_back(gen_episode(cfg, seed));
  return s;
}

// ---------------------------------------------------------------- text format

void write_episode(std::ostream &out, const Episode &e, const AnswerVocab &vocab) {
  out << "camvr-episode 1\n";
  out << "seed " << e.seed << "\n";
  out << "grid " << e.scene.height << " " << e.scene.width << "\n";
  out << "objects " << e.scene.objects.size() << "\n";
  for (const auto &o : e.scene.objects)
    out << o.id << " " << o.row << " " << o.col << " " << name(o.shape) << " " << name(o.color)
        << "\n";
  out << "turns " << e.turns.size() << "\n";
  for (const auto &t : e.turns)
    out << "turn " << t.turn << " depth " << t.dependency_depth << " answer "
        << vocab.name(t.target_answer_id) << " query " << detokenize(t.query_tokens) << "\n";
  out << "end\n";
}

namespace {

void expect(std::istream &in, const std::string &word) {
  std::string w;
  if (!(in >> w) || w != word)
    throw ParseError("episode file: expected '" + word + "', got '" + w + "'");
}

template <class T> T read_value(std::istream &in, const char *what) {
  T v{};
  if (!(in >> v))
    throw ParseError(std::string("episode file: could not read ") + what);
  return v;
}

} // namespace

Episode read_episode(std::istream &in, const AnswerVocab &vocab) {
  Episode e;
  expect(in, "camvr-episode");
  if (read_value<int>(in, "version") != 1)
    throw ParseError("episode file: unsupported version");
  expect(in, "seed");
  e.seed = read_value<std::uint64_t>(in, "seed");
  expect(in, "grid");
  e.scene.height = read_value<std::size_t>(in, "grid height");
  e.scene.width = read_value<std::size_t>(in, "grid width");
  if (vocab.size() != AnswerVocab(e.scene.height, e.scene.width).size())
    throw ParseError("episode file: grid does not match the answer vocabulary");
  expect(in, "objects");
  const auto n_obj = read_value<std::size_t>(in, "object count");
  for (std::size_t i = 0; i < n_obj; ++i) {
    Object o;
    o.id = read_value<int>(in, "object id");
    o.row = read_value<std::size_t>(in, "object row");
    o.col = read_value<std::size_t>(in, "object col");
    const auto s = as_shape(read_value<std::string>(in, "object shape"));
    const auto c = as_color(read_value<std::string>(in, "object color"));
    if (!s || !c || o.row >= e.scene.height || o.col >= e.scene.width)
      throw ParseError("episode file: bad object line " + std::to_string(i));
    o.shape = *s;
    o.color = *c;
    e.scene.objects.push_back(o);
  }
  expect(in, "turns");
  const auto n_turns = read_value<std::size_t>(in, "turn count");
  const Tensor visual = render_grid(e.scene);
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < n_turns; ++i) {
    if (!std::getline(in, line))
      throw ParseError("episode file: missing turn " + std::to_string(i + 1));
    std::istringstream ls(line);
    TurnInput t;
    expect(ls, "turn");
    t.turn = read_value<std::size_t>(ls, "turn index");
    expect(ls, "depth");
    t.dependency_depth = read_value<std::size_t>(ls, "depth");
    expect(ls, "answer");
    t.target_answer_id = vocab.id(read_value<std::string>(ls, "answer"));
    expect(ls, "query");
    std::string rest;
    std::getline(ls, rest);
    t.query_tokens = tokenize(rest);
    t.visual = visual;
    e.turns.push_back(std::move(t));
  }
  expect(in, "end");
  return e;
}

} // namespace camvr::task
