#include "camvr/taskgen.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace camvr;
using namespace camvr::task;

namespace {

std::vector<std::string> words(const std::vector<std::size_t> &tokens) {
  std::vector<std::string> out;
  std::istringstream in(detokenize(tokens));
  for (std::string w; in >> w;)
    out.push_back(w);
  return out;
}

// Reads channels straight off the rendered tensor.
struct Cell {
  bool occupied = false;
  std::string shape, color;
};

std::vector<std::vector<Cell>> scan(const Tensor &v) {
  const char *shapes[] = {"square", "circle", "triangle"};
  const char *colors[] = {"red", "green", "blue", "yellow"};
  std::vector<std::vector<Cell>> g(v.dim(0), std::vector<Cell>(v.dim(1)));
  for (std::size_t r = 0; r < v.dim(0); ++r)
    for (std::size_t c = 0; c < v.dim(1); ++c) {
      const std::size_t b = (r * v.dim(1) + c) * 8;
      g[r][c].occupied = v[b + 7] == 1.0;
      for (int k = 0; k < 3; ++k)
        if (v[b + k] == 1.0)
          g[r][c].shape = shapes[k];
      for (int k = 0; k < 4; ++k)
        if (v[b + 3 + k] == 1.0)
          g[r][c].color = colors[k];
    }
  return g;
}

// Brute-force answer: referent is the last "where is the C S" before this turn.
std::string brute_force(const Episode &e, std::size_t t) {
  const auto g = scan(e.turns[t].visual);
  const long H = long(g.size()), W = long(g[0].size());
  const auto q = words(e.turns[t].query_tokens);
  if (q[0] == "how") {
    int n = 0;
    for (const auto &row : g)
      for (const auto &c : row)
        n += c.occupied && (c.color == q[2] || c.shape == q[2]);
    return "count-" + std::to_string(n);
  }
  auto locate = [&](const std::string &col, const std::string &shp) {
    for (long r = 0; r < H; ++r)
      for (long c = 0; c < W; ++c)
        if (g[r][c].occupied && g[r][c].color == col && g[r][c].shape == shp)
          return std::pair{r, c};
    return std::pair{-1L, -1L};
  };
  auto cell = [](long r, long c) { return "r" + std::to_string(r) + "c" + std::to_string(c); };
  if (q.size() == 5 && q[3] != "thing") {
    auto [r, c] = locate(q[3], q[4]);
    return cell(r, c);
  }
  std::pair<long, long> ref{-1, -1};
  for (std::size_t k = 0; k < t; ++k) {
    const auto h = words(e.turns[k].query_tokens);
    if (h[0] == "where" && h.size() == 5)
      ref = locate(h[3], h[4]);
  }
  REQUIRE(ref.first >= 0);
  auto [r, c] = ref;
  if (q[0] == "where")
    return cell(r, c);
  if (q.size() == 4 && q[1] == "color")
    return g[r][c].color;
  if (q.size() == 4 && q[1] == "shape")
    return g[r][c].shape;
  const std::string dir = q.size() == 4 ? q[2] : q[5];
  const long dr = dir == "above" ? -1 : dir == "below" ? 1 : 0;
  const long dc = dir == "left-of" ? -1 : dir == "right-of" ? 1 : 0;
  for (long rr = r + dr, cc = c + dc; rr >= 0 && cc >= 0 && rr < H && cc < W; rr += dr, cc += dc)
    if (g[rr][cc].occupied)
      return q.size() == 4 ? g[rr][cc].shape : g[rr][cc].color;
  return "none";
}

} // namespace

TEST_CASE("vocabularies") {
  CHECK(query_vocabulary().size() == 23);
  CHECK(detokenize(tokenize("where is the red square")) == "where is the red square");
  CHECK_THROWS_AS(tokenize("where is the purple square"), ParseError);
  AnswerVocab v(6, 6);
  CHECK(v.size() == 36 + 4 + 3 + 9 + 1);
  CHECK(v.name(v.cell(2, 3)) == "r2c3");
  CHECK(v.name(v.none()) == "none");
  CHECK(v.id("count-3") == v.count(3));
  CHECK_THROWS_AS(v.id("maybe"), ParseError);
  CHECK_THROWS_AS(v.count(9), ContractError);
}

TEST_CASE("render and parse") {
  Scene s;
  s.objects = {{0, 1, 2, ShapeKind::square, Color::red}};
  const Tensor t = render_grid(s);
  CHECK(t.shape() == Shape{6, 6, kRawChannels});
  double total = 0.0;
  for (double x : t.data())
    total += x;
  CHECK(total == 3.0);
  const std::size_t b = (1 * 6 + 2) * 8;
  CHECK(t[b + 0] == 1.0);
  CHECK(t[b + 3] == 1.0);
  CHECK(t[b + 7] == 1.0);
  for (std::size_t k = 0; k < 8; ++k)
    CHECK(t[k] == 0.0);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto e = gen_episode(TaskConfig{}, seed);
    CHECK(parse_grid(e.turns[0].visual) == e.scene);
  }
  CHECK_THROWS_AS(parse_grid(Tensor({6, 6, 7})), DimensionError);
}

TEST_CASE("oracle examples") {
  AnswerVocab v(6, 6);
  Scene s;
  s.objects = {{0, 0, 0, ShapeKind::circle, Color::blue},
               {1, 0, 3, ShapeKind::square, Color::red},
               {2, 2, 1, ShapeKind::triangle, Color::red},
               {3, 4, 4, ShapeKind::circle, Color::red}};
  CHECK(oracle_answer(s, {}, tokenize("how many red objects"), v) == v.count(3));
  CHECK(oracle_answer(s, {}, tokenize("how many triangle objects"), v) == v.count(1));
  const std::vector<std::vector<std::size_t>> h{tokenize("where is the blue circle")};
  CHECK(oracle_answer(s, {}, h[0], v) == v.cell(0, 0));
  CHECK(oracle_answer(s, h, tokenize("what is left-of it"), v) == v.none());
  CHECK(oracle_answer(s, h, tokenize("what is right-of it"), v) == v.shape(ShapeKind::square));
  CHECK(oracle_answer(s, h, tokenize("what color is the thing right-of that-one"), v) ==
        v.color(Color::red));
  CHECK(dependency_depth(h, tokenize("what shape is it")) == 1);
  CHECK(dependency_depth({h[0], tokenize("how many red objects")}, tokenize("where is it")) == 2);
  CHECK(dependency_depth({}, tokenize("how many red objects")) == 0);
  CHECK_THROWS_AS(oracle_answer(s, {}, tokenize("what color is it"), v), ContractError);
  CHECK_THROWS_AS(oracle_answer(s, {}, tokenize("what is it"), v), ParseError);
  CHECK_THROWS_AS(oracle_answer(s, {}, tokenize("where is the square red"), v), ParseError);
  CHECK_THROWS_AS(oracle_answer(s, {}, tokenize("how many it objects"), v), ParseError);
  CHECK_THROWS_AS(oracle_answer(s, {}, {999}, v), ParseError);
}

TEST_CASE("generated episodes agree with a brute-force scan") {
  AnswerVocab v(6, 6);
  for (std::uint64_t seed = 1000; seed < 1400; ++seed) {
    const auto e = gen_episode(TaskConfig{}, seed);
    REQUIRE(e.turns.size() == 6);
    std::vector<std::vector<std::size_t>> history;
    for (std::size_t t = 0; t < e.turns.size(); ++t) {
      const auto &turn = e.turns[t];
      CHECK(turn.turn == t + 1);
      CHECK(turn.target_answer_id == oracle_answer(e.scene, history, turn.query_tokens, v));
      CHECK(v.name(turn.target_answer_id) == brute_force(e, t));
      if (turn.dependency_depth >= 1) {
        CHECK(memoryless_odds(e.scene, turn.query_tokens, v).entropy_bits > 1.0);
        for (const auto &w : words(turn.query_tokens))
          for (const char *attr : {"red", "green", "blue", "yellow", "square", "circle", "triangle"})
            CHECK(w != attr);
      }
      history.push_back(turn.query_tokens);
    }
  }
}

TEST_CASE("generation is deterministic") {
  const auto a = gen_episode(TaskConfig{}, 42), b = gen_episode(TaskConfig{}, 42);
  CHECK(a.scene == b.scene);
  for (std::size_t t = 0; t < a.turns.size(); ++t) {
    CHECK(a.turns[t].query_tokens == b.turns[t].query_tokens);
    CHECK(a.turns[t].visual == b.turns[t].visual);
  }
  auto x = make_splits(TaskConfig{}, 20, 10, 3), y = make_splits(TaskConfig{}, 20, 10, 3);
  for (std::size_t i = 0; i < 10; ++i)
    CHECK(x.eval[i].scene == y.eval[i].scene);
}

TEST_CASE("splits") {
  auto s = make_splits(TaskConfig{}, 100, 50, 7);
  std::set<std::uint64_t> seeds;
  for (const auto &e : s.train)
    seeds.insert(e.seed);
  for (const auto &e : s.eval)
    seeds.insert(e.seed);
  CHECK(seeds.size() == 150);
  for (std::uint64_t base : {1, 2, 3}) {
    auto tr = split_seeds(4000, base, false), ev = split_seeds(100, base, true);
    std::set<std::uint64_t> a(tr.begin(), tr.end());
    for (auto e : ev)
      CHECK(a.count(e) == 0);
  }
}

TEST_CASE("eval set is balanced across dependency depths") {
  for (std::uint64_t base : {1, 2, 3}) {
    const auto s = make_splits(TaskConfig{}, 0, 100, base);
    double hist[3] = {0, 0, 0}, n = 0;
    for (const auto &e : s.eval)
      for (const auto &t : e.turns) {
        hist[std::min<std::size_t>(t.dependency_depth, 2)] += 1;
        n += 1;
      }
    for (double h : hist)
      CHECK(std::abs(h / n - 1.0 / 3.0) <= 0.10);
  }
}

TEST_CASE("memoryless ceiling") {
  AnswerVocab v(6, 6);
  const auto s = make_splits(TaskConfig{}, 0, 100, 1);
  const double c = memoryless_ceiling(s.eval, v);
  CHECK(c > 0.0);
  CHECK(c < 0.5);
  CHECK(memoryless_odds(s.eval[0].scene, tokenize("how many red objects"), v).best_probability == 1.0);
}

TEST_CASE("episode text round trip") {
  AnswerVocab v(6, 6);
  for (std::uint64_t seed : {5, 6, 7}) {
    const auto e = gen_episode(TaskConfig{}, seed);
    std::stringstream ss;
    write_episode(ss, e, v);
    const auto r = read_episode(ss, v);
    CHECK(r.seed == e.seed);
    CHECK(r.scene == e.scene);
    REQUIRE(r.turns.size() == e.turns.size());
    for (std::size_t t = 0; t < e.turns.size(); ++t) {
      CHECK(r.turns[t].query_tokens == e.turns[t].query_tokens);
      CHECK(r.turns[t].target_answer_id == e.turns[t].target_answer_id);
      CHECK(r.turns[t].dependency_depth == e.turns[t].dependency_depth);
      CHECK(r.turns[t].visual == e.turns[t].visual);
    }
  }
  std::stringstream bad("camvr-episode 2\n");
  CHECK_THROWS_AS(read_episode(bad, v), ParseError);
  std::stringstream junk("hello");
  CHECK_THROWS_AS(read_episode(junk, v), ParseError);
}

TEST_CASE("config validation") {
  TaskConfig c;
  c.grid_h = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.max_objects = 40;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.turns = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
