#pragma once

// Synthetic multi-turn grid dialogues. A scene is a small grid of coloured
// shapes; each episode opens by establishing a referent ("where is the red
// square") and follows up with pronoun queries whose answers depend on that
// earlier turn. A rules engine answers every query exactly.

#include "camvr/tensor.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace camvr::task {

enum class ShapeKind : std::uint8_t { square, circle, triangle };
enum class Color : std::uint8_t { red, green, blue, yellow };

inline constexpr std::array<ShapeKind, 3> kShapes{ShapeKind::square, ShapeKind::circle,
                                                  ShapeKind::triangle};
inline constexpr std::array<Color, 4> kColors{Color::red, Color::green, Color::blue,
                                              Color::yellow};
inline constexpr std::size_t kRawChannels = kShapes.size() + kColors.size() + 1;
inline constexpr std::size_t kMaxCount = 8;

std::string_view name(ShapeKind s);
std::string_view name(Color c);

struct Object {
  int id = 0;
  std::size_t row = 0, col = 0;
  ShapeKind shape = ShapeKind::square;
  Color color = Color::red;
  friend bool operator==(const Object &, const Object &) = default;
};

struct Scene {
  std::size_t height = 6, width = 6;
  std::vector<Object> objects; // row-major order, ids 0..n-1

  const Object *at(std::size_t row, std::size_t col) const;
  friend bool operator==(const Scene &, const Scene &) = default;
};

struct TurnInput {
  std::size_t turn = 1; // 1-based position in the episode
  Tensor visual;        // H x W x D_raw
  std::vector<std::size_t> query_tokens;
  std::size_t target_answer_id = 0;
  std::size_t dependency_depth = 0;
};

struct Episode {
  Scene scene;
  std::vector<TurnInput> turns;
  std::uint64_t seed = 0;
};

struct TaskConfig {
  std::size_t grid_h = 6;
  std::size_t grid_w = 6;
  std::size_t turns = 6;
  std::size_t min_objects = 6;
  std::size_t max_objects = 8;

  void validate() const;
};

// Query token vocabulary (fixed).
const std::vector<std::string> &query_vocabulary();
std::size_t query_token(std::string_view word);
std::vector<std::size_t> tokenize(std::string_view sentence);
std::string detokenize(const std::vector<std::size_t> &tokens);

// Closed answer vocabulary: grid cells "rRcC", colours, shapes, counts 0..8,
// "none". Cell entries depend on the grid size.
class AnswerVocab {
public:
  AnswerVocab(std::size_t grid_h, std::size_t grid_w);

  std::size_t size() const { return names_.size(); }
  const std::string &name(std::size_t id) const { return names_.at(id); }
  std::size_t id(std::string_view name) const;

  std::size_t cell(std::size_t row, std::size_t col) const { return row * grid_w_ + col; }
  std::size_t color(Color c) const;
  std::size_t shape(ShapeKind s) const;
  std::size_t count(std::size_t n) const;
  std::size_t none() const { return names_.size() - 1; }

private:
  std::size_t grid_w_;
  std::vector<std::string> names_;
};

// One-hot channels per cell: shapes, colours, occupancy.
Tensor render_grid(const Scene &scene);
Scene parse_grid(const Tensor &visual);

// Answers `query` against `scene`, resolving pronouns through the referent
// stack built from the previous queries of the dialogue.
std::size_t oracle_answer(const Scene &scene, const std::vector<std::vector<std::size_t>> &history,
                          const std::vector<std::size_t> &query, const AnswerVocab &vocab);

// Turns since the referent used by `query` was established; 0 when the query
// needs no history.
std::size_t dependency_depth(const std::vector<std::vector<std::size_t>> &history,
                             const std::vector<std::size_t> &query);

Episode gen_episode(const TaskConfig &config, std::uint64_t seed);

struct Splits {
  std::vector<Episode> train;
  std::vector<Episode> eval;
};
// Train seeds and eval seeds come from disjoint ranges derived from base_seed.
std::vector<std::uint64_t> split_seeds(std::size_t n, std::uint64_t base_seed, bool eval);
Splits make_splits(const TaskConfig &config, std::size_t n_train, std::size_t n_eval,
                   std::uint64_t base_seed);

// Distribution of answers to a pronoun query when the referent is unknown:
// uniform over every object the generator could have established.
struct MemorylessOdds {
  double best_probability = 1.0;
  double entropy_bits = 0.0;
};
MemorylessOdds memoryless_odds(const Scene &scene, const std::vector<std::size_t> &query,
                               const AnswerVocab &vocab);

// Mean best_probability over depth >= 1 turns: the accuracy ceiling of a model
// without dialogue history.
double memoryless_ceiling(const std::vector<Episode> &episodes, const AnswerVocab &vocab);

void write_episode(std::ostream &out, const Episode &episode, const AnswerVocab &vocab);
Episode read_episode(std::istream &in, const AnswerVocab &vocab);

} // namespace camvr::task
