#include "camvr/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>

namespace camvr {
namespace {

constexpr std::array<char, 6> kMagic{'C', 'A', 'M', 'V', 'R', '1'};

void put_u32(std::ostream &out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i)
    b[i] = char((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_f64(std::ostream &out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = char((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream &in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char *>(b), 4))
    throw ParseError("checkpoint: truncated header or block");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

double get_f64(std::istream &in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char *>(b), 8))
    throw ParseError("checkpoint: truncated tensor data");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= std::uint64_t(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

std::uint32_t narrow(std::size_t v) {
  if (v > UINT32_MAX)
    throw ContractError("checkpoint: value does not fit in 32 bits");
  return std::uint32_t(v);
}

std::uint32_t granularity_code(Granularity g) {
  switch (g) {
  case Granularity::global:
    return 0;
  case Granularity::coarse:
    return 1;
  case Granularity::native:
    return 2;
  }
  return 2;
}

} // namespace

void write_checkpoint(std::ostream &out, const ModelParams &p) {
  const auto &d = p.config.dims;
  const auto &f = p.config.flags;
  out.write(kMagic.data(), kMagic.size());
  for (std::size_t v : {d.n_slots, d.d_mem, d.d_enc, d.d_vis, d.d_txt, d.d_raw, d.d_dec,
                        d.c_hidden, d.answer_vocab})
    put_u32(out, narrow(v));
  std::uint32_t flags = (f.use_vcmu ? 1u : 0u) | (f.use_avfg ? 2u : 0u) |
                        (f.memory_init == MemoryInit::learnable ? 4u : 0u) |
                        granularity_code(f.granularity) << 3;
  put_u32(out, flags);
  put_u32(out, narrow(d.grid_h));
  put_u32(out, narrow(d.grid_w));
  put_u32(out, narrow(d.query_vocab));

  const auto names = p.block_names();
  const auto blocks = p.blocks();
  put_u32(out, narrow(blocks.size()));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    put_u32(out, narrow(names[b].size()));
    out.write(names[b].data(), std::streamsize(names[b].size()));
    put_u32(out, narrow(blocks[b]->rank()));
    for (auto e : blocks[b]->shape())
      put_u32(out, narrow(e));
    for (double v : blocks[b]->data())
      put_f64(out, v);
  }
  if (!out)
    throw std::runtime_error("checkpoint: write failed");
}

ModelParams read_checkpoint(std::istream &in) {
  std::array<char, 6> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw ParseError("checkpoint: bad magic, not a CAMVR1 file");
  ModelConfig cfg;
  auto &d = cfg.dims;
  for (std::size_t *v : {&d.n_slots, &d.d_mem, &d.d_enc, &d.d_vis, &d.d_txt, &d.d_raw, &d.d_dec,
                         &d.c_hidden, &d.answer_vocab})
    *v = get_u32(in);
  const std::uint32_t flags = get_u32(in);
  cfg.flags.use_vcmu = flags & 1u;
  cfg.flags.use_avfg = flags & 2u;
  cfg.flags.memory_init = flags & 4u ? MemoryInit::learnable : MemoryInit::zeros;
  switch ((flags >> 3) & 3u) {
  case 0:
    cfg.flags.granularity = Granularity::global;
    break;
  case 1:
    cfg.flags.granularity = Granularity::coarse;
    break;
  case 2:
    cfg.flags.granularity = Granularity::native;
    break;
  default:
    throw ParseError("checkpoint: unknown granularity code");
  }
  d.grid_h = get_u32(in);
  d.grid_w = get_u32(in);
  d.query_vocab = get_u32(in);

  std::map<std::string, Tensor> stored;
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t b = 0; b < count; ++b) {
    std::string name(get_u32(in), '\0');
    if (!in.read(name.data(), std::streamsize(name.size())))
      throw ParseError("checkpoint: truncated block name");
    Shape shape(get_u32(in));
    for (auto &e : shape)
      e = get_u32(in);
    std::vector<double> data(shape_size(shape));
    for (auto &v : data)
      v = get_f64(in);
    stored.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }

  ModelParams p = init_model(cfg, 0);
  if (p.config != cfg)
    throw ParseError("checkpoint: header is inconsistent");
  p.weights.for_each([&](const std::string &name, Tensor &t) {
    if (t.empty())
      return;
    auto it = stored.find(name);
    if (it == stored.end())
      throw ParseError("checkpoint: missing block '" + name + "'");
    if (it->second.shape() != t.shape())
      throw ParseError("checkpoint: block '" + name + "' has shape " +
                       to_string(it->second.shape()) + ", expected " + to_string(t.shape()));
    t = std::move(it->second);
    stored.erase(it);
  });
  if (!stored.empty())
    throw ParseError("checkpoint: unexpected block '" + stored.begin()->first + "'");
  return p;
}

void save_checkpoint(const std::filesystem::path &path, const ModelParams &params) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("checkpoint: cannot open " + path.string());
  write_checkpoint(out, params);
}

ModelParams load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

} // namespace camvr
