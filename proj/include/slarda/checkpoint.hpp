#pragma once

// Model checkpoints: a directory holding manifest.txt (role, step,
// architecture, config echo) and one binary blob per sub-network.

#include <cstring>
#include <filesystem>
#include <fstream>

#include "slarda/config.hpp"

namespace slarda {

namespace detail {

constexpr char kBlobMagic[4] = {'S', 'L', 'R', 'D'};
constexpr std::uint32_t kBlobVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& file) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError(file + ": truncated blob");
  return v;
}

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

inline std::vector<NamedTensor> part_tensors(ModelBundle& b, ModelBundle::Part part) {
  std::vector<NamedTensor> out;
  for (auto& p : b.params(part)) out.push_back({p.name, &(*p.var)->value});
  if (part == ModelBundle::Part::Encoder)
    for (auto& buf : b.buffers()) out.push_back({buf.name, buf.tensor});
  return out;
}

inline void write_blob(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(kBlobMagic, 4);
  put<std::uint32_t>(os, kBlobVersion);
  put<std::uint64_t>(os, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint64_t>(os, t.name.size());
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint64_t>(os, t.tensor->shape.size());
    for (auto d : t.tensor->shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.tensor->data.data()),
             static_cast<std::streamsize>(t.tensor->data.size() * sizeof(double)));
  }
}

inline void read_blob(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const auto file = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint blob " + file + " is missing");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kBlobMagic, 4) != 0) throw DataError(file + ": not a checkpoint blob");
  if (get<std::uint32_t>(is, file) != kBlobVersion) throw DataError(file + ": unsupported blob version");
  const auto n = get<std::uint64_t>(is, file);
  if (n != tensors.size())
    throw ShapeError(file + ": holds " + std::to_string(n) + " tensors, model expects " + std::to_string(tensors.size()));
  for (const auto& t : tensors) {
    std::string name(get<std::uint64_t>(is, file), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw DataError(file + ": truncated blob");
    if (name != t.name) throw ShapeError(file + ": tensor '" + name + "' where '" + t.name + "' was expected");
    Shape shape(get<std::uint64_t>(is, file));
    for (auto& d : shape) d = get<std::uint64_t>(is, file);
    if (shape != t.tensor->shape)
      throw ShapeError(file + ": tensor '" + name + "' has shape " + to_string(shape) + ", model expects " +
                       to_string(t.tensor->shape));
    if (!is.read(reinterpret_cast<char*>(t.tensor->data.data()),
                 static_cast<std::streamsize>(t.tensor->data.size() * sizeof(double))))
      throw DataError(file + ": truncated blob");
  }
}

/// Architecture as [model] keys, so a checkpoint can be rebuilt.
inline std::string architecture_text(const ArchitectureConfig& a) {
  ExperimentConfig c;
  c.arch = a;
  const auto text = canonical_text(c);
  const auto b = text.find("[model]\n"), e = text.find("\n\n[pretrain]");
  return text.substr(b + 8, e - b - 8) + '\n';
}

}  // namespace detail

/// Writes `bundle` to `dir` (created if needed). `config_echo` is stored
/// verbatim for provenance of the run.
inline void save_checkpoint(const std::filesystem::path& dir, ModelBundle& bundle, const std::string& config_echo = {}) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream man(dir / "manifest.txt");
    if (!man) throw Error("cannot write " + (dir / "manifest.txt").string());
    man << "role = " << to_string(bundle.role) << "\nstep = " << bundle.step << '\n'
        << detail::architecture_text(bundle.architecture());
    for (auto p : ModelBundle::all_parts()) man << "blob." << ModelBundle::part_name(p) << " = " << ModelBundle::part_name(p) << ".bin\n";
  }
  if (!config_echo.empty()) std::ofstream(dir / "config.ini") << config_echo;
  for (auto p : ModelBundle::all_parts())
    detail::write_blob(dir / (ModelBundle::part_name(p) + ".bin"), detail::part_tensors(bundle, p));
}

/// Rebuilds a bundle from `dir`. `hint` names the command that produces the
/// checkpoint, quoted in the error when the directory is missing.
inline ModelBundle load_checkpoint(const std::filesystem::path& dir, const std::string& hint = "slarda_cli pretrain") {
  if (!std::filesystem::exists(dir / "manifest.txt"))
    throw DataError("no checkpoint at " + dir.string() + " (manifest.txt missing); produce it with `" + hint + "`");
  const auto kv = read_key_values(dir / "manifest.txt");
  ExperimentConfig c;
  Role role = Role::Source;
  long step = 0;
  for (const auto& [k, v] : kv) {
    if (k == "role") role = role_from_string(v);
    else if (k == "step") step = std::stol(v);
    else if (k.rfind("blob.", 0) == 0) continue;
    else set_config_value(c, "model", k, v);
  }
  Rng rng(0);
  ModelBundle b(c.arch, rng);
  for (auto p : ModelBundle::all_parts())
    detail::read_blob(dir / (ModelBundle::part_name(p) + ".bin"), detail::part_tensors(b, p));
  b.role = role;
  b.step = step;
  return b;
}

}  // namespace slarda
