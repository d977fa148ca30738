#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lomix/array.hpp"
#include "lomix/tape.hpp"

namespace lomix {

/// One named trainable tensor.
template <std::floating_point T>
struct Parameter {
  std::string name;
  Array<T> value;
  bool decay = true;  // decoupled weight decay applies
};

/// Ordered collection of named parameters. Order is insertion order and is
/// what checkpoints and the optimizer state key on.
template <std::floating_point T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Array<T> value, bool decay = true) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back(Parameter<T>{std::move(name), std::move(value), decay});
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  Array<T>& value(const std::string& name) { return params_[index_of(name)].value; }
  const Array<T>& value(const std::string& name) const { return params_[index_of(name)].value; }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Total scalar count.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name != b.params_[i].name || !(a.params_[i].value == b.params_[i].value))
        return false;
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape as leaves, index-aligned with the set.
template <std::floating_point T>
struct BoundParameters {
  std::vector<Var<T>> vars;
  const Var<T>& operator[](std::size_t i) const { return vars[i]; }
};

template <std::floating_point T>
BoundParameters<T> bind(Tape<T>& tape, const ParameterSet<T>& set, bool requires_grad = true) {
  BoundParameters<T> bound;
  bound.vars.reserve(set.size());
  for (const auto& p : set) bound.vars.push_back(tape.leaf(p.value, requires_grad));
  return bound;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "LMXW", u32 version, then per parameter
//   u32 name length, name bytes, u32 rank, u32 extents[rank], f64 payload
// all little-endian, until end of file.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'L', 'M', 'X', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f32(std::ostream& out, float v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
bool read_pod(std::istream& in, V& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return static_cast<std::size_t>(in.gcount()) == sizeof v;
}

template <typename V>
V read_exact(std::istream& in, const char* what) {
  V v{};
  if (!read_pod(in, v)) throw FormatError(std::string("truncated file while reading ") + what);
  return v;
}

}  // namespace io

template <std::floating_point T>
void write_checkpoint(std::ostream& out, const std::vector<const ParameterSet<T>*>& sets) {
  out.write(kCheckpointMagic, 4);
  io::write_u32(out, kCheckpointVersion);
  for (const auto* set : sets) {
    for (const auto& p : *set) {
      io::write_u32(out, static_cast<std::uint32_t>(p.name.size()));
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      io::write_u32(out, static_cast<std::uint32_t>(p.value.rank()));
      for (auto e : p.value.shape()) io::write_u32(out, static_cast<std::uint32_t>(e));
      for (T v : p.value.data()) io::write_f64(out, static_cast<double>(v));
    }
  }
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const std::vector<const ParameterSet<T>*>& sets) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(out, sets);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

/// Reads every record of a checkpoint, in file order.
inline std::vector<Parameter<double>> read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("bad magic");
  const auto version = io::read_exact<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  std::vector<Parameter<double>> out;
  std::uint32_t name_len = 0;
  while (io::read_pod(in, name_len)) {
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (static_cast<std::uint32_t>(in.gcount()) != name_len) throw FormatError("truncated file while reading name");
    const auto rank = io::read_exact<std::uint32_t>(in, "rank");
    Shape shape(rank);
    for (auto& e : shape) e = io::read_exact<std::uint32_t>(in, "extent");
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = io::read_exact<double>(in, "payload");
    out.push_back(Parameter<double>{std::move(name), Array<double>(shape, std::move(data)), true});
  }
  return out;
}

inline std::vector<Parameter<double>> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return read_checkpoint(in);
}

/// Copies matching records into `set`; every parameter of the set must be
/// present with the same shape.
template <std::floating_point T>
void assign_from(ParameterSet<T>& set, const std::vector<Parameter<double>>& records) {
  std::map<std::string, const Parameter<double>*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& p : set) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->value.shape() != p.value.shape())
      throw FormatError("checkpoint shape mismatch for '" + p.name + "'");
    p.value = it->second->value.template cast<T>();
  }
}

}  // namespace lomix
