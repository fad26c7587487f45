// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/param_store.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "gsnerf/errors.hpp"

namespace gsnerf {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  write_u32(os, static_cast<uint32_t>(t.ndim()));
  for (int64_t d : t.shape) write_u64(os, static_cast<uint64_t>(d));
  for (T v : t.data) {
    const double d = static_cast<double>(v);
    os.write(reinterpret_cast<const char*>(&d), 8);
  }
}

template <class T>
Tensor<T> read_tensor(std::istream& is, const std::string& path) {
  const uint32_t nd = read_u32(is);
  if (nd > 8) throw DataError("checkpoint corrupt (rank) in " + path);
  std::vector<int64_t> shape(nd);
  for (auto& d : shape) d = static_cast<int64_t>(read_u64(is));
  Tensor<T> t(shape);
  for (auto& v : t.data) {
    double d = 0;
    is.read(reinterpret_cast<char*>(&d), 8);
    v = static_cast<T>(d);
  }
  if (!is) throw DataError("checkpoint truncated: " + path);
  return t;
}

}  // namespace

template <class T>
void ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (slots_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  Slot s;
  s.grad = Tensor<T>(init.shape);
  s.adam_m = Tensor<T>(init.shape);
  s.adam_v = Tensor<T>(init.shape);
  s.value = std::move(init);
  slots_.emplace(name, std::move(s));
}

template <class T>
Tensor<T>& ParamStore<T>::value(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return it->second.value;
}

template <class T>
const Tensor<T>& ParamStore<T>::value(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return it->second.value;
}

template <class T>
Tensor<T>& ParamStore<T>::grad(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return it->second.grad;
}

template <class T>
typename ParamStore<T>::Slot& ParamStore<T>::slot(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return it->second;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, s] : slots_) s.grad.fill(T(0));
}

template <class T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(slots_.size());
  for (const auto& [name, s] : slots_) out.push_back(name);
  return out;
}

template <class T>
int64_t ParamStore<T>::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, s] : slots_) n += s.value.numel();
  return n;
}

template <class T>
void ParamStore<T>::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u64(os, static_cast<uint64_t>(step));
  write_u64(os, seed);
  write_u32(os, static_cast<uint32_t>(slots_.size()));
  for (const auto& [name, s] : slots_) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, s.value);
    write_tensor(os, s.adam_m);
    write_tensor(os, s.adam_v);
  }
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

template <class T>
void ParamStore<T>::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  const uint32_t version = read_u32(is);
  if (version != kVersion) throw DataError("unsupported checkpoint version in " + path);
  step = static_cast<int64_t>(read_u64(is));
  seed = read_u64(is);
  const uint32_t count = read_u32(is);
  std::map<std::string, Slot> loaded;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = read_u32(is);
    if (!is || len > 4096) throw DataError("checkpoint corrupt (name) in " + path);
    std::string name(len, '\0');
    is.read(name.data(), len);
    Slot s;
    s.value = read_tensor<T>(is, path);
    s.adam_m = read_tensor<T>(is, path);
    s.adam_v = read_tensor<T>(is, path);
    s.grad = Tensor<T>(s.value.shape);
    loaded.emplace(std::move(name), std::move(s));
  }
  slots_ = std::move(loaded);
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace gsnerf
