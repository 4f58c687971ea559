#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "dcfmn/tensor.hpp"

namespace dcfmn {

/// Named parameters keyed by dotted path ("blocks.3.dsmu.mix1x1.weight").
/// Iteration order is lexicographic by path.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor4<T>>;

  bool contains(const std::string& path) const { return entries_.contains(path); }

  const Tensor4<T>& at(const std::string& path) const {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ConfigError("no parameter named '" + path + "'");
    return it->second;
  }
  Tensor4<T>& at(const std::string& path) {
    auto it = entries_.find(path);
    if (it == entries_.end()) throw ConfigError("no parameter named '" + path + "'");
    return it->second;
  }

  void set(const std::string& path, Tensor4<T> value) { entries_[path] = std::move(value); }
  bool erase(const std::string& path) { return entries_.erase(path) > 0; }

  // Adds `value` into the entry at `path`, creating it if absent.
  void accumulate(const std::string& path, const Tensor4<T>& value) {
    auto it = entries_.find(path);
    if (it == entries_.end()) {
      entries_.emplace(path, value);
      return;
    }
    require_same_shape(it->second, value, path.c_str());
    for (std::size_t i = 0; i < value.size(); ++i) it->second[i] += value[i];
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }
  typename Map::iterator begin() { return entries_.begin(); }
  typename Map::iterator end() { return entries_.end(); }

  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [k, t] : entries_) out.entries_.emplace(k, Tensor4<T>(t.shape()));
    return out;
  }

  // True when both stores have the same paths with the same extents.
  template <typename U>
  bool aligned_with(const ParamStore<U>& other) const {
    if (size() != other.size()) return false;
    auto it = other.begin();
    for (const auto& [k, t] : entries_) {
      if (it->first != k || it->second.shape() != t.shape()) return false;
      ++it;
    }
    return true;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [k, t] : entries_) out.set(k, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  Map entries_;
};

}  // namespace dcfmn
