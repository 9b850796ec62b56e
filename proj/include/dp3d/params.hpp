#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dp3d/error.hpp"
#include "dp3d/tape.hpp"

namespace dp3d {

// Leaves registered on a tape, one per parameter; graph builders look them
// up by name.
using ParamLeaves = std::map<std::string, ad::Value>;

// Named tensors with trainable/frozen flags. Entry order is insertion order
// and fixed after construction, which keeps optimizer iteration and
// serialization deterministic.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Eigen::MatrixXd value;
    bool trainable = true;
    bool weight_decay = true;  // L2 pull; off for shape/segmentation tensors
  };

  void add(const std::string& name, Eigen::MatrixXd value, bool trainable = true,
           bool weight_decay = true) {
    if (index_.count(name)) throw Error("param_duplicate", "parameter already registered: " + name);
    index_[name] = int(entries_.size());
    entries_.push_back({name, std::move(value), trainable, weight_decay});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Eigen::MatrixXd& at(const std::string& name) const {
    return entries_[size_t(find(name))].value;
  }
  Eigen::MatrixXd& at(const std::string& name) { return entries_[size_t(find(name))].value; }

  bool trainable(const std::string& name) const { return entries_[size_t(find(name))].trainable; }
  void set_trainable(const std::string& name, bool flag) {
    entries_[size_t(find(name))].trainable = flag;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  int find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("param_missing", "no such parameter: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
};

}  // namespace dp3d
