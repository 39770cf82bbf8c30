#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace evqa {

// Whitespace tokenizer over a fixed word list. The list is part of the model
// contract: ids are stable, <pad>=0 and <eos>=1, and any word outside the
// list is rejected rather than mapped to an unknown bucket.
class Tokenizer {
 public:
  static const Tokenizer& instance();

  int64_t size() const { return static_cast<int64_t>(words_.size()); }
  int pad_id() const { return 0; }
  int eos_id() const { return 1; }

  bool has(const std::string& word) const { return ids_.count(word) != 0; }
  int id_of(const std::string& word) const;
  const std::string& word(int id) const;

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;  // skips <pad>, stops at <eos>

 private:
  Tokenizer();
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace evqa
