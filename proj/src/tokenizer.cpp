#include "tokenizer.hpp"

#include <sstream>

namespace evqa {

namespace {

const char* kWords[] = {
    "<pad>", "<eos>",
    // question grammar
    "is", "a", "the", "an", "image", "quality", "sufficient", "visible", "can", "target", "be",
    "measured", "which", "layout", "shown", "how", "should", "view", "shift", "to", "center",
    "and", "at", "on", "row", "column", "of", "this", "it", "in", "with", "what", "does", "show",
    "where",
    // colors and shapes
    "red", "green", "blue", "yellow", "circle", "square", "triangle", "cross",
    // layout families
    "solo", "scatter",
    // answers
    "yes", "no", "left", "right", "up", "down", "centered", "stay",
    // quality tiers
    "clean", "noisy", "occluded", "good", "poor",
    // grid coordinates
    "zero", "one", "two", "three", "four", "five",
    // caption vocabulary
    "contains", "near", "placed", "area", "region", "grid", "cell", "shape", "color", "object",
    "objects", "picture", "scene", "background", "bright", "dark", "small", "large", "top",
    "bottom", "middle", "side", "corner", "edge", "band", "noise", "artifact", "level", "tier",
    "measure", "feasible", "measurement", "estimate", "position", "direction", "move", "toward",
    "away", "from", "here", "there", "present", "absent", "partly", "fully", "clearly", "barely",
    "over", "under", "not",
    // misc
    "also", "very", "quite", "rather", "looks", "appears", "seems", "has", "have", "may",
    "might", "must",
};

}  // namespace

Tokenizer::Tokenizer() {
  for (const char* w : kWords) {
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.emplace_back(w);
  }
}

const Tokenizer& Tokenizer::instance() {
  static const Tokenizer tok;
  return tok;
}

int Tokenizer::id_of(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw InputError("unknown token '" + word + "'");
  return it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || id >= static_cast<int>(words_.size()))
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(words_.size()));
  return words_[static_cast<size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::vector<int> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(id_of(w));
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == eos_id()) break;
    if (id == pad_id()) continue;
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

}  // namespace evqa
