#include "depo/vocab.hpp"

#include <stdexcept>

namespace depo {
namespace {

std::vector<std::string> core_symbols() {
  std::vector<std::string> s = {
      "<pad>", "<bos>", "<eot>", "<eos>", "<instr>", "<obs>", "<agent>",
      // action verbs
      "move", "pickup", "drop", "noop", "search", "click", "buy", "back",
      // directions
      "north", "south", "east", "west",
      // grid vocabulary
      "goto", "at", "hold", "none", "nothing", "happened",
      "red", "green", "blue", "yellow", "purple", "grey",
      "ball", "key", "box",
      // shop vocabulary
      "shirt", "shoe", "mug", "lamp", "bag", "hat",
      "small", "medium", "large", "cheap", "mid", "pricey",
      "page", "home", "results", "view", "find", "empty",
      // thought words
      "i", "see", "the", "is", "it", "think", "will", "so", "now", "go",
      "target", "near", "far", "explore", "maybe", "should", "try", "going",
      "not", "sure", "hmm", "take", "this", "on", "check", "matches",
      "item", "wrong", "need", "look", ";", "done", "let", "me", "a", "for",
      "here", "visible", "can", "good", "am",
  };
  for (int i = 0; i <= 9; ++i) s.push_back("x" + std::to_string(i));
  for (int i = 0; i <= 9; ++i) s.push_back("y" + std::to_string(i));
  for (int i = 0; i <= 9; ++i) s.push_back("e" + std::to_string(i));
  for (int i = 1; i <= 9; ++i) s.push_back("w" + std::to_string(i));
  for (int i = 0; i <= 9; ++i) s.push_back("n" + std::to_string(i));
  for (int i = 1; i <= 9; ++i) s.push_back("s" + std::to_string(i));
  for (int i = 0; i < 16; ++i) s.push_back("item" + std::to_string(i));
  return s;
}

}  // namespace

Vocabulary::Vocabulary(int size) : symbols_(core_symbols()) {
  core_size_ = static_cast<int>(symbols_.size());
  if (size < core_size_) {
    throw std::invalid_argument("vocabulary size " + std::to_string(size) +
                                " is smaller than the " + std::to_string(core_size_) +
                                " core symbols");
  }
  for (int i = core_size_; i < size; ++i) symbols_.push_back("<unused_" + std::to_string(i) + ">");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const bool inserted = index_.emplace(symbols_[i], static_cast<TokenId>(i)).second;
    if (!inserted) throw std::logic_error("duplicate vocabulary symbol " + symbols_[i]);
  }
}

TokenId Vocabulary::id(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) throw std::out_of_range("unknown token symbol '" + std::string(symbol) + "'");
  return it->second;
}

bool Vocabulary::contains(std::string_view symbol) const {
  return index_.contains(std::string(symbol));
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (!valid(id)) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return symbols_[static_cast<std::size_t>(id)];
}

Tokens Vocabulary::encode(std::initializer_list<std::string_view> symbols) const {
  Tokens out;
  out.reserve(symbols.size());
  for (auto s : symbols) out.push_back(id(s));
  return out;
}

std::string Vocabulary::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (auto t : tokens) {
    if (!out.empty()) out += ' ';
    out += valid(t) ? symbols_[static_cast<std::size_t>(t)] : "<?>";
  }
  return out;
}

const Vocabulary& vocab() {
  static const Vocabulary v(Vocabulary::kDefaultSize);
  return v;
}

}  // namespace depo
