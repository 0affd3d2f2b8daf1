#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace depo {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

// Shared token vocabulary for instructions, observations, thoughts, actions
// and sentinels. Index assignment is fixed by the symbol table in vocab.cpp;
// the table is padded with <unused_k> symbols up to the requested size.
class Vocabulary {
 public:
  static constexpr int kDefaultSize = 256;

  explicit Vocabulary(int size = kDefaultSize);

  int size() const { return static_cast<int>(symbols_.size()); }
  // Number of symbols with a meaning; ids at or above are padding.
  int core_size() const { return core_size_; }

  TokenId id(std::string_view symbol) const;
  bool contains(std::string_view symbol) const;
  const std::string& symbol(TokenId id) const;
  bool valid(TokenId id) const { return id >= 0 && id < size(); }

  Tokens encode(std::initializer_list<std::string_view> symbols) const;
  std::string render(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  int core_size_ = 0;
};

// Process-wide default vocabulary (size 256).
const Vocabulary& vocab();

namespace tok {
// Sentinel and delimiter ids; stable because the symbol table starts with them.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEot = 2;  // end of thought
inline constexpr TokenId kEos = 3;  // end of step
inline constexpr TokenId kInstr = 4;
inline constexpr TokenId kObs = 5;
inline constexpr TokenId kAgent = 6;
}  // namespace tok

}  // namespace depo
