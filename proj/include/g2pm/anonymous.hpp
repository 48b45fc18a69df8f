#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "g2pm/graph.hpp"

namespace g2pm::tok {

using AnonymousSeq = std::vector<std::uint8_t>;

// Replaces every node by the order of its first appearance: [1,2,3,1,4,3] ->
// [0,1,2,0,3,2]. Two walks with the same shape get the same sequence no matter
// how the graph is labelled.
AnonymousSeq anonymous_encode(std::span<const graph::NodeId> walk);

inline constexpr std::size_t kMaxAnonymousLength = 9;

// All anonymous sequences (restricted-growth strings) of a given length, in
// lexicographic order. Sizes follow the Bell numbers: 1, 2, 5, 15, 52, ...
class AnonymousVocab {
 public:
  // Throws ConfigError for seq_len == 0 or seq_len > kMaxAnonymousLength.
  explicit AnonymousVocab(std::size_t seq_len);

  std::size_t seq_len() const { return seq_len_; }
  std::size_t size() const { return sequences_.size(); }
  const std::vector<AnonymousSeq>& sequences() const { return sequences_; }
  // Throws ContractError when `seq` is not a valid sequence of this length.
  std::size_t index_of(std::span<const std::uint8_t> seq) const;

 private:
  static std::uint64_t key(std::span<const std::uint8_t> seq);

  std::size_t seq_len_;
  std::vector<AnonymousSeq> sequences_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

}  // namespace g2pm::tok
