#include "g2pm/anonymous.hpp"

#include <algorithm>

#include "g2pm/error.hpp"

namespace g2pm::tok {

AnonymousSeq anonymous_encode(std::span<const graph::NodeId> walk) {
  AnonymousSeq out;
  out.reserve(walk.size());
  std::vector<graph::NodeId> seen;
  for (auto v : walk) {
    auto it = std::find(seen.begin(), seen.end(), v);
    if (it == seen.end()) {
      out.push_back(static_cast<std::uint8_t>(seen.size()));
      seen.push_back(v);
    } else {
      out.push_back(static_cast<std::uint8_t>(it - seen.begin()));
    }
  }
  return out;
}

namespace {

// Depth-first in increasing digit order yields lexicographic order.
void enumerate(AnonymousSeq& prefix, std::size_t len, std::uint8_t next_new,
               std::vector<AnonymousSeq>& out) {
  if (prefix.size() == len) {
    out.push_back(prefix);
    return;
  }
  for (std::uint8_t d = 0; d <= next_new; ++d) {
    prefix.push_back(d);
    enumerate(prefix, len, d == next_new ? static_cast<std::uint8_t>(next_new + 1) : next_new, out);
    prefix.pop_back();
  }
}

}  // namespace

AnonymousVocab::AnonymousVocab(std::size_t seq_len) : seq_len_(seq_len) {
  if (seq_len == 0 || seq_len > kMaxAnonymousLength) {
    throw ConfigError("anonymous walk length " + std::to_string(seq_len) + " outside [1, " +
                      std::to_string(kMaxAnonymousLength) + "]");
  }
  AnonymousSeq prefix;
  enumerate(prefix, seq_len, 0, sequences_);
  index_.reserve(sequences_.size());
  for (std::size_t i = 0; i < sequences_.size(); ++i) index_.emplace(key(sequences_[i]), i);
}

std::uint64_t AnonymousVocab::key(std::span<const std::uint8_t> seq) {
  std::uint64_t k = 0;
  for (auto d : seq) k = k * 16 + d;
  return k;
}

std::size_t AnonymousVocab::index_of(std::span<const std::uint8_t> seq) const {
  if (seq.size() != seq_len_) {
    throw ContractError("anonymous sequence of length " + std::to_string(seq.size()) +
                        " looked up in vocabulary of length " + std::to_string(seq_len_));
  }
  auto it = index_.find(key(seq));
  if (it == index_.end() || sequences_[it->second] != AnonymousSeq(seq.begin(), seq.end())) {
    throw ContractError("not a first-occurrence (anonymous) sequence");
  }
  return it->second;
}

}  // namespace g2pm::tok
