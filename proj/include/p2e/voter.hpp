#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "p2e/nncore.hpp"

namespace p2e {

/// One vote (a class index) per member.
struct VoteBallot {
  std::vector<std::uint32_t> votes;
  std::size_t n_classes = 0;
};

/// Class with the most votes; ties go to the lowest class index.
inline std::uint32_t max_vote(const VoteBallot& ballot) {
  require(!ballot.votes.empty(), ErrorCode::config, "empty ballot");
  require(ballot.n_classes >= 1, ErrorCode::config, "ballot needs at least one class");
  std::vector<std::size_t> counts(ballot.n_classes, 0);
  for (const auto v : ballot.votes) {
    require(v < ballot.n_classes, ErrorCode::config, "vote for a class outside the ballot");
    ++counts[v];
  }
  return static_cast<std::uint32_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

/// Votes within each node, then votes over the node winners.
inline std::uint32_t hierarchical_vote(std::span<const VoteBallot> nodes) {
  require(!nodes.empty(), ErrorCode::config, "no node ballots");
  VoteBallot top{{}, nodes.front().n_classes};
  for (const auto& node : nodes) {
    require(node.n_classes == top.n_classes, ErrorCode::config, "nodes disagree on the class count");
    top.votes.push_back(max_vote(node));
  }
  return max_vote(top);
}

enum class VoteMode {
  hard,  // each member votes for its argmax class
  soft,  // class with the largest summed probability
};

struct EnsembleEvaluation {
  double accuracy = 0.0;
  std::vector<std::uint32_t> predictions;
  std::vector<double> member_accuracies;
};

/// Per-sample ensemble predictions of `members` on `inputs`.
inline std::vector<std::uint32_t> ensemble_predict(std::span<const Model> members, const Tensor& inputs,
                                                   VoteMode mode = VoteMode::hard) {
  require(!members.empty(), ErrorCode::config, "ensemble has no members");
  const std::size_t n_classes = members.front().n_classes();
  std::vector<Tensor> outputs;
  for (const auto& m : members) {
    require(m.n_classes() == n_classes, ErrorCode::shape, "ensemble members disagree on the class count");
    outputs.push_back(forward(m, inputs));
  }
  const std::size_t n = inputs.rows();
  std::vector<std::uint32_t> out(n);
  if (mode == VoteMode::soft) {
    Tensor sum(Shape{n, n_classes});
    for (const auto& o : outputs) {
      for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] += o.data[i];
    }
    return argmax_rows(sum);
  }
  std::vector<std::vector<std::uint32_t>> votes;
  for (const auto& o : outputs) votes.push_back(argmax_rows(o));
  VoteBallot ballot{std::vector<std::uint32_t>(members.size()), n_classes};
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t m = 0; m < members.size(); ++m) ballot.votes[m] = votes[m][s];
    out[s] = max_vote(ballot);
  }
  return out;
}

inline EnsembleEvaluation evaluate_ensemble(std::span<const Model> members, const Tensor& inputs,
                                            std::span<const std::uint32_t> labels, VoteMode mode = VoteMode::hard) {
  require(inputs.rows() == labels.size() && !labels.empty(), ErrorCode::config, "evaluation split is empty");
  EnsembleEvaluation out;
  out.predictions = ensemble_predict(members, inputs, mode);
  out.accuracy = accuracy_of(out.predictions, labels);
  for (const auto& m : members) out.member_accuracies.push_back(accuracy(m, inputs, labels));
  return out;
}

}  // namespace p2e
