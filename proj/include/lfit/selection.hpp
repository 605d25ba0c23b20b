#pragma once

#include <optional>
#include <vector>

#include "lfit/layers.hpp"

namespace lfit {

struct Selection {
  Tensor combined;  ///< [N x d_m]
  Tensor weights;   ///< [N x n_vars], rows on the simplex
};

/// Variable selection network. Each channel is filtered by its own GRN; a
/// weight GRN over the flattened raw embeddings (plus optional context)
/// produces softmax weights that mix the filtered channels.
class VariableSelector {
 public:
  VariableSelector() = default;
  VariableSelector(Index variables, Index d_model, bool uses_context, Scalar dropout, std::mt19937_64& rng);

  /// `inputs` holds one [N x d_m] embedding per channel; `context` is [N x d_m].
  Selection select(Graph& g, const std::vector<Tensor>& inputs, const std::optional<Tensor>& context) const;

  Index variables() const { return static_cast<Index>(per_variable_.size()); }
  bool uses_context() const { return uses_context_; }

  Grn& variable_grn(Index j) { return per_variable_.at(j); }
  Grn& weight_grn() { return weight_grn_; }
  void collect(const std::string& prefix, ParameterList& out);

 private:
  std::vector<Grn> per_variable_;
  Grn weight_grn_;
  bool uses_context_ = false;
};

struct StaticContexts {
  Tensor selection;   ///< c_s, guides time-dependent variable selection
  Tensor cell;        ///< c_c, initial LSTM cell state
  Tensor hidden;      ///< c_h, initial LSTM hidden state
  Tensor enrichment;  ///< c_e, conditions temporal enrichment
  Tensor weights;     ///< [B x n_static] static selection weights
};

/// Encodes static (prior-knowledge) embeddings into the four context vectors.
class PriorKnowledgeEncoder {
 public:
  PriorKnowledgeEncoder() = default;
  PriorKnowledgeEncoder(Index static_channels, Index d_model, Scalar dropout, std::mt19937_64& rng);

  StaticContexts encode(Graph& g, const std::vector<Tensor>& static_embeddings) const;

  Index channels() const { return selector_.variables(); }
  VariableSelector& selector() { return selector_; }
  void collect(const std::string& prefix, ParameterList& out);

 private:
  VariableSelector selector_;
  Grn selection_grn_;
  Grn cell_grn_;
  Grn hidden_grn_;
  Grn enrichment_grn_;
};

}  // namespace lfit
