#include "lfit/selection.hpp"

namespace lfit {

VariableSelector::VariableSelector(Index variables, Index d_model, bool uses_context, Scalar dropout,
                                   std::mt19937_64& rng)
    : uses_context_(uses_context) {
  if (variables < 1) throw ConfigError("variable selection needs at least one channel");
  per_variable_.reserve(variables);
  for (Index j = 0; j < variables; ++j) per_variable_.emplace_back(d_model, d_model, d_model, 0, dropout, rng);
  weight_grn_ = Grn(variables * d_model, d_model, variables, uses_context ? d_model : 0, dropout, rng);
}

Selection VariableSelector::select(Graph& g, const std::vector<Tensor>& inputs,
                                   const std::optional<Tensor>& context) const {
  if (static_cast<Index>(inputs.size()) != variables()) {
    throw ContractError("select_variables: expected " + std::to_string(variables()) + " channels, got " +
                        std::to_string(inputs.size()));
  }
  if (context.has_value() != uses_context_) {
    throw ContractError(uses_context_ ? "select_variables: selector requires a context"
                                      : "select_variables: selector takes no context");
  }
  const Tensor flat = concat_cols(inputs);
  const Tensor weights = softmax(weight_grn_.forward(g, flat, context), -1);

  Tensor combined;
  for (Index j = 0; j < variables(); ++j) {
    const Tensor filtered = per_variable_[j].forward(g, inputs[j]);
    const Tensor term = mul_col(filtered, slice_cols(weights, j, 1));
    combined = (j == 0) ? term : add(combined, term);
  }
  return {combined, weights};
}

void VariableSelector::collect(const std::string& prefix, ParameterList& out) {
  for (std::size_t j = 0; j < per_variable_.size(); ++j) per_variable_[j].collect(prefix + ".var" + std::to_string(j), out);
  weight_grn_.collect(prefix + ".weights", out);
}

PriorKnowledgeEncoder::PriorKnowledgeEncoder(Index static_channels, Index d_model, Scalar dropout,
                                             std::mt19937_64& rng) {
  if (static_channels < 1) {
    throw ConfigError("prior-knowledge encoder needs at least one static channel");
  }
  selector_ = VariableSelector(static_channels, d_model, false, dropout, rng);
  selection_grn_ = Grn(d_model, d_model, d_model, 0, dropout, rng);
  cell_grn_ = Grn(d_model, d_model, d_model, 0, dropout, rng);
  hidden_grn_ = Grn(d_model, d_model, d_model, 0, dropout, rng);
  enrichment_grn_ = Grn(d_model, d_model, d_model, 0, dropout, rng);
}

StaticContexts PriorKnowledgeEncoder::encode(Graph& g, const std::vector<Tensor>& static_embeddings) const {
  if (static_embeddings.empty()) throw ConfigError("encode_prior_knowledge: no static channels");
  const Selection sel = selector_.select(g, static_embeddings, std::nullopt);
  return {selection_grn_.forward(g, sel.combined), cell_grn_.forward(g, sel.combined),
          hidden_grn_.forward(g, sel.combined), enrichment_grn_.forward(g, sel.combined), sel.weights};
}

void PriorKnowledgeEncoder::collect(const std::string& prefix, ParameterList& out) {
  selector_.collect(prefix + ".selector", out);
  selection_grn_.collect(prefix + ".cs", out);
  cell_grn_.collect(prefix + ".cc", out);
  hidden_grn_.collect(prefix + ".ch", out);
  enrichment_grn_.collect(prefix + ".ce", out);
}

}  // namespace lfit
