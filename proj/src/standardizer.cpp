#include "lfit/standardizer.hpp"

#include <cmath>

namespace lfit {

Standardizer::Standardizer(std::vector<std::string> channels, std::vector<Scalar> mean, std::vector<Scalar> stdev)
    : channels_(std::move(channels)), mean_(std::move(mean)), stdev_(std::move(stdev)) {
  if (mean_.size() != channels_.size() || stdev_.size() != channels_.size()) {
    throw ContractError("standardizer: channel/statistic count mismatch");
  }
  for (std::size_t j = 0; j < stdev_.size(); ++j) {
    if (!(stdev_[j] > 0)) throw DataError("channel '" + channels_[j] + "' has zero spread");
  }
}

Standardizer Standardizer::fit(const std::vector<std::string>& channels, const Matrix& rows) {
  if (static_cast<Index>(channels.size()) != rows.cols()) throw ContractError("standardizer: column count mismatch");
  if (rows.rows() == 0) throw DataError("standardizer: training split is empty");
  std::vector<Scalar> mean(channels.size());
  std::vector<Scalar> stdev(channels.size());
  const Scalar n = static_cast<Scalar>(rows.rows());
  for (Index j = 0; j < rows.cols(); ++j) {
    const Scalar mu = rows.col(j).sum() / n;
    const Scalar var = (rows.col(j).array() - mu).square().sum() / n;
    if (!(var > 0)) throw DataError("channel '" + channels[j] + "' is constant on the training split");
    mean[j] = mu;
    stdev[j] = std::sqrt(var);
  }
  return Standardizer(channels, std::move(mean), std::move(stdev));
}

Index Standardizer::index_of(const std::string& channel) const {
  for (std::size_t j = 0; j < channels_.size(); ++j)
    if (channels_[j] == channel) return static_cast<Index>(j);
  throw ContractError("standardizer has no channel '" + channel + "'");
}

nlohmann::json Standardizer::to_json() const {
  return {{"channels", channels_}, {"mean", mean_}, {"stdev", stdev_}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  return Standardizer(j.at("channels").get<std::vector<std::string>>(), j.at("mean").get<std::vector<Scalar>>(),
                      j.at("stdev").get<std::vector<Scalar>>());
}

}  // namespace lfit
