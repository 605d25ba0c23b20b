#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lfit/layers.hpp"

namespace lfit {

/// Per-channel z-scoring with population statistics fitted on training rows.
class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(std::vector<std::string> channels, std::vector<Scalar> mean, std::vector<Scalar> stdev);

  /// Columns of `rows` correspond to `channels`. A constant column raises a
  /// DataError naming the channel.
  static Standardizer fit(const std::vector<std::string>& channels, const Matrix& rows);

  Scalar transform(Index channel, Scalar value) const { return (value - mean_[channel]) / stdev_[channel]; }
  Scalar invert(Index channel, Scalar value) const { return value * stdev_[channel] + mean_[channel]; }

  Index index_of(const std::string& channel) const;
  Index size() const { return static_cast<Index>(channels_.size()); }
  const std::vector<std::string>& channels() const { return channels_; }
  const std::vector<Scalar>& mean() const { return mean_; }
  const std::vector<Scalar>& stdev() const { return stdev_; }

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> channels_;
  std::vector<Scalar> mean_;
  std::vector<Scalar> stdev_;
};

}  // namespace lfit
