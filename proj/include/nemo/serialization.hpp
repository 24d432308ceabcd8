#pragma once

#include <initializer_list>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "nemo/kernels.hpp"
#include "nemo/model.hpp"
#include "nemo/sampler.hpp"

namespace nemo {

using nlohmann::json;

/// Throws ConfigError if `j` is not an object or has a key outside `allowed`.
void require_known_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& context);

json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

void to_json(json& j, const SEKernelParams& p);
void from_json(const json& j, SEKernelParams& p);
void to_json(json& j, const HyperpriorConfig& c);
void from_json(const json& j, HyperpriorConfig& c);
void to_json(json& j, const JitterPolicy& c);
void from_json(const json& j, JitterPolicy& c);
void to_json(json& j, const PriorConfig& c);
void from_json(const json& j, PriorConfig& c);
void to_json(json& j, const ChainConfig& c);
void from_json(const json& j, ChainConfig& c);
void to_json(json& j, const SimulationConfig& c);
void from_json(const json& j, SimulationConfig& c);
void to_json(json& j, const FFAState& s);
void from_json(const json& j, FFAState& s);
void to_json(json& j, const AdaptiveStep& s);
void from_json(const json& j, AdaptiveStep& s);
void to_json(json& j, const AcceptanceStats& s);
void from_json(const json& j, AcceptanceStats& s);
void to_json(json& j, const HyperAdapters& a);
void from_json(const json& j, HyperAdapters& a);

}  // namespace nemo
