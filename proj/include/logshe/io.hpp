#pragma once

#include "logshe/effects.hpp"
#include "logshe/inference.hpp"
#include "logshe/ml.hpp"
#include "logshe/model.hpp"

#include <json.hpp>

#include <string>

namespace logshe {

using json = nlohmann::json;

// Dataset CSV: header y,z1..zK; weights travel separately
void write_dataset_csv(const std::string& path, const Dataset& data);
Dataset read_dataset_csv(const std::string& path, WeightMatrix W,
                         std::optional<WeightMatrix> W_star = std::nullopt);

json dataset_to_json(const Dataset& data);
Dataset dataset_from_json(const json& j);

json moment_set_to_json(const MomentSet& m);
json ml_fit_to_json(const MLFit& fit);
json gmm_fit_to_json(const GmmFit& fit);
json test_result_to_json(const TestResult& t);

void write_effects_csv(const std::string& path, const std::vector<std::string>& names,
                       const std::vector<EffectTriple>& effects);

std::uint64_t content_hash(const std::string& bytes);
std::string hash_hex(std::uint64_t h);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

} // namespace logshe
