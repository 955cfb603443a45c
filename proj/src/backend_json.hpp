#pragma once

#include <filesystem>

#include <json.hpp>

#include "compressbench/backends.hpp"

namespace compressbench::detail {

// Relative archive paths resolve against base_dir.
BackendConfig backend_config_from_json(const nlohmann::json& doc,
                                       const std::filesystem::path& base_dir);
VerboseCompensationParams params_from_json(const nlohmann::json& doc);
nlohmann::json request_to_json(const CompletionRequest& request);
nlohmann::json response_to_json(const CompletionResponse& response);

}  // namespace compressbench::detail
