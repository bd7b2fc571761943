#pragma once

#include <Eigen/Core>
#include <boost/version.hpp>
#include <nlohmann/json.hpp>
#include <openssl/opensslv.h>

#include <string>

namespace covarcast {

inline constexpr const char* kVersion = "0.1.0";

/// Library and compiler versions recorded in run manifests.
inline nlohmann::json versions_json() {
  return {{"covarcast", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"openssl", OPENSSL_VERSION_TEXT},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

}  // namespace covarcast
