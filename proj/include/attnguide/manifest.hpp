#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <openssl/opensslv.h>
#include <png.h>

#include "json.hpp"

#include "attnguide/codec.hpp"
#include "attnguide/error.hpp"

namespace attnguide {

inline constexpr const char* kVersion = "0.1.0";

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr)) throw IoError("SHA-256 failed");
  std::string hex;
  char buf[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

/// Hash of the canonical (key-sorted, compact) JSON form of the flag set.
inline std::string config_hash(const nlohmann::json& flags) { return sha256_hex(flags.dump()); }

struct Manifest {
  std::string command;
  std::vector<std::string> argv;  // arguments after the program name
  nlohmann::json flags = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  std::vector<std::string> outputs;
  std::string status = "ok";
  std::optional<std::string> error_category;
  std::optional<std::string> error_message;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tool"] = "attnguide";
    j["command"] = command;
    j["argv"] = argv;
    j["flags"] = flags;
    j["config_hash"] = config_hash(flags);
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    j["versions"] = {{"attnguide", kVersion}, {"libpng", PNG_LIBPNG_VER_STRING}, {"openssl", OPENSSL_VERSION_TEXT},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    j["outputs"] = outputs;
    j["status"] = status;
    if (error_category) j["error"] = {{"category", *error_category}, {"message", error_message.value_or("")}};
    return j;
  }
};

inline void write_manifest(const std::string& path, const Manifest& m) { write_file(path, m.to_json().dump(2) + "\n"); }

}  // namespace attnguide
