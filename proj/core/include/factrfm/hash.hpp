#pragma once

#include <string>

namespace factrfm {

/// SHA-1 of the raw bytes, lowercase hex.
std::string sha1_hex(const std::string& bytes);

/// Git blob hash: SHA-1 of "blob <size>\0<content>". Used by run manifests
/// to fingerprint input files.
std::string git_blob_sha1(const std::string& content);
std::string git_blob_sha1_file(const std::string& path);

}  // namespace factrfm
