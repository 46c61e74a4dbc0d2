// Copyright 2026 The orthotune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

namespace orthotune {

// Hex SHA-1 of "blob <size>\0" + content, the way git names file contents.
std::string git_blob_hash(std::string_view content);

}  // namespace orthotune
