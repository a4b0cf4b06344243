// Copyright 2026 The focrefine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>

#include "focrefine/samlite/image.hpp"

namespace focrefine::serve {

/// Row-major run lengths, alternating, starting with the zero-run (which may
/// be 0), as comma-separated decimals. The runs sum to height * width.
std::string encode_rle(const BinaryMask& m);

/// Inverse of encode_rle; rejects malformed text or a total that does not
/// match height * width.
BinaryMask decode_rle(const std::string& rle, int height, int width);

}  // namespace focrefine::serve
