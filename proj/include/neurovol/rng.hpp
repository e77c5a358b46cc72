/*
 * NeuroVol
 *
 * Copyright 2026 The NeuroVol Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>

namespace neurovol {

/// SplitMix64 step; the usual finalizer-quality 64-bit mix.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based seed splitting: derives an independent stream seed from a
/// base seed and a stream counter. Modules never share generator state; each
/// consumer derives its own seed from (base, stream[, substream]).
inline std::uint64_t split_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ splitmix64(stream * 0xA24BAED4963EE407ull + 1));
}

inline std::uint64_t split_seed(std::uint64_t base, std::uint64_t stream,
                                std::uint64_t substream) {
  return split_seed(split_seed(base, stream), substream);
}

}  // namespace neurovol
