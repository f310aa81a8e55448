#pragma once

#include <string>
#include <vector>

#include "heapsieve/alloc_model.hpp"

namespace heapsieve {

/// One bracket per block in address order, e.g. "[A:32][F:96]". Mapped
/// blocks, if any, follow after a "mapped:" marker.
std::string render_ascii(const std::vector<BlockView>& snapshot);

/// Horizontal strip, one pixel per alignment unit, capped at 4096 px with an
/// elision marker. Output bytes are deterministic for a given snapshot.
std::string render_svg(const std::vector<BlockView>& snapshot, const AllocatorConfig& cfg);

}  // namespace heapsieve
