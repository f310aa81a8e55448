#include "heapsieve/render.hpp"

#include <cstdio>

namespace heapsieve {

std::string render_ascii(const std::vector<BlockView>& snapshot) {
  std::string out;
  bool mapped_started = false;
  for (const auto& b : snapshot) {
    if (b.region == Region::Mapped && !mapped_started) {
      if (!out.empty()) out += ' ';
      out += "mapped:";
      mapped_started = true;
    }
    char buf[48];
    std::snprintf(buf, sizeof(buf), "[%c:%llu]",
                  b.state == BlockState::Allocated ? 'A' : 'F',
                  static_cast<unsigned long long>(b.footprint));
    out += buf;
  }
  if (out.empty()) out = "(empty heap)";
  out += '\n';
  return out;
}

std::string render_svg(const std::vector<BlockView>& snapshot,
                       const AllocatorConfig& cfg) {
  constexpr uint64_t kMaxWidth = 4096;
  const uint64_t unit = cfg.alignment ? cfg.alignment : 1;

  // Lay blocks out first so the svg element can carry the final width.
  struct Rect {
    uint64_t x, w;
    bool allocated;
    uint64_t offset, footprint;
  };
  std::vector<Rect> rects;
  uint64_t cursor = 0;
  bool elided = false;
  bool mapped_started = false;
  for (const auto& b : snapshot) {
    if (b.region == Region::Mapped && !mapped_started) {
      cursor += 8;  // visual gap before the mapped region
      mapped_started = true;
    }
    uint64_t w = b.footprint / unit;
    if (w == 0) w = 1;
    if (cursor + w > kMaxWidth) {
      elided = true;
      break;
    }
    rects.push_back(Rect{cursor, w, b.state == BlockState::Allocated, b.offset,
                         b.footprint});
    cursor += w;
    if (b.region == Region::Mapped) cursor += 2;
  }
  uint64_t width = cursor + (elided ? 16 : 0);
  if (width == 0) width = 1;

  char buf[256];
  std::string svg;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%llu\" "
                "height=\"40\">\n",
                static_cast<unsigned long long>(width));
  svg += buf;
  for (const auto& r : rects) {
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%llu\" y=\"4\" width=\"%llu\" height=\"32\" "
                  "fill=\"%s\"><title>%c offset=%llu footprint=%llu</title></rect>\n",
                  static_cast<unsigned long long>(r.x),
                  static_cast<unsigned long long>(r.w),
                  r.allocated ? "#d9534f" : "#5cb85c", r.allocated ? 'A' : 'F',
                  static_cast<unsigned long long>(r.offset),
                  static_cast<unsigned long long>(r.footprint));
    svg += buf;
  }
  if (elided) {
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%llu\" y=\"26\" font-size=\"16\">&#8230;</text>\n",
                  static_cast<unsigned long long>(cursor + 4));
    svg += buf;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace heapsieve
