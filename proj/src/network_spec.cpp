#include "dms/network_spec.hpp"

#include <string>

#include "dms/errors.hpp"

namespace dms {

std::size_t NetworkSpec::conv_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.kind == LayerKind::DilatedConv ? 1 : 0;
  return n;
}

int NetworkSpec::conv_input_channels(std::size_t conv_index) const {
  int current = in_channels;
  int dense_total = in_channels;
  std::size_t seen = 0;
  for (const auto& l : layers) {
    if (l.kind != LayerKind::DilatedConv) continue;
    if (seen == conv_index) return l.dense_input ? dense_total : current;
    current = l.width;
    dense_total += l.width;
    ++seen;
  }
  if (conv_index == seen) return dense_classifier ? dense_total : current;
  throw ShapeError("conv index " + std::to_string(conv_index) + " out of range");
}

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::Dilated6:
      return "Dilated6";
    case Architecture::DenseDilated6:
      return "DenseDilated6";
    case Architecture::Dilated6Pooling:
      return "Dilated6Pooling";
    case Architecture::Dilated8Pooling:
      return "Dilated8Pooling";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  for (auto a : {Architecture::Dilated6, Architecture::DenseDilated6, Architecture::Dilated6Pooling,
                 Architecture::Dilated8Pooling}) {
    if (architecture_name(a) == name) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

}  // namespace dms
