#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dms {

enum class Architecture { Dilated6, DenseDilated6, Dilated6Pooling, Dilated8Pooling };

enum class LayerKind { DilatedConv, MaxPool };

struct LayerSpec {
  LayerKind kind = LayerKind::DilatedConv;
  int kernel = 3;  // window size for pooling layers
  int rate = 1;
  int width = 0;  // output channels; 0 for pooling
  bool dense_input = false;  // consumes the network input plus every earlier conv output
};

/// Declarative description of one of the four resolution-preserving networks.
/// The 1x1 classifier is implicit and always last.
struct NetworkSpec {
  Architecture arch = Architecture::Dilated6;
  int in_channels = 0;
  int num_classes = 0;
  std::vector<LayerSpec> layers;
  bool dense_classifier = false;

  std::size_t conv_count() const;
  /// Channel count entering conv layer `conv_index`, or the classifier when
  /// conv_index == conv_count().
  int conv_input_channels(std::size_t conv_index) const;
};

std::string_view architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);

}  // namespace dms
