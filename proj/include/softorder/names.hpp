#pragma once

#include "softorder/model.hpp"

#include <string>

namespace softorder {

std::string to_string(LayerKind k);
std::string to_string(Activation a);
std::string to_string(EncoderKind k);
std::string to_string(DecoderKind k);
std::string to_string(OrderingMode m);
std::string to_string(GateKind g);

LayerKind layer_kind_from(const std::string& s);
Activation activation_from(const std::string& s);
EncoderKind encoder_kind_from(const std::string& s);
DecoderKind decoder_kind_from(const std::string& s);
OrderingMode ordering_mode_from(const std::string& s);
GateKind gate_kind_from(const std::string& s);

} // namespace softorder
