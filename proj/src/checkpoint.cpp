#include "softorder/model.hpp"
#include "softorder/names.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>

namespace softorder {

using nlohmann::json;

namespace {

constexpr const char* kMagic = "softorder-checkpoint";
constexpr int kVersion = 1;

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  std::vector<Scalar> data(t.array().data(), t.array().data() + t.size());
  j["data"] = data;
  return j;
}

Tensor tensor_from_json(const json& j) {
  std::vector<Index> shape = j.at("shape").get<std::vector<Index>>();
  std::vector<Scalar> data = j.at("data").get<std::vector<Scalar>>();
  ArrayXs a(static_cast<Index>(data.size()));
  for (size_t i = 0; i < data.size(); ++i) a[static_cast<Index>(i)] = data[i];
  return Tensor(std::move(shape), std::move(a));
}

json param_to_json(const NodePtr& p) {
  if (!p) return nullptr;
  json j = tensor_to_json(p->value);
  j["trainable"] = p->requires_grad;
  return j;
}

NodePtr param_from_json(const json& j) {
  if (j.is_null()) return nullptr;
  return leaf(tensor_from_json(j), j.at("trainable").get<bool>());
}

} // namespace

void save_checkpoint(const MultitaskModel& m, uint64_t seed, const std::string& path) {
  json j;
  j["magic"] = kMagic;
  j["version"] = kVersion;
  j["seed"] = seed;
  j["tasks"] = m.task_count;
  j["depth"] = m.depth;
  j["dropout_rate"] = m.dropout_rate;
  j["mode"] = to_string(m.ordering.mode);
  j["gate"] = to_string(m.ordering.gate);
  j["include_identity"] = m.ordering.include_identity;
  j["perms"] = m.ordering.perms;
  j["logits"] = m.ordering.logits ? param_to_json(m.ordering.logits) : json(nullptr);

  json core = json::array();
  for (const auto& l : m.core) {
    core.push_back({{"kind", to_string(l.kind)},
                    {"phi", to_string(l.phi)},
                    {"units", l.units},
                    {"W", param_to_json(l.W)},
                    {"b", param_to_json(l.b)}});
  }
  j["core"] = core;

  const bool enc_shared = m.encoders.size() > 1 && m.encoders[0].W &&
                          m.encoders[0].W == m.encoders[1].W;
  const bool dec_shared = m.decoders.size() > 1 && m.decoders[0].W &&
                          m.decoders[0].W == m.decoders[1].W;
  j["share_encoder"] = enc_shared;
  j["share_decoder"] = dec_shared;

  json encs = json::array();
  for (const auto& e : m.encoders)
    encs.push_back(
        {{"kind", to_string(e.kind)}, {"W", param_to_json(e.W)}, {"b", param_to_json(e.b)}});
  j["encoders"] = encs;

  json decs = json::array();
  for (const auto& d : m.decoders)
    decs.push_back({{"kind", to_string(d.kind)},
                    {"out", d.out},
                    {"W", param_to_json(d.W)},
                    {"b", param_to_json(d.b)}});
  j["decoders"] = decs;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump(1);
  }
  std::rename(tmp.c_str(), path.c_str());
}

MultitaskModel load_checkpoint(const std::string& path, uint64_t* seed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  json j = json::parse(in);
  if (j.value("magic", "") != kMagic)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  if (j.at("version").get<int>() != kVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  if (seed) *seed = j.value("seed", uint64_t(0));

  MultitaskModel m;
  m.task_count = j.at("tasks").get<Index>();
  m.depth = j.at("depth").get<Index>();
  m.dropout_rate = j.at("dropout_rate").get<Scalar>();
  m.ordering.mode = ordering_mode_from(j.at("mode").get<std::string>());
  m.ordering.gate = gate_kind_from(j.at("gate").get<std::string>());
  m.ordering.include_identity = j.at("include_identity").get<bool>();
  m.ordering.perms = j.at("perms").get<std::vector<std::vector<int>>>();
  if (!j.at("logits").is_null()) m.ordering.logits = param_from_json(j.at("logits"));

  for (const auto& lj : j.at("core")) {
    CoreLayer l;
    l.kind = layer_kind_from(lj.at("kind").get<std::string>());
    l.phi = activation_from(lj.at("phi").get<std::string>());
    l.units = lj.at("units").get<Index>();
    l.W = param_from_json(lj.at("W"));
    l.b = param_from_json(lj.at("b"));
    m.core.push_back(std::move(l));
  }

  const bool enc_shared = j.value("share_encoder", false);
  const bool dec_shared = j.value("share_decoder", false);
  for (const auto& ej : j.at("encoders")) {
    if (enc_shared && !m.encoders.empty()) {
      m.encoders.push_back(m.encoders[0]);
      continue;
    }
    Encoder e;
    e.kind = encoder_kind_from(ej.at("kind").get<std::string>());
    e.W = param_from_json(ej.at("W"));
    e.b = param_from_json(ej.at("b"));
    m.encoders.push_back(std::move(e));
  }
  for (const auto& dj : j.at("decoders")) {
    if (dec_shared && !m.decoders.empty()) {
      m.decoders.push_back(m.decoders[0]);
      continue;
    }
    Decoder d;
    d.kind = decoder_kind_from(dj.at("kind").get<std::string>());
    d.out = dj.at("out").get<Index>();
    d.W = param_from_json(dj.at("W"));
    d.b = param_from_json(dj.at("b"));
    m.decoders.push_back(std::move(d));
  }
  return m;
}

std::string to_string(LayerKind k) { return k == LayerKind::Dense ? "dense" : "conv"; }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::Identity: return "identity";
    case EncoderKind::FrozenRandomDense: return "frozen-random-dense";
    case EncoderKind::LearnedDense: return "learned-dense";
    case EncoderKind::LearnedLinear: return "learned-linear";
  }
  return "?";
}

std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::DenseSigmoid: return "dense-sigmoid";
    case DecoderKind::DenseSoftmax: return "dense-softmax";
    case DecoderKind::GlobalAveragePool: return "global-average-pool";
  }
  return "?";
}

std::string to_string(OrderingMode m) {
  switch (m) {
    case OrderingMode::Parallel: return "parallel";
    case OrderingMode::Permuted: return "permuted";
    case OrderingMode::Soft: return "soft";
  }
  return "?";
}

std::string to_string(GateKind g) { return g == GateKind::Softmax ? "softmax" : "sigmoid"; }

namespace {
[[noreturn]] void bad_name(const char* what, const std::string& s) {
  throw std::runtime_error(std::string("unknown ") + what + ": '" + s + "'");
}
} // namespace

LayerKind layer_kind_from(const std::string& s) {
  if (s == "dense") return LayerKind::Dense;
  if (s == "conv") return LayerKind::Conv;
  bad_name("layer kind", s);
}

Activation activation_from(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  bad_name("activation", s);
}

EncoderKind encoder_kind_from(const std::string& s) {
  if (s == "identity") return EncoderKind::Identity;
  if (s == "frozen-random-dense") return EncoderKind::FrozenRandomDense;
  if (s == "learned-dense") return EncoderKind::LearnedDense;
  if (s == "learned-linear") return EncoderKind::LearnedLinear;
  bad_name("encoder kind", s);
}

DecoderKind decoder_kind_from(const std::string& s) {
  if (s == "dense-sigmoid") return DecoderKind::DenseSigmoid;
  if (s == "dense-softmax") return DecoderKind::DenseSoftmax;
  if (s == "global-average-pool") return DecoderKind::GlobalAveragePool;
  bad_name("decoder kind", s);
}

OrderingMode ordering_mode_from(const std::string& s) {
  if (s == "parallel") return OrderingMode::Parallel;
  if (s == "permuted") return OrderingMode::Permuted;
  if (s == "soft") return OrderingMode::Soft;
  bad_name("ordering mode", s);
}

GateKind gate_kind_from(const std::string& s) {
  if (s == "softmax") return GateKind::Softmax;
  if (s == "sigmoid") return GateKind::Sigmoid;
  bad_name("gate kind", s);
}

} // namespace softorder
