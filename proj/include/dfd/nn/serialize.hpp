#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfd/core/error.hpp"
#include "dfd/nn/architecture.hpp"

namespace dfd::nn {

using json = nlohmann::json;

inline json to_json(const StreamSpec& s) {
  json j{{"name", s.name}, {"input", input_kind_name(s.input)}, {"entry", s.entry.widths}};
  if (!s.children.empty()) {
    j["children"] = json::array();
    for (const auto& c : s.children) j["children"].push_back(to_json(c));
  }
  return j;
}

inline json to_json(const DetectorSpec& spec) {
  json j{{"variant", spec.variant},
         {"width_scale", spec.width_scale},
         {"input_size", spec.input_size},
         {"middle_repeats", spec.middle_repeats},
         {"streams", json::array()}};
  for (const auto& s : spec.streams) j["streams"].push_back(to_json(s));
  return j;
}

inline StreamSpec stream_from_json(const json& j) {
  StreamSpec s;
  s.name = j.at("name").get<std::string>();
  s.input = parse_input_kind(j.at("input").get<std::string>());
  s.entry.widths = j.at("entry").get<std::array<std::size_t, 6>>();
  if (j.contains("children"))
    for (const auto& c : j["children"]) s.children.push_back(stream_from_json(c));
  return s;
}

// Accepts either a full description or just {"variant", "width_scale", "input_size"}.
inline DetectorSpec spec_from_json(const json& j) {
  try {
    const std::string variant = j.at("variant").get<std::string>();
    const double scale = j.value("width_scale", 1.0);
    const std::size_t size = j.value("input_size", std::size_t{299});
    if (!j.contains("streams")) return make_spec(variant, scale, size);
    DetectorSpec spec{variant, scale, size, {}, j.value("middle_repeats", std::size_t{0})};
    for (const auto& s : j.at("streams")) spec.streams.push_back(stream_from_json(s));
    validate(spec);
    return spec;
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("detector spec: ") + e.what());
  }
}

/**
 * Checkpoint = <stem>.bin (raw little-endian doubles, parameters then
 * buffers, back to back) + <stem>.json (spec plus name/offset/count index).
 */
template <typename S>
void save_checkpoint(const Detector<S>& model, const std::filesystem::path& stem, const json& extra = json::object()) {
  json index{{"spec", to_json(model.spec())}, {"entries", json::array()}, {"extra", extra}};
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot write " + stem.string() + ".bin");
  std::size_t offset = 0;
  auto put = [&](const std::string& name, std::span<const S> values, const char* kind) {
    for (S v : values) {
      const double d = static_cast<double>(v);
      bin.write(reinterpret_cast<const char*>(&d), sizeof d);
    }
    index["entries"].push_back({{"name", name}, {"kind", kind}, {"offset", offset}, {"count", values.size()}});
    offset += values.size();
  };
  for (const auto& p : model.parameters()) put(p.name, p.tensor.values(), "parameter");
  for (const auto& b : model.buffers()) put(b.name, std::span<const S>(*b.values), "buffer");
  if (!bin) throw IoError("write failed for " + stem.string() + ".bin");
  std::ofstream js(stem.string() + ".json");
  if (!js) throw IoError("cannot write " + stem.string() + ".json");
  js << index.dump(2) << "\n";
}

inline json read_checkpoint_index(const std::filesystem::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw IoError("cannot read " + stem.string() + ".json");
  try {
    return json::parse(js);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint index " + stem.string() + ".json: " + e.what());
  }
}

// Copies stored values into an already-built model with a matching spec.
template <typename S>
void load_checkpoint(Detector<S>& model, const std::filesystem::path& stem) {
  const json index = read_checkpoint_index(stem);
  std::ifstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot read " + stem.string() + ".bin");
  bin.seekg(0, std::ios::end);
  const std::size_t bytes = static_cast<std::size_t>(bin.tellg());
  bin.seekg(0);
  std::vector<double> data(bytes / sizeof(double));
  bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  std::map<std::string, std::pair<std::size_t, std::size_t>> where;
  for (const auto& e : index.at("entries"))
    where[e.at("name").get<std::string>()] = {e.at("offset").get<std::size_t>(), e.at("count").get<std::size_t>()};
  auto fetch = [&](const std::string& name, std::span<S> dst) {
    auto it = where.find(name);
    if (it == where.end()) throw IoError("checkpoint lacks entry '" + name + "'");
    if (it->second.second != dst.size() || it->second.first + it->second.second > data.size())
      throw IoError("checkpoint entry '" + name + "' has the wrong size");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(data[it->second.first + i]);
  };
  for (auto& p : model.parameters()) fetch(p.name, p.tensor.values());
  for (auto& b : model.buffers()) fetch(b.name, std::span<S>(*b.values));
}

template <typename S>
Detector<S> load_detector(const std::filesystem::path& stem) {
  const json index = read_checkpoint_index(stem);
  Detector<S> model(spec_from_json(index.at("spec")));
  load_checkpoint(model, stem);
  return model;
}

}  // namespace dfd::nn
