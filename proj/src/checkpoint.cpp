#include "maskspec/checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace maskspec::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return std::string(buf);
}

uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16) throw FormatError("checkpoint: bad 64-bit hex field");
  uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9')
      v |= static_cast<uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f')
      v |= static_cast<uint64_t>(c - 'a' + 10);
    else
      throw FormatError("checkpoint: bad 64-bit hex field");
  }
  return v;
}

struct IndexEntry {
  std::string name;
  long long rows = 0;
  long long cols = 0;
  long long offset = 0;
};

json meta_to_json(const CheckpointMeta& meta, const std::vector<IndexEntry>& index) {
  json tensors = json::array();
  for (const auto& e : index)
    tensors.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}, {"offset", e.offset}});
  return json{{"format_version", meta.format_version},
              {"kind", "maskspec-checkpoint"},
              {"layout", "col-major-f32le"},
              {"step", meta.step},
              {"phase", meta.phase},
              {"seed", hex64(meta.seed)},
              {"adam_updates", meta.adam_updates},
              {"hashes",
               {{"feature", hex64(meta.hashes.feature)},
                {"model", hex64(meta.hashes.model)},
                {"trainer", hex64(meta.hashes.trainer)}}},
              {"tensors", tensors}};
}

CheckpointMeta meta_from_json(const json& j, std::vector<IndexEntry>* index) {
  CheckpointMeta meta;
  if (!j.contains("format_version") || !j["format_version"].is_number_integer())
    throw FormatError("checkpoint: missing format_version");
  meta.format_version = j["format_version"].get<int>();
  if (meta.format_version != kFormatVersion)
    throw FormatError("checkpoint: unknown format version " + std::to_string(meta.format_version));
  if (j.value("kind", "") != "maskspec-checkpoint")
    throw FormatError("checkpoint: wrong container kind");
  meta.step = j.at("step").get<long long>();
  meta.phase = j.at("phase").get<std::string>();
  meta.seed = parse_hex64(j.at("seed").get<std::string>());
  meta.adam_updates = j.at("adam_updates").get<long long>();
  const auto& h = j.at("hashes");
  meta.hashes.feature = parse_hex64(h.at("feature").get<std::string>());
  meta.hashes.model = parse_hex64(h.at("model").get<std::string>());
  meta.hashes.trainer = parse_hex64(h.at("trainer").get<std::string>());
  if (index) {
    for (const auto& t : j.at("tensors"))
      index->push_back({t.at("name").get<std::string>(), t.at("rows").get<long long>(),
                        t.at("cols").get<long long>(), t.at("offset").get<long long>()});
  }
  return meta;
}

void append_tensors(std::ofstream& bin, const std::string& prefix,
                    model::ModelState<float>& state, long long& offset,
                    std::vector<IndexEntry>& index) {
  for (auto& ref : model::collect_tensor_refs(state)) {
    const long long bytes = static_cast<long long>(ref.size()) * 4;
    index.push_back({prefix + ref.name, ref.rows, ref.cols, offset});
    bin.write(reinterpret_cast<const char*>(ref.data), bytes);
    offset += bytes;
  }
}

void read_tensors(std::ifstream& bin, const std::string& prefix, model::ModelState<float>& state,
                  const std::vector<IndexEntry>& index) {
  for (auto& ref : model::collect_tensor_refs(state)) {
    const std::string name = prefix + ref.name;
    const IndexEntry* entry = nullptr;
    for (const auto& e : index)
      if (e.name == name) {
        entry = &e;
        break;
      }
    if (!entry) throw FormatError("checkpoint: missing tensor " + name);
    if (entry->rows != ref.rows || entry->cols != ref.cols)
      throw FormatError("checkpoint: shape mismatch for " + name);
    bin.seekg(entry->offset);
    bin.read(reinterpret_cast<char*>(ref.data), static_cast<long long>(ref.size()) * 4);
    if (!bin) throw FormatError("checkpoint: truncated tensor data for " + name);
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const CheckpointMeta& meta,
                     model::ModelState<float>& params, model::ModelState<float>* adam_m,
                     model::ModelState<float>* adam_v) {
  if ((adam_m == nullptr) != (adam_v == nullptr))
    throw ConfigError("save_checkpoint: both moments or neither");
  const fs::path tmp = dir.string() + ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp);

  std::vector<IndexEntry> index;
  {
    std::ofstream bin(tmp / "tensors.bin", std::ios::binary);
    if (!bin) throw IoError("save_checkpoint: cannot open tensors.bin for writing");
    long long offset = 0;
    append_tensors(bin, "param/", params, offset, index);
    if (adam_m) {
      append_tensors(bin, "adam.m/", *adam_m, offset, index);
      append_tensors(bin, "adam.v/", *adam_v, offset, index);
    }
    bin.flush();
    if (!bin) throw IoError("save_checkpoint: write failed");
  }
  {
    std::ofstream mf(tmp / "manifest.json");
    if (!mf) throw IoError("save_checkpoint: cannot open manifest.json for writing");
    mf << meta_to_json(meta, index).dump(2) << "\n";
    mf.flush();
    if (!mf) throw IoError("save_checkpoint: manifest write failed");
  }
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir);
}

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("checkpoint: cannot open " + (dir / "manifest.json").string());
  json j;
  try {
    mf >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: manifest parse error: ") + e.what());
  }
  return meta_from_json(j, nullptr);
}

CheckpointMeta load_checkpoint(const fs::path& dir, model::ModelState<float>& params,
                               model::ModelState<float>* adam_m,
                               model::ModelState<float>* adam_v) {
  if ((adam_m == nullptr) != (adam_v == nullptr))
    throw ConfigError("load_checkpoint: both moments or neither");
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("checkpoint: cannot open " + (dir / "manifest.json").string());
  json j;
  try {
    mf >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: manifest parse error: ") + e.what());
  }
  std::vector<IndexEntry> index;
  CheckpointMeta meta;
  try {
    meta = meta_from_json(j, &index);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: manifest field error: ") + e.what());
  }

  std::ifstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw IoError("checkpoint: cannot open " + (dir / "tensors.bin").string());
  read_tensors(bin, "param/", params, index);
  if (adam_m) {
    read_tensors(bin, "adam.m/", *adam_m, index);
    read_tensors(bin, "adam.v/", *adam_v, index);
  }
  return meta;
}

}  // namespace maskspec::train
