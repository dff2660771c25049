#include "lp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace lp {

namespace {

struct ManifestEntry {
  std::string name;
  std::int64_t rows = 0, cols = 0;
  std::int64_t offset = 0;
};

std::string build_payload(const Model& model, std::vector<ManifestEntry>* manifest) {
  std::string payload;
  visit_params(model, ParamFilter::kAll,
               [&](const std::string& name, const float* p, Eigen::Index r, Eigen::Index c) {
                 if (manifest)
                   manifest->push_back(
                       {name, r, c, static_cast<std::int64_t>(payload.size())});
                 payload.append(reinterpret_cast<const char*>(p),
                                static_cast<std::size_t>(r) * c * sizeof(float));
               });
  return payload;
}

void append_u64_le(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

Json config_to_json(const ModelConfig& cfg) {
  return Json{{"num_layers", cfg.num_layers},
              {"hidden_dim", cfg.hidden_dim},
              {"num_heads", cfg.num_heads},
              {"ffn_dim", cfg.ffn_dim},
              {"vocab_size", cfg.vocab_size},
              {"max_seq_len", cfg.max_seq_len},
              {"norm_kind", norm_kind_name(cfg.norm_kind)},
              {"use_ffn_gate", cfg.use_ffn_gate},
              {"tie_embeddings", cfg.tie_embeddings},
              {"seed", cfg.seed}};
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig cfg;
  try {
    cfg.num_layers = j.at("num_layers").get<int>();
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.ffn_dim = j.at("ffn_dim").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.norm_kind = norm_kind_from_name(j.at("norm_kind").get<std::string>());
    cfg.use_ffn_gate = j.value("use_ffn_gate", false);
    cfg.tie_embeddings = j.value("tie_embeddings", false);
    cfg.seed = j.value("seed", std::uint64_t(0));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

Model allocate_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.config = cfg;
  const bool ln = cfg.norm_kind == NormKind::kLayerNorm;
  m.embedding = MatF::Zero(cfg.vocab_size, cfg.hidden_dim);
  m.blocks.resize(cfg.num_layers);
  for (auto& b : m.blocks) {
    b.attn_norm_gain = VecF::Zero(cfg.hidden_dim);
    if (ln) b.attn_norm_bias = VecF::Zero(cfg.hidden_dim);
    b.wq = MatF::Zero(cfg.hidden_dim, cfg.hidden_dim);
    b.wk = MatF::Zero(cfg.hidden_dim, cfg.hidden_dim);
    b.wv = MatF::Zero(cfg.hidden_dim, cfg.hidden_dim);
    b.wo = MatF::Zero(cfg.hidden_dim, cfg.hidden_dim);
    b.ffn_norm_gain = VecF::Zero(cfg.hidden_dim);
    if (ln) b.ffn_norm_bias = VecF::Zero(cfg.hidden_dim);
    b.ffn_up = MatF::Zero(cfg.hidden_dim, cfg.ffn_dim);
    if (cfg.use_ffn_gate) b.ffn_gate = MatF::Zero(cfg.hidden_dim, cfg.ffn_dim);
    b.ffn_down = MatF::Zero(cfg.ffn_dim, cfg.hidden_dim);
  }
  m.final_norm_gain = VecF::Zero(cfg.hidden_dim);
  if (ln) m.final_norm_bias = VecF::Zero(cfg.hidden_dim);
  if (!cfg.tie_embeddings) m.lm_head = MatF::Zero(cfg.hidden_dim, cfg.vocab_size);
  return m;
}

std::string model_fingerprint(const Model& model) {
  const std::string payload = build_payload(model, nullptr);
  return to_hex(fnv1a64(payload.data(), payload.size()));
}

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::uint64_t state = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    state = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), state);
  }
  return to_hex(state);
}

void save_model(const std::string& path, const Model& model, const Json& provenance) {
  model.config.validate();
  if (static_cast<int>(model.blocks.size()) != model.config.num_layers)
    throw InputError("save_model: block count disagrees with config");
  if (!all_finite(model)) throw InputError("save_model: model has non-finite tensors");

  std::vector<ManifestEntry> manifest;
  const std::string payload = build_payload(model, &manifest);

  Json header;
  header["format"] = {{"name", kCheckpointMagic}, {"version", kCheckpointVersion}};
  header["model_config"] = config_to_json(model.config);
  Json jm = Json::array();
  for (const auto& e : manifest)
    jm.push_back({{"name", e.name},
                  {"dtype", "f32"},
                  {"shape", {e.rows, e.cols}},
                  {"offset", e.offset}});
  header["manifest"] = jm;
  header["payload_bytes"] = payload.size();
  if (model.adapters) {
    header["adapters"] = {{"rank", model.adapters->rank},
                          {"alpha", model.adapters->alpha},
                          {"dropout", model.adapters->dropout},
                          {"targets", model.adapters->targets}};
  }
  header["provenance"] = provenance;
  const std::string header_text = header.dump(2);

  std::string blob;
  blob.reserve(payload.size() + header_text.size() + 64);
  blob += std::string(kCheckpointMagic) + " v" + std::to_string(kCheckpointVersion) + "\n";
  blob += std::to_string(header_text.size()) + "\n";
  blob += header_text;
  blob += payload;
  append_u64_le(blob, fnv1a64(payload.data(), payload.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("short write to " + path);
}

namespace {

// Reads the two text lines and the JSON header; leaves the stream positioned
// at the payload.
Json read_header_stream(std::ifstream& in, const std::string& path) {
  std::string magic_line;
  if (!std::getline(in, magic_line)) throw FormatError(path + ": empty file");
  const std::string expect_prefix = std::string(kCheckpointMagic) + " v";
  if (magic_line.rfind(expect_prefix, 0) != 0)
    throw FormatError(path + ": not a checkpoint file");
  if (magic_line != expect_prefix + std::to_string(kCheckpointVersion))
    throw VersionError(path + ": unsupported version '" + magic_line + "'");
  std::string len_line;
  if (!std::getline(in, len_line)) throw FormatError(path + ": missing header length");
  std::size_t header_len = 0;
  try {
    header_len = static_cast<std::size_t>(std::stoull(len_line));
  } catch (...) {
    throw FormatError(path + ": bad header length line");
  }
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::size_t>(in.gcount()) != header_len)
    throw FormatError(path + ": truncated header");
  try {
    return Json::parse(header_text);
  } catch (const Json::exception& e) {
    throw FormatError(path + ": header is not valid JSON: " + e.what());
  }
}

}  // namespace

Json read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_header_stream(in, path);
}

Model load_model(const std::string& path, Json* provenance_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const Json header = read_header_stream(in, path);

  ModelConfig cfg = config_from_json(header.at("model_config"));
  Model model = allocate_model(cfg);
  if (header.contains("adapters")) {
    const Json& ja = header.at("adapters");
    AdapterSetT<float> ad;
    try {
      ad.rank = ja.at("rank").get<int>();
      ad.alpha = ja.at("alpha").get<double>();
      ad.dropout = ja.at("dropout").get<double>();
      ad.targets = ja.at("targets").get<std::vector<std::string>>();
    } catch (const Json::exception& e) {
      throw FormatError(path + ": adapter metadata: " + e.what());
    }
    ad.blocks.resize(cfg.num_layers);
    for (auto& b : ad.blocks) {
      for (const auto& t : ad.targets) {
        AdapterPairT<float>* pair = nullptr;
        std::int64_t q = 0, p = 0;
        if (t == "ffn_up") {
          pair = &b.up;
          p = cfg.hidden_dim;
          q = cfg.ffn_dim;
        } else if (t == "ffn_gate") {
          pair = &b.gate;
          p = cfg.hidden_dim;
          q = cfg.ffn_dim;
        } else if (t == "ffn_down") {
          pair = &b.down;
          p = cfg.ffn_dim;
          q = cfg.hidden_dim;
        } else {
          throw FormatError(path + ": unknown adapter target '" + t + "'");
        }
        pair->a = MatF::Zero(ad.rank, q);
        pair->b = MatF::Zero(p, ad.rank);
      }
    }
    model.adapters = std::move(ad);
  }

  // Expected tensor table in canonical order.
  struct Slot {
    std::string name;
    float* data;
    std::int64_t rows, cols;
  };
  std::vector<Slot> slots;
  visit_params(model, ParamFilter::kAll,
               [&](const std::string& name, float* p, Eigen::Index r, Eigen::Index c) {
                 slots.push_back({name, p, r, c});
               });

  const Json& jm = header.at("manifest");
  if (!jm.is_array() || jm.size() != slots.size())
    throw FormatError(path + ": manifest entry count mismatch");
  const std::int64_t payload_bytes = header.at("payload_bytes").get<std::int64_t>();
  std::int64_t expected_offset = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Json& e = jm.at(i);
    const std::string name = e.at("name").get<std::string>();
    if (name != slots[i].name)
      throw FormatError(path + ": manifest tensor '" + name + "' out of order (expected '" +
                        slots[i].name + "')");
    if (e.at("dtype").get<std::string>() != "f32")
      throw FormatError(path + ": unsupported dtype for " + name);
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 2 || shape[0] != slots[i].rows || shape[1] != slots[i].cols)
      throw ShapeError(path + ": tensor '" + name + "' shape mismatch");
    const std::int64_t offset = e.at("offset").get<std::int64_t>();
    if (offset != expected_offset)
      throw FormatError(path + ": manifest offsets overlap or leave gaps at '" + name + "'");
    expected_offset += slots[i].rows * slots[i].cols * static_cast<std::int64_t>(sizeof(float));
  }
  if (expected_offset != payload_bytes)
    throw FormatError(path + ": payload length disagrees with manifest");

  std::string payload(static_cast<std::size_t>(payload_bytes), '\0');
  in.read(payload.data(), payload_bytes);
  if (in.gcount() != payload_bytes) throw ChecksumError(path + ": payload truncated");
  unsigned char cksum_buf[8];
  in.read(reinterpret_cast<char*>(cksum_buf), 8);
  if (in.gcount() != 8) throw ChecksumError(path + ": checksum missing");
  const std::uint64_t stored = read_u64_le(cksum_buf);
  const std::uint64_t actual = fnv1a64(payload.data(), payload.size());
  if (stored != actual)
    throw ChecksumError(path + ": payload checksum mismatch (stored " + to_hex(stored) +
                        ", computed " + to_hex(actual) + ")");

  std::size_t pos = 0;
  for (const auto& s : slots) {
    const std::size_t bytes = static_cast<std::size_t>(s.rows) * s.cols * sizeof(float);
    std::memcpy(s.data, payload.data() + pos, bytes);
    pos += bytes;
  }
  if (!all_finite(model)) throw FormatError(path + ": non-finite tensor data");
  if (provenance_out) *provenance_out = header.value("provenance", Json::object());
  return model;
}

}  // namespace lp
