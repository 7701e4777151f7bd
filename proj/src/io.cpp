#include "facetalk/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace facetalk {
namespace io {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw DataError("write failure: " + path);
}

// Little-endian scalar packing (this codebase targets LE hosts; the byte
// order is pinned by the formats).
template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

struct Reader {
  const std::string& bytes;
  size_t at = 0;
  std::string context;

  template <typename T>
  T get() {
    if (at + sizeof(T) > bytes.size())
      throw FormatError("truncated file: " + context);
    T value;
    std::memcpy(&value, bytes.data() + at, sizeof(T));
    at += sizeof(T);
    return value;
  }

  std::string get_bytes(size_t n) {
    if (at + n > bytes.size())
      throw FormatError("truncated file: " + context);
    std::string s = bytes.substr(at, n);
    at += n;
    return s;
  }
};

double get_number(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number())
    throw ConfigError(std::string("config key '") + key +
                      "' must be a number");
  return j[key].get<double>();
}

}  // namespace

// ---------------------------------------------------------------- JSON utils

json load_json(const std::string& path) {
  const std::string text = read_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("invalid JSON: " + path);
  return j;
}

void save_json(const std::string& path, const json& j) {
  write_file(path, j.dump(2) + "\n");
}

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& key : allowed)
      if (it.key() == key) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("unknown key '" + it.key() + "' in " + context);
  }
}

// ------------------------------------------------------------------ WAV I/O

audio::Waveform read_wav(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes, 0, path};
  if (r.get_bytes(4) != "RIFF") throw FormatError("not a RIFF file: " + path);
  r.get<uint32_t>();  // chunk size
  if (r.get_bytes(4) != "WAVE") throw FormatError("not a WAVE file: " + path);

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  audio::Waveform wav;
  bool have_data = false;

  while (r.at + 8 <= bytes.size()) {
    const std::string id = r.get_bytes(4);
    const uint32_t size = r.get<uint32_t>();
    if (id == "fmt ") {
      if (size < 16) throw FormatError("bad fmt chunk: " + path);
      const size_t end = r.at + size;
      format = r.get<uint16_t>();
      channels = r.get<uint16_t>();
      rate = r.get<uint32_t>();
      r.get<uint32_t>();  // byte rate
      r.get<uint16_t>();  // block align
      bits = r.get<uint16_t>();
      r.at = end;
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data before fmt chunk: " + path);
      if (format != 1)
        throw FormatError("only PCM wav supported: " + path);
      if (channels != 1) throw FormatError("only mono wav supported: " + path);
      if (bits != 16)
        throw FormatError("only 16-bit wav supported: " + path);
      if (rate != uint32_t(kAudioRate))
        throw FormatError("wav must be 16000 Hz: " + path);
      const uint32_t count = size / 2;
      wav.samples.resize(count);
      for (uint32_t i = 0; i < count; ++i)
        wav.samples[i] = double(r.get<int16_t>()) / 32768.0;
      have_data = true;
      if (size % 2 == 1) r.at += 1;  // chunk padding
    } else {
      r.at += size + (size % 2);  // skip unknown chunks
    }
  }
  if (!have_data) throw FormatError("wav has no data chunk: " + path);
  wav.rate = kAudioRate;
  return wav;
}

void write_wav(const std::string& path, const audio::Waveform& wav) {
  if (wav.rate != kAudioRate)
    throw FormatError("waveform must be 16000 Hz to write");
  std::string out;
  const uint32_t data_size = uint32_t(wav.samples.size()) * 2;
  out += "RIFF";
  put<uint32_t>(out, 36 + data_size);
  out += "WAVE";
  out += "fmt ";
  put<uint32_t>(out, 16);
  put<uint16_t>(out, 1);  // PCM
  put<uint16_t>(out, 1);  // mono
  put<uint32_t>(out, uint32_t(kAudioRate));
  put<uint32_t>(out, uint32_t(kAudioRate) * 2);
  put<uint16_t>(out, 2);
  put<uint16_t>(out, 16);
  out += "data";
  put<uint32_t>(out, data_size);
  for (Index i = 0; i < wav.samples.size(); ++i) {
    const double clamped = std::min(1.0, std::max(-1.0, wav.samples[i]));
    const double scaled = clamped * 32767.0;
    put<int16_t>(out, int16_t(std::lround(scaled)));
  }
  write_file(path, out);
}

// ----------------------------------------------------------- Sequence files

void write_sequence(const std::string& path, const MatX<float>& codes,
                    float fps) {
  std::string out;
  out += "FTSQ";
  put<uint32_t>(out, 1);  // version
  put<uint32_t>(out, uint32_t(codes.rows()));
  put<uint32_t>(out, uint32_t(codes.cols()));
  put<float>(out, fps);
  for (Index i = 0; i < codes.rows(); ++i)
    for (Index j = 0; j < codes.cols(); ++j) put<float>(out, codes(i, j));
  write_file(path, out);
}

SequenceData read_sequence(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes, 0, path};
  if (r.get_bytes(4) != "FTSQ")
    throw FormatError("bad sequence magic: " + path);
  const uint32_t version = r.get<uint32_t>();
  if (version != 1)
    throw FormatError("unsupported sequence version: " + path);
  const uint32_t n = r.get<uint32_t>();
  const uint32_t dim = r.get<uint32_t>();
  SequenceData data;
  data.fps = r.get<float>();
  if (bytes.size() - r.at != size_t(n) * dim * 4)
    throw FormatError("sequence payload size mismatch: " + path);
  data.codes.resize(n, dim);
  for (uint32_t i = 0; i < n; ++i)
    for (uint32_t j = 0; j < dim; ++j) data.codes(i, j) = r.get<float>();
  return data;
}

// ------------------------------------------------------------- Checkpoints

json field_spec_to_json(const FieldSpec& f) {
  json j;
  j["seed"] = f.seed;
  j["base"] = std::vector<double>(f.base.data(), f.base.data() + f.base.size());
  return j;
}

FieldSpec parse_field_spec(const json& j) {
  check_keys(j, {"seed", "base"}, "field spec");
  FieldSpec f;
  if (j.contains("seed")) f.seed = j["seed"].get<uint64_t>();
  if (j.contains("base")) {
    const auto base = j["base"].get<std::vector<double>>();
    if (base.size() != 8)
      throw ConfigError("field base must have 8 entries");
    f.base = Eigen::Map<const VecX<double>>(base.data(), 8);
  }
  return f;
}

json schedule_spec_to_json(const ScheduleSpec& s) {
  json j;
  j["steps"] = s.steps;
  j["offset"] = s.offset;
  return j;
}

ScheduleSpec parse_schedule_spec(const json& j) {
  check_keys(j, {"steps", "offset"}, "schedule spec");
  ScheduleSpec s;
  s.steps = int(get_number(j, "steps", s.steps));
  s.offset = get_number(j, "offset", s.offset);
  return s;
}

namespace {

json model_config_to_json(const model::DenoiserConfig& c) {
  json j;
  j["blocks"] = c.blocks;
  j["d_model"] = c.d_model;
  j["heads"] = c.heads;
  j["d_attn"] = c.d_attn;
  j["d_ff"] = c.d_ff;
  j["in_dim"] = c.in_dim;
  j["d_c"] = c.d_c;
  j["timesteps"] = c.timesteps;
  return j;
}

}  // namespace

model::DenoiserConfig parse_model_config(const json& j) {
  check_keys(j,
             {"blocks", "d_model", "heads", "d_attn", "d_ff", "in_dim", "d_c",
              "timesteps"},
             "model config");
  model::DenoiserConfig c;
  c.blocks = int(get_number(j, "blocks", c.blocks));
  c.d_model = Index(get_number(j, "d_model", double(c.d_model)));
  c.heads = int(get_number(j, "heads", c.heads));
  c.d_attn = Index(get_number(j, "d_attn", double(c.d_attn)));
  c.d_ff = Index(get_number(j, "d_ff", double(c.d_ff)));
  c.in_dim = Index(get_number(j, "in_dim", double(c.in_dim)));
  c.d_c = Index(get_number(j, "d_c", double(c.d_c)));
  c.timesteps = int(get_number(j, "timesteps", c.timesteps));
  c.validate();
  return c;
}

void save_checkpoint(const std::string& path,
                     const model::DenoiserParams<float>& params,
                     const FieldSpec& field, const ScheduleSpec& schedule) {
  json config;
  config["model"] = model_config_to_json(params.config);
  config["field"] = field_spec_to_json(field);
  config["schedule"] = schedule_spec_to_json(schedule);
  const std::string config_text = config.dump();

  std::string out;
  out += "FTCK";
  put<uint32_t>(out, 1);
  put<uint32_t>(out, uint32_t(config_text.size()));
  out += config_text;

  const auto tensors = params.tensors();
  put<uint32_t>(out, uint32_t(tensors.size()));
  for (const auto& [name, ptr] : tensors) {
    put<uint32_t>(out, uint32_t(name.size()));
    out += name;
    put<uint32_t>(out, uint32_t(ptr->rows()));
    put<uint32_t>(out, uint32_t(ptr->cols()));
    for (Index i = 0; i < ptr->rows(); ++i)
      for (Index j = 0; j < ptr->cols(); ++j) put<float>(out, (*ptr)(i, j));
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes, 0, path};
  if (r.get_bytes(4) != "FTCK")
    throw FormatError("bad checkpoint magic: " + path);
  if (r.get<uint32_t>() != 1)
    throw FormatError("unsupported checkpoint version: " + path);
  const uint32_t json_len = r.get<uint32_t>();
  const json config = json::parse(r.get_bytes(json_len), nullptr, false);
  if (config.is_discarded())
    throw FormatError("corrupt checkpoint config: " + path);
  check_keys(config, {"model", "field", "schedule"}, "checkpoint config");

  Checkpoint ckpt;
  const model::DenoiserConfig model_config =
      parse_model_config(config.at("model"));
  ckpt.field = parse_field_spec(config.at("field"));
  ckpt.schedule = parse_schedule_spec(config.at("schedule"));
  ckpt.params = model::init_params<float>(model_config, 0);

  const uint32_t count = r.get<uint32_t>();
  auto tensors = ckpt.params.tensors();
  if (count != tensors.size())
    throw FormatError("checkpoint tensor count mismatch: " + path);
  for (uint32_t k = 0; k < count; ++k) {
    const uint32_t name_len = r.get<uint32_t>();
    const std::string name = r.get_bytes(name_len);
    if (name != tensors[k].first)
      throw FormatError("checkpoint tensor order mismatch at '" + name +
                        "': " + path);
    const uint32_t rows = r.get<uint32_t>();
    const uint32_t cols = r.get<uint32_t>();
    MatX<float>& m = *tensors[k].second;
    if (Index(rows) != m.rows() || Index(cols) != m.cols())
      throw FormatError("checkpoint tensor shape mismatch at '" + name +
                        "': " + path);
    for (uint32_t i = 0; i < rows; ++i)
      for (uint32_t j = 0; j < cols; ++j) m(i, j) = r.get<float>();
  }
  return ckpt;
}

// -------------------------------------------------------------------- OBJ

std::string obj_to_string(const meshing::MeshBuffer& mesh) {
  std::string out;
  char line[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", v[0], v[1], v[2]);
    out += line;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(line, sizeof(line), "f %d %d %d\n", t[0] + 1, t[1] + 1,
                  t[2] + 1);
    out += line;
  }
  return out;
}

void export_obj(const meshing::MeshBuffer& mesh, const std::string& path) {
  write_file(path, obj_to_string(mesh));
}

meshing::MeshBuffer import_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open obj: " + path);
  meshing::MeshBuffer mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3<double> v;
      ss >> v[0] >> v[1] >> v[2];
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t{};
      ss >> t[0] >> t[1] >> t[2];
      for (int& i : t) i -= 1;
      mesh.triangles.push_back(t);
    }
  }
  return mesh;
}

// ------------------------------------------------------------ Raw volumes

void write_volume(const std::string& base, const meshing::ScalarGrid& grid) {
  std::string raw;
  raw.reserve(grid.values.size() * 4);
  for (double v : grid.values) put<float>(raw, float(v));
  write_file(base + ".raw", raw);

  json j;
  j["dims"] = {grid.spec.resolution[0], grid.spec.resolution[1],
               grid.spec.resolution[2]};
  j["lo"] = {grid.spec.lo[0], grid.spec.lo[1], grid.spec.lo[2]};
  j["hi"] = {grid.spec.hi[0], grid.spec.hi[1], grid.spec.hi[2]};
  save_json(base + ".json", j);
}

meshing::ScalarGrid read_volume(const std::string& base) {
  const json j = load_json(base + ".json");
  check_keys(j, {"dims", "lo", "hi"}, "volume sidecar");
  meshing::ScalarGrid grid;
  for (int a = 0; a < 3; ++a) {
    grid.spec.resolution[a] = j.at("dims")[a].get<int>();
    grid.spec.lo[a] = j.at("lo")[a].get<double>();
    grid.spec.hi[a] = j.at("hi")[a].get<double>();
  }
  grid.spec.validate();
  const std::string raw = read_file(base + ".raw");
  if (raw.size() != size_t(grid.spec.count()) * 4)
    throw FormatError("volume payload size mismatch: " + base);
  grid.values.resize(grid.spec.count());
  Reader r{raw, 0, base};
  for (Index i = 0; i < grid.spec.count(); ++i)
    grid.values[i] = double(r.get<float>());
  return grid;
}

// ------------------------------------------------------- Point-cloud frames

void write_clouds(const std::string& base,
                  const std::vector<Points<double>>& frames) {
  std::string raw;
  json sizes = json::array();
  for (const auto& f : frames) {
    sizes.push_back(f.rows());
    for (Index i = 0; i < f.rows(); ++i)
      for (int a = 0; a < 3; ++a) put<float>(raw, float(f(i, a)));
  }
  write_file(base + ".raw", raw);
  json j;
  j["frames"] = frames.size();
  j["points_per_frame"] = sizes;
  save_json(base + ".json", j);
}

std::vector<Points<double>> read_clouds(const std::string& base) {
  const json j = load_json(base + ".json");
  check_keys(j, {"frames", "points_per_frame"}, "cloud sidecar");
  const size_t n = j.at("frames").get<size_t>();
  const auto sizes = j.at("points_per_frame").get<std::vector<Index>>();
  if (sizes.size() != n)
    throw FormatError("cloud sidecar frame count mismatch: " + base);
  const std::string raw = read_file(base + ".raw");
  Reader r{raw, 0, base};
  std::vector<Points<double>> frames;
  for (size_t f = 0; f < n; ++f) {
    Points<double> pts(sizes[f], 3);
    for (Index i = 0; i < sizes[f]; ++i)
      for (int a = 0; a < 3; ++a) pts(i, a) = double(r.get<float>());
    frames.push_back(std::move(pts));
  }
  if (r.at != raw.size())
    throw FormatError("cloud payload size mismatch: " + base);
  return frames;
}

// --------------------------------------------------------------- Landmarks

void write_landmarks(const std::string& path,
                     const std::vector<Points<double>>& frames) {
  std::string raw;
  for (const auto& f : frames) {
    if (f.rows() != kLandmarkCount)
      throw DimensionError("landmark frames must be 68x3");
    for (Index i = 0; i < f.rows(); ++i)
      for (int a = 0; a < 3; ++a) put<float>(raw, float(f(i, a)));
  }
  write_file(path, raw);
}

std::vector<Points<double>> read_landmarks(const std::string& path) {
  const std::string raw = read_file(path);
  const size_t frame_bytes = size_t(kLandmarkCount) * 3 * 4;
  if (raw.size() % frame_bytes != 0)
    throw FormatError("landmark file size is not a whole frame count: " +
                      path);
  Reader r{raw, 0, path};
  std::vector<Points<double>> frames(raw.size() / frame_bytes);
  for (auto& f : frames) {
    f.resize(kLandmarkCount, 3);
    for (Index i = 0; i < kLandmarkCount; ++i)
      for (int a = 0; a < 3; ++a) f(i, a) = double(r.get<float>());
  }
  return frames;
}

// -------------------------------------------------------------- Depth maps

void write_depth(const std::string& base, const rigid::DepthMap& map,
                 const rigid::CameraParams& cam) {
  std::string raw;
  for (Index r = 0; r < map.depth.rows(); ++r)
    for (Index c = 0; c < map.depth.cols(); ++c)
      put<float>(raw, float(map.depth(r, c)));
  write_file(base + ".raw", raw);

  std::string mask;
  for (Index r = 0; r < map.mask.rows(); ++r)
    for (Index c = 0; c < map.mask.cols(); ++c)
      mask.push_back(map.mask(r, c) ? char(1) : char(0));
  write_file(base + ".mask", mask);

  json j;
  j["rows"] = map.depth.rows();
  j["cols"] = map.depth.cols();
  auto mat = [&](const Mat3<double>& m) {
    json a = json::array();
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) a.push_back(m(i, k));
    return a;
  };
  j["intrinsics"] = mat(cam.intrinsics);
  j["rotation"] = mat(cam.rotation);
  j["translation"] = {cam.translation[0], cam.translation[1],
                      cam.translation[2]};
  save_json(base + ".json", j);
}

std::pair<rigid::DepthMap, rigid::CameraParams> read_depth(
    const std::string& base) {
  const json j = load_json(base + ".json");
  check_keys(j, {"rows", "cols", "intrinsics", "rotation", "translation"},
             "depth sidecar");
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();

  rigid::DepthMap map;
  map.depth.resize(rows, cols);
  const std::string raw = read_file(base + ".raw");
  if (raw.size() != size_t(rows * cols) * 4)
    throw FormatError("depth payload size mismatch: " + base);
  Reader r{raw, 0, base};
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < cols; ++c) map.depth(i, c) = double(r.get<float>());

  const std::string mask = read_file(base + ".mask");
  if (mask.size() != size_t(rows * cols))
    throw FormatError("depth mask size mismatch: " + base);
  map.mask.resize(rows, cols);
  size_t at = 0;
  for (Index i = 0; i < rows; ++i)
    for (Index c = 0; c < cols; ++c) map.mask(i, c) = mask[at++] != 0;

  rigid::CameraParams cam;
  auto mat = [&](const json& a, Mat3<double>& m) {
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) m(i, k) = a[3 * i + k].get<double>();
  };
  mat(j.at("intrinsics"), cam.intrinsics);
  mat(j.at("rotation"), cam.rotation);
  for (int a = 0; a < 3; ++a)
    cam.translation[a] = j.at("translation")[a].get<double>();
  return {map, cam};
}

// ---------------------------------------------------------------- Manifest

Manifest read_manifest(const std::string& path) {
  const json j = load_json(path);
  check_keys(j, {"fps", "field", "records"}, "manifest");
  Manifest m;
  m.fps = get_number(j, "fps", 24.0);
  if (j.contains("field")) m.field = parse_field_spec(j.at("field"));
  if (!j.contains("records") || !j.at("records").is_array())
    throw FormatError("manifest needs a records array: " + path);
  for (const auto& r : j.at("records")) {
    check_keys(r, {"id", "sequence", "wav"}, "manifest record");
    ManifestRecord rec;
    rec.id = r.at("id").get<std::string>();
    rec.sequence = r.at("sequence").get<std::string>();
    rec.wav = r.at("wav").get<std::string>();
    m.records.push_back(rec);
  }
  return m;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  json j;
  j["fps"] = manifest.fps;
  j["field"] = field_spec_to_json(manifest.field);
  json records = json::array();
  for (const auto& r : manifest.records) {
    json rec;
    rec["id"] = r.id;
    rec["sequence"] = r.sequence;
    rec["wav"] = r.wav;
    records.push_back(rec);
  }
  j["records"] = records;
  save_json(path, j);
}

training::PairedDataset<float> load_dataset(const Manifest& manifest,
                                            const std::string& base_dir) {
  training::PairedDataset<float> dataset;
  const std::string prefix = base_dir.empty() ? "" : base_dir + "/";
  for (const auto& rec : manifest.records) {
    training::PairedRecord<float> r;
    r.id = rec.id;
    r.codes = read_sequence(prefix + rec.sequence).codes;
    const audio::Waveform wav = read_wav(prefix + rec.wav);
    r.cond = audio::audio_stream<float>(wav);
    dataset.records.push_back(std::move(r));
  }
  return dataset;
}

// -------------------------------------------------------------------- CSV

void write_loss_csv(const std::string& path,
                    const std::vector<double>& losses) {
  std::string out = "step,loss\n";
  char line[64];
  for (size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.10g\n", i, losses[i]);
    out += line;
  }
  write_file(path, out);
}

// --------------------------------------------------- Config section parsing

training::TrainConfig parse_train_config(const json& j) {
  check_keys(j,
             {"clip_frames", "cfg_drop_prob", "aug_lo", "aug_hi",
              "learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "steps",
              "batch_size", "seed", "sorted_loss_reduction"},
             "train config");
  training::TrainConfig c;
  c.clip_frames = Index(get_number(j, "clip_frames", double(c.clip_frames)));
  c.cfg_drop_prob = get_number(j, "cfg_drop_prob", c.cfg_drop_prob);
  c.aug_lo = get_number(j, "aug_lo", c.aug_lo);
  c.aug_hi = get_number(j, "aug_hi", c.aug_hi);
  c.learning_rate = get_number(j, "learning_rate", c.learning_rate);
  c.adam_beta1 = get_number(j, "adam_beta1", c.adam_beta1);
  c.adam_beta2 = get_number(j, "adam_beta2", c.adam_beta2);
  c.adam_eps = get_number(j, "adam_eps", c.adam_eps);
  c.steps = int(get_number(j, "steps", c.steps));
  c.batch_size = int(get_number(j, "batch_size", c.batch_size));
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  if (j.contains("sorted_loss_reduction"))
    c.sorted_loss_reduction = j["sorted_loss_reduction"].get<bool>();
  c.validate();
  return c;
}

fitting::FitConfig parse_fit_config(const json& j) {
  check_keys(j,
             {"iters", "window", "overlap", "lr_initial", "lr_late",
              "lr_drop_iter", "lambda_sdf", "lambda_temp", "lambda_reg",
              "huber_delta", "sample_count", "seed", "threads"},
             "fit config");
  fitting::FitConfig c;
  c.iters = int(get_number(j, "iters", c.iters));
  c.window = int(get_number(j, "window", c.window));
  c.overlap = int(get_number(j, "overlap", c.overlap));
  c.lr_initial = get_number(j, "lr_initial", c.lr_initial);
  c.lr_late = get_number(j, "lr_late", c.lr_late);
  c.lr_drop_iter = int(get_number(j, "lr_drop_iter", c.lr_drop_iter));
  c.lambda_sdf = get_number(j, "lambda_sdf", c.lambda_sdf);
  c.lambda_temp = get_number(j, "lambda_temp", c.lambda_temp);
  c.lambda_reg = get_number(j, "lambda_reg", c.lambda_reg);
  c.huber_delta = get_number(j, "huber_delta", c.huber_delta);
  c.sample_count = Index(get_number(j, "sample_count", double(c.sample_count)));
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  c.threads = int(get_number(j, "threads", c.threads));
  c.validate();
  return c;
}

rigid::TemplateFitConfig parse_template_fit_config(const json& j) {
  check_keys(j,
             {"iters", "refresh_every", "lr", "lambda_lmk", "lambda_geo",
              "lambda_reg", "lambda_smooth", "outlier_tau", "weight_mouth",
              "weight_jaw", "weight_eyes", "weight_other", "seed"},
             "template fit config");
  rigid::TemplateFitConfig c;
  c.iters = int(get_number(j, "iters", c.iters));
  c.refresh_every = int(get_number(j, "refresh_every", c.refresh_every));
  c.lr = get_number(j, "lr", c.lr);
  c.lambda_lmk = get_number(j, "lambda_lmk", c.lambda_lmk);
  c.lambda_geo = get_number(j, "lambda_geo", c.lambda_geo);
  c.lambda_reg = get_number(j, "lambda_reg", c.lambda_reg);
  c.lambda_smooth = get_number(j, "lambda_smooth", c.lambda_smooth);
  c.outlier_tau = get_number(j, "outlier_tau", c.outlier_tau);
  c.region.mouth = get_number(j, "weight_mouth", c.region.mouth);
  c.region.jaw = get_number(j, "weight_jaw", c.region.jaw);
  c.region.eyes = get_number(j, "weight_eyes", c.region.eyes);
  c.region.other = get_number(j, "weight_other", c.region.other);
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  return c;
}

meshing::GridSpec parse_grid_spec(const json& j) {
  check_keys(j, {"resolution", "lo", "hi"}, "grid spec");
  meshing::GridSpec g;
  if (j.contains("resolution")) {
    if (j["resolution"].is_number()) {
      const int r = j["resolution"].get<int>();
      g.resolution = {r, r, r};
    } else {
      for (int a = 0; a < 3; ++a)
        g.resolution[a] = j["resolution"][a].get<int>();
    }
  }
  if (j.contains("lo"))
    for (int a = 0; a < 3; ++a) g.lo[a] = j["lo"][a].get<double>();
  if (j.contains("hi"))
    for (int a = 0; a < 3; ++a) g.hi[a] = j["hi"][a].get<double>();
  g.validate();
  return g;
}

field::SmoothingKernel parse_smoothing_kernel(const json& j) {
  check_keys(j, {"center", "sigma"}, "smoothing kernel");
  field::SmoothingKernel k;
  if (j.contains("center"))
    for (int a = 0; a < 3; ++a) k.center[a] = j["center"][a].get<double>();
  if (j.contains("sigma"))
    for (int a = 0; a < 3; ++a) k.sigma[a] = j["sigma"][a].get<double>();
  return k;
}

}  // namespace io
}  // namespace facetalk
