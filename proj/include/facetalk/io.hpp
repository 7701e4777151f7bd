#pragma once

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "facetalk/common.hpp"
#include "facetalk/condstream.hpp"
#include "facetalk/denoiser.hpp"
#include "facetalk/headfield.hpp"
#include "facetalk/mesher.hpp"
#include "facetalk/rigidfit.hpp"
#include "facetalk/seqfit.hpp"
#include "facetalk/trainer.hpp"

namespace facetalk {
namespace io {

using nlohmann::json;

// ---------------------------------------------------------------- JSON utils

json load_json(const std::string& path);
void save_json(const std::string& path, const json& j);

// Rejects unknown keys so config typos fail loudly.
void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context);

// ------------------------------------------------------------------ WAV I/O
// PCM, 16-bit signed little-endian, mono, 16000 Hz; other encodings rejected.

audio::Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const audio::Waveform& wav);

// ----------------------------------------------------------- Sequence files
// magic "FTSQ" | u32 version | u32 N | u32 dim | f32 fps | N*dim f32 payload
// (little-endian, row-major).

struct SequenceData {
  MatX<float> codes;
  float fps = 24.0f;
};

void write_sequence(const std::string& path, const MatX<float>& codes,
                    float fps = 24.0f);
SequenceData read_sequence(const std::string& path);

// ------------------------------------------------------------- Checkpoints
// magic "FTCK" | u32 version | u32 json_len | config json | u32 tensor count
// | per tensor: u32 name_len, name, u32 rows, u32 cols, rows*cols f32
// (row-major). Exact roundtrip.

struct FieldSpec {
  uint64_t seed = 1;
  VecX<double> base;  // first 8 identity entries

  FieldSpec() : base(field::default_identity().head(8)) {}

  field::HeadField make() const { return field::make_head_field(seed); }
  VecX<double> identity() const {
    VecX<double> id = VecX<double>::Zero(kIdentityDim);
    id.head(8) = base;
    return id;
  }
};

struct ScheduleSpec {
  int steps = 1000;
  double offset = 0.008;
};

struct Checkpoint {
  model::DenoiserParams<float> params;
  FieldSpec field;
  ScheduleSpec schedule;
};

void save_checkpoint(const std::string& path,
                     const model::DenoiserParams<float>& params,
                     const FieldSpec& field, const ScheduleSpec& schedule);
Checkpoint load_checkpoint(const std::string& path);

// -------------------------------------------------------------------- OBJ

std::string obj_to_string(const meshing::MeshBuffer& mesh);
void export_obj(const meshing::MeshBuffer& mesh, const std::string& path);
meshing::MeshBuffer import_obj(const std::string& path);

// ------------------------------------------------------------ Raw volumes
// <base>.raw: f32 little-endian values; <base>.json: dims and bounds.

void write_volume(const std::string& base, const meshing::ScalarGrid& grid);
meshing::ScalarGrid read_volume(const std::string& base);

// ------------------------------------------------------- Point-cloud frames
// <base>.raw: concatenated f32 xyz triples; <base>.json: frame count and
// points per frame.

void write_clouds(const std::string& base,
                  const std::vector<Points<double>>& frames);
std::vector<Points<double>> read_clouds(const std::string& base);

// --------------------------------------------------------------- Landmarks
// Raw f32 records of 68x3 per frame; the frame count comes from the size.

void write_landmarks(const std::string& path,
                     const std::vector<Points<double>>& frames);
std::vector<Points<double>> read_landmarks(const std::string& path);

// -------------------------------------------------------------- Depth maps
// <base>.raw: f32 depth values; <base>.json: resolution, intrinsics,
// extrinsics, optional u8 mask file.

void write_depth(const std::string& base, const rigid::DepthMap& map,
                 const rigid::CameraParams& cam);
std::pair<rigid::DepthMap, rigid::CameraParams> read_depth(
    const std::string& base);

// ---------------------------------------------------------------- Manifest

struct ManifestRecord {
  std::string id;
  std::string sequence;  // path relative to the manifest
  std::string wav;
};

struct Manifest {
  double fps = 24.0;
  FieldSpec field;
  std::vector<ManifestRecord> records;
};

Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& manifest);

// Loads every record and caches the audio featurization.
training::PairedDataset<float> load_dataset(const Manifest& manifest,
                                            const std::string& base_dir);

// -------------------------------------------------------------------- CSV

void write_loss_csv(const std::string& path,
                    const std::vector<double>& losses);

// --------------------------------------------------- Config section parsing
// Each parser validates its section against the known keys and fills the
// struct defaults for everything absent.

training::TrainConfig parse_train_config(const json& j);
fitting::FitConfig parse_fit_config(const json& j);
rigid::TemplateFitConfig parse_template_fit_config(const json& j);
model::DenoiserConfig parse_model_config(const json& j);
meshing::GridSpec parse_grid_spec(const json& j);
field::SmoothingKernel parse_smoothing_kernel(const json& j);
FieldSpec parse_field_spec(const json& j);
ScheduleSpec parse_schedule_spec(const json& j);

json field_spec_to_json(const FieldSpec& f);
json schedule_spec_to_json(const ScheduleSpec& s);

}  // namespace io
}  // namespace facetalk
