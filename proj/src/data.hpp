#pragma once

#include <memory>
#include <string>
#include <vector>

#include "common.hpp"

namespace evqa {

struct Image {
  int64_t c = 0, h = 0, w = 0;
  std::vector<float> px;  // channel-major, row-major within a channel
};

enum class QType { View, Visibility, Quality, Feasibility, Guidance };
enum class AnswerClass { Open, Closed };

const char* qtype_name(QType t);
QType qtype_from_name(const std::string& s);

// Scene description; all ground truth derives from it, never from pixels.
struct SceneObject {
  int shape = 0;  // circle, square, triangle, cross
  int color = 0;  // red, green, blue, yellow
  int row = 0, col = 0;
};

struct Scene {
  std::vector<SceneObject> objects;
  int family = 0;        // solo, row, column, scatter
  int tier = 1;          // 1 (clean) .. 5 (occluding band)
  int target_index = -1; // index into objects, -1 when absent
  int band_r0 = 0, band_r1 = 0;  // occluded pixel rows, tier 5 only
};

struct SyntheticSpec {
  int grid = 4;
  int train_images = 450;
  int val_images = 50;
  int test_images = 110;
  uint64_t seed = 7;
  double target_rate = 0.75;
  int image_px = 32;
  int patch_px = 8;
  int channels = 3;

  int total_images() const { return train_images + val_images + test_images; }
  void validate() const;
};

struct VQASample {
  std::string id;
  std::string image_id;
  std::shared_ptr<Image> image;
  Scene scene;
  std::string question, answer;
  std::vector<int> q_ids, a_ids;
  QType qtype = QType::View;
  AnswerClass answer_class = AnswerClass::Closed;
  int tier = 1;
  std::string split;
};

struct CaptionSample {
  std::string id;
  std::string image_id;
  std::shared_ptr<Image> image;
  std::string caption;
  std::vector<int> ids;
  std::string split;
};

struct Corpus {
  std::vector<VQASample> samples;
  std::vector<CaptionSample> captions;
};

extern const char* const kShapeWords[4];
extern const char* const kColorWords[4];
extern const char* const kFamilyWords[4];
constexpr int kTargetColor = 0;  // red
constexpr int kTargetShape = 0;  // circle

// Ground-truth rules (shared by the generator and by tests as an independent
// cross-check surface).
bool object_fully_occluded(const Scene& s, const SceneObject& o, int patch_px);
bool concept_visible(const Scene& s, int color, int shape, int patch_px);
bool target_present(const Scene& s);
std::string guidance_answer(const Scene& s, int grid);

Image render_image(const Scene& scene, const SyntheticSpec& spec, uint64_t noise_seed);
Scene make_scene(const SyntheticSpec& spec, Rng& rng);
Corpus generate_dataset(const SyntheticSpec& spec);

// Canonical exemplar scene for a vocabulary term; throws ConfigError for a
// term with no exemplar rule.
Scene exemplar_scene(const std::string& term, const SyntheticSpec& spec,
                     std::string* provenance = nullptr);

// Metric helpers.
std::vector<std::string> normalize_tokens(const std::string& s);
double score_open_recall(const std::string& prediction, const std::string& truth);
int score_closed_exact(const std::string& prediction, const std::string& truth);

// Dataset files: JSON Lines plus raw f32 image sidecars (u32 C,H,W header,
// little-endian payload).
void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);
void write_image_file(const Image& img, const std::string& path);
Image load_image_file(const std::string& path);

std::string base64_encode(const unsigned char* data, size_t n);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace evqa
