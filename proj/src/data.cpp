#include "data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tokenizer.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace evqa {

const char* const kShapeWords[4] = {"circle", "square", "triangle", "cross"};
const char* const kColorWords[4] = {"red", "green", "blue", "yellow"};
const char* const kFamilyWords[4] = {"solo", "row", "column", "scatter"};

namespace {

const char* const kNumberWords[6] = {"zero", "one", "two", "three", "four", "five"};

// Noise sigma per tier; tier 5 additionally zeroes a band of rows.
const double kTierSigma[6] = {0.0, 0.0, 0.05, 0.15, 0.30, 0.15};

constexpr double kBackground = 0.08;

const double kColorRgb[4][3] = {
    {0.95, 0.10, 0.10},
    {0.10, 0.95, 0.10},
    {0.10, 0.10, 0.95},
    {0.95, 0.95, 0.10},
};

uint64_t mix_seed(uint64_t seed, uint64_t idx) {
  uint64_t buf[2] = {seed, idx};
  return fnv1a64(buf, sizeof(buf));
}

bool shape_hit(int shape, int y, int x, int pp) {
  const double cy = (pp - 1) / 2.0, cx = (pp - 1) / 2.0;
  const double dy = y - cy, dx = x - cx;
  switch (shape) {
    case 0:  // circle
      return dy * dy + dx * dx <= (0.42 * pp) * (0.42 * pp);
    case 1:  // square
      return y >= 1 && y < pp - 1 && x >= 1 && x < pp - 1;
    case 2:  // triangle, filled lower-left half
      return y >= x;
    case 3:  // cross
      return std::fabs(dy) <= 0.16 * pp || std::fabs(dx) <= 0.16 * pp;
    default:
      throw IndexError("unknown shape id " + std::to_string(shape));
  }
}

std::string tier_word(int tier) { return tier <= 2 ? "clean" : (tier == 5 ? "occluded" : "noisy"); }

struct QaDraft {
  QType qtype;
  AnswerClass cls;
  std::string question, answer;
};

std::vector<QaDraft> draft_questions(const Scene& scene, const SyntheticSpec& spec, Rng& rng) {
  std::vector<QaDraft> out;
  out.push_back({QType::View, AnswerClass::Closed, "which layout is shown",
                 kFamilyWords[scene.family]});

  // Visibility query: an in-scene concept half the time, an absent one otherwise.
  int qc = 0, qs = 0;
  if (!scene.objects.empty() && rng.uniform() < 0.5) {
    const auto& o = scene.objects[static_cast<size_t>(rng.below(
        static_cast<int64_t>(scene.objects.size())))];
    qc = o.color;
    qs = o.shape;
  } else {
    for (int tries = 0; tries < 64; ++tries) {
      qc = static_cast<int>(rng.below(4));
      qs = static_cast<int>(rng.below(4));
      bool present = false;
      for (const auto& o : scene.objects) present = present || (o.color == qc && o.shape == qs);
      if (!present) break;
    }
  }
  const bool vis = concept_visible(scene, qc, qs, spec.patch_px);
  out.push_back({QType::Visibility, AnswerClass::Closed,
                 std::string("is a ") + kColorWords[qc] + " " + kShapeWords[qs] + " visible",
                 vis ? "yes" : "no"});

  out.push_back({QType::Quality, AnswerClass::Closed, "is the image quality sufficient",
                 scene.tier <= 2 ? "yes" : "no"});

  const bool feasible = scene.tier <= 2 && target_present(scene) &&
                        !object_fully_occluded(
                            scene, scene.objects[static_cast<size_t>(std::max(scene.target_index, 0))],
                            spec.patch_px) &&
                        scene.target_index >= 0;
  out.push_back({QType::Feasibility, AnswerClass::Closed, "can the target be measured",
                 feasible ? "yes" : "no"});

  if (target_present(scene))
    out.push_back({QType::Guidance, AnswerClass::Open, "where should the view shift",
                   guidance_answer(scene, spec.grid)});
  return out;
}

std::vector<std::string> draft_captions(const Scene& scene, const SyntheticSpec& spec) {
  std::vector<std::string> caps;
  const SceneObject& o =
      scene.target_index >= 0 ? scene.objects[static_cast<size_t>(scene.target_index)]
                              : scene.objects.front();
  caps.push_back(std::string("a ") + kColorWords[o.color] + " " + kShapeWords[o.shape] +
                 " at row " + kNumberWords[o.row] + " column " + kNumberWords[o.col] + " on a " +
                 tier_word(scene.tier) + " image");
  std::string c2 = std::string("the layout is ") + kFamilyWords[scene.family] + " and the target ";
  if (target_present(scene)) {
    const std::string dir = guidance_answer(scene, spec.grid);
    c2 += dir == "centered" ? "is centered" : ("should " + dir);
  } else {
    c2 += "is absent";
  }
  caps.push_back(c2);
  const bool quality = scene.tier <= 2;
  const bool feasible = quality && target_present(scene);
  caps.push_back(std::string("quality sufficient ") + (quality ? "yes" : "no") +
                 " and measurement feasible " + (feasible ? "yes" : "no"));
  return caps;
}

void put_u32_le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

std::string image_bytes(const Image& img) {
  std::string out;
  put_u32_le(out, static_cast<uint32_t>(img.c));
  put_u32_le(out, static_cast<uint32_t>(img.h));
  put_u32_le(out, static_cast<uint32_t>(img.w));
  for (float f : img.px) {
    uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32_le(out, bits);
  }
  return out;
}

Image image_from_bytes(const unsigned char* p, size_t n, const std::string& what) {
  if (n < 12) throw InputError("image data '" + what + "' truncated before header");
  Image img;
  img.c = get_u32_le(p);
  img.h = get_u32_le(p + 4);
  img.w = get_u32_le(p + 8);
  const size_t count = static_cast<size_t>(img.c * img.h * img.w);
  if (n != 12 + 4 * count)
    throw InputError("image data '" + what + "' has " + std::to_string(n) + " bytes, expected " +
                     std::to_string(12 + 4 * count));
  img.px.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const uint32_t bits = get_u32_le(p + 12 + 4 * i);
    std::memcpy(&img.px[i], &bits, sizeof(float));
  }
  return img;
}

}  // namespace

const char* qtype_name(QType t) {
  switch (t) {
    case QType::View: return "view";
    case QType::Visibility: return "visibility";
    case QType::Quality: return "quality";
    case QType::Feasibility: return "feasibility";
    case QType::Guidance: return "guidance";
  }
  return "?";
}

QType qtype_from_name(const std::string& s) {
  for (QType t : {QType::View, QType::Visibility, QType::Quality, QType::Feasibility,
                  QType::Guidance})
    if (s == qtype_name(t)) return t;
  throw InputError("unknown question type '" + s + "'");
}

void SyntheticSpec::validate() const {
  if (grid < 2 || grid > 6) throw ConfigError("grid must be in [2,6]");
  if (train_images <= 0 || val_images < 0 || test_images <= 0)
    throw ConfigError("split sizes must be positive (val may be 0)");
  if (target_rate < 0.0 || target_rate > 1.0) throw ConfigError("target_rate outside [0,1]");
  if (image_px != grid * patch_px)
    throw ConfigError("image_px " + std::to_string(image_px) + " must equal grid*patch_px " +
                      std::to_string(grid * patch_px));
  if (channels != 3) throw ConfigError("renderer expects 3 channels");
}

bool object_fully_occluded(const Scene& s, const SceneObject& o, int patch_px) {
  if (s.band_r1 <= s.band_r0) return false;
  const int y0 = o.row * patch_px, y1 = y0 + patch_px;
  return y0 >= s.band_r0 && y1 <= s.band_r1;
}

bool concept_visible(const Scene& s, int color, int shape, int patch_px) {
  for (const auto& o : s.objects)
    if (o.color == color && o.shape == shape && !object_fully_occluded(s, o, patch_px)) return true;
  return false;
}

bool target_present(const Scene& s) { return s.target_index >= 0; }

std::string guidance_answer(const Scene& s, int grid) {
  if (s.target_index < 0) throw ContractError("guidance_answer: scene has no target");
  const SceneObject& o = s.objects[static_cast<size_t>(s.target_index)];
  const double cy = o.row + 0.5 - grid / 2.0;
  const double cx = o.col + 0.5 - grid / 2.0;
  if (std::max(std::fabs(cx), std::fabs(cy)) <= 0.5) return "centered";
  if (std::fabs(cx) >= std::fabs(cy)) return cx < 0 ? "shift left" : "shift right";
  return cy < 0 ? "shift up" : "shift down";
}

Image render_image(const Scene& scene, const SyntheticSpec& spec, uint64_t noise_seed) {
  const int pp = spec.patch_px, px = spec.image_px;
  Image img;
  img.c = spec.channels;
  img.h = px;
  img.w = px;
  img.px.assign(static_cast<size_t>(img.c * img.h * img.w), static_cast<float>(kBackground));
  for (const auto& o : scene.objects) {
    for (int y = 0; y < pp; ++y)
      for (int x = 0; x < pp; ++x) {
        if (!shape_hit(o.shape, y, x, pp)) continue;
        const int iy = o.row * pp + y, ix = o.col * pp + x;
        for (int ch = 0; ch < 3; ++ch)
          img.px[static_cast<size_t>((ch * px + iy) * px + ix)] =
              static_cast<float>(kColorRgb[o.color][ch]);
      }
  }
  const double sigma = kTierSigma[scene.tier];
  if (sigma > 0.0) {
    Rng rng(noise_seed);
    for (auto& v : img.px) v += static_cast<float>(rng.normal() * sigma);
  }
  if (scene.tier == 5) {
    for (int ch = 0; ch < 3; ++ch)
      for (int y = scene.band_r0; y < scene.band_r1; ++y)
        for (int x = 0; x < px; ++x) img.px[static_cast<size_t>((ch * px + y) * px + x)] = 0.0f;
  }
  return img;
}

Scene make_scene(const SyntheticSpec& spec, Rng& rng) {
  const int g = spec.grid;
  Scene s;
  s.family = static_cast<int>(rng.below(4));
  s.tier = 1 + static_cast<int>(rng.below(5));

  std::vector<std::pair<int, int>> cells;
  auto has_cell = [&cells](int r, int c) {
    for (auto& [cr, cc] : cells)
      if (cr == r && cc == c) return true;
    return false;
  };
  switch (s.family) {
    case 0: {  // solo
      cells.emplace_back(static_cast<int>(rng.below(g)), static_cast<int>(rng.below(g)));
      break;
    }
    case 1: {  // row
      const int r = static_cast<int>(rng.below(g));
      const int count = std::min(2 + static_cast<int>(rng.below(2)), g);
      while (static_cast<int>(cells.size()) < count) {
        const int c = static_cast<int>(rng.below(g));
        if (!has_cell(r, c)) cells.emplace_back(r, c);
      }
      break;
    }
    case 2: {  // column
      const int c = static_cast<int>(rng.below(g));
      const int count = std::min(2 + static_cast<int>(rng.below(2)), g);
      while (static_cast<int>(cells.size()) < count) {
        const int r = static_cast<int>(rng.below(g));
        if (!has_cell(r, c)) cells.emplace_back(r, c);
      }
      break;
    }
    default: {  // scatter: mixed rows and columns
      const int count = std::min(3 + static_cast<int>(rng.below(2)), g * g);
      for (int tries = 0; tries < 256; ++tries) {
        cells.clear();
        while (static_cast<int>(cells.size()) < count) {
          const int r = static_cast<int>(rng.below(g));
          const int c = static_cast<int>(rng.below(g));
          if (!has_cell(r, c)) cells.emplace_back(r, c);
        }
        bool same_row = true, same_col = true;
        for (auto& [r, c] : cells) {
          same_row = same_row && r == cells[0].first;
          same_col = same_col && c == cells[0].second;
        }
        if (!same_row && !same_col) break;
      }
      break;
    }
  }

  for (auto& [r, c] : cells) {
    SceneObject o;
    o.row = r;
    o.col = c;
    do {
      o.shape = static_cast<int>(rng.below(4));
      o.color = static_cast<int>(rng.below(4));
    } while (o.color == kTargetColor && o.shape == kTargetShape);
    s.objects.push_back(o);
  }
  if (rng.uniform() < spec.target_rate) {
    s.target_index = static_cast<int>(rng.below(static_cast<int64_t>(s.objects.size())));
    s.objects[static_cast<size_t>(s.target_index)].shape = kTargetShape;
    s.objects[static_cast<size_t>(s.target_index)].color = kTargetColor;
  }
  if (s.tier == 5) {
    const int bh = 10 + static_cast<int>(rng.below(7));
    s.band_r0 = static_cast<int>(rng.below(spec.image_px - bh + 1));
    s.band_r1 = s.band_r0 + bh;
  }
  return s;
}

Corpus generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  const Tokenizer& tok = Tokenizer::instance();
  Corpus corpus;
  for (int idx = 0; idx < spec.total_images(); ++idx) {
    const std::string split = idx < spec.train_images
                                  ? "train"
                                  : (idx < spec.train_images + spec.val_images ? "val" : "test");
    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(idx)));
    const Scene scene = make_scene(spec, rng);
    auto image = std::make_shared<Image>(
        render_image(scene, spec, mix_seed(spec.seed, 0x100000u + static_cast<uint64_t>(idx))));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "img%05d", idx);
    const std::string image_id = buf;

    for (const auto& qa : draft_questions(scene, spec, rng)) {
      VQASample s;
      s.id = image_id + "_" + qtype_name(qa.qtype);
      s.image_id = image_id;
      s.image = image;
      s.scene = scene;
      s.question = qa.question;
      s.answer = qa.answer;
      s.q_ids = tok.encode(qa.question);
      s.a_ids = tok.encode(qa.answer);
      if (tok.decode(s.q_ids) != qa.question || tok.decode(s.a_ids) != qa.answer)
        throw ContractError("token round-trip failed for sample " + s.id);
      s.qtype = qa.qtype;
      s.answer_class = qa.cls;
      s.tier = scene.tier;
      s.split = split;
      corpus.samples.push_back(std::move(s));
    }
    int ci = 0;
    for (const auto& cap : draft_captions(scene, spec)) {
      CaptionSample c;
      c.id = image_id + "_cap" + std::to_string(ci++);
      c.image_id = image_id;
      c.image = image;
      c.caption = cap;
      c.ids = tok.encode(cap);
      c.split = split;
      corpus.captions.push_back(std::move(c));
    }
  }
  std::sort(corpus.samples.begin(), corpus.samples.end(),
            [](const VQASample& a, const VQASample& b) { return a.id < b.id; });
  std::sort(corpus.captions.begin(), corpus.captions.end(),
            [](const CaptionSample& a, const CaptionSample& b) { return a.id < b.id; });
  return corpus;
}

Scene exemplar_scene(const std::string& term, const SyntheticSpec& spec, std::string* provenance) {
  const int g = spec.grid;
  const int cr = (g - 1) / 2, cc = (g - 1) / 2;
  Scene s;
  s.tier = 1;
  s.family = 0;
  auto note = [&](const std::string& text) {
    if (provenance) *provenance = text;
  };
  auto single = [&](int color, int shape, int r, int c) {
    s.objects.push_back({shape, color, r, c});
  };

  for (int ci = 0; ci < 4; ++ci)
    if (term == kColorWords[ci]) {
      single(ci, 1, cr, cc);
      note(std::string("exemplar: ") + kColorWords[ci] + " square at grid center, tier 1");
      return s;
    }
  for (int si = 0; si < 4; ++si)
    if (term == kShapeWords[si]) {
      single(1, si, cr, cc);
      note(std::string("exemplar: green ") + kShapeWords[si] + " at grid center, tier 1");
      return s;
    }
  if (term == "yes") {
    single(kTargetColor, kTargetShape, cr, cc);
    s.target_index = 0;
    note("exemplar: target at grid center, tier 1");
    return s;
  }
  if (term == "no") {
    single(1, 1, cr, cc);
    s.tier = 5;
    s.band_r0 = spec.image_px / 4;
    s.band_r1 = s.band_r0 + spec.image_px / 2;
    note("exemplar: occluded non-target scene, tier 5");
    return s;
  }
  for (int f = 0; f < 4; ++f)
    if (term == kFamilyWords[f]) {
      s.family = f;
      switch (f) {
        case 0: single(2, 1, cr, cc); break;
        case 1:
          for (int c = 0; c < std::min(3, g); ++c) single((c + 1) % 4, 1 + c % 3, cr, c);
          break;
        case 2:
          for (int r = 0; r < std::min(3, g); ++r) single((r + 1) % 4, 1 + r % 3, r, cc);
          break;
        default:
          single(1, 1, 0, 0);
          single(2, 2, g - 1, 1);
          single(3, 3, 1, g - 1);
          break;
      }
      note(std::string("exemplar: canonical ") + kFamilyWords[f] + " layout, tier 1");
      return s;
    }
  // Guidance phrases: scan for a cell whose direction matches the term.
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      Scene probe;
      probe.objects.push_back({kTargetShape, kTargetColor, r, c});
      probe.target_index = 0;
      probe.tier = 1;
      if (guidance_answer(probe, g) == term) {
        note("exemplar: target at row " + std::to_string(r) + " column " + std::to_string(c) +
             ", tier 1");
        return probe;
      }
    }
  throw ConfigError("no exemplar provenance for vocabulary term '" + term + "'");
}

std::vector<std::string> normalize_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double score_open_recall(const std::string& prediction, const std::string& truth) {
  auto t = normalize_tokens(truth);
  if (t.empty()) throw ContractError("score_open_recall: empty truth");
  auto p = normalize_tokens(prediction);
  std::map<std::string, int> counts;
  for (const auto& w : p) counts[w]++;
  int hit = 0;
  for (const auto& w : t) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      ++hit;
      --it->second;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(t.size());
}

int score_closed_exact(const std::string& prediction, const std::string& truth) {
  return normalize_tokens(prediction) == normalize_tokens(truth) ? 1 : 0;
}

void write_image_file(const Image& img, const std::string& path) {
  const std::string bytes = image_bytes(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write image file '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image load_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return image_from_bytes(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), path);
}

void write_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  std::vector<std::string> written;
  auto image_rel = [](const std::string& image_id) { return "images/" + image_id + ".f32"; };

  for (const auto& s : corpus.samples) {
    const std::string rel = image_rel(s.image_id);
    if (std::find(written.begin(), written.end(), rel) == written.end()) {
      write_image_file(*s.image, (fs::path(dir) / rel).string());
      written.push_back(rel);
    }
  }
  std::ofstream ds((fs::path(dir) / "dataset.jsonl").string(), std::ios::binary);
  for (const auto& s : corpus.samples) {
    ordered_json row;
    row["id"] = s.id;
    row["image"] = image_rel(s.image_id);
    row["question"] = s.question;
    row["answer"] = s.answer;
    row["qtype"] = qtype_name(s.qtype);
    row["answer_class"] = s.answer_class == AnswerClass::Open ? "open" : "closed";
    row["tier"] = s.tier;
    row["split"] = s.split;
    ds << row.dump() << "\n";
  }
  std::ofstream cs((fs::path(dir) / "captions.jsonl").string(), std::ios::binary);
  for (const auto& c : corpus.captions) {
    ordered_json row;
    row["id"] = c.id;
    row["image"] = image_rel(c.image_id);
    row["caption"] = c.caption;
    row["split"] = c.split;
    cs << row.dump() << "\n";
  }
}

namespace {

std::shared_ptr<Image> resolve_image(const std::string& dir, const std::string& value,
                                     std::map<std::string, std::shared_ptr<Image>>& cache) {
  auto it = cache.find(value);
  if (it != cache.end()) return it->second;
  std::shared_ptr<Image> img;
  if (value.rfind("base64:", 0) == 0) {
    const auto bytes = base64_decode(value.substr(7));
    img = std::make_shared<Image>(image_from_bytes(bytes.data(), bytes.size(), "inline image"));
  } else {
    img = std::make_shared<Image>(load_image_file((fs::path(dir) / value).string()));
  }
  cache.emplace(value, img);
  return img;
}

}  // namespace

Corpus load_corpus(const std::string& dir) {
  const Tokenizer& tok = Tokenizer::instance();
  Corpus corpus;
  std::map<std::string, std::shared_ptr<Image>> cache;

  const std::string ds_path = (fs::path(dir) / "dataset.jsonl").string();
  std::ifstream ds(ds_path);
  if (!ds) throw InputError("cannot open dataset file '" + ds_path + "'");
  std::string line;
  size_t line_no = 0;
  while (std::getline(ds, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json row;
    try {
      row = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw InputError("dataset.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    VQASample s;
    s.id = row.at("id").get<std::string>();
    const std::string image_value = row.at("image").get<std::string>();
    s.image = resolve_image(dir, image_value, cache);
    s.image_id = s.id.substr(0, s.id.find('_'));
    s.question = row.at("question").get<std::string>();
    s.answer = row.at("answer").get<std::string>();
    s.qtype = qtype_from_name(row.at("qtype").get<std::string>());
    s.answer_class =
        row.at("answer_class").get<std::string>() == "open" ? AnswerClass::Open : AnswerClass::Closed;
    s.tier = row.at("tier").get<int>();
    s.split = row.at("split").get<std::string>();
    s.q_ids = tok.encode(s.question);
    s.a_ids = tok.encode(s.answer);
    corpus.samples.push_back(std::move(s));
  }

  const std::string cap_path = (fs::path(dir) / "captions.jsonl").string();
  std::ifstream cs(cap_path);
  if (cs) {
    line_no = 0;
    while (std::getline(cs, line)) {
      ++line_no;
      if (line.empty()) continue;
      ordered_json row;
      try {
        row = ordered_json::parse(line);
      } catch (const std::exception& e) {
        throw InputError("captions.jsonl line " + std::to_string(line_no) + ": " + e.what());
      }
      CaptionSample c;
      c.id = row.at("id").get<std::string>();
      c.image = resolve_image(dir, row.at("image").get<std::string>(), cache);
      c.image_id = c.id.substr(0, c.id.find('_'));
      c.caption = row.at("caption").get<std::string>();
      c.ids = tok.encode(c.caption);
      c.split = row.at("split").get<std::string>();
      corpus.captions.push_back(std::move(c));
    }
  }
  return corpus;
}

std::string base64_encode(const unsigned char* data, size_t n) {
  static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (size_t i = 0; i < n; i += 3) {
    uint32_t v = static_cast<uint32_t>(data[i]) << 16;
    if (i + 1 < n) v |= static_cast<uint32_t>(data[i + 1]) << 8;
    if (i + 2 < n) v |= static_cast<uint32_t>(data[i + 2]);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(i + 1 < n ? tbl[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < n ? tbl[v & 63] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw InputError(std::string("invalid base64 character '") + c + "'");
  };
  std::vector<unsigned char> out;
  uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    const int v = val(c);
    if (v < 0) break;
    acc = (acc << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace evqa
