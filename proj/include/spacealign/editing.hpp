#pragma once

#include "spacealign/alignment.hpp"
#include "spacealign/embedder.hpp"
#include "spacealign/generator.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace spacealign {

inline constexpr double kMaxAlpha = 3.0;

struct SemanticShift {
  LatentCode delta;
  std::vector<std::string> neutral_texts;
  std::vector<std::string> attr_texts;
  std::string prompt_bank_id;
  double default_alpha = 1.0;
  std::string checkpoint_hash;
  // Hash of the pipeline config that produced the checkpoint, when known.
  std::string config_hash;
  std::string created_at;

  bool operator==(const SemanticShift&) const = default;
};

void to_json(nlohmann::json& j, const SemanticShift& s);
void from_json(const nlohmann::json& j, SemanticShift& s);

// delta = F(avg(attr)) - F(avg(neutral)); both mapped codes are snapped to
// the latent grid first so the subtraction is exact.
SemanticShift extract_shift(const MappingNetwork& net, const EmbedderBackend& embedder, const PromptBank& bank,
                            const std::string& neutral, const std::string& attr, const std::string& checkpoint_hash);

// w + alpha * delta, alpha clamped to [-3, 3]. The scaled delta is snapped to
// the grid so edits of grid codes stay on the grid.
LatentCode apply_edit(const LatentCode& w, const SemanticShift& shift, double alpha);

struct EditResult {
  Image image;
  LatentCode code;
};

EditResult edit_image(const Image& img, const InversionBackend& inversion, const GeneratorBackend& generator,
                      const SemanticShift& shift, double alpha);

// generate(F(prompt_average(bank, text))).
Image text_to_image(const MappingNetwork& net, const EmbedderBackend& embedder, const PromptBank& bank,
                    const GeneratorBackend& generator, const std::string& text);

class ShiftLibrary {
 public:
  ShiftLibrary() = default;
  explicit ShiftLibrary(std::filesystem::path path) : path_(std::move(path)) {}

  // Loads the file if it exists; an absent file is an empty library.
  static ShiftLibrary open(const std::filesystem::path& path);
  void save() const;
  void save_as(const std::filesystem::path& path) const;

  bool contains(const std::string& name) const { return shifts_.count(name) > 0; }
  // Throws ContractError on a duplicate name unless replace is set.
  void add(const std::string& name, SemanticShift shift, bool replace = false);
  bool remove(const std::string& name);
  const SemanticShift& get(const std::string& name) const;
  const std::map<std::string, SemanticShift>& shifts() const { return shifts_; }
  const std::filesystem::path& path() const { return path_; }

  nlohmann::json to_json() const;
  static ShiftLibrary from_json(const nlohmann::json& j);

 private:
  std::filesystem::path path_;
  std::map<std::string, SemanticShift> shifts_;
};

// Stock edits against the neutral text "a shape". The signed attribute
// weights define the intended direction; every other attribute is non-target.
struct StockShift {
  std::string name;
  std::string neutral;
  std::string attr;
  std::vector<std::pair<Attr, double>> direction;

  bool is_target(std::size_t attr_index) const;
  // Weighted attribute change from before to after.
  double progress(const AttributeVector& before, const AttributeVector& after) const;
};

inline constexpr const char* kNeutralText = "a shape";
const std::vector<StockShift>& stock_shifts();
const StockShift& stock_shift(const std::string& name);

std::string utc_timestamp();

}  // namespace spacealign
