#include "spacealign/editing.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>

namespace spacealign {

void to_json(nlohmann::json& j, const SemanticShift& s) {
  const Mat& m = s.delta.rows();
  j = nlohmann::json{{"delta", std::vector<double>(m.data(), m.data() + m.size())},
                     {"shape", {s.delta.layers(), s.delta.dim()}},
                     {"neutral_texts", s.neutral_texts},
                     {"attr_texts", s.attr_texts},
                     {"bank_id", s.prompt_bank_id},
                     {"default_alpha", s.default_alpha},
                     {"checkpoint_hash", s.checkpoint_hash},
                     {"config_hash", s.config_hash},
                     {"created_at", s.created_at}};
}

void from_json(const nlohmann::json& j, SemanticShift& s) {
  try {
    s.delta = latent_from_json(nlohmann::json{{"shape", j.at("shape")}, {"data", j.at("delta")}});
    s.neutral_texts = j.at("neutral_texts").get<std::vector<std::string>>();
    s.attr_texts = j.at("attr_texts").get<std::vector<std::string>>();
    s.prompt_bank_id = j.at("bank_id").get<std::string>();
    s.default_alpha = j.at("default_alpha").get<double>();
    s.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
    s.config_hash = j.value("config_hash", "");
    s.created_at = j.value("created_at", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("shift record: ") + e.what());
  }
}

SemanticShift extract_shift(const MappingNetwork& net, const EmbedderBackend& embedder, const PromptBank& bank,
                            const std::string& neutral, const std::string& attr, const std::string& checkpoint_hash) {
  parse_caption(neutral);
  parse_caption(attr);
  const LatentCode to = snap_to_grid(net.map(prompt_average(embedder, bank, attr)));
  const LatentCode from = snap_to_grid(net.map(prompt_average(embedder, bank, neutral)));
  SemanticShift s;
  s.delta = LatentCode(Mat(to.rows() - from.rows()));
  s.neutral_texts = {neutral};
  s.attr_texts = {attr};
  s.prompt_bank_id = bank.id;
  s.checkpoint_hash = checkpoint_hash;
  s.created_at = utc_timestamp();
  return s;
}

LatentCode apply_edit(const LatentCode& w, const SemanticShift& shift, double alpha) {
  if (!w.same_shape(shift.delta)) {
    throw ContractError("shift has shape " + std::to_string(shift.delta.layers()) + "x" +
                        std::to_string(shift.delta.dim()) + " but the latent is " + std::to_string(w.layers()) + "x" +
                        std::to_string(w.dim()));
  }
  if (!std::isfinite(alpha)) throw ContractError("alpha must be finite");
  alpha = std::clamp(alpha, -kMaxAlpha, kMaxAlpha);
  const LatentCode step = snap_to_grid(LatentCode(Mat(alpha * shift.delta.rows())));
  return LatentCode(Mat(w.rows() + step.rows()));
}

EditResult edit_image(const Image& img, const InversionBackend& inversion, const GeneratorBackend& generator,
                      const SemanticShift& shift, double alpha) {
  EditResult r;
  r.code = apply_edit(inversion.invert(img), shift, alpha);
  r.image = generator.generate(r.code);
  return r;
}

Image text_to_image(const MappingNetwork& net, const EmbedderBackend& embedder, const PromptBank& bank,
                    const GeneratorBackend& generator, const std::string& text) {
  parse_caption(text);
  return generator.generate(net.map(prompt_average(embedder, bank, text)));
}

// ---------------------------------------------------------------------------

ShiftLibrary ShiftLibrary::open(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return ShiftLibrary(path);
  std::ifstream in(path);
  if (!in) throw DataError("cannot open shift library " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("shift library " + path.string() + ": " + e.what());
  }
  ShiftLibrary lib = from_json(j);
  lib.path_ = path;
  return lib;
}

void ShiftLibrary::save() const {
  if (path_.empty()) throw ContractError("shift library has no path");
  save_as(path_);
}

void ShiftLibrary::save_as(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write then rename so readers never see a half-written library.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << to_json().dump(1) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void ShiftLibrary::add(const std::string& name, SemanticShift shift, bool replace) {
  if (name.empty()) throw ContractError("shift name must not be empty");
  if (!replace && contains(name)) throw ContractError("shift '" + name + "' already exists");
  shifts_[name] = std::move(shift);
}

bool ShiftLibrary::remove(const std::string& name) { return shifts_.erase(name) > 0; }

const SemanticShift& ShiftLibrary::get(const std::string& name) const {
  const auto it = shifts_.find(name);
  if (it == shifts_.end()) throw DataError("unknown shift '" + name + "'");
  return it->second;
}

nlohmann::json ShiftLibrary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, shift] : shifts_) j[name] = shift;
  return j;
}

ShiftLibrary ShiftLibrary::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("shift library must be a JSON object");
  ShiftLibrary lib;
  for (const auto& [name, value] : j.items()) lib.shifts_[name] = value.get<SemanticShift>();
  return lib;
}

// ---------------------------------------------------------------------------

bool StockShift::is_target(std::size_t attr_index) const {
  for (const auto& [a, w] : direction) {
    if (static_cast<std::size_t>(a) == attr_index) return true;
  }
  return false;
}

double StockShift::progress(const AttributeVector& before, const AttributeVector& after) const {
  double p = 0.0;
  for (const auto& [a, w] : direction) p += w * (after[a] - before[a]);
  return p;
}

const std::vector<StockShift>& stock_shifts() {
  static const std::vector<StockShift> shifts{
      {"large", kNeutralText, "a large shape", {{kSize, 1.0}}},
      {"small", kNeutralText, "a small shape", {{kSize, -1.0}}},
      {"round", kNeutralText, "a round shape", {{kRoundness, 1.0}}},
      {"square", kNeutralText, "a square shape", {{kRoundness, -1.0}}},
      {"red", kNeutralText, "a red shape", {{kFgR, 1.0}, {kFgG, -0.5}, {kFgB, -0.5}}},
      {"blue", kNeutralText, "a blue shape", {{kFgB, 1.0}, {kFgR, -0.5}, {kFgG, -0.5}}},
      {"light-background", kNeutralText, "a shape on a light background", {{kBgBrightness, 1.0}}},
      {"left-position", kNeutralText, "a shape at the left", {{kPosX, -1.0}}},
  };
  return shifts;
}

const StockShift& stock_shift(const std::string& name) {
  for (const auto& s : stock_shifts()) {
    if (s.name == name) return s;
  }
  throw DataError("no stock shift named '" + name + "'");
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace spacealign
