#include "mmalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mmalign/checkpoint.hpp"

namespace mmalign {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t keyed_hash(std::uint64_t seed, std::string_view purpose, const std::string& id) {
  std::uint64_t h = fnv1a(purpose, splitmix(seed));
  h = fnv1a(":", h);
  return splitmix(fnv1a(id, h));
}

double hash_uniform(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

Matrix random_rotation(Index d, Rng& rng) {
  Matrix g(d, d);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (Index j = 0; j < d; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

Vector random_unit(Index d, Rng& rng) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v[i] = standard_normal(rng);
  return v / v.norm();
}

}  // namespace

std::string to_string(Setting s) { return s == Setting::kA ? "A" : "B"; }

Setting setting_from_string(const std::string& s) {
  if (s == "A" || s == "a") return Setting::kA;
  if (s == "B" || s == "b") return Setting::kB;
  throw ConfigError("setting must be A or B, got '" + s + "'");
}

void SplitSpec::validate() const {
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("surviving rate p must lie in (0, 1]");
  if (!(train_fraction > 0.0) || val_fraction < 0.0 || train_fraction + val_fraction > 1.0) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= val, train + val <= 1");
  }
}

nlohmann::json to_json(const SplitSpec& s) {
  return {{"train_fraction", s.train_fraction},
          {"val_fraction", s.val_fraction},
          {"p", s.p},
          {"setting", to_string(s.setting)},
          {"victim", to_string(s.victim)},
          {"seed", s.seed}};
}

SplitSpec split_spec_from_json(const nlohmann::json& j) {
  try {
    SplitSpec s;
    s.train_fraction = j.at("train_fraction").get<double>();
    s.val_fraction = j.at("val_fraction").get<double>();
    s.p = j.at("p").get<double>();
    s.setting = setting_from_string(j.at("setting").get<std::string>());
    s.victim = j.at("victim").get<std::string>() == "m1" ? Modality::kM1 : Modality::kM2;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad split spec: ") + e.what());
  }
}

void SynthConfig::validate() const {
  if (n < 0) throw ConfigError("n must be >= 0");
  if (dim < 2) throw ConfigError("d must be >= 2");
  if (shift_min > shift_max) throw ConfigError("shift range is empty");
  const Index reach = std::max(std::abs(shift_min), std::abs(shift_max));
  if (length <= 2 * reach) throw ConfigError("l must exceed twice the largest shift");
  if (length < 2) throw ConfigError("l must be >= 2");
  if (!(mix_noise >= 0.0) || !(label_noise >= 0.0)) throw ConfigError("noise levels must be >= 0");
  if (!(smoothness >= 0.0 && smoothness < 1.0)) throw ConfigError("smoothness must lie in [0, 1)");
  if (!(shift_cue >= 0.0)) throw ConfigError("shift_cue must be >= 0");
  if (label_window < 0 || label_window > length) throw ConfigError("label_window must lie in [0, l]");
  if (num_classes == 1 || num_classes < 0) throw ConfigError("num_classes must be 0 or >= 2");
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"n", c.n},
          {"l", c.length},
          {"d", c.dim},
          {"shift_min", c.shift_min},
          {"shift_max", c.shift_max},
          {"mix_noise", c.mix_noise},
          {"label_noise", c.label_noise},
          {"seed", c.seed},
          {"smoothness", c.smoothness},
          {"identity_mixing", c.identity_mixing},
          {"label_x1_weight", c.label_x1_weight},
          {"label_x2_weight", c.label_x2_weight},
          {"num_classes", c.num_classes},
          {"shift_cue", c.shift_cue},
          {"label_window", c.label_window}};
}

Dataset synth_generate(const SynthConfig& c) {
  c.validate();
  const Index l = c.length;
  const Index d = c.dim;
  Rng global(c.seed);
  const Matrix rot = c.identity_mixing ? Matrix(Matrix::Identity(d, d)) : random_rotation(d, global);
  const Vector w1 = random_unit(d, global);
  const Vector w2 = random_unit(d, global);

  const double phi = c.smoothness;
  const double innov = std::sqrt(1.0 - phi * phi);
  const Index pad = std::max(std::abs(c.shift_min), std::abs(c.shift_max));
  const Index span = l + 2 * pad;
  const Index width = c.label_window > 0 ? c.label_window : std::max<Index>(1, l / 4);
  const Index start = (l - width) / 2;
  // Stationary standard deviations of the pooled statistics, used to put both
  // label terms on a unit scale.
  const double long_run = (1.0 + phi) / (1.0 - phi);
  const double sd_mean = std::sqrt(long_run / static_cast<double>(l));
  const double sd_window = std::sqrt(long_run / static_cast<double>(width));
  const Index choices = c.shift_max - c.shift_min + 1;

  Dataset out(static_cast<std::size_t>(c.n));
  for (Index i = 0; i < c.n; ++i) {
    Rng rng(splitmix(c.seed ^ splitmix(static_cast<std::uint64_t>(i) + 1)));
    Matrix walk(span, d);  // row u holds timestep u - pad
    for (Index f = 0; f < d; ++f) walk(0, f) = standard_normal(rng);
    for (Index u = 1; u < span; ++u) {
      for (Index f = 0; f < d; ++f) walk(u, f) = phi * walk(u - 1, f) + innov * standard_normal(rng);
    }
    const Index s = c.shift_min + std::min(static_cast<Index>(uniform01(rng) * static_cast<double>(choices)),
                                           choices - 1);
    if (choices > 1) {
      const double level = 2.0 * static_cast<double>(s - c.shift_min) / static_cast<double>(choices - 1) - 1.0;
      walk.col(0).array() += c.shift_cue * level;
    }
    const Matrix x1 = walk.middleRows(pad, l);
    Matrix x2 = walk.middleRows(pad - s, l) * rot.transpose();
    if (c.mix_noise > 0.0) {
      for (Index k = 0; k < x2.size(); ++k) x2.data()[k] += c.mix_noise * standard_normal(rng);
    }

    const double a1 = x1.colwise().mean().dot(w1.transpose()) / sd_mean;
    const double a2 = x2.middleRows(start, width).colwise().mean().dot(w2.transpose()) / sd_window;
    double y = std::tanh(0.5 * (c.label_x1_weight * a1 + c.label_x2_weight * a2));
    if (c.label_noise > 0.0) y += c.label_noise * standard_normal(rng);
    if (c.num_classes > 0) {
      const double k = static_cast<double>(c.num_classes);
      y = std::clamp(std::floor((y + 1.0) / 2.0 * k), 0.0, k - 1.0);
    }

    Sample& sample = out[static_cast<std::size_t>(i)];
    sample.id = "s" + std::to_string(i);
    sample.x1 = ModalitySequence{Modality::kM1, x1};
    sample.x2 = ModalitySequence{Modality::kM2, std::move(x2)};
    sample.y = y;
    sample.offset = static_cast<int>(s);
  }
  return out;
}

SplitDataset partition(const Dataset& data, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = data.size();
  std::vector<std::pair<std::uint64_t, std::size_t>> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = {keyed_hash(spec.seed, "split", data[i].id), i};
  std::sort(keys.begin(), keys.end());

  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train,
                              static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n))));
  std::vector<int> which(n, 2);
  for (std::size_t r = 0; r < n; ++r) {
    which[keys[r].second] = r < n_train ? 0 : (r < n_train + n_val ? 1 : 2);
  }
  SplitDataset out;
  for (std::size_t i = 0; i < n; ++i) {
    (which[i] == 0 ? out.train : which[i] == 1 ? out.val : out.test).push_back(data[i]);
  }
  return out;
}

namespace {

// Puts the victim modality into the x2 slot.
void orient(Dataset& data, Modality victim) {
  if (victim == Modality::kM2) return;
  for (auto& s : data) {
    if (!s.x2) throw DataError("sample " + s.id + " lacks the surviving modality");
    std::swap(s.x1, *s.x2);
    s.x1.tag = Modality::kM1;
    s.x2->tag = Modality::kM2;
  }
}

}  // namespace

SplitDataset apply_missing(const SplitDataset& data, const SplitSpec& spec) {
  spec.validate();
  SplitDataset out = data;
  // Swapping twice would undo itself, so only swap while the victim is still
  // present everywhere.
  if (spec.victim == Modality::kM1) {
    const auto all_present = [](const Dataset& d) {
      return std::all_of(d.begin(), d.end(), [](const Sample& s) { return s.x2.has_value(); });
    };
    if (all_present(out.train) && all_present(out.val) && all_present(out.test)) {
      orient(out.train, spec.victim);
      orient(out.val, spec.victim);
      orient(out.test, spec.victim);
    }
  }

  const std::size_t n = out.train.size();
  const auto masked = static_cast<std::size_t>(std::llround((1.0 - spec.p) * static_cast<double>(n)));
  std::vector<std::pair<std::uint64_t, std::size_t>> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = {keyed_hash(spec.seed, "mask", out.train[i].id), i};
  std::sort(keys.begin(), keys.end());
  for (std::size_t r = 0; r < masked; ++r) out.train[keys[r].second].x2.reset();

  for (Dataset* split : {&out.val, &out.test}) {
    for (auto& s : *split) {
      if (spec.setting == Setting::kA ||
          hash_uniform(keyed_hash(spec.seed, "eval-mask", s.id)) < 1.0 - spec.p) {
        s.x2.reset();
      }
    }
  }
  return out;
}

namespace {

Matrix parse_rows(const nlohmann::json& j, const char* field, std::size_t line) {
  if (!j.is_array() || j.empty()) throw SchemaError(line, std::string(field) + " must be a non-empty array of rows");
  const std::size_t rows = j.size();
  if (!j[0].is_array() || j[0].empty()) throw SchemaError(line, std::string(field) + " rows must be non-empty arrays");
  const std::size_t cols = j[0].size();
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != cols) {
      throw SchemaError(line, std::string(field) + " row " + std::to_string(r) + " has a different width");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw SchemaError(line, std::string(field) + " holds a non-numeric entry");
      const double v = row[c].get<double>();
      if (!std::isfinite(v)) {
        throw DataError("line " + std::to_string(line) + ": non-finite value in " + field);
      }
      m(static_cast<Index>(r), static_cast<Index>(c)) = v;
    }
  }
  return m;
}

}  // namespace

Dataset ingest(std::istream& in) {
  Dataset data;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(line, std::string("invalid JSON: ") + e.what());
    } catch (const nlohmann::json::out_of_range&) {
      // the parser refuses literals that overflow a double
      throw DataError("line " + std::to_string(line) + ": non-finite value");
    }
    if (!j.is_object()) throw SchemaError(line, "expected an object");
    if (!j.contains("id") || !j["id"].is_string()) throw SchemaError(line, "missing string field 'id'");
    if (!j.contains("m1")) throw SchemaError(line, "missing field 'm1'");
    if (!j.contains("y") || !j["y"].is_number()) throw SchemaError(line, "missing numeric field 'y'");

    Sample s;
    s.id = j["id"].get<std::string>();
    s.x1 = ModalitySequence{Modality::kM1, parse_rows(j["m1"], "m1", line)};
    if (j.contains("m2") && !j["m2"].is_null()) {
      s.x2 = ModalitySequence{Modality::kM2, parse_rows(j["m2"], "m2", line)};
      if (s.x2->length() != s.x1.length()) {
        throw SchemaError(line, "m1 has " + std::to_string(s.x1.length()) + " rows but m2 has " +
                                    std::to_string(s.x2->length()));
      }
    }
    s.y = j["y"].get<double>();
    if (!std::isfinite(s.y)) throw DataError("line " + std::to_string(line) + ": non-finite label");
    if (j.contains("offset") && !j["offset"].is_null()) {
      if (!j["offset"].is_number_integer()) throw SchemaError(line, "'offset' must be an integer");
      s.offset = j["offset"].get<int>();
    }
    data.push_back(std::move(s));
  }
  return data;
}

Dataset ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return ingest(in);
}

namespace {

nlohmann::json rows_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void write_jsonl(std::ostream& out, const Dataset& data) {
  for (const auto& s : data) {
    nlohmann::json j;
    j["id"] = s.id;
    j["m1"] = rows_json(s.x1.values);
    j["m2"] = s.x2 ? rows_json(s.x2->values) : nlohmann::json(nullptr);
    j["y"] = s.y;
    if (s.offset) j["offset"] = *s.offset;
    out << j.dump() << '\n';
  }
}

std::string dataset_digest(const Dataset& data) {
  std::ostringstream out;
  write_jsonl(out, data);
  return fnv1a_hex(out.str());
}

}  // namespace mmalign
