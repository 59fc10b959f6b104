// SPDX-License-Identifier: Apache-2.0
#include "skullnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "skullnet/error.hpp"
#include "skullnet/parallel.hpp"
#include "skullnet/text.hpp"

namespace skullnet {

std::vector<std::string> label_names() { return {kLabelNames.begin(), kLabelNames.end()}; }

Tensor preprocess_image(const Raster& raw, std::size_t target) {
  if (raw.width == 0 || raw.height == 0 || (raw.channels != 1 && raw.channels != 3) ||
      raw.pixels.size() != raw.width * raw.height * raw.channels) {
    throw ValidationError("preprocess_image: empty or inconsistent raster");
  }
  if (target == 0) throw InvalidArgument("preprocess_image: target size must be positive");

  // Source coordinate and blend weight for each output row/column.
  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto taps = [target](std::size_t in) {
    std::vector<Tap> out(target);
    const double scale = static_cast<double>(in) / static_cast<double>(target);
    for (std::size_t o = 0; o < target; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      out[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return out;
  };
  const auto ty = taps(raw.height);
  const auto tx = taps(raw.width);

  Tensor out({target, target, kImageChannels});
  auto dst = out.data();
  for (std::size_t y = 0; y < target; ++y) {
    for (std::size_t x = 0; x < target; ++x) {
      for (std::size_t c = 0; c < kImageChannels; ++c) {
        const std::size_t sc = raw.channels == 1 ? 0 : c;
        const double top = raw.at(ty[y].i0, tx[x].i0, sc) * (1.0 - tx[x].w1) +
                           raw.at(ty[y].i0, tx[x].i1, sc) * tx[x].w1;
        const double bottom = raw.at(ty[y].i1, tx[x].i0, sc) * (1.0 - tx[x].w1) +
                              raw.at(ty[y].i1, tx[x].i1, sc) * tx[x].w1;
        const double v = top * (1.0 - ty[y].w1) + bottom * ty[y].w1;
        dst[(y * target + x) * kImageChannels + c] = static_cast<float>(v / 255.0);
      }
    }
  }
  return out;
}

Tensor load_image(const std::filesystem::path& path) { return preprocess_image(read_image(path)); }

LabelTable LabelTable::select(std::span<const std::size_t> indices) const {
  LabelTable out;
  out.labels = labels.select_rows(indices);
  for (auto i : indices) {
    out.filenames.push_back(filenames[i]);
    out.study_ids.push_back(study_ids[i]);
  }
  return out;
}

LabelTable parse_labels_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  auto fail = [&](std::size_t line_no, const std::string& what) {
    throw ValidationError(source + " line " + std::to_string(line_no) + ": " + what);
  };

  if (!std::getline(in, line)) fail(1, "missing header row");
  const auto header = split_csv_line(line);
  std::vector<std::string> expected{"filename"};
  for (auto n : kLabelNames) expected.emplace_back(n);
  const bool has_study = header.size() == expected.size() + 1;
  for (std::size_t c = 0; c < expected.size(); ++c) {
    if (c >= header.size()) fail(1, "missing column '" + expected[c] + "'");
    if (header[c] != expected[c]) {
      fail(1, "column " + std::to_string(c + 1) + " is '" + std::string(header[c]) +
                  "', expected '" + expected[c] + "'");
    }
  }
  if (header.size() > expected.size() + 1 || (has_study && header.back() != "study_id")) {
    fail(1, "unexpected extra column '" + std::string(header[expected.size()]) + "'");
  }

  LabelTable table;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      fail(line_no, "expected " + std::to_string(header.size()) + " columns, found " +
                        std::to_string(cells.size()));
    }
    const std::string name(cells[0]);
    if (name.empty()) fail(line_no, "column 'filename' is empty");
    if (!seen.insert(name).second) fail(line_no, "duplicate filename '" + name + "'");
    std::array<std::uint8_t, kNumLabels> row{};
    for (std::size_t l = 0; l < kNumLabels; ++l) {
      const auto cell = cells[l + 1];
      if (cell != "0" && cell != "1") {
        fail(line_no, "column '" + expected[l + 1] + "' has value '" + std::string(cell) +
                          "', expected 0 or 1");
      }
      row[l] = cell == "1" ? 1 : 0;
    }
    table.filenames.push_back(name);
    table.study_ids.push_back(has_study ? std::string(cells.back()) : name);
    if (has_study && table.study_ids.back().empty()) fail(line_no, "column 'study_id' is empty");
    table.labels.append_row(row);
  }
  return table;
}

LabelTable load_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read labels file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_labels_csv(ss.str(), path.string());
}

void write_labels_csv(const std::filesystem::path& path, const LabelTable& table) {
  std::string out = "filename";
  for (auto n : kLabelNames) out += "," + std::string(n);
  out += ",study_id\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    out += table.filenames[i];
    for (auto v : table.labels.row(i)) out += v ? ",1" : ",0";
    out += "," + table.study_ids[i] + "\n";
  }
  std::ofstream f(path, std::ios::binary);
  f << out;
  f.flush();
  if (!f) throw IoError("cannot write labels file " + path.string());
}

std::vector<LabelViolation> validate_consistency(const LabelMatrix& labels) {
  std::vector<LabelViolation> out;
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    const auto r = labels.row(i);
    const bool any_type = r[kLinear] || r[kDepressed] || r[kLinearNonDepressed] || r[kFacial] ||
                          r[kComminuted];
    if (r[kFracture] == r[kNotFractured]) {
      out.push_back({i, 'a', false, "fracture and not_fractured are both " +
                                        std::string(r[kFracture] ? "1" : "0")});
    }
    if (any_type && r[kNotFractured]) {
      out.push_back({i, 'b', false, "fracture type marked on a not_fractured row"});
    }
    if (r[kFracture] && !any_type) {
      out.push_back({i, 'c', true, "fracture without any fracture type"});
    }
  }
  return out;
}

std::vector<Tensor> load_images(const std::filesystem::path& dir,
                                std::span<const std::string> filenames) {
  std::vector<Tensor> images(filenames.size(), Tensor({1}));
  parallel_for(filenames.size(), [&](std::size_t i) { images[i] = load_image(dir / filenames[i]); });
  return images;
}

std::vector<std::string> list_image_files(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<std::string> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      out.push_back(entry.path().filename().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_features_csv(const std::filesystem::path& path, const FeatureTable& table) {
  if (table.filenames.size() != table.features.rows()) {
    throw InvalidArgument("write_features_csv: filename and row counts differ");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write features file " + path.string());
  std::string line = "filename";
  for (std::size_t j = 0; j < table.features.cols(); ++j) line += ",f" + std::to_string(j);
  out << line << '\n';
  for (std::size_t i = 0; i < table.features.rows(); ++i) {
    line = table.filenames[i];
    for (float v : table.features.row(i)) {
      line += ',';
      line += format_float(v);
    }
    out << line << '\n';
  }
  out.flush();
  if (!out) throw IoError("cannot write features file " + path.string());
}

FeatureTable read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read features file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": missing header row");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "filename") {
    throw ValidationError(path.string() + ": header must start with filename,f0");
  }
  for (std::size_t j = 1; j < header.size(); ++j) {
    if (header[j] != "f" + std::to_string(j - 1)) {
      throw ValidationError(path.string() + ": header column " + std::to_string(j + 1) +
                            " should be f" + std::to_string(j - 1));
    }
  }
  const std::size_t dim = header.size() - 1;
  FeatureTable table;
  table.features = FeatureMatrix(0, dim);
  std::vector<float> row(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    const std::string where = path.string() + " line " + std::to_string(line_no);
    if (cells.size() != header.size()) {
      throw ValidationError(where + ": expected " + std::to_string(header.size()) +
                            " columns, found " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < dim; ++j) row[j] = parse_float(cells[j + 1], where);
    table.filenames.emplace_back(cells[0]);
    table.features.append_row(row);
  }
  return table;
}

}  // namespace skullnet
