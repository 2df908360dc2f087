#include "mi3d/subject_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mi3d/errors.hpp"

namespace mi3d {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::string format_mm(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FilesystemError("cannot open for writing: " + tmp.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw FilesystemError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FilesystemError("rename failed: " + tmp.string() + " -> " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FilesystemError("cannot open: " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string serialize_subject(const SubjectSample& sample) {
  std::size_t counts[3] = {0, 0, 0};
  for (Structure s : sample.ed_cloud.structures) counts[static_cast<int>(s)] += 1;

  std::ostringstream os;
  os << sample.subject_id << ',' << to_string(sample.label) << ',' << counts[0] << ',' << counts[1]
     << ',' << counts[2] << ',' << format_mm(sample.volumes.lv_edv_ml) << ','
     << format_mm(sample.volumes.lv_esv_ml) << ',' << format_mm(sample.volumes.rv_edv_ml) << ','
     << format_mm(sample.volumes.rv_esv_ml) << '\n';

  auto write_cloud = [&os](const PointCloud& cloud) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto& p = cloud.points[i];
      os << format_mm(p[0]) << ',' << format_mm(p[1]) << ',' << format_mm(p[2]) << ','
         << to_string(cloud.structures[i]) << ',' << to_string(cloud.phase) << '\n';
    }
  };
  write_cloud(sample.ed_cloud);
  write_cloud(sample.es_cloud);
  return os.str();
}

SubjectSample parse_subject(const std::string& content) {
  std::istringstream is(content);
  std::string line;
  if (!std::getline(is, line)) throw FilesystemError("subject file: missing header");
  const auto header = split_csv_line(line);
  if (header.size() != 9) {
    throw FilesystemError("subject file: header has " + std::to_string(header.size()) +
                          " fields, expected 9");
  }

  SubjectSample sample;
  sample.subject_id = header[0];
  sample.label = parse_class_label(header[1]);
  const std::size_t expected[3] = {std::stoul(header[2]), std::stoul(header[3]),
                                   std::stoul(header[4])};
  sample.volumes.lv_edv_ml = std::stod(header[5]);
  sample.volumes.lv_esv_ml = std::stod(header[6]);
  sample.volumes.rv_edv_ml = std::stod(header[7]);
  sample.volumes.rv_esv_ml = std::stod(header[8]);

  sample.ed_cloud.phase = Phase::kEd;
  sample.es_cloud.phase = Phase::kEs;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw FilesystemError("subject file: point record has " + std::to_string(fields.size()) +
                            " fields, expected 5");
    }
    const Vec3 p{std::stod(fields[0]), std::stod(fields[1]), std::stod(fields[2])};
    const Structure st = parse_structure(fields[3]);
    PointCloud& cloud = parse_phase(fields[4]) == Phase::kEd ? sample.ed_cloud : sample.es_cloud;
    cloud.points.push_back(p);
    cloud.structures.push_back(st);
  }

  std::size_t counts[3] = {0, 0, 0};
  for (Structure s : sample.ed_cloud.structures) counts[static_cast<int>(s)] += 1;
  for (int i = 0; i < 3; ++i) {
    if (counts[i] != expected[i]) {
      throw FilesystemError("subject file: ED cloud has " + std::to_string(counts[i]) + " " +
                            to_string(static_cast<Structure>(i)) + " points, header says " +
                            std::to_string(expected[i]));
    }
  }
  return sample;
}

void write_subject_file(const SubjectSample& sample, const std::filesystem::path& path) {
  atomic_write_text(path, serialize_subject(sample));
}

SubjectSample read_subject_file(const std::filesystem::path& path) {
  return parse_subject(read_text_file(path));
}

std::string serialize_manifest(const std::vector<ManifestEntry>& entries) {
  std::ostringstream os;
  for (const auto& e : entries) os << e.filename << ',' << to_string(e.label) << '\n';
  return os.str();
}

std::vector<ManifestEntry> parse_manifest(const std::string& content) {
  std::vector<ManifestEntry> entries;
  std::istringstream is(content);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 2) throw FilesystemError("manifest: malformed line '" + line + "'");
    entries.push_back({fields[0], parse_class_label(fields[1])});
  }
  return entries;
}

std::string features_csv(const std::vector<std::string>& subject_ids,
                         const std::vector<ClassLabel>& labels,
                         const std::vector<std::string>& feature_columns,
                         const std::vector<std::vector<double>>& rows) {
  if (subject_ids.size() != labels.size() || subject_ids.size() != rows.size()) {
    throw DimensionError("features_csv: mismatched column lengths");
  }
  std::ostringstream os;
  os << "subject_id,label";
  for (const auto& c : feature_columns) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != feature_columns.size()) {
      throw DimensionError("features_csv: row " + std::to_string(i) + " has " +
                           std::to_string(rows[i].size()) + " values, expected " +
                           std::to_string(feature_columns.size()));
    }
    os << subject_ids[i] << ',' << to_string(labels[i]);
    for (double v : rows[i]) os << ',' << format_mm(v);
    os << '\n';
  }
  return os.str();
}

}  // namespace mi3d
