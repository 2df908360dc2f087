#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mi3d/anatomy.hpp"

namespace mi3d {

// Writes a whole file atomically: the content lands in <path>.tmp and is
// renamed over the target, so interrupted runs never leave truncated files.
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

std::string read_text_file(const std::filesystem::path& path);

// Subject file: comma-delimited text.
//   header:  subject_id,label,n_lv_endo,n_lv_epi,n_rv_endo,
//            lv_edv_ml,lv_esv_ml,rv_edv_ml,rv_esv_ml
//   records: x,y,z,structure,phase   (mm, 6 decimal places; ED block
//            first, ES block second, structures in lv_endo/lv_epi/rv_endo
//            order within each block)
// Point counts are per structure per phase. Shape parameters are not part
// of the format; readers that need them regenerate the cohort from the
// run's echoed config.
std::string serialize_subject(const SubjectSample& sample);
SubjectSample parse_subject(const std::string& content);
void write_subject_file(const SubjectSample& sample, const std::filesystem::path& path);
SubjectSample read_subject_file(const std::filesystem::path& path);

// Manifest: one "filename,label" line per subject, in cohort order.
struct ManifestEntry {
  std::string filename;
  ClassLabel label;
};
std::string serialize_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(const std::string& content);

// Features CSV: subject_id,label,<named feature columns>.
std::string features_csv(const std::vector<std::string>& subject_ids,
                         const std::vector<ClassLabel>& labels,
                         const std::vector<std::string>& feature_columns,
                         const std::vector<std::vector<double>>& rows);

std::string format_mm(double v);  // fixed 6 decimal places

}  // namespace mi3d
