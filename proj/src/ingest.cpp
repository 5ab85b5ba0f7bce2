#include "gcfpca/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "gcfpca/errors.hpp"

namespace gcfpca {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  std::string out = s.substr(b, e - b + 1);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') {
    out = out.substr(1, out.size() - 2);
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

bool is_missing_token(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "NAN";
}

double parse_double(const std::string& field, const std::string& path, int line_no,
                    const char* column) {
  try {
    std::size_t pos = 0;
    double v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(path + ":" + std::to_string(line_no) + ": cannot parse " + column +
                          " value '" + field + "'");
  }
}

long parse_long(const std::string& field, const std::string& path, int line_no,
                const char* column) {
  try {
    std::size_t pos = 0;
    long v = std::stol(field, &pos);
    if (pos != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(path + ":" + std::to_string(line_no) + ": cannot parse " + column +
                          " value '" + field + "'");
  }
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

bool is_comment_or_blank(const std::string& line) {
  const std::string t = trim(line);
  return t.empty() || t[0] == '#';
}

// First line that is not blank and not a '#' comment (our own writers stamp
// comment headers); false when the file has no such line.
bool next_content_line(std::ifstream& in, std::string& line, int& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (!is_comment_or_blank(line)) return true;
  }
  return false;
}

void require_header(const std::vector<std::string>& got, const std::vector<std::string>& want,
                    const std::string& path) {
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (i >= got.size() || got[i] != want[i]) {
      std::string expected;
      for (std::size_t j = 0; j < want.size(); ++j) {
        if (j) expected += ",";
        expected += want[j];
      }
      throw ValidationError(path + ": header must start with '" + expected + "'");
    }
  }
}

std::string format_grid_value(double s) {
  std::ostringstream os;
  os.precision(17);
  os << s;
  return os.str();
}

}  // namespace

void LongDataset::validate(std::optional<Family> family) const {
  const Eigen::Index I = n_subjects(), K = n_grid();
  if (I < 1) throw ValidationError("dataset has no subjects");
  if (K < 1) throw ValidationError("dataset has no grid points");
  if (static_cast<Eigen::Index>(subject_ids.size()) != I) {
    throw ValidationError("dataset: subject_ids length does not match outcome rows");
  }
  if (observed.rows() != I || observed.cols() != K) {
    throw ValidationError("dataset: observation mask shape does not match outcomes");
  }
  if (grid.size() != K) {
    throw ValidationError("dataset: grid length does not match outcome columns");
  }
  if (covariates.cols() > 0 && covariates.rows() != I) {
    throw ValidationError("dataset: covariate rows do not match subject count");
  }
  for (Eigen::Index k = 1; k < K; ++k) {
    if (!(grid[k] > grid[k - 1])) {
      throw ValidationError("dataset: grid must be strictly increasing (violated at index " +
                            std::to_string(k) + ")");
    }
  }
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : subject_ids) {
      if (!seen.insert(id).second) {
        throw ValidationError("dataset: duplicate subject id '" + id + "'");
      }
    }
  }
  if (!covariates.allFinite()) {
    throw ValidationError("dataset: covariates contain non-finite values");
  }

  const Family* fam = family ? &*family : (family_hint ? &*family_hint : nullptr);
  for (Eigen::Index i = 0; i < I; ++i) {
    bool any = false;
    for (Eigen::Index k = 0; k < K; ++k) {
      if (!observed(i, k)) continue;
      any = true;
      const double z = outcomes(i, k);
      if (!std::isfinite(z)) {
        throw ValidationError("dataset: non-finite outcome for subject '" + subject_ids[i] +
                              "' at s=" + format_grid_value(grid[k]));
      }
      if (fam != nullptr) {
        if (fam->kind == FamilyKind::bernoulli_logit && z != 0.0 && z != 1.0) {
          throw ValidationError("dataset: outcome for subject '" + subject_ids[i] + "' at s=" +
                                format_grid_value(grid[k]) + " is not 0/1 as required");
        }
        if (fam->kind == FamilyKind::poisson_log && (z < 0.0 || z != std::floor(z))) {
          throw ValidationError("dataset: outcome for subject '" + subject_ids[i] + "' at s=" +
                                format_grid_value(grid[k]) +
                                " is not a non-negative integer as required");
        }
      }
    }
    if (!any) {
      throw ValidationError("dataset: subject '" + subject_ids[i] + "' has no observed outcomes");
    }
  }
}

LongDataset binarize_profiles(const std::vector<MultiDayProfile>& profiles, const VectorXd& grid,
                              double threshold, std::vector<std::string>* warnings) {
  if (profiles.empty()) throw ValidationError("binarize: no profiles given");
  const Eigen::Index K = grid.size();
  if (K < 1) throw ValidationError("binarize: empty grid");

  std::vector<std::string> ids;
  std::vector<VectorXd> rows;
  std::vector<std::vector<bool>> masks;
  for (const auto& prof : profiles) {
    if (prof.valid_day.size() != prof.days.size()) {
      throw ValidationError("binarize: subject '" + prof.subject_id +
                            "' has mismatched day and valid-day-flag counts");
    }
    std::vector<const VectorXd*> valid;
    for (std::size_t h = 0; h < prof.days.size(); ++h) {
      if (!prof.valid_day[h]) continue;
      if (prof.days[h].size() != K) {
        throw ValidationError("binarize: subject '" + prof.subject_id + "' day " +
                              std::to_string(h) + " has " + std::to_string(prof.days[h].size()) +
                              " points, expected " + std::to_string(K));
      }
      valid.push_back(&prof.days[h]);
    }
    if (valid.empty()) {
      if (warnings != nullptr) {
        warnings->push_back("subject '" + prof.subject_id + "' has no valid days; skipped");
      }
      continue;
    }
    VectorXd z = VectorXd::Zero(K);
    std::vector<bool> mask(static_cast<std::size_t>(K), false);
    for (Eigen::Index k = 0; k < K; ++k) {
      int usable = 0, active = 0;
      for (const VectorXd* day : valid) {
        const double y = (*day)[k];
        if (!std::isfinite(y)) continue;
        ++usable;
        if (y >= threshold) ++active;
      }
      if (usable == 0) continue;  // no day contributed a value here
      mask[static_cast<std::size_t>(k)] = true;
      // Active iff at least half of the usable days are active; with an even
      // count this makes an exact split come out active.
      z[k] = (2 * active >= usable) ? 1.0 : 0.0;
    }
    ids.push_back(prof.subject_id);
    rows.push_back(std::move(z));
    masks.push_back(std::move(mask));
  }
  if (ids.empty()) {
    throw ValidationError("binarize: every subject was skipped (no valid days)");
  }

  LongDataset out;
  out.subject_ids = std::move(ids);
  out.grid = grid;
  const Eigen::Index I = static_cast<Eigen::Index>(out.subject_ids.size());
  out.outcomes.resize(I, K);
  out.observed.resize(I, K);
  for (Eigen::Index i = 0; i < I; ++i) {
    out.outcomes.row(i) = rows[static_cast<std::size_t>(i)].transpose();
    for (Eigen::Index k = 0; k < K; ++k) {
      out.observed(i, k) = masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
  }
  out.covariates.resize(I, 0);
  out.family_hint = Family{FamilyKind::bernoulli_logit, 1.0};
  return out;
}

LongDataset load_long_csv(const std::string& path, bool missing_at_random) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  int line_no = 0;
  if (!next_content_line(in, line, line_no)) throw ValidationError(path + ": empty file");
  const std::vector<std::string> header = split_csv_line(line);
  require_header(header, {"subject_id", "s", "value"}, path);
  const int p = static_cast<int>(header.size()) - 3;

  struct Row {
    int subject;
    double s;
    bool missing;
    double value;
  };
  std::vector<std::string> ids;
  std::unordered_map<std::string, int> id_index;
  std::vector<VectorXd> covariate_rows;
  std::vector<Row> observations;
  std::map<double, int> grid_index;  // ordered so the grid comes out sorted

  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (static_cast<int>(f.size()) != 3 + p) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(3 + p) + " fields, got " + std::to_string(f.size()));
    }
    const std::string& id = f[0];
    if (id.empty()) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": empty subject_id");
    }
    const double s = parse_double(f[1], path, line_no, "s");

    auto [it, inserted] = id_index.try_emplace(id, static_cast<int>(ids.size()));
    if (inserted) {
      ids.push_back(id);
      VectorXd x(p);
      for (int c = 0; c < p; ++c) {
        x[c] = parse_double(f[3 + static_cast<std::size_t>(c)], path, line_no,
                            header[3 + static_cast<std::size_t>(c)].c_str());
      }
      covariate_rows.push_back(std::move(x));
    } else {
      const VectorXd& x = covariate_rows[static_cast<std::size_t>(it->second)];
      for (int c = 0; c < p; ++c) {
        const double v = parse_double(f[3 + static_cast<std::size_t>(c)], path, line_no,
                                      header[3 + static_cast<std::size_t>(c)].c_str());
        if (v != x[c]) {
          throw ValidationError(path + ":" + std::to_string(line_no) + ": covariate " +
                                header[3 + static_cast<std::size_t>(c)] + " for subject '" + id +
                                "' changes across rows; covariates must be per subject");
        }
      }
    }

    Row row;
    row.subject = it->second;
    row.s = s;
    row.missing = is_missing_token(f[2]);
    row.value = row.missing ? 0.0 : parse_double(f[2], path, line_no, "value");
    observations.push_back(row);
    grid_index.try_emplace(s, 0);
  }
  if (ids.empty()) throw ValidationError(path + ": no data rows");

  int next = 0;
  for (auto& [s, idx] : grid_index) idx = next++;
  const Eigen::Index I = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index K = static_cast<Eigen::Index>(grid_index.size());

  LongDataset out;
  out.subject_ids = std::move(ids);
  out.grid.resize(K);
  for (const auto& [s, idx] : grid_index) out.grid[idx] = s;
  out.outcomes = MatrixXd::Zero(I, K);
  out.observed = MatrixXb::Constant(I, K, false);
  for (const Row& row : observations) {
    const Eigen::Index k = grid_index.at(row.s);
    if (out.observed(row.subject, k)) {
      throw ValidationError(path + ": duplicate row for subject '" +
                            out.subject_ids[static_cast<std::size_t>(row.subject)] + "' at s=" +
                            format_grid_value(row.s));
    }
    out.observed(row.subject, k) = true;
    out.outcomes(row.subject, k) = row.value;
    if (row.missing) out.observed(row.subject, k) = false;
  }
  out.covariates.resize(I, p);
  for (Eigen::Index i = 0; i < I; ++i) {
    out.covariates.row(i) = covariate_rows[static_cast<std::size_t>(i)].transpose();
  }

  if (!missing_at_random && out.observed.count() != I * K) {
    for (Eigen::Index i = 0; i < I; ++i) {
      Eigen::Index have = 0;
      for (Eigen::Index k = 0; k < K; ++k) have += out.observed(i, k) ? 1 : 0;
      if (have != K) {
        throw ValidationError(path + ": subject '" + out.subject_ids[static_cast<std::size_t>(i)] +
                              "' covers " + std::to_string(have) + " of " + std::to_string(K) +
                              " grid points; pass the missing-at-random flag to accept "
                              "incomplete grids");
      }
    }
  }
  out.validate();
  return out;
}

MultiDayData load_multiday_csv(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  int line_no = 0;
  if (!next_content_line(in, line, line_no)) throw ValidationError(path + ": empty file");
  require_header(split_csv_line(line), {"subject_id", "day", "s", "value"}, path);

  struct Row {
    int subject;
    long day;
    double s;
    double value;
  };
  std::vector<std::string> ids;
  std::unordered_map<std::string, int> id_index;
  std::vector<Row> observations;
  std::map<double, int> grid_index;

  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 4) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected 4 fields, got " +
                            std::to_string(f.size()));
    }
    const std::string& id = f[0];
    if (id.empty()) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": empty subject_id");
    }
    auto [it, inserted] = id_index.try_emplace(id, static_cast<int>(ids.size()));
    if (inserted) ids.push_back(id);

    Row row;
    row.subject = it->second;
    row.day = parse_long(f[1], path, line_no, "day");
    row.s = parse_double(f[2], path, line_no, "s");
    row.value = is_missing_token(f[3]) ? std::numeric_limits<double>::quiet_NaN()
                                       : parse_double(f[3], path, line_no, "value");
    observations.push_back(row);
    grid_index.try_emplace(row.s, 0);
  }
  if (ids.empty()) throw ValidationError(path + ": no data rows");

  int next = 0;
  for (auto& [s, idx] : grid_index) idx = next++;
  const Eigen::Index K = static_cast<Eigen::Index>(grid_index.size());

  MultiDayData out;
  out.grid.resize(K);
  for (const auto& [s, idx] : grid_index) out.grid[idx] = s;

  // Day vectors start as all-NaN; rows fill in the usable minutes. A filled
  // flag per cell catches duplicates even when the first value was missing.
  struct DayBuffer {
    VectorXd values;
    std::vector<bool> filled;
  };
  std::vector<std::map<long, DayBuffer>> day_maps(ids.size());
  for (const Row& row : observations) {
    auto& days = day_maps[static_cast<std::size_t>(row.subject)];
    auto [it, inserted] = days.try_emplace(row.day);
    if (inserted) {
      it->second.values = VectorXd::Constant(K, std::numeric_limits<double>::quiet_NaN());
      it->second.filled.assign(static_cast<std::size_t>(K), false);
    }
    const Eigen::Index k = grid_index.at(row.s);
    if (it->second.filled[static_cast<std::size_t>(k)]) {
      throw ValidationError(path + ": duplicate row for subject '" +
                            ids[static_cast<std::size_t>(row.subject)] + "' day " +
                            std::to_string(row.day) + " at s=" + format_grid_value(row.s));
    }
    it->second.filled[static_cast<std::size_t>(k)] = true;
    it->second.values[k] = row.value;
  }

  out.profiles.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    MultiDayProfile& prof = out.profiles[i];
    prof.subject_id = ids[i];
    for (auto& [day, buf] : day_maps[i]) {
      prof.days.push_back(std::move(buf.values));
      prof.valid_day.push_back(true);
    }
  }
  return out;
}

}  // namespace gcfpca
