#include "lfit/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "lfit/csv.hpp"

namespace lfit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::int64_t floor_mod(std::int64_t a, std::int64_t m) { return ((a % m) + m) % m; }

struct ParsedTime {
  std::int64_t value = 0;  // integer step, or seconds since epoch
  bool iso = false;
  bool midnight = true;
  int day = 1;
};

bool parse_int(std::string_view text, std::int64_t& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

bool parse_fixed(std::string_view text, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > text.size()) return false;
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
  return ec == std::errc() && ptr == text.data() + pos + len;
}

bool parse_timestamp(const std::string& raw, ParsedTime& out) {
  const std::string text = csv::trim(raw);
  if (text.empty()) return false;
  std::int64_t step = 0;
  if (parse_int(text, step)) {
    out = {step, false, true, 1};
    return true;
  }
  // YYYY-MM-DD[(T| )HH:MM[:SS]][Z]
  int y = 0, mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return false;
  if (!parse_fixed(text, 0, 4, y) || !parse_fixed(text, 5, 2, mo) || !parse_fixed(text, 8, 2, d)) return false;
  std::string_view rest(text);
  rest.remove_prefix(10);
  if (!rest.empty() && rest.back() == 'Z') rest.remove_suffix(1);
  if (!rest.empty()) {
    if (rest.front() != 'T' && rest.front() != ' ') return false;
    if (rest.size() != 6 && rest.size() != 9) return false;
    if (!parse_fixed(rest, 1, 2, hh) || rest[3] != ':' || !parse_fixed(rest, 4, 2, mm)) return false;
    if (rest.size() == 9 && (rest[6] != ':' || !parse_fixed(rest, 7, 2, ss))) return false;
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) return false;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  out.value = static_cast<std::int64_t>(days) * 86400 + hh * 3600 + mm * 60 + ss;
  out.iso = true;
  out.midnight = (hh == 0 && mm == 0 && ss == 0);
  out.day = d;
  return true;
}

std::chrono::year_month_day civil_of_seconds(std::int64_t seconds) {
  using namespace std::chrono;
  const auto days = static_cast<int>(seconds >= 0 ? seconds / 86400 : -((-seconds + 86399) / 86400));
  return year_month_day{sys_days{std::chrono::days{days}}};
}

std::string pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

struct RawRow {
  std::int64_t time = 0;
  std::vector<double> values;
  std::size_t line = 0;
};

struct RawSeries {
  std::string id;
  std::vector<RawRow> rows;
  std::vector<std::optional<std::string>> statics;
};

}  // namespace

Index fill_gaps(Matrix& values, Index col) {
  const Index n = values.rows();
  std::vector<Index> known;
  for (Index i = 0; i < n; ++i)
    if (!std::isnan(values(i, col))) known.push_back(i);
  if (known.empty()) return -1;
  Index filled = n - static_cast<Index>(known.size());
  for (Index i = 0; i < known.front(); ++i) values(i, col) = values(known.front(), col);
  for (Index i = known.back() + 1; i < n; ++i) values(i, col) = values(known.back(), col);
  for (std::size_t k = 0; k + 1 < known.size(); ++k) {
    const Index a = known[k];
    const Index b = known[k + 1];
    for (Index i = a + 1; i < b; ++i) {
      const double w = static_cast<double>(i - a) / static_cast<double>(b - a);
      values(i, col) = (1.0 - w) * values(a, col) + w * values(b, col);
    }
  }
  return filled;
}

ChannelRole parse_role(const std::string& text) {
  if (text == "target") return ChannelRole::Target;
  if (text == "observed") return ChannelRole::Observed;
  if (text == "known_future") return ChannelRole::KnownFuture;
  if (text == "static") return ChannelRole::Static;
  throw ConfigError("unknown channel role '" + text + "'");
}

std::string role_name(ChannelRole role) {
  switch (role) {
    case ChannelRole::Target: return "target";
    case ChannelRole::Observed: return "observed";
    case ChannelRole::KnownFuture: return "known_future";
    case ChannelRole::Static: return "static";
  }
  return "?";
}

DataSchema DataSchema::from_json(const nlohmann::json& j) {
  DataSchema schema;
  const auto& channels = j.at("channels");
  if (channels.is_array()) {
    for (const auto& c : channels)
      schema.channels.emplace_back(c.at("name").get<std::string>(), parse_role(c.at("role").get<std::string>()));
  } else {
    for (const auto& [name, role] : channels.items()) schema.channels.emplace_back(name, parse_role(role.get<std::string>()));
  }
  if (j.contains("statics_csv") && !j["statics_csv"].is_null()) schema.statics_csv = j["statics_csv"].get<std::string>();
  schema.missing_threshold = j.value("missing_threshold", 0.7);
  schema.calendar = j.value("calendar", true);
  if (schema.missing_threshold < 0 || schema.missing_threshold > 1) throw ConfigError("missing_threshold must lie in [0, 1]");
  std::set<std::string> seen;
  for (const auto& [name, role] : schema.channels) {
    if (!seen.insert(name).second) throw ConfigError("channel '" + name + "' declared twice");
    if (name == "series_id" || name == "timestamp") throw ConfigError("'" + name + "' is reserved");
  }
  if (schema.names(ChannelRole::Target).empty()) throw ConfigError("schema declares no target channel");
  return schema;
}

DataSchema DataSchema::load(const std::string& path) {
  // ordered_json keeps the declaration order of an object-style channel map
  const auto ordered = nlohmann::ordered_json::parse(csv::read_file(path));
  nlohmann::json j = nlohmann::json::object();
  nlohmann::json channels = nlohmann::json::array();
  const auto& src = ordered.at("channels");
  if (src.is_array()) {
    channels = nlohmann::json::parse(src.dump());
  } else {
    for (const auto& [name, role] : src.items()) channels.push_back({{"name", name}, {"role", role.get<std::string>()}});
  }
  j["channels"] = channels;
  for (const auto& [key, value] : ordered.items())
    if (key != "channels") j[key] = nlohmann::json::parse(value.dump());
  DataSchema schema = from_json(j);
  // sidecar paths are relative to the schema file
  if (schema.statics_csv && !schema.statics_csv->empty() && schema.statics_csv->front() != '/') {
    const auto slash = path.find_last_of('/');
    if (slash != std::string::npos) schema.statics_csv = path.substr(0, slash + 1) + *schema.statics_csv;
  }
  return schema;
}

nlohmann::json DataSchema::to_json() const {
  nlohmann::json channels_json = nlohmann::json::array();
  for (const auto& [name, role] : channels) channels_json.push_back({{"name", name}, {"role", role_name(role)}});
  nlohmann::json j{{"channels", channels_json}, {"missing_threshold", missing_threshold}, {"calendar", calendar}};
  if (statics_csv) j["statics_csv"] = *statics_csv;
  return j;
}

std::vector<std::string> DataSchema::names(ChannelRole role) const {
  std::vector<std::string> out;
  for (const auto& [name, r] : channels)
    if (r == role) out.push_back(name);
  return out;
}

std::vector<std::string> SeriesDataset::continuous_channels() const {
  std::vector<std::string> out = targets;
  out.insert(out.end(), observed.begin(), observed.end());
  out.insert(out.end(), known_future.begin(), known_future.end());
  return out;
}

Index SeriesDataset::column(const std::string& channel) const {
  const auto all = continuous_channels();
  const auto it = std::find(all.begin(), all.end(), channel);
  if (it == all.end()) throw ContractError("dataset has no continuous channel '" + channel + "'");
  return static_cast<Index>(it - all.begin());
}

const Series& SeriesDataset::find(const std::string& id) const {
  for (const auto& s : series)
    if (s.id == id) return s;
  throw DataError("dataset has no series '" + id + "'");
}

int SeriesDataset::month_of(std::int64_t step) const {
  switch (time_mode) {
    case TimeMode::Step:
    case TimeMode::Monthly: return static_cast<int>(floor_mod(step, 12));
    case TimeMode::Seconds: {
      const auto ymd = civil_of_seconds(origin_seconds + step * step_seconds);
      return static_cast<int>(static_cast<unsigned>(ymd.month())) - 1;
    }
  }
  return 0;
}

std::string SeriesDataset::timestamp_of(std::int64_t step) const {
  switch (time_mode) {
    case TimeMode::Step: return std::to_string(step);
    case TimeMode::Monthly: {
      const std::int64_t year = (step - floor_mod(step, 12)) / 12;
      return pad(static_cast<int>(year), 4) + "-" + pad(static_cast<int>(floor_mod(step, 12)) + 1, 2) + "-" +
             pad(month_day, 2);
    }
    case TimeMode::Seconds: {
      const std::int64_t t = origin_seconds + step * step_seconds;
      const auto ymd = civil_of_seconds(t);
      const std::int64_t sod = floor_mod(t, 86400);
      std::string out = pad(static_cast<int>(ymd.year()), 4) + "-" + pad(static_cast<int>(static_cast<unsigned>(ymd.month())), 2) +
                        "-" + pad(static_cast<int>(static_cast<unsigned>(ymd.day())), 2);
      if (sod != 0) {
        out += "T" + pad(static_cast<int>(sod / 3600), 2) + ":" + pad(static_cast<int>((sod / 60) % 60), 2) + ":" +
               pad(static_cast<int>(sod % 60), 2);
      }
      return out;
    }
  }
  return {};
}

SeriesDataset load_csv(const std::string& path, const DataSchema& schema) {
  const std::string data = csv::read_file(path);
  const std::string statics = schema.statics_csv ? csv::read_file(*schema.statics_csv) : std::string{};
  return parse_csv(data, schema, statics);
}

SeriesDataset parse_csv(const std::string& text, const DataSchema& schema, const std::string& statics_text) {
  SeriesDataset ds;
  ds.targets = schema.names(ChannelRole::Target);
  ds.observed = schema.names(ChannelRole::Observed);
  ds.known_future = schema.names(ChannelRole::KnownFuture);
  ds.statics = schema.names(ChannelRole::Static);
  ds.calendar = schema.calendar;
  const auto continuous = ds.continuous_channels();
  const bool sidecar = !statics_text.empty();

  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("data CSV is empty");
  std::vector<std::string> header = csv::split_record(line);
  for (auto& h : header) h = csv::trim(h);
  auto locate = [&](const std::string& name) -> Index {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IngestionError("data CSV is missing mandatory column '" + name + "'");
    return static_cast<Index>(it - header.begin());
  };
  const Index id_col = locate("series_id");
  const Index time_col = locate("timestamp");
  std::vector<Index> value_cols;
  for (const auto& name : continuous) value_cols.push_back(locate(name));
  std::vector<Index> static_cols;
  if (!sidecar)
    for (const auto& name : ds.statics) static_cols.push_back(locate(name));
  for (const auto& h : header) {
    if (h == "series_id" || h == "timestamp") continue;
    if (std::none_of(schema.channels.begin(), schema.channels.end(), [&](const auto& c) { return c.first == h; }))
      ds.log.push_back("ignored column '" + h + "' (not in schema)");
  }

  std::vector<RawSeries> raw;
  std::unordered_map<std::string, std::size_t> by_id;
  std::optional<bool> iso_mode;
  bool all_midnight = true;
  std::set<int> days;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto fields = csv::split_record(line);
    if (fields.size() != header.size()) {
      throw IngestionError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                           " fields, found " + std::to_string(fields.size()));
    }
    const std::string id = csv::trim(fields[id_col]);
    if (id.empty()) throw IngestionError("row " + std::to_string(line_no) + ": empty series_id");
    ParsedTime t;
    if (!parse_timestamp(fields[time_col], t)) {
      throw IngestionError("row " + std::to_string(line_no) + ": unparseable timestamp '" + fields[time_col] + "'");
    }
    if (iso_mode && *iso_mode != t.iso) {
      throw IngestionError("row " + std::to_string(line_no) + ": timestamp format differs from earlier rows");
    }
    iso_mode = t.iso;
    all_midnight = all_midnight && t.midnight;
    days.insert(t.day);

    RawRow row{t.value, std::vector<double>(continuous.size(), kNaN), line_no};
    for (std::size_t j = 0; j < value_cols.size(); ++j) {
      const std::string& cell = fields[value_cols[j]];
      if (csv::is_missing_marker(cell)) continue;
      double v = 0;
      if (!csv::parse_double(cell, v)) {
        throw IngestionError("row " + std::to_string(line_no) + ": channel '" + continuous[j] +
                             "' has non-numeric or non-finite value '" + cell + "'");
      }
      row.values[j] = v;
    }
    auto [it, inserted] = by_id.try_emplace(id, raw.size());
    if (inserted) raw.push_back({id, {}, std::vector<std::optional<std::string>>(ds.statics.size())});
    RawSeries& rs = raw[it->second];
    for (std::size_t a = 0; a < static_cols.size(); ++a) {
      const std::string v = csv::trim(fields[static_cols[a]]);
      if (csv::is_missing_marker(v)) continue;
      if (rs.statics[a] && *rs.statics[a] != v) {
        throw IngestionError("row " + std::to_string(line_no) + ": static '" + ds.statics[a] + "' of series '" + id +
                             "' changes from '" + *rs.statics[a] + "' to '" + v + "'");
      }
      rs.statics[a] = v;
    }
    rs.rows.push_back(std::move(row));
  }
  if (raw.empty()) throw IngestionError("data CSV has no rows");

  if (sidecar) {
    std::istringstream sin(statics_text);
    std::string sline;
    std::getline(sin, sline);
    auto sheader = csv::split_record(sline);
    for (auto& h : sheader) h = csv::trim(h);
    const auto sid = std::find(sheader.begin(), sheader.end(), "series_id");
    if (sid == sheader.end()) throw IngestionError("statics CSV is missing mandatory column 'series_id'");
    std::vector<Index> cols;
    for (const auto& name : ds.statics) {
      const auto it = std::find(sheader.begin(), sheader.end(), name);
      if (it == sheader.end()) throw IngestionError("statics CSV is missing mandatory column '" + name + "'");
      cols.push_back(static_cast<Index>(it - sheader.begin()));
    }
    std::size_t sline_no = 1;
    while (std::getline(sin, sline)) {
      ++sline_no;
      if (csv::trim(sline).empty()) continue;
      const auto fields = csv::split_record(sline);
      if (fields.size() != sheader.size()) {
        throw IngestionError("statics row " + std::to_string(sline_no) + ": expected " +
                             std::to_string(sheader.size()) + " fields");
      }
      const auto it = by_id.find(csv::trim(fields[sid - sheader.begin()]));
      if (it == by_id.end()) continue;
      for (std::size_t a = 0; a < cols.size(); ++a) {
        const std::string v = csv::trim(fields[cols[a]]);
        if (!csv::is_missing_marker(v)) raw[it->second].statics[a] = v;
      }
    }
  }

  // Map raw times onto the integer step axis.
  if (*iso_mode) {
    if (all_midnight && days.size() == 1) {
      ds.time_mode = TimeMode::Monthly;
      ds.month_day = *days.begin();
      for (auto& rs : raw) {
        for (auto& row : rs.rows) {
          const auto ymd = civil_of_seconds(row.time);
          row.time = static_cast<std::int64_t>(static_cast<int>(ymd.year())) * 12 +
                     static_cast<unsigned>(ymd.month()) - 1;
        }
      }
    } else {
      ds.time_mode = TimeMode::Seconds;
      std::int64_t origin = std::numeric_limits<std::int64_t>::max();
      for (const auto& rs : raw)
        for (const auto& row : rs.rows) origin = std::min(origin, row.time);
      std::int64_t step = 0;
      for (const auto& rs : raw)
        for (const auto& row : rs.rows) step = std::gcd(step, row.time - origin);
      if (step == 0) step = 86400;
      ds.origin_seconds = origin;
      ds.step_seconds = step;
      for (auto& rs : raw)
        for (auto& row : rs.rows) row.time = (row.time - origin) / step;
    }
  }

  const Index n_targets = static_cast<Index>(ds.targets.size());
  for (auto& rs : raw) {
    std::sort(rs.rows.begin(), rs.rows.end(), [](const RawRow& a, const RawRow& b) { return a.time < b.time; });
    for (std::size_t i = 1; i < rs.rows.size(); ++i) {
      if (rs.rows[i].time == rs.rows[i - 1].time) {
        throw IngestionError("row " + std::to_string(std::max(rs.rows[i].line, rs.rows[i - 1].line)) +
                             ": duplicate (series_id, timestamp) for series '" + rs.id + "'");
      }
    }
    const std::int64_t first = rs.rows.front().time;
    const std::int64_t last = rs.rows.back().time;
    const Index length = static_cast<Index>(last - first + 1);
    Series s;
    s.id = rs.id;
    s.steps.resize(length);
    std::iota(s.steps.begin(), s.steps.end(), first);
    s.values = Matrix::Constant(length, static_cast<Index>(continuous.size()), kNaN);
    for (const auto& row : rs.rows)
      for (std::size_t j = 0; j < continuous.size(); ++j) s.values(row.time - first, static_cast<Index>(j)) = row.values[j];

    const double missing = s.values.leftCols(n_targets).array().isNaN().count();
    const double rate = missing / static_cast<double>(length * n_targets);
    if (rate > schema.missing_threshold) {
      ds.log.push_back("dropped series '" + s.id + "': " + std::to_string(static_cast<int>(std::round(rate * 100))) +
                       "% of target values missing (threshold " +
                       std::to_string(static_cast<int>(std::round(schema.missing_threshold * 100))) + "%)");
      continue;
    }
    for (std::size_t j = 0; j < continuous.size(); ++j) {
      const Index filled = fill_gaps(s.values, static_cast<Index>(j));
      if (filled < 0) throw DataError("series '" + s.id + "': channel '" + continuous[j] + "' has no values");
      if (filled > 0) {
        ds.log.push_back("series '" + s.id + "': filled " + std::to_string(filled) + " missing value(s) in '" +
                         continuous[j] + "'");
      }
    }
    for (std::size_t a = 0; a < ds.statics.size(); ++a) {
      if (!rs.statics[a]) throw DataError("series '" + s.id + "' lacks static attribute '" + ds.statics[a] + "'");
      s.statics.push_back(*rs.statics[a]);
    }
    ds.series.push_back(std::move(s));
  }
  if (ds.series.empty()) throw IngestionError("no series left after ingestion");
  return ds;
}

void write_csv(const SeriesDataset& ds, std::ostream& data, std::ostream* statics) {
  std::vector<std::string> header{"series_id", "timestamp"};
  const auto continuous = ds.continuous_channels();
  header.insert(header.end(), continuous.begin(), continuous.end());
  if (!statics) header.insert(header.end(), ds.statics.begin(), ds.statics.end());
  csv::write_row(data, header);
  for (const auto& s : ds.series) {
    for (Index i = 0; i < s.length(); ++i) {
      std::vector<std::string> row{s.id, ds.timestamp_of(s.steps[i])};
      for (Index j = 0; j < s.values.cols(); ++j) row.push_back(csv::format_double(s.values(i, j)));
      if (!statics) row.insert(row.end(), s.statics.begin(), s.statics.end());
      csv::write_row(data, row);
    }
  }
  if (statics) {
    std::vector<std::string> sheader{"series_id"};
    sheader.insert(sheader.end(), ds.statics.begin(), ds.statics.end());
    csv::write_row(*statics, sheader);
    for (const auto& s : ds.series) {
      std::vector<std::string> row{s.id};
      row.insert(row.end(), s.statics.begin(), s.statics.end());
      csv::write_row(*statics, row);
    }
  }
}

std::vector<Scalar> integrate_displacement(const std::vector<std::vector<Scalar>>& components) {
  if (components.empty()) throw ContractError("integrate_displacement: no components");
  const std::size_t n = components.front().size();
  for (const auto& c : components) {
    if (c.size() != n) throw ContractError("integrate_displacement: component series are not aligned");
  }
  std::vector<Scalar> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Scalar acc = 0;
    for (const auto& c : components) acc += c[i] * c[i];
    out[i] = std::sqrt(acc);
  }
  return out;
}

SeriesDataset integrate_displacement(const SeriesDataset& ds, const std::vector<std::string>& components,
                                     const std::string& name) {
  std::vector<Index> cols;
  for (const auto& c : components) {
    if (std::find(ds.targets.begin(), ds.targets.end(), c) == ds.targets.end()) {
      throw ContractError("integrate_displacement: '" + c + "' is not a target channel");
    }
    cols.push_back(ds.column(c));
  }
  SeriesDataset out = ds;
  std::vector<std::string> targets{name};
  for (const auto& t : ds.targets)
    if (std::find(components.begin(), components.end(), t) == components.end()) targets.push_back(t);
  out.targets = targets;
  const auto new_channels = out.continuous_channels();
  for (std::size_t si = 0; si < ds.series.size(); ++si) {
    const Series& src = ds.series[si];
    Matrix values(src.length(), static_cast<Index>(new_channels.size()));
    std::vector<std::vector<Scalar>> comps(cols.size(), std::vector<Scalar>(src.length()));
    for (std::size_t k = 0; k < cols.size(); ++k)
      for (Index i = 0; i < src.length(); ++i) comps[k][i] = src.values(i, cols[k]);
    const auto norm = integrate_displacement(comps);
    for (Index i = 0; i < src.length(); ++i) values(i, 0) = norm[i];
    for (std::size_t j = 1; j < new_channels.size(); ++j) values.col(static_cast<Index>(j)) = src.values.col(ds.column(new_channels[j]));
    out.series[si].values = std::move(values);
  }
  return out;
}

Index StaticEncoding::lookup(Index attribute, const std::string& value) const {
  const auto& vocab = vocabularies.at(attribute);
  const auto it = std::lower_bound(vocab.begin(), vocab.end(), value);
  if (it == vocab.end() || *it != value) {
    throw OutOfVocabularyError("static '" + names.at(attribute) + "': value '" + value + "' not in vocabulary");
  }
  return static_cast<Index>(it - vocab.begin());
}

std::vector<Index> StaticEncoding::cardinalities() const {
  std::vector<Index> out;
  for (const auto& v : vocabularies) out.push_back(static_cast<Index>(v.size()));
  return out;
}

StaticEncoding StaticEncoding::apply(const SeriesDataset& ds) const {
  if (ds.statics != names) throw ConfigError("dataset static attributes do not match the encoding");
  StaticEncoding out{names, vocabularies, {}};
  for (const auto& s : ds.series) {
    std::vector<Index> idx;
    for (std::size_t a = 0; a < names.size(); ++a) idx.push_back(lookup(static_cast<Index>(a), s.statics[a]));
    out.indices.push_back(std::move(idx));
  }
  return out;
}

nlohmann::json StaticEncoding::to_json() const { return {{"names", names}, {"vocabularies", vocabularies}}; }

StaticEncoding StaticEncoding::from_json(const nlohmann::json& j) {
  StaticEncoding e;
  e.names = j.at("names").get<std::vector<std::string>>();
  e.vocabularies = j.at("vocabularies").get<std::vector<std::vector<std::string>>>();
  return e;
}

StaticEncoding encode_statics(const SeriesDataset& ds) {
  StaticEncoding e;
  e.names = ds.statics;
  for (std::size_t a = 0; a < ds.statics.size(); ++a) {
    std::set<std::string> values;
    for (const auto& s : ds.series) values.insert(s.statics.at(a));
    e.vocabularies.emplace_back(values.begin(), values.end());
  }
  return e.apply(ds);
}

std::vector<std::string> ChannelSchema::past_names() const {
  std::vector<std::string> out = targets;
  out.insert(out.end(), observed.begin(), observed.end());
  out.insert(out.end(), known_continuous.begin(), known_continuous.end());
  for (const auto& c : known_categorical) out.push_back(c.name);
  return out;
}

std::vector<std::string> ChannelSchema::future_names() const {
  std::vector<std::string> out = known_continuous;
  for (const auto& c : known_categorical) out.push_back(c.name);
  return out;
}

std::vector<std::string> ChannelSchema::static_names() const {
  std::vector<std::string> out;
  for (const auto& c : statics) out.push_back(c.name);
  return out;
}

nlohmann::json ChannelSchema::to_json() const {
  auto cats = [](const std::vector<CategoricalChannel>& cs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cs) arr.push_back({{"name", c.name}, {"cardinality", c.cardinality}});
    return arr;
  };
  return {{"targets", targets},
          {"observed", observed},
          {"known_continuous", known_continuous},
          {"known_categorical", cats(known_categorical)},
          {"statics", cats(statics)}};
}

ChannelSchema ChannelSchema::from_json(const nlohmann::json& j) {
  auto cats = [](const nlohmann::json& arr) {
    std::vector<CategoricalChannel> out;
    for (const auto& c : arr) out.push_back({c.at("name").get<std::string>(), c.at("cardinality").get<Index>()});
    return out;
  };
  ChannelSchema s;
  s.targets = j.at("targets").get<std::vector<std::string>>();
  s.observed = j.at("observed").get<std::vector<std::string>>();
  s.known_continuous = j.at("known_continuous").get<std::vector<std::string>>();
  s.known_categorical = cats(j.at("known_categorical"));
  s.statics = cats(j.at("statics"));
  return s;
}

ChannelSchema channel_schema(const SeriesDataset& ds, const StaticEncoding& statics) {
  ChannelSchema s;
  s.targets = ds.targets;
  s.observed = ds.observed;
  s.known_continuous = ds.known_future;
  if (ds.calendar) {
    s.known_continuous.emplace_back(kTimeIndexChannel);
    s.known_categorical.push_back({kMonthChannel, 12});
    s.known_categorical.push_back({kSeasonChannel, 4});
  }
  const auto cards = statics.cardinalities();
  for (std::size_t a = 0; a < statics.names.size(); ++a) s.statics.push_back({statics.names[a], cards[a]});
  return s;
}

WindowBatch collate(const std::vector<const Window*>& windows) {
  if (windows.empty()) throw ContractError("collate: no windows");
  const Window& first = *windows.front();
  const Index b = static_cast<Index>(windows.size());
  const Index k = first.past_continuous.rows();
  const Index tau = first.future_continuous.rows();
  WindowBatch batch;
  batch.batch_size = b;
  batch.encoder_length = k;
  batch.horizon = tau;
  batch.past_continuous.resize(b * k, first.past_continuous.cols());
  batch.past_categorical.resize(b * k, first.past_categorical.cols());
  batch.future_continuous.resize(b * tau, first.future_continuous.cols());
  batch.future_categorical.resize(b * tau, first.future_categorical.cols());
  const bool has_targets = first.future_targets.size() > 0;
  batch.future_targets.resize(has_targets ? b * tau : 0, first.future_targets.cols());
  batch.statics.resize(b, static_cast<Index>(first.statics.size()));
  const bool anchored = !first.anchors.empty();
  batch.anchors.resize(anchored ? b : 0, static_cast<Index>(first.anchors.size()));
  for (Index i = 0; i < b; ++i) {
    const Window& w = *windows[i];
    if (w.past_continuous.rows() != k || w.future_continuous.rows() != tau) {
      throw ContractError("collate: windows have different lengths");
    }
    batch.past_continuous.middleRows(i * k, k) = w.past_continuous;
    batch.past_categorical.middleRows(i * k, k) = w.past_categorical;
    batch.future_continuous.middleRows(i * tau, tau) = w.future_continuous;
    batch.future_categorical.middleRows(i * tau, tau) = w.future_categorical;
    if (has_targets) batch.future_targets.middleRows(i * tau, tau) = w.future_targets;
    for (std::size_t a = 0; a < w.statics.size(); ++a) batch.statics(i, static_cast<Index>(a)) = w.statics[a];
    if (w.anchors.size() != first.anchors.size()) throw ContractError("collate: windows mix anchored and plain targets");
    for (std::size_t a = 0; a < w.anchors.size(); ++a) batch.anchors(i, static_cast<Index>(a)) = w.anchors[a];
  }
  return batch;
}

WindowBatch collate(const std::vector<Window>& windows) {
  std::vector<const Window*> ptrs;
  ptrs.reserve(windows.size());
  for (const auto& w : windows) ptrs.push_back(&w);
  return collate(ptrs);
}

SeriesSplit split_series(Index length, const SplitPlan& plan) {
  if (plan.validation_fraction <= 0 || plan.validation_fraction >= 1 || plan.test_fraction < 0 ||
      plan.validation_fraction + plan.test_fraction >= 1) {
    throw ConfigError("split fractions must satisfy 0 < validation, 0 <= test, validation + test < 1");
  }
  const Index n_test = static_cast<Index>(std::floor(length * plan.test_fraction));
  const Index n_val = static_cast<Index>(std::floor(length * plan.validation_fraction));
  return {length - n_test - n_val, length - n_test};
}

Standardizer fit_standardizer(const SeriesDataset& ds, const SplitPlan& plan) {
  std::vector<std::string> channels = ds.continuous_channels();
  if (ds.calendar) channels.emplace_back(kTimeIndexChannel);
  Index rows = 0;
  for (const auto& s : ds.series) rows += split_series(s.length(), plan).train_end;
  Matrix all(rows, static_cast<Index>(channels.size()));
  Index at = 0;
  for (const auto& s : ds.series) {
    const Index n = split_series(s.length(), plan).train_end;
    all.block(at, 0, n, ds.continuous_count()) = s.values.topRows(n);
    if (ds.calendar)
      for (Index i = 0; i < n; ++i) all(at + i, ds.continuous_count()) = static_cast<Scalar>(s.steps[i]);
    at += n;
  }
  return Standardizer::fit(channels, all);
}

WindowBuilder::WindowBuilder(const SeriesDataset& ds, StaticEncoding statics, Standardizer standardizer,
                             bool anchor_targets)
    : ds_(ds), statics_(std::move(statics)), standardizer_(std::move(standardizer)), anchor_targets_(anchor_targets) {
  schema_ = channel_schema(ds_, statics_);
  const Index expected = ds_.continuous_count() + (ds_.calendar ? 1 : 0);
  if (standardizer_.size() != expected) throw ConfigError("standardizer does not cover the dataset channels");
  const auto channels = ds_.continuous_channels();
  for (std::size_t j = 0; j < channels.size(); ++j) {
    if (standardizer_.channels()[j] != channels[j]) {
      throw ConfigError("standardizer channel '" + standardizer_.channels()[j] + "' does not match dataset channel '" +
                        channels[j] + "'");
    }
  }
  if (statics_.indices.size() != ds_.series.size()) throw ConfigError("static encoding does not cover every series");
}

void WindowBuilder::fill_calendar(std::int64_t step, Index row, Matrix& cont, Index time_col, IndexMatrix& cat) const {
  if (!ds_.calendar) return;
  cont(row, time_col) = standardizer_.transform(standardizer_.size() - 1, static_cast<Scalar>(step));
  const int month = ds_.month_of(step);
  cat(row, 0) = month;
  cat(row, 1) = month / 3;
}

void WindowBuilder::anchor(Window& w) const {
  if (!anchor_targets_) return;
  const Index k = w.past_continuous.rows();
  for (Index j = 0; j < static_cast<Index>(ds_.targets.size()); ++j) {
    const Scalar a = w.past_continuous(k - 1, j);
    w.past_continuous.col(j).array() -= a;
    if (w.future_targets.rows() > 0) w.future_targets.col(j).array() -= a;
    w.anchors.push_back(a);
  }
}

Window WindowBuilder::make_window(std::size_t series, Index origin, Index k, Index horizon) const {
  const Series& s = ds_.series[series];
  const Index n_cont = ds_.continuous_count();
  const Index n_targets = static_cast<Index>(ds_.targets.size());
  const Index n_known = static_cast<Index>(ds_.known_future.size());
  const Index known_offset = n_cont - n_known;
  const Index n_cat = static_cast<Index>(schema_.known_categorical.size());
  Window w;
  w.series = series;
  w.origin = origin;
  w.first_step = s.steps[origin];
  w.statics = statics_.indices[series];
  w.past_continuous.resize(k, schema_.past_continuous());
  w.past_categorical.resize(k, n_cat);
  for (Index t = 0; t < k; ++t) {
    for (Index j = 0; j < n_cont; ++j) w.past_continuous(t, j) = standardizer_.transform(j, s.values(origin + t, j));
    fill_calendar(s.steps[origin + t], t, w.past_continuous, n_cont, w.past_categorical);
  }
  w.future_continuous.resize(horizon, schema_.known_continuous.size());
  w.future_categorical.resize(horizon, n_cat);
  w.future_targets.resize(horizon, n_targets);
  for (Index h = 0; h < horizon; ++h) {
    const Index row = origin + k + h;
    for (Index j = 0; j < n_known; ++j)
      w.future_continuous(h, j) = standardizer_.transform(known_offset + j, s.values(row, known_offset + j));
    fill_calendar(s.steps[row], h, w.future_continuous, n_known, w.future_categorical);
    for (Index j = 0; j < n_targets; ++j) w.future_targets(h, j) = standardizer_.transform(j, s.values(row, j));
  }
  anchor(w);
  return w;
}

std::vector<Window> WindowBuilder::build(Index k, Index horizon, Index stride) {
  if (k < 1 || horizon < 1 || stride < 1) throw ConfigError("window lengths and stride must be >= 1");
  std::vector<Window> out;
  for (std::size_t si = 0; si < ds_.series.size(); ++si) {
    const Index length = ds_.series[si].length();
    if (length < k + horizon) {
      log_.push_back("skipped series '" + ds_.series[si].id + "': length " + std::to_string(length) + " < " +
                     std::to_string(k + horizon));
      continue;
    }
    for (Index origin = 0; origin + k + horizon <= length; origin += stride) out.push_back(make_window(si, origin, k, horizon));
  }
  if (out.empty()) throw DataError("no series is long enough for k=" + std::to_string(k) + ", horizon=" + std::to_string(horizon));
  return out;
}

WindowSplits WindowBuilder::build_splits(Index k, Index horizon, const SplitPlan& plan, Index stride) {
  if (k < 1 || horizon < 1 || stride < 1) throw ConfigError("window lengths and stride must be >= 1");
  WindowSplits out;
  for (std::size_t si = 0; si < ds_.series.size(); ++si) {
    const Index length = ds_.series[si].length();
    if (length < k + horizon) {
      log_.push_back("skipped series '" + ds_.series[si].id + "': length " + std::to_string(length) + " < " +
                     std::to_string(k + horizon));
      continue;
    }
    const SeriesSplit split = split_series(length, plan);
    for (Index origin = 0; origin + k + horizon <= length; origin += stride) {
      const Index first = origin + k;
      const Index end = first + horizon;
      if (end <= split.train_end) {
        out.train.push_back(make_window(si, origin, k, horizon));
      } else if (first >= split.train_end && end <= split.validation_end) {
        out.validation.push_back(make_window(si, origin, k, horizon));
      } else if (first >= split.validation_end) {
        out.test.push_back(make_window(si, origin, k, horizon));
      }
    }
  }
  if (out.train.empty() && out.validation.empty() && out.test.empty()) {
    throw DataError("no series is long enough for k=" + std::to_string(k) + ", horizon=" + std::to_string(horizon));
  }
  return out;
}

Window WindowBuilder::forecast_window(std::size_t series, Index k, Index horizon) const {
  if (!ds_.known_future.empty()) {
    throw DataError("known-future channel '" + ds_.known_future.front() + "' has no values beyond the end of the data");
  }
  const Series& s = ds_.series.at(series);
  if (s.length() < k) {
    throw DataError("series '" + s.id + "' is shorter than the encoder length " + std::to_string(k));
  }
  const Index origin = s.length() - k;
  const Index n_cont = ds_.continuous_count();
  const Index n_cat = static_cast<Index>(schema_.known_categorical.size());
  Window w;
  w.series = series;
  w.origin = origin;
  w.first_step = s.steps[origin];
  w.statics = statics_.indices[series];
  w.past_continuous.resize(k, schema_.past_continuous());
  w.past_categorical.resize(k, n_cat);
  for (Index t = 0; t < k; ++t) {
    for (Index j = 0; j < n_cont; ++j) w.past_continuous(t, j) = standardizer_.transform(j, s.values(origin + t, j));
    fill_calendar(s.steps[origin + t], t, w.past_continuous, n_cont, w.past_categorical);
  }
  w.future_continuous.resize(horizon, schema_.known_continuous.size());
  w.future_categorical.resize(horizon, n_cat);
  for (Index h = 0; h < horizon; ++h) fill_calendar(s.steps.back() + 1 + h, h, w.future_continuous, 0, w.future_categorical);
  w.future_targets.resize(0, static_cast<Index>(ds_.targets.size()));
  anchor(w);
  return w;
}

std::string response_name(ResponseMode mode) {
  switch (mode) {
    case ResponseMode::WaterDriven: return "water";
    case ResponseMode::RainfallDriven: return "rainfall";
    case ResponseMode::Noise: return "noise";
  }
  return "?";
}

namespace {

ResponseMode parse_response(const std::string& text) {
  if (text == "water") return ResponseMode::WaterDriven;
  if (text == "rainfall") return ResponseMode::RainfallDriven;
  if (text == "noise") return ResponseMode::Noise;
  throw ConfigError("unknown response mode '" + text + "'");
}

}  // namespace

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.series_count = j.value("series_count", s.series_count);
  s.length = j.value("length", s.length);
  s.period = j.value("period", s.period);
  s.water_amplitude = j.value("water_amplitude", s.water_amplitude);
  s.rainfall_rate = j.value("rainfall_rate", s.rainfall_rate);
  s.rainfall_magnitude = j.value("rainfall_magnitude", s.rainfall_magnitude);
  if (j.contains("modes")) {
    s.modes.clear();
    for (const auto& m : j["modes"]) s.modes.push_back(parse_response(m.get<std::string>()));
  }
  s.gain = j.value("gain", s.gain);
  s.lag = j.value("lag", s.lag);
  s.trend = j.value("trend", s.trend);
  s.noise_stdev = j.value("noise_stdev", s.noise_stdev);
  s.noise_covariates = j.value("noise_covariates", s.noise_covariates);
  s.seed = j.value("seed", s.seed);
  return s;
}

nlohmann::json SyntheticSpec::to_json() const {
  std::vector<std::string> mode_names;
  for (auto m : modes) mode_names.push_back(response_name(m));
  return {{"series_count", series_count}, {"length", length},
          {"period", period},             {"water_amplitude", water_amplitude},
          {"rainfall_rate", rainfall_rate}, {"rainfall_magnitude", rainfall_magnitude},
          {"modes", mode_names},          {"gain", gain},
          {"lag", lag},                   {"trend", trend},
          {"noise_stdev", noise_stdev},   {"noise_covariates", noise_covariates},
          {"seed", seed}};
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.period < 2) throw ConfigError("synthetic period must be >= 2");
  if (spec.noise_stdev < 0) throw ConfigError("synthetic noise stdev must be >= 0");
  if (spec.series_count < 1 || spec.length < 2 || spec.modes.empty()) throw ConfigError("invalid synthetic spec");
  if (spec.lag < 0) throw ConfigError("synthetic lag must be >= 0");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  std::uniform_real_distribution<Scalar> unit(0.0, 1.0);
  std::exponential_distribution<Scalar> spike(1.0);
  const Scalar two_pi = 2.0 * 3.14159265358979323846;

  auto water_at = [&](std::int64_t t) {
    return spec.water_amplitude * std::sin(two_pi * static_cast<Scalar>(t) / static_cast<Scalar>(spec.period));
  };
  auto drawdown_at = [&](std::int64_t t) { return std::max(0.0, -(water_at(t) - water_at(t - 1))); };

  SyntheticData out;
  const Index n = spec.length;
  out.water_level.resize(n);
  out.rainfall.resize(n);
  for (Index t = 0; t < n; ++t) {
    out.water_level[t] = water_at(t);
    out.rainfall[t] = unit(rng) < spec.rainfall_rate ? spec.rainfall_magnitude * spike(rng) : 0.0;
  }

  SeriesDataset& ds = out.dataset;
  ds.targets = {"displacement"};
  ds.observed = {"water_level", "rainfall"};
  for (Index i = 0; i < spec.noise_covariates; ++i) ds.observed.push_back("noise_" + std::to_string(i + 1));
  ds.statics = {"site", "danger", "soil"};
  ds.time_mode = TimeMode::Step;
  ds.calendar = true;
  const std::vector<std::string> danger{"danger", "near-danger", "non-danger"};
  const std::vector<std::string> soil{"cohesive", "gravelly"};

  for (Index si = 0; si < spec.series_count; ++si) {
    const ResponseMode mode = spec.modes[static_cast<std::size_t>(si) % spec.modes.size()];
    out.drivers.push_back(mode);
    Series s;
    s.id = std::string("S") + (si + 1 < 10 ? "0" : "") + std::to_string(si + 1);
    s.steps.resize(n);
    std::iota(s.steps.begin(), s.steps.end(), std::int64_t{0});
    s.values.resize(n, ds.continuous_count());
    Scalar displacement = 0;
    for (Index t = 0; t < n; ++t) {
      Scalar increment = 0;
      const Scalar eps = spec.noise_stdev > 0 ? spec.noise_stdev * normal(rng) : 0.0;
      switch (mode) {
        case ResponseMode::WaterDriven: increment = spec.gain * drawdown_at(t - spec.lag) + spec.trend + eps; break;
        case ResponseMode::RainfallDriven: {
          const Scalar r = (t - spec.lag >= 0) ? out.rainfall[t - spec.lag] : 0.0;
          increment = spec.gain * r + spec.trend + eps;
          break;
        }
        case ResponseMode::Noise: increment = eps; break;
      }
      if (t > 0) displacement += increment;
      s.values(t, 0) = displacement;
      s.values(t, 1) = out.water_level[t];
      s.values(t, 2) = out.rainfall[t];
      for (Index c = 0; c < spec.noise_covariates; ++c) s.values(t, 3 + c) = normal(rng);
    }
    s.statics = {s.id, danger[si % danger.size()], soil[si % soil.size()]};
    ds.series.push_back(std::move(s));
  }
  return out;
}

nlohmann::json synthetic_schema_json() {
  return {{"channels",
           {{{"name", "displacement"}, {"role", "target"}},
            {{"name", "water_level"}, {"role", "observed"}},
            {{"name", "rainfall"}, {"role", "observed"}},
            {{"name", "site"}, {"role", "static"}},
            {{"name", "danger"}, {"role", "static"}},
            {{"name", "soil"}, {"role", "static"}}}},
          {"statics_csv", "statics.csv"},
          {"calendar", true},
          {"missing_threshold", 0.7}};
}

}  // namespace lfit
