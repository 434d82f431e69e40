#include "prtube/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "prtube/errors.hpp"

namespace prtube::io {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string where(const std::string& source, long line) { return source + ":" + std::to_string(line) + ": "; }

double to_real(std::string_view tok, const std::string& source, long line, const char* field) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw ParseError(where(source, line) + "field '" + field + "' is not a real number: '" + std::string(tok) + "'");
  }
  return v;
}

int to_int(std::string_view tok, const std::string& source, long line, const char* field) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    throw ParseError(where(source, line) + "field '" + field + "' is not an integer: '" + std::string(tok) + "'");
  }
  return v;
}

void check_unit(double v, const std::string& source, long line, const char* field) {
  if (!(v >= 0 && v <= 1)) {
    throw ValidationError(where(source, line) + "field '" + field + "' = " + format_real(v) + " outside [0, 1]");
  }
}

Box read_box(const std::vector<std::string_view>& tok, std::size_t at, const std::string& source, long line) {
  Box b{to_real(tok[at], source, line, "x_min"), to_real(tok[at + 1], source, line, "y_min"),
        to_real(tok[at + 2], source, line, "x_max"), to_real(tok[at + 3], source, line, "y_max")};
  check_unit(b.x_min, source, line, "x_min");
  check_unit(b.y_min, source, line, "y_min");
  check_unit(b.x_max, source, line, "x_max");
  check_unit(b.y_max, source, line, "y_max");
  if (b.degenerate()) throw ValidationError(where(source, line) + "box has non-positive area");
  return b;
}

void put_box(std::ostream& out, const Box& b) {
  out << ' ' << format_real(b.x_min) << ' ' << format_real(b.y_min) << ' ' << format_real(b.x_max) << ' '
      << format_real(b.y_max);
}

// Reads the next non-blank, non-comment line; false at end of input.
bool next_line(std::istream& in, std::string& line, long& counter) {
  while (std::getline(in, line)) {
    ++counter;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    if (line.back() == '\r') line.pop_back();
    return true;
  }
  return false;
}

// Consumes and checks the header; returns the rest of the header line, or
// nullopt when the input is empty.
std::optional<std::string> read_header(std::istream& in, const char* expected, const std::string& source,
                                       long& counter) {
  std::string line;
  while (std::getline(in, line)) {
    ++counter;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string_view head(expected);
    if (line.compare(0, head.size(), head) != 0) {
      throw ParseError(where(source, counter) + "expected header '" + std::string(expected) + "'");
    }
    return line.substr(head.size());
  }
  return std::nullopt;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Detections

DetectionReader::DetectionReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {
  const auto rest = read_header(in_, kDetectionsHeader, source_, line_);
  if (!rest) return;
  const auto tok = split(*rest);
  if (tok.size() != 1 || tok[0].substr(0, 8) != "classes=") {
    throw ParseError(where(source_, line_) + "header must end with 'classes=<C>'");
  }
  classes_ = to_int(tok[0].substr(8), source_, line_, "classes");
  if (classes_ < 1) throw ValidationError(where(source_, line_) + "classes must be >= 1");
}

void DetectionReader::fail_parse(const std::string& what) const { throw ParseError(where(source_, line_) + what); }

std::optional<DetectionReader::Record> DetectionReader::read_record() {
  std::string line;
  if (!next_line(in_, line, line_)) return std::nullopt;
  const auto tok = split(line);
  if (tok.size() != 9) fail_parse("expected 9 fields, found " + std::to_string(tok.size()));
  Record r;
  r.video = std::string(tok[0]);
  r.frame = to_int(tok[1], source_, line_, "frame");
  if (r.frame < 1) throw ValidationError(where(source_, line_) + "field 'frame' must be >= 1");
  r.box.class_id = to_int(tok[2], source_, line_, "class");
  if (r.box.class_id < 0 || r.box.class_id >= classes_) {
    throw ValidationError(where(source_, line_) + "field 'class' = " + std::to_string(r.box.class_id) +
                          " outside [0, " + std::to_string(classes_) + ")");
  }
  r.box.box = read_box(tok, 3, source_, line_);
  r.box.confidence = to_real(tok[7], source_, line_, "confidence");
  check_unit(r.box.confidence, source_, line_, "confidence");
  r.box.rate = to_real(tok[8], source_, line_, "rate");
  check_unit(r.box.rate, source_, line_, "rate");
  return r;
}

std::optional<FrameRecords> DetectionReader::next() {
  if (!pending_) pending_ = read_record();
  if (!pending_) return std::nullopt;

  const Record& head = *pending_;
  if (head.video != current_video_) {
    if (std::find(finished_videos_.begin(), finished_videos_.end(), head.video) != finished_videos_.end()) {
      throw SequencingError(where(source_, line_) + "video '" + head.video + "' is not contiguous");
    }
    if (!current_video_.empty()) finished_videos_.push_back(current_video_);
    current_video_ = head.video;
    current_frame_ = 0;
  } else if (head.frame <= current_frame_) {
    throw SequencingError(where(source_, line_) + "frame " + std::to_string(head.frame) + " of '" + head.video +
                          "' follows frame " + std::to_string(current_frame_));
  }

  FrameRecords out;
  out.video_id = head.video;
  out.frame = head.frame;
  out.boxes.resize(static_cast<std::size_t>(classes_));
  current_frame_ = head.frame;
  while (pending_ && pending_->video == out.video_id && pending_->frame == out.frame) {
    out.boxes[static_cast<std::size_t>(pending_->box.class_id)].push_back(pending_->box);
    pending_ = read_record();
  }
  return out;
}

DetectionWriter::DetectionWriter(std::ostream& out, int classes) : out_(out), classes_(classes) {
  out_ << kDetectionsHeader << " classes=" << classes_ << '\n';
}

void DetectionWriter::write(const std::string& video_id, int frame, const ClassCandidates& boxes) {
  for (const auto& per_class : boxes) {
    for (const CandidateBox& b : per_class) {
      out_ << video_id << ' ' << frame << ' ' << b.class_id;
      put_box(out_, b.box);
      out_ << ' ' << format_real(b.confidence) << ' ' << format_real(b.rate) << '\n';
    }
  }
}

std::vector<DetectionStream> parse_detections(std::istream& in, const std::string& source) {
  DetectionReader reader(in, source);
  std::vector<DetectionStream> out;
  while (auto frame = reader.next()) {
    if (out.empty() || out.back().video_id != frame->video_id) {
      out.push_back({frame->video_id, reader.classes(), {}});
    }
    auto& frames = out.back().frames;
    while (static_cast<int>(frames.size()) < frame->frame - 1) {
      frames.emplace_back(static_cast<std::size_t>(reader.classes()));
    }
    frames.push_back(std::move(frame->boxes));
  }
  return out;
}

std::vector<DetectionStream> parse_detections(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_detections(in, path.string());
}

void write_detections(std::ostream& out, std::span<const DetectionStream> streams) {
  int classes = 1;
  for (const auto& s : streams) classes = std::max(classes, s.classes);
  DetectionWriter writer(out, classes);
  for (const auto& s : streams) {
    for (int f = 1; f <= s.frame_count(); ++f) writer.write(s.video_id, f, s.frames[static_cast<std::size_t>(f - 1)]);
  }
}

// ---------------------------------------------------------------------------
// Tubes and annotations

void write_tube_header(std::ostream& out) { out << kTubesHeader << '\n'; }

void write_tube(std::ostream& out, const FinalTube& tube) {
  out << tube.video_id << ' ' << tube.class_id << ' ' << tube.t_start << ' ' << tube.t_end << ' '
      << format_real(tube.score);
  for (const Box& b : tube.boxes) put_box(out, b);
  out << '\n';
}

namespace {

template <typename Fn>
void for_each_tube_line(std::istream& in, const char* header, const std::string& source, std::size_t fixed, Fn&& fn) {
  long line_no = 0;
  if (!read_header(in, header, source, line_no)) return;
  std::string line;
  while (next_line(in, line, line_no)) {
    const auto tok = split(line);
    if (tok.size() < fixed) throw ParseError(where(source, line_no) + "too few fields");
    const int t_start = to_int(tok[2], source, line_no, "t_start");
    const int t_end = to_int(tok[3], source, line_no, "t_end");
    if (t_start < 1 || t_end < t_start) throw ValidationError(where(source, line_no) + "invalid frame range");
    const std::size_t len = static_cast<std::size_t>(t_end - t_start + 1);
    if (tok.size() != fixed + 4 * len) {
      throw ParseError(where(source, line_no) + "expected " + std::to_string(fixed + 4 * len) + " fields, found " +
                       std::to_string(tok.size()));
    }
    std::vector<Box> boxes;
    boxes.reserve(len);
    for (std::size_t i = 0; i < len; ++i) boxes.push_back(read_box(tok, fixed + 4 * i, source, line_no));
    fn(tok, line_no, t_start, t_end, std::move(boxes));
  }
}

}  // namespace

std::vector<FinalTube> parse_tubes(std::istream& in, const std::string& source) {
  std::vector<FinalTube> out;
  for_each_tube_line(in, kTubesHeader, source, 5, [&](const auto& tok, long line_no, int ts, int te, auto boxes) {
    FinalTube t;
    t.video_id = std::string(tok[0]);
    t.class_id = to_int(tok[1], source, line_no, "class");
    if (t.class_id < 0) throw ValidationError(where(source, line_no) + "field 'class' must be >= 0");
    t.t_start = ts;
    t.t_end = te;
    t.score = to_real(tok[4], source, line_no, "score");
    check_unit(t.score, source, line_no, "score");
    t.boxes = std::move(boxes);
    t.labels.assign(t.boxes.size(), 1);
    out.push_back(std::move(t));
  });
  return out;
}

std::vector<FinalTube> parse_tubes(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_tubes(in, path.string());
}

void write_annotations(std::ostream& out, std::span<const GroundTruthTube> truth) {
  out << kAnnotationsHeader << '\n';
  for (const auto& g : truth) {
    out << g.video_id << ' ' << g.class_id << ' ' << g.t_start << ' ' << g.t_end;
    for (const Box& b : g.boxes) put_box(out, b);
    out << '\n';
  }
}

std::vector<GroundTruthTube> parse_annotations(std::istream& in, const std::string& source) {
  std::vector<GroundTruthTube> out;
  for_each_tube_line(in, kAnnotationsHeader, source, 4, [&](const auto& tok, long line_no, int ts, int te, auto boxes) {
    GroundTruthTube g;
    g.video_id = std::string(tok[0]);
    g.class_id = to_int(tok[1], source, line_no, "class");
    if (g.class_id < 0) throw ValidationError(where(source, line_no) + "field 'class' must be >= 0");
    g.t_start = ts;
    g.t_end = te;
    g.boxes = std::move(boxes);
    out.push_back(std::move(g));
  });
  return out;
}

std::vector<GroundTruthTube> parse_annotations(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_annotations(in, path.string());
}

// ---------------------------------------------------------------------------
// Raw grids

GridReader::GridReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {
  read_header(in_, kRawGridHeader, source_, line_);
}

std::optional<GridRecord> GridReader::next() {
  std::string line;
  if (!next_line(in_, line, line_)) return std::nullopt;
  const auto tok = split(line);
  if (tok.size() < 5) throw ParseError(where(source_, line_) + "expected video, frame, S, B, C and logits");
  GridRecord r;
  r.video_id = std::string(tok[0]);
  r.frame = to_int(tok[1], source_, line_, "frame");
  if (r.frame < 1) throw ValidationError(where(source_, line_) + "field 'frame' must be >= 1");
  if (r.video_id == last_video_ && r.frame <= last_frame_) {
    throw SequencingError(where(source_, line_) + "frame " + std::to_string(r.frame) + " follows frame " +
                          std::to_string(last_frame_));
  }
  last_video_ = r.video_id;
  last_frame_ = r.frame;
  const GridShape shape{to_int(tok[2], source_, line_, "S"), to_int(tok[3], source_, line_, "B"),
                        to_int(tok[4], source_, line_, "C")};
  try {
    shape.validate();
  } catch (const StructuralError& e) {
    throw StructuralError(where(source_, line_) + e.what());
  }
  std::vector<double> values;
  values.reserve(tok.size() - 5);
  for (std::size_t i = 5; i < tok.size(); ++i) values.push_back(to_real(tok[i], source_, line_, "logit"));
  try {
    r.grid = RawGrid::from_flat(shape, values);
  } catch (const StructuralError& e) {
    throw StructuralError(where(source_, line_) + e.what());
  }
  return r;
}

void write_grid_header(std::ostream& out) { out << kRawGridHeader << '\n'; }

void write_grid(std::ostream& out, const std::string& video_id, int frame, const RawGrid& grid) {
  out << video_id << ' ' << frame << ' ' << grid.shape.cells << ' ' << grid.shape.anchors << ' '
      << grid.shape.classes;
  for (Eigen::Index i = 0; i < grid.values.size(); ++i) out << ' ' << format_real(grid.values.data()[i]);
  out << '\n';
}

// ---------------------------------------------------------------------------
// Scenarios

namespace {

using nlohmann::json;

Box json_box(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ConfigError("boxes are [x_min, y_min, x_max, y_max]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

ScoreRange json_range(const json& j, ScoreRange fallback) {
  if (j.is_null()) return fallback;
  if (!j.is_array() || j.size() != 2) throw ConfigError("score ranges are [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

NoiseModel json_noise(const json& j, NoiseModel n) {
  if (j.is_null()) return n;
  n.geometry_jitter = j.value("geometry_jitter", n.geometry_jitter);
  n.action_scores = json_range(j.value("action_scores", json()), n.action_scores);
  n.context_scores = json_range(j.value("context_scores", json()), n.context_scores);
  n.rate_noise = j.value("rate_noise", n.rate_noise);
  n.context_rate = j.value("context_rate", n.context_rate);
  n.context_rate_noise = j.value("context_rate_noise", n.context_rate_noise);
  n.context_fraction = j.value("context_fraction", n.context_fraction);
  n.distractor_rate = j.value("distractor_rate", n.distractor_rate);
  n.distractor_scores = json_range(j.value("distractor_scores", json()), n.distractor_scores);
  return n;
}

}  // namespace

std::vector<ScenarioSpec> parse_scenarios(std::istream& in, const std::string& source) {
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
  std::vector<ScenarioSpec> out;
  try {
    const std::uint64_t base_seed = root.value("seed", std::uint64_t{0});
    const NoiseModel shared = json_noise(root.value("noise", json()), NoiseModel{});
    const json& videos = root.at("videos");
    for (std::size_t v = 0; v < videos.size(); ++v) {
      const json& jv = videos[v];
      ScenarioSpec s;
      s.video_id = jv.value("video_id", "video" + std::to_string(v));
      s.frames = jv.at("frames").get<int>();
      s.classes = jv.value("classes", root.value("classes", 1));
      s.noise = json_noise(jv.value("noise", json()), shared);
      s.periodic_classes = jv.value("periodic_classes", root.value("periodic_classes", std::vector<int>{}));
      s.period = jv.value("period", root.value("period", 8));
      s.tile_period = jv.value("tile_period", 0);
      s.seed = jv.value("seed", base_seed + v);
      for (const json& jt : jv.value("tubes", json::array())) {
        ScenarioTube t;
        t.class_id = jt.value("class", 0);
        t.t_start = jt.at("start").get<int>();
        t.t_end = jt.at("end").get<int>();
        t.first_box = json_box(jt.at("first_box"));
        t.last_box = json_box(jt.value("last_box", jt.at("first_box")));
        s.tubes.push_back(t);
      }
      s.validate();
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return out;
}

std::vector<ScenarioSpec> parse_scenarios(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_scenarios(in, path.string());
}

// ---------------------------------------------------------------------------
// Reports

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "metric,class,threshold,value\n";
  auto row = [&](const std::string& metric, const std::string& cls, const std::string& thr, double v) {
    out << metric << ',' << cls << ',' << thr << ',' << format_real(v) << '\n';
  };
  if (report.frame_map) {
    row("f_map", "all", "0.5", report.frame_map->mean);
    for (std::size_t c = 0; c < report.frame_map->per_class.size(); ++c) {
      if (report.frame_map->per_class[c]) row("f_ap", std::to_string(c), "0.5", *report.frame_map->per_class[c]);
    }
  }
  for (const auto& m : report.video_map) {
    row("v_map", "all", format_real(m.threshold), m.ap.mean);
    for (std::size_t c = 0; c < m.ap.per_class.size(); ++c) {
      if (m.ap.per_class[c]) row("v_ap", std::to_string(c), format_real(m.threshold), *m.ap.per_class[c]);
    }
  }
  row("v_map", "all", "0.5:0.95", report.video_map_coco);
  for (std::size_t c = 0; c < report.temporal.best_overlap.size(); ++c) {
    if (report.temporal.best_overlap[c]) row("avg_t_iou", std::to_string(c), "", *report.temporal.best_overlap[c]);
  }
  for (std::size_t c = 0; c < report.temporal.best_score.size(); ++c) {
    if (report.temporal.best_score[c]) {
      row("avg_t_iou_top_score", std::to_string(c), "", *report.temporal.best_score[c]);
    }
  }
}

void print_report(std::ostream& out, const EvalReport& report) {
  const auto fmt = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
  };
  if (report.frame_map) out << "f-mAP@0.5  " << fmt(report.frame_map->mean) << "\n\n";
  out << "threshold  v-mAP\n";
  for (const auto& m : report.video_map) {
    out << std::left << std::setw(11) << fmt(m.threshold).substr(0, 4) << fmt(m.ap.mean) << '\n';
  }
  out << std::left << std::setw(11) << "0.5:0.95" << fmt(report.video_map_coco) << "\n\n";
  out << "class  avg-t-IoU  (top-score tube)\n";
  for (std::size_t c = 0; c < report.temporal.best_overlap.size(); ++c) {
    if (!report.temporal.best_overlap[c]) continue;
    out << std::left << std::setw(7) << c << std::setw(11) << fmt(*report.temporal.best_overlap[c])
        << fmt(report.temporal.best_score[c].value_or(0.0)) << '\n';
  }
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream items(text);
  std::string item;
  const auto num = [&](const std::string& s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError("bad threshold '" + s + "'");
    return v;
  };
  while (std::getline(items, item, ',')) {
    std::vector<std::string> parts;
    std::stringstream ps(item);
    std::string p;
    while (std::getline(ps, p, ':')) parts.push_back(p);
    if (parts.size() == 1) {
      out.push_back(num(parts[0]));
    } else if (parts.size() == 2 || parts.size() == 3) {
      const double lo = num(parts[0]);
      const double hi = num(parts[1]);
      const double step = parts.size() == 3 ? num(parts[2]) : 0.05;
      if (!(step > 0) || hi < lo) throw ConfigError("bad threshold range '" + item + "'");
      const int n = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
      for (int k = 0; k <= n; ++k) out.push_back(std::round((lo + k * step) * 1e6) / 1e6);
    } else {
      throw ConfigError("bad threshold item '" + item + "'");
    }
  }
  for (double d : out) {
    if (!(d >= 0 && d < 1)) throw ConfigError("thresholds must lie in [0, 1)");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw ConfigError("empty threshold list");
  return out;
}

}  // namespace prtube::io
