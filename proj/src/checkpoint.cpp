#include "kbgrade/checkpoint.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "kbgrade/errors.hpp"

namespace kbgrade {
namespace {

constexpr std::string_view kMagic = "kbgrade-checkpoint v1";

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) throw DataError("checkpoint: unexpected end of file");
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  /// Reads "<key> <value>" and returns value.
  std::string keyed(std::string_view key) {
    const std::string line = next();
    if (line.compare(0, key.size(), key) != 0 || line.size() <= key.size() ||
        line[key.size()] != ' ') {
      fail("expected '" + std::string(key) + "'");
    }
    return line.substr(key.size() + 1);
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("checkpoint line " + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

std::size_t parse_size(LineReader& reader, const std::string& text) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) reader.fail("bad integer " + text);
  return value;
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw DataError("not a number: '" + std::string(text) + "'");
  }
  return value;
}

void write_checkpoint(std::ostream& out, const Model& model,
                      const std::map<std::string, std::string>& metadata) {
  const auto& cfg = model.config();
  out << kMagic << '\n';
  out << "kind " << model_kind_name(cfg.kind) << '\n';
  out << "dim " << cfg.dim << '\n';
  out << "attention_dim " << cfg.attention_dim << '\n';
  out << "decay " << format_double(cfg.decay) << '\n';
  out << "gamma " << format_double(cfg.gamma) << '\n';
  out << "grade_weighted_attention " << (cfg.grade_weighted_attention ? 1 : 0) << '\n';
  out << "metadata " << metadata.size() << '\n';
  for (const auto& [key, value] : metadata) {
    if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint metadata keys must not contain spaces or newlines");
    }
    out << key << ' ' << value << '\n';
  }
  out << "courses " << model.courses().size() << '\n';
  for (const auto& id : model.courses().ids()) out << id << '\n';
  out << "students " << model.students().size() << '\n';
  for (const auto& id : model.students().ids()) out << id << '\n';
  const auto params = model.parameters();
  for (const auto& seg : model.layout().segments()) {
    out << "segment " << seg.name << ' ' << seg.rows << ' ' << seg.cols << '\n';
    for (std::size_t row = 0; row < seg.rows; ++row) {
      for (std::size_t col = 0; col < seg.cols; ++col) {
        if (col) out << ' ';
        out << format_double(params[seg.offset + row * seg.cols + col]);
      }
      out << '\n';
    }
  }
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  LineReader reader(in);
  if (reader.next() != kMagic) reader.fail("not a kbgrade checkpoint");
  ModelConfig cfg;
  try {
    cfg.kind = parse_model_kind(reader.keyed("kind"));
  } catch (const std::invalid_argument& e) {
    reader.fail(e.what());
  }
  cfg.dim = parse_size(reader, reader.keyed("dim"));
  cfg.attention_dim = parse_size(reader, reader.keyed("attention_dim"));
  cfg.decay = parse_double(reader.keyed("decay"));
  cfg.gamma = parse_double(reader.keyed("gamma"));
  cfg.grade_weighted_attention = reader.keyed("grade_weighted_attention") == "1";

  std::map<std::string, std::string> metadata;
  const std::size_t n_meta = parse_size(reader, reader.keyed("metadata"));
  for (std::size_t i = 0; i < n_meta; ++i) {
    const std::string line = reader.next();
    const auto space = line.find(' ');
    if (space == std::string::npos) reader.fail("metadata line needs a key and a value");
    metadata.emplace(line.substr(0, space), line.substr(space + 1));
  }

  auto read_ids = [&](std::string_view key) {
    const std::size_t count = parse_size(reader, reader.keyed(key));
    std::vector<std::string> ids;
    ids.reserve(count);
    for (std::size_t i = 0; i < count; ++i) ids.push_back(reader.next());
    return Vocabulary(std::move(ids));
  };
  Vocabulary courses = read_ids("courses");
  Vocabulary students = read_ids("students");

  Model model(cfg, std::move(courses), std::move(students));
  auto params = model.parameters();
  for (const auto& seg : model.layout().segments()) {
    std::istringstream header(reader.keyed("segment"));
    std::string name;
    std::size_t rows = 0, cols = 0;
    header >> name >> rows >> cols;
    if (name != seg.name || rows != seg.rows || cols != seg.cols) {
      reader.fail("expected segment " + seg.name + " " + std::to_string(seg.rows) + "x" +
                  std::to_string(seg.cols) + ", found " + name + " " + std::to_string(rows) +
                  "x" + std::to_string(cols));
    }
    for (std::size_t row = 0; row < rows; ++row) {
      const std::string line = reader.next();
      std::string_view rest(line);
      for (std::size_t col = 0; col < cols; ++col) {
        const auto space = rest.find(' ');
        const auto token = rest.substr(0, space);
        try {
          params[seg.offset + row * cols + col] = parse_double(token);
        } catch (const DataError& e) {
          reader.fail(e.what());
        }
        if (space == std::string_view::npos) {
          if (col + 1 != cols) reader.fail("too few values in segment " + seg.name);
          rest = {};
        } else {
          rest.remove_prefix(space + 1);
        }
      }
      if (!rest.empty()) reader.fail("too many values in segment " + seg.name);
    }
  }
  if (reader.next() != "end") reader.fail("expected 'end'");
  return Checkpoint{std::move(model), std::move(metadata)};
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::map<std::string, std::string>& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  write_checkpoint(out, model, metadata);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace kbgrade
