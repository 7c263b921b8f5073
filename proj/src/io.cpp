#include "qsmp/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>

#include "qsmp/error.hpp"

namespace qsmp::io {

void write_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot rename onto '" + path.string() + "'");
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  auto r = std::to_chars(buf, buf + 16, v, 16);
  std::string s(buf, r.ptr);
  return std::string(16 - s.size(), '0') + s;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

void append_csv(std::string& out, const Table::Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) {
    if (s->find_first_of(",\"\r\n") == std::string::npos) {
      out += *s;
      return;
    }
    out += '"';
    for (char ch : *s) {
      if (ch == '"') out += '"';
      out += ch;
    }
    out += '"';
  } else if (const auto* d = std::get_if<double>(&c)) {
    out += format_double(*d);
  } else if (const auto* i = std::get_if<std::int64_t>(&c)) {
    out += std::to_string(*i);
  } else {
    out += std::to_string(std::get<std::uint64_t>(c));
  }
}

}  // namespace

Table::Table(std::vector<std::string> header) : header_(std::move(header)) {}

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != header_.size())
    throw Error("table row has " + std::to_string(row.size()) + " cells, expected " + std::to_string(header_.size()));
  rows_.push_back(std::move(row));
}

std::string Table::csv() const {
  std::string out;
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (i) out += ',';
    append_csv(out, header_[i]);
  }
  out += "\r\n";
  for (const auto& row : rows_) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      append_csv(out, row[i]);
    }
    out += "\r\n";
  }
  return out;
}

nlohmann::json Table::json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : rows_) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& c : row)
      std::visit(
          [&](const auto& v) {
            if constexpr (std::is_same_v<std::decay_t<decltype(v)>, double>)
              r.push_back(number(v));
            else
              r.push_back(v);
          },
          c);
    rows.push_back(std::move(r));
  }
  return {{"columns", header_}, {"rows", std::move(rows)}};
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json numbers(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

namespace {

constexpr char kMagic[8] = {'Q', 'S', 'M', 'P', 'B', 'I', 'N', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::uint64_t count) {
    need(count);
    auto s = b_.substr(pos_, count);
    pos_ += count;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::uint64_t count) const {
    if (count > b_.size() - pos_) throw Error("binary container truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

void BinaryContainer::add(const std::string& name, const PathArray& a) {
  BinarySection s;
  s.name = name;
  s.shape = {a.paths(), a.steps(), a.components()};
  s.data.resize(a.paths() * a.steps() * a.components());
  std::size_t o = 0;
  for (std::size_t m = 0; m < a.paths(); ++m)
    for (std::size_t i = 0; i < a.steps(); ++i)
      for (std::size_t c = 0; c < a.components(); ++c) s.data[o++] = a.at(i, c, m);
  sections.push_back(std::move(s));
}

const BinarySection* BinaryContainer::find(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

std::string BinaryContainer::serialize() const {
  std::string out(kMagic, sizeof kMagic);
  for (std::uint64_t v : {M, N, n, d}) put_u64(out, v);
  put_f64(out, dt);
  put_u64(out, sections.size());
  for (const auto& s : sections) {
    put_u64(out, s.name.size());
    out += s.name;
    put_u64(out, s.shape.size());
    for (auto v : s.shape) put_u64(out, v);
    for (double v : s.data) put_f64(out, v);
  }
  return out;
}

BinaryContainer BinaryContainer::parse(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) throw Error("not a qsmp binary container");
  BinaryContainer c;
  c.M = r.u64();
  c.N = r.u64();
  c.n = r.u64();
  c.d = r.u64();
  c.dt = r.f64();
  const std::uint64_t count = r.u64();
  for (std::uint64_t k = 0; k < count; ++k) {
    BinarySection s;
    s.name = std::string(r.bytes(r.u64()));
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw Error("binary section rank too large");
    std::uint64_t size = 1;
    for (std::uint64_t j = 0; j < rank; ++j) {
      s.shape.push_back(r.u64());
      if (s.shape.back() != 0 && size > r.remaining() / s.shape.back()) throw Error("binary container truncated");
      size *= s.shape.back();
    }
    if (size > r.remaining() / 8) throw Error("binary container truncated");
    s.data.resize(size);
    for (auto& v : s.data) v = r.f64();
    c.sections.push_back(std::move(s));
  }
  if (!r.done()) throw Error("trailing bytes after binary container");
  return c;
}

}  // namespace qsmp::io
