#include "mvss/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "mvss/error.hpp"

namespace mvss::net {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'S', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void close(const std::string& path) {
    out_.flush();
    if (!out_) throw IoError("write failed for '" + path + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    buf_.assign(std::istreambuf_iterator<char>(in),
                std::istreambuf_iterator<char>());
  }
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw ParseError("'" + path_ + "': truncated at byte offset " +
                       std::to_string(pos_));
    }
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > 4096) {
      throw ParseError("'" + path_ + "': implausible name length " +
                       std::to_string(n) + " at byte offset " +
                       std::to_string(pos_ - sizeof n));
    }
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

void write_entry(Writer& w, const std::string& name, const Shape& shape,
                 const std::vector<double>& data) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(shape.n));
  w.u32(static_cast<std::uint32_t>(shape.c));
  w.u32(static_cast<std::uint32_t>(shape.h));
  w.u32(static_cast<std::uint32_t>(shape.w));
  for (double v : data) w.f64(v);
}

}  // namespace

void save_checkpoint(const std::string& path, MvssModel& model,
                     int trained_epochs) {
  const ModelConfig& cfg = model.config();
  nn::ParamRegistry reg = model.named_params();

  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(cfg.head));
  w.u32(static_cast<std::uint32_t>(cfg.k));
  w.u32(static_cast<std::uint32_t>(cfg.edge_channels));
  w.f64(cfg.schedule.lambda0);
  w.f64(cfg.schedule.gamma);
  w.u32(static_cast<std::uint32_t>(cfg.schedule.total_epochs));
  w.u32(static_cast<std::uint32_t>(trained_epochs));
  w.u64(cfg.seed);
  w.u32(static_cast<std::uint32_t>(reg.params.size() + reg.buffers.size()));
  for (const NamedParam& np : reg.params) {
    write_entry(w, np.name, np.param->value.shape(), np.param->value.data());
  }
  for (const NamedBuffer& nb : reg.buffers) {
    write_entry(w, nb.name, {1, static_cast<int>(nb.values->size()), 1, 1},
                *nb.values);
  }
  w.close(path);
}

LoadedModel load_checkpoint(const std::string& path) {
  Reader r(path);

  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ParseError("'" + path + "': bad magic at byte offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw ParseError("'" + path + "': unsupported version " +
                     std::to_string(version));
  }

  ModelConfig cfg;
  const std::uint32_t head = r.u32();
  if (head > 2) {
    throw ParseError("'" + path + "': invalid head kind " +
                     std::to_string(head));
  }
  cfg.head = static_cast<HeadKind>(head);
  cfg.k = static_cast<int>(r.u32());
  cfg.edge_channels = static_cast<int>(r.u32());
  cfg.schedule.lambda0 = r.f64();
  cfg.schedule.gamma = r.f64();
  cfg.schedule.total_epochs = static_cast<int>(r.u32());
  const int trained_epochs = static_cast<int>(r.u32());
  cfg.seed = r.u64();
  if (cfg.k < 4 || cfg.k > 4096 || cfg.edge_channels < 1 ||
      cfg.edge_channels > 1024 || cfg.schedule.total_epochs < 1 ||
      cfg.schedule.total_epochs > 1000000) {
    throw ParseError("'" + path + "': implausible model header");
  }

  LoadedModel loaded;
  loaded.model = std::make_unique<MvssModel>(cfg);
  loaded.trained_epochs = trained_epochs;

  nn::ParamRegistry reg = loaded.model->named_params();
  std::map<std::string, std::vector<double>*> expect;
  std::map<std::string, Shape> expect_shape;
  for (const NamedParam& np : reg.params) {
    expect[np.name] = &np.param->value.data();
    expect_shape[np.name] = np.param->value.shape();
  }
  for (const NamedBuffer& nb : reg.buffers) {
    expect[nb.name] = nb.values;
    expect_shape[nb.name] = {1, static_cast<int>(nb.values->size()), 1, 1};
  }

  const std::uint32_t count = r.u32();
  if (count != expect.size()) {
    throw IntegrityError("'" + path + "': holds " + std::to_string(count) +
                         " entries, model expects " +
                         std::to_string(expect.size()));
  }

  std::map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Shape shape;
    shape.n = static_cast<int>(r.u32());
    shape.c = static_cast<int>(r.u32());
    shape.h = static_cast<int>(r.u32());
    shape.w = static_cast<int>(r.u32());

    auto it = expect.find(name);
    if (it == expect.end()) {
      throw IntegrityError("'" + path + "': unexpected entry '" + name + "'");
    }
    if (seen[name]) {
      throw IntegrityError("'" + path + "': duplicate entry '" + name + "'");
    }
    seen[name] = true;
    if (!(shape == expect_shape[name])) {
      throw IntegrityError("'" + path + "': entry '" + name + "' has shape " +
                           shape.str() + ", model expects " +
                           expect_shape[name].str());
    }
    std::vector<double>& dst = *it->second;
    if (static_cast<std::int64_t>(dst.size()) != shape.numel()) {
      throw IntegrityError("'" + path + "': entry '" + name +
                           "' element count mismatch");
    }
    r.bytes(dst.data(), dst.size() * sizeof(double));
  }
  if (!r.at_end()) {
    throw ParseError("'" + path + "': trailing bytes at offset " +
                     std::to_string(r.pos()));
  }
  return loaded;
}

}  // namespace mvss::net
