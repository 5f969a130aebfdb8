#include "agf/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "agf/error.hpp"

static_assert(std::endian::native == std::endian::little, "the container format is little-endian");

namespace agf::store {

using nlohmann::json;

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i64: return 8;
    case DType::u8: return 1;
  }
  throw FormatError("unknown dtype " + std::to_string(static_cast<int>(d)));
}

namespace {

template <typename T>
Entry make_entry(DType d, const Shape& shape, const T* data, std::size_t n) {
  Entry e{d, shape, std::vector<std::uint8_t>(n * sizeof(T))};
  if (n) std::memcpy(e.bytes.data(), data, n * sizeof(T));
  return e;
}

template <typename T>
std::vector<T> decode(const Entry& e, DType want, const std::string& name) {
  if (e.dtype != want) throw FormatError("entry '" + name + "' has unexpected dtype");
  std::vector<T> out(e.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

}  // namespace

void Container::put(const std::string& name, const Tensor<float>& t) {
  entries_[name] = make_entry(DType::f32, t.shape(), t.data(), t.size());
}
void Container::put(const std::string& name, const Tensor<double>& t) {
  entries_[name] = make_entry(DType::f64, t.shape(), t.data(), t.size());
}
void Container::put(const std::string& name, const std::vector<std::int64_t>& v) {
  entries_[name] = make_entry(DType::i64, {v.size()}, v.data(), v.size());
}
void Container::put_text(const std::string& name, const std::string& text) {
  entries_[name] = make_entry(DType::u8, {text.size()}, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

const Entry& Container::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw FormatError("missing entry '" + name + "'");
  return it->second;
}

Tensor<float> Container::f32(const std::string& name) const {
  const auto& e = entry(name);
  return Tensor<float>(e.shape, decode<float>(e, DType::f32, name));
}
Tensor<double> Container::f64(const std::string& name) const {
  const auto& e = entry(name);
  return Tensor<double>(e.shape, decode<double>(e, DType::f64, name));
}
std::vector<std::int64_t> Container::i64(const std::string& name) const {
  return decode<std::int64_t>(entry(name), DType::i64, name);
}
std::string Container::text(const std::string& name) const {
  const auto v = decode<std::uint8_t>(entry(name), DType::u8, name);
  return std::string(v.begin(), v.end());
}

namespace {

template <typename T>
void put_raw(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, const fs::path& path) : data_(data), path_(path) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[noreturn]] void fail(const std::string& why) const { throw FormatError(path_.string() + ": " + why); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) fail("truncated header");
  }
  const std::string& data_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

void write_container(const fs::path& path, const Container& c) {
  std::string header(kMagic, 4);
  put_raw(header, kVersion);
  put_raw(header, static_cast<std::uint32_t>(c.entries().size()));
  std::size_t header_size = header.size();
  for (const auto& [name, e] : c.entries())
    header_size += 4 + name.size() + 1 + 4 + 8 * e.shape.size() + 16;

  std::uint64_t offset = header_size;
  for (const auto& [name, e] : c.entries()) {
    if (shape_size(e.shape) * dtype_size(e.dtype) != e.bytes.size())
      throw InvalidInput("entry '" + name + "' byte size disagrees with its shape");
    put_raw(header, static_cast<std::uint32_t>(name.size()));
    header += name;
    put_raw(header, static_cast<std::uint8_t>(e.dtype));
    put_raw(header, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put_raw(header, static_cast<std::uint64_t>(d));
    put_raw(header, offset);
    put_raw(header, static_cast<std::uint64_t>(e.bytes.size()));
    offset += e.bytes.size();
  }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, e] : c.entries())
      out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Container read_container(const fs::path& path) {
  const std::string data = slurp(path);
  Reader r(data, path);
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) r.fail("bad magic");
  r.str(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  const auto n = r.get<std::uint32_t>();
  Container c;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string name = r.str(name_len);
    const auto raw_dtype = r.get<std::uint8_t>();
    if (raw_dtype > 3) r.fail("entry '" + name + "' has unknown dtype");
    Entry e;
    e.dtype = static_cast<DType>(raw_dtype);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) r.fail("entry '" + name + "' has implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint64_t>());
    const auto offset = r.get<std::uint64_t>();
    const auto bytes = r.get<std::uint64_t>();
    if (shape_size(e.shape) * dtype_size(e.dtype) != bytes) r.fail("entry '" + name + "' shape/length mismatch");
    if (offset > data.size() || bytes > data.size() - offset) r.fail("entry '" + name + "' truncated");
    e.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(offset),
                   data.begin() + static_cast<std::ptrdiff_t>(offset + bytes));
    if (!c.entries().emplace(name, std::move(e)).second) r.fail("duplicate entry '" + name + "'");
  }
  return c;
}

// ---- typed artifacts ----------------------------------------------------

namespace {

json read_meta(const Container& c, const std::string& kind, const fs::path& path) {
  json meta;
  try {
    meta = json::parse(c.text("meta"));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": unreadable metadata: " + e.what());
  }
  if (meta.value("kind", "") != kind)
    throw FormatError(path.string() + ": expected a " + kind + " file, found '" + meta.value("kind", "?") + "'");
  return meta;
}

template <typename F>
auto guarded(const fs::path& path, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed metadata: " + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

json spec_json(const nn::LayerSpec& s) {
  return {{"kind", nn::to_string(s.kind)}, {"in", s.in},   {"out", s.out},
          {"kh", s.kernel_h},              {"kw", s.kernel_w}, {"rate", s.rate}};
}

nn::LayerSpec spec_from_json(const json& j) {
  return {nn::layer_kind_from_string(j.at("kind").get<std::string>()), j.at("in").get<std::size_t>(),
          j.at("out").get<std::size_t>(), j.at("kh").get<std::size_t>(), j.at("kw").get<std::size_t>(),
          j.at("rate").get<double>()};
}

json rows_json(const nn::Sequential<float>& seq) {
  json rows = json::array();
  const auto specs = seq.specs();
  std::size_t begin = 0;
  for (const auto& r : seq.rows()) {
    json layers = json::array();
    for (std::size_t i = begin; i < r.end; ++i) layers.push_back(spec_json(specs[i]));
    rows.push_back({{"label", r.label}, {"layers", layers}});
    begin = r.end;
  }
  return rows;
}

nn::Sequential<float> rows_from_json(const json& j) {
  std::vector<models::RowSpec> rows;
  for (const auto& r : j) {
    models::RowSpec row{r.at("label").get<std::string>(), {}};
    for (const auto& l : r.at("layers")) row.layers.push_back(spec_from_json(l));
    rows.push_back(std::move(row));
  }
  return models::build_sequential<float>(rows);
}

void put_params(Container& c, const std::vector<nn::NamedParam<float>>& params) {
  for (const auto& p : params) c.put("param/" + p.name, p.param->value);
}

void load_params(const Container& c, const std::vector<nn::NamedParam<float>>& params, const fs::path& path) {
  for (const auto& p : params) {
    auto t = c.f32("param/" + p.name);
    if (t.shape() != p.param->value.shape())
      throw FormatError(path.string() + ": parameter '" + p.name + "' has shape " + shape_string(t.shape()) +
                        ", expected " + shape_string(p.param->value.shape()));
    p.param->value = std::move(t);
  }
}

json adam_json(Container& c, const nn::Adam<float>* adam) {
  if (!adam) return nullptr;
  const auto& cfg = adam->config();
  json steps = json::object();
  for (const auto& [name, slot] : adam->slots()) {
    c.put("adam.m/" + name, slot.m);
    c.put("adam.v/" + name, slot.v);
    steps[name] = slot.t;
  }
  return {{"lr", cfg.lr}, {"beta1", cfg.beta1}, {"beta2", cfg.beta2}, {"eps", cfg.eps}, {"steps", steps}};
}

nn::Adam<float> adam_from_json(const Container& c, const json& j) {
  if (j.is_null()) return nn::Adam<float>{};
  nn::Adam<float> adam({j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                        j.at("eps").get<double>()});
  for (const auto& [name, t] : j.at("steps").items())
    adam.slots()[name] = {c.f32("adam.m/" + name), c.f32("adam.v/" + name), t.get<std::int64_t>()};
  return adam;
}

}  // namespace

void write_features(const fs::path& path, const TrackFeatures& f) {
  Container c;
  c.put_text("meta", json{{"kind", "features"}, {"track_id", f.track_id}}.dump());
  c.put("mel", f.mel);
  c.put("mfcc", f.mfcc);
  c.put("dmfcc", f.dmfcc);
  write_container(path, c);
}

TrackFeatures read_features(const fs::path& path) {
  const Container c = read_container(path);
  const json meta = read_meta(c, "features", path);
  TrackFeatures f{meta.at("track_id").get<std::string>(), c.f32("mel"), c.f32("mfcc"), c.f32("dmfcc")};
  if (f.mel.rank() != 2 || f.mel.dim(0) != dsp::kMelBins)
    throw FormatError(path.string() + ": mel spectrogram must be [128, frames]");
  return f;
}

void write_codebook(const fs::path& path, const dict::Codebook& cb) {
  Container c;
  c.put_text("meta", json{{"kind", "codebook"}, {"feature_kind", dict::to_string(cb.kind)}}.dump());
  c.put("centroids", cb.centroids);
  write_container(path, c);
}

dict::Codebook read_codebook(const fs::path& path) {
  const Container c = read_container(path);
  return guarded(path, [&] {
    const json meta = read_meta(c, "codebook", path);
    dict::Codebook cb{c.f64("centroids"), dict::code_kind_from_string(meta.at("feature_kind").get<std::string>())};
    if (cb.centroids.rank() != 2 || cb.size() == 0) throw FormatError(path.string() + ": empty codebook");
    return cb;
  });
}

void write_bow(const fs::path& path, const dict::BowTable& table) {
  Container c;
  json artists = json::array();
  std::vector<std::int64_t> flat;
  for (const auto& b : table.bows) {
    artists.push_back(b.artist_id);
    flat.insert(flat.end(), b.counts.begin(), b.counts.end());
  }
  c.put_text("meta", json{{"kind", "bow"},
                          {"vocab_kind", dict::to_string(table.kind)},
                          {"vocab", table.vocab},
                          {"artists", artists},
                          {"excluded", table.excluded}}
                         .dump());
  c.put("counts", flat);
  write_container(path, c);
}

dict::BowTable read_bow(const fs::path& path) {
  const Container c = read_container(path);
  return guarded(path, [&] {
    const json meta = read_meta(c, "bow", path);
    dict::BowTable t;
    t.kind = dict::vocab_kind_from_string(meta.at("vocab_kind").get<std::string>());
    t.vocab = meta.at("vocab").get<std::size_t>();
    t.excluded = meta.at("excluded").get<std::vector<std::string>>();
    const auto flat = c.i64("counts");
    const auto artists = meta.at("artists").get<std::vector<std::string>>();
    if (flat.size() != artists.size() * t.vocab) throw FormatError(path.string() + ": count table size mismatch");
    for (std::size_t i = 0; i < artists.size(); ++i)
      t.bows.push_back({artists[i], std::vector<std::int64_t>(flat.begin() + static_cast<std::ptrdiff_t>(i * t.vocab),
                                                              flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * t.vocab))});
    return t;
  });
}

void write_agf_model(const fs::path& path, const groups::AgfModel& m) {
  Container c;
  c.put_text("meta", json{{"kind", "agf_model"},
                          {"n_topics", m.n_topics},
                          {"alpha", m.alpha},
                          {"beta", m.beta},
                          {"vocab_kind", dict::to_string(m.vocab_kind)},
                          {"artists", m.artist_ids}}
                         .dump());
  c.put("phi", m.phi);
  c.put("theta", m.theta);
  c.put("log_likelihood", Tensor<double>({m.log_likelihood.size()}, m.log_likelihood));
  write_container(path, c);
}

groups::AgfModel read_agf_model(const fs::path& path) {
  const Container c = read_container(path);
  return guarded(path, [&] {
    const json meta = read_meta(c, "agf_model", path);
    groups::AgfModel m;
    m.n_topics = meta.at("n_topics").get<std::size_t>();
    m.alpha = meta.at("alpha").get<double>();
    m.beta = meta.at("beta").get<double>();
    m.vocab_kind = dict::vocab_kind_from_string(meta.at("vocab_kind").get<std::string>());
    m.artist_ids = meta.at("artists").get<std::vector<std::string>>();
    m.phi = c.f64("phi");
    m.theta = c.f64("theta");
    m.log_likelihood = c.f64("log_likelihood").values();
    if (m.phi.rank() != 2 || m.theta.rank() != 2 || m.phi.dim(0) != m.n_topics || m.theta.dim(1) != m.n_topics ||
        m.theta.dim(0) != m.artist_ids.size())
      throw FormatError(path.string() + ": topic model shapes disagree with metadata");
    return m;
  });
}

void write_network(const fs::path& path, models::NetworkGraph<float>& net, const nn::Adam<float>* adam,
                   const Info& info) {
  Container c;
  json branches = json::object();
  for (const auto& [t, b] : net.branches) branches[std::string(1, models::task_char(t))] = rows_json(b);
  const auto& a = net.arch;
  json meta{{"kind", "network"},
            {"variant", models::to_string(net.variant)},
            {"tasks", models::combo_string(net.tasks)},
            {"arch",
             {{"conv", a.conv_channels},
              {"dense", a.dense_units},
              {"genre_classes", a.genre_classes},
              {"agf_classes", a.agf_classes}}},
            {"shared", rows_json(net.shared)},
            {"branches", branches},
            {"info", info}};
  put_params(c, net.all_named_params());
  meta["adam"] = adam_json(c, adam);
  c.put_text("meta", meta.dump());
  write_container(path, c);
}

LoadedNetwork read_network(const fs::path& path) {
  const Container c = read_container(path);
  return guarded(path, [&] {
    const json meta = read_meta(c, "network", path);
    LoadedNetwork out;
    auto& net = out.net;
    net.variant = models::variant_from_string(meta.at("variant").get<std::string>());
    net.tasks = models::parse_tasks(meta.at("tasks").get<std::string>());
    const json& a = meta.at("arch");
    net.arch.conv_channels = a.at("conv").get<std::array<std::size_t, 7>>();
    net.arch.dense_units = a.at("dense").get<std::size_t>();
    net.arch.genre_classes = a.at("genre_classes").get<std::size_t>();
    net.arch.agf_classes = a.at("agf_classes").get<std::size_t>();
    net.shared = rows_from_json(meta.at("shared"));
    for (const auto& [key, rows] : meta.at("branches").items())
      net.branches[models::task_from_char(key.at(0))] = rows_from_json(rows);
    load_params(c, net.all_named_params(), path);
    out.adam = adam_from_json(c, meta.at("adam"));
    out.info = meta.at("info").get<Info>();
    return out;
  });
}

void write_mlp(const fs::path& path, nn::Sequential<float>& mlp, const nn::Adam<float>* adam, const Info& info) {
  Container c;
  json meta{{"kind", "mlp"}, {"rows", rows_json(mlp)}, {"info", info}};
  put_params(c, mlp.named_params("mlp."));
  meta["adam"] = adam_json(c, adam);
  c.put_text("meta", meta.dump());
  write_container(path, c);
}

LoadedMlp read_mlp(const fs::path& path) {
  const Container c = read_container(path);
  return guarded(path, [&] {
    const json meta = read_meta(c, "mlp", path);
    LoadedMlp out{rows_from_json(meta.at("rows")), {}, meta.at("info").get<Info>()};
    load_params(c, out.mlp.named_params("mlp."), path);
    out.adam = adam_from_json(c, meta.at("adam"));
    return out;
  });
}

std::uint64_t file_hash(const fs::path& path) {
  const std::string data = slurp(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

}  // namespace agf::store
