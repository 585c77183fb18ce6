#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "tsvr/error.hpp"
#include "tsvr/training.hpp"

namespace tsvr {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'V', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kVersion = 1;

enum class Kind : std::uint8_t { Matrix = 'M', Reals = 'R', Integers = 'I' };

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n, std::string where)
      : p_(p), n_(n), where_(std::move(where)) {}

  void need(std::size_t k) const {
    if (n_ - pos_ < k) {
      throw FormatError(where_ + " truncated at byte " + std::to_string(pos_) + " (needs " +
                        std::to_string(k) + " more, has " + std::to_string(n_ - pos_) + ")");
    }
  }
  std::uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  const std::uint8_t* take(std::size_t k) {
    need(k);
    const std::uint8_t* at = p_ + pos_;
    pos_ += k;
    return at;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string where_;
};

// ---- encoding ----------------------------------------------------------------------

class SectionWriter {
 public:
  void matrix(const std::string& name, const Matrix& m) {
    Writer body;
    body.u64(m.rows());
    body.u64(m.cols());
    for (double v : m.values()) body.f64(v);
    emit(name, Kind::Matrix, body);
  }
  void reals(const std::string& name, const std::vector<std::pair<std::string, double>>& table) {
    Writer body;
    body.u32(static_cast<std::uint32_t>(table.size()));
    for (const auto& [k, v] : table) {
      body.str(k);
      body.f64(v);
    }
    emit(name, Kind::Reals, body);
  }
  void integers(const std::string& name,
                const std::vector<std::pair<std::string, std::uint64_t>>& table) {
    Writer body;
    body.u32(static_cast<std::uint32_t>(table.size()));
    for (const auto& [k, v] : table) {
      body.str(k);
      body.u64(v);
    }
    emit(name, Kind::Integers, body);
  }
  void indices(const std::string& name, const std::vector<std::size_t>& values) {
    std::vector<std::pair<std::string, std::uint64_t>> table;
    table.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) table.emplace_back(std::to_string(i), values[i]);
    integers(name, table);
  }
  std::vector<std::uint8_t> finish() { return std::move(out_.buffer()); }

  SectionWriter() {
    out_.bytes(kMagic, sizeof(kMagic));
    out_.u8(kVersion);
  }

 private:
  void emit(const std::string& name, Kind kind, Writer& body) {
    out_.str(name);
    out_.u8(static_cast<std::uint8_t>(kind));
    if (body.buffer().size() > UINT32_MAX) throw FormatError("checkpoint section too large: " + name);
    out_.u32(static_cast<std::uint32_t>(body.buffer().size()));
    out_.bytes(body.buffer().data(), body.buffer().size());
  }
  Writer out_;
};

void write_stats(SectionWriter& w, const std::string& prefix, const DsbnLayer& layer) {
  for (std::size_t s = 0; s < layer.stats.size(); ++s) {
    const std::string p = prefix + ".stats" + std::to_string(s);
    w.matrix(p + ".mean", layer.stats[s].mean);
    w.matrix(p + ".stddev", layer.stats[s].stddev);
  }
}

void write_adam(SectionWriter& w, const std::string& prefix, const AdamState& adam) {
  w.reals(prefix, {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}});
  w.integers(prefix + ".step", {{"step", adam.step}, {"slots", adam.slots.size()}});
  for (std::size_t i = 0; i < adam.slots.size(); ++i) {
    w.matrix(prefix + ".m" + std::to_string(i), adam.slots[i].m);
    w.matrix(prefix + ".v" + std::to_string(i), adam.slots[i].v);
  }
}

// ---- decoding ----------------------------------------------------------------------

struct Section {
  Kind kind;
  const std::uint8_t* data;
  std::size_t size;
};

class SectionReader {
 public:
  SectionReader(const std::vector<std::uint8_t>& bytes, const std::string& origin)
      : origin_(origin) {
    Reader r(bytes.data(), bytes.size(), origin + ": header");
    const std::uint8_t* magic = r.take(sizeof(kMagic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
      throw FormatError(origin + ": not a checkpoint (bad magic)");
    }
    const std::uint8_t version = r.u8();
    if (version != kVersion) {
      throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(version));
    }
    while (!r.done()) {
      Reader hdr(bytes.data() + r.pos(), bytes.size() - r.pos(),
                 origin + ": section header at byte " + std::to_string(r.pos()));
      const std::string name = hdr.str();
      const std::string where = origin + ": section '" + name + "'";
      Reader sec(bytes.data() + r.pos() + hdr.pos(), bytes.size() - r.pos() - hdr.pos(), where);
      const auto kind = static_cast<Kind>(sec.u8());
      if (kind != Kind::Matrix && kind != Kind::Reals && kind != Kind::Integers) {
        throw FormatError(where + ": unknown section kind");
      }
      const std::uint32_t len = sec.u32();
      const std::uint8_t* payload = sec.take(len);
      if (!sections_.emplace(name, Section{kind, payload, len}).second) {
        throw FormatError(where + " appears twice");
      }
      r.take(hdr.pos() + sec.pos());
    }
  }

  const Section& get(const std::string& name, Kind kind) const {
    auto it = sections_.find(name);
    if (it == sections_.end()) throw FormatError(origin_ + ": missing section '" + name + "'");
    if (it->second.kind != kind) {
      throw FormatError(origin_ + ": section '" + name + "' has the wrong kind");
    }
    return it->second;
  }
  bool has(const std::string& name) const { return sections_.count(name) != 0; }

  Matrix matrix(const std::string& name) const {
    const Section& s = get(name, Kind::Matrix);
    Reader r(s.data, s.size, where(name));
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (cols != 0 && rows > (s.size / 8) / cols) {
      throw FormatError(where(name) + " truncated: " + std::to_string(rows) + "x" +
                        std::to_string(cols) + " does not fit");
    }
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = r.f64();
    finish(r, name);
    return Matrix(rows, cols, std::move(v));
  }

  Matrix matrix_like(const std::string& name, const Matrix& shape) const {
    Matrix m = matrix(name);
    if (!m.same_shape(shape)) {
      throw FormatError(where(name) + " is " + m.shape_string() + ", expected " +
                        shape.shape_string());
    }
    return m;
  }

  std::map<std::string, double> reals(const std::string& name) const {
    const Section& s = get(name, Kind::Reals);
    Reader r(s.data, s.size, where(name));
    std::map<std::string, double> out;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string k = r.str();
      out[k] = r.f64();
    }
    finish(r, name);
    return out;
  }

  std::map<std::string, std::uint64_t> integers(const std::string& name) const {
    const Section& s = get(name, Kind::Integers);
    Reader r(s.data, s.size, where(name));
    std::map<std::string, std::uint64_t> out;
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string k = r.str();
      out[k] = r.u64();
    }
    finish(r, name);
    return out;
  }

  std::vector<std::size_t> indices(const std::string& name) const {
    const auto table = integers(name);
    std::vector<std::size_t> out(table.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto it = table.find(std::to_string(i));
      if (it == table.end()) throw FormatError(where(name) + ": missing entry " + std::to_string(i));
      out[i] = it->second;
    }
    return out;
  }

  template <typename Map>
  auto field(const Map& table, const std::string& section, const std::string& key) const {
    auto it = table.find(key);
    if (it == table.end()) {
      throw FormatError(where(section) + ": missing field '" + key + "'");
    }
    return it->second;
  }

 private:
  std::string where(const std::string& name) const { return origin_ + ": section '" + name + "'"; }
  void finish(const Reader& r, const std::string& name) const {
    if (!r.done()) throw FormatError(where(name) + " has trailing bytes");
  }

  std::string origin_;
  std::map<std::string, Section> sections_;
};

void read_stats(const SectionReader& in, const std::string& prefix, DsbnLayer& layer,
                std::uint64_t seen_bits, std::size_t bit_offset) {
  for (std::size_t s = 0; s < layer.stats.size(); ++s) {
    const std::string p = prefix + ".stats" + std::to_string(s);
    auto& st = layer.stats[s];
    st.mean = in.matrix_like(p + ".mean", st.mean);
    st.stddev = in.matrix_like(p + ".stddev", st.stddev);
    st.seen = ((seen_bits >> (bit_offset + s)) & 1U) != 0;
  }
}

AdamState read_adam(const SectionReader& in, const std::string& prefix,
                    const std::vector<const Matrix*>& params) {
  AdamState adam;
  const auto reals = in.reals(prefix);
  adam.beta1 = in.field(reals, prefix, "beta1");
  adam.beta2 = in.field(reals, prefix, "beta2");
  adam.epsilon = in.field(reals, prefix, "epsilon");
  const auto ints = in.integers(prefix + ".step");
  adam.step = in.field(ints, prefix + ".step", "step");
  if (in.field(ints, prefix + ".step", "slots") != params.size()) {
    throw FormatError("checkpoint: " + prefix + " slot count does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam.slots.push_back({in.matrix_like(prefix + ".m" + std::to_string(i), *params[i]),
                          in.matrix_like(prefix + ".v" + std::to_string(i), *params[i])});
  }
  return adam;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainingState& state) {
  const TrainConfig& c = state.config;
  const Model& model = state.model;
  SectionWriter w;
  w.reals("config.reals", {{"learning_rate", c.learning_rate},
                           {"lambda_rec", c.lambda_rec},
                           {"lambda_ent", c.lambda_ent},
                           {"lambda_align", c.lambda_align},
                           {"bn_momentum", c.bn_momentum},
                           {"bn_epsilon", c.bn_epsilon}});
  w.integers("config.integers", {{"max_iterations", c.max_iterations},
                                 {"batch_size", c.batch_size},
                                 {"alignment_mode", static_cast<std::uint64_t>(c.alignment_mode)},
                                 {"seed", c.seed},
                                 {"log_every", c.log_every},
                                 {"embed_dim", c.embed_dim},
                                 {"encoder_hidden", c.encoder_hidden},
                                 {"metric_hidden", c.metric_hidden},
                                 {"domain_classifier_hidden", c.domain_classifier_hidden}});
  w.integers("model.dims", {{"feature_dim", model.dims.feature_dim},
                            {"attribute_dim", model.dims.attribute_dim},
                            {"embed_dim", model.dims.embed_dim},
                            {"encoder_hidden", model.dims.encoder_hidden},
                            {"metric_hidden", model.dims.metric_hidden}});
  for (const auto& p : model_parameters(model)) w.matrix("param." + p.name, *p.value);

  std::uint64_t seen = 0;
  for (std::size_t s = 0; s < 2; ++s) {
    if (model.metric.norm1.stats[s].seen) seen |= 1U << s;
    if (model.metric.norm2.stats[s].seen) seen |= 1U << (2 + s);
  }
  w.integers("stats.seen", {{"bits", seen}});
  write_stats(w, "metric.norm1", model.metric.norm1);
  write_stats(w, "metric.norm2", model.metric.norm2);
  write_adam(w, "adam", state.optimizer);

  const auto& rs = state.rng.state();
  w.integers("trainer", {{"iteration", state.iteration},
                         {"rng0", rs[0]},
                         {"rng1", rs[1]},
                         {"rng2", rs[2]},
                         {"rng3", rs[3]},
                         {"source_population", state.source_sampler.population()},
                         {"source_cursor", state.source_sampler.cursor()},
                         {"target_population", state.target_sampler.population()},
                         {"target_cursor", state.target_sampler.cursor()},
                         {"has_classifier", state.domain_classifier ? 1U : 0U}});
  w.indices("sampler.source", state.source_sampler.order());
  w.indices("sampler.target", state.target_sampler.order());

  if (state.domain_classifier) {
    const DomainClassifier& dc = *state.domain_classifier;
    w.matrix("classifier.hidden.weight", dc.hidden.weight);
    w.matrix("classifier.hidden.bias", dc.hidden.bias);
    w.matrix("classifier.out.weight", dc.out.weight);
    w.matrix("classifier.out.bias", dc.out.bias);
    write_adam(w, "classifier_adam", state.classifier_optimizer);
  }
  return w.finish();
}

TrainingState decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  const SectionReader in(bytes, origin);
  TrainingState state;
  TrainConfig& c = state.config;

  const auto reals = in.reals("config.reals");
  c.learning_rate = in.field(reals, "config.reals", "learning_rate");
  c.lambda_rec = in.field(reals, "config.reals", "lambda_rec");
  c.lambda_ent = in.field(reals, "config.reals", "lambda_ent");
  c.lambda_align = in.field(reals, "config.reals", "lambda_align");
  c.bn_momentum = in.field(reals, "config.reals", "bn_momentum");
  c.bn_epsilon = in.field(reals, "config.reals", "bn_epsilon");

  const auto ints = in.integers("config.integers");
  auto cint = [&](const char* key) { return in.field(ints, "config.integers", key); };
  c.max_iterations = cint("max_iterations");
  c.batch_size = cint("batch_size");
  const std::uint64_t mode = cint("alignment_mode");
  if (mode > static_cast<std::uint64_t>(AlignmentMode::None)) {
    throw FormatError(origin + ": section 'config.integers': unknown alignment mode");
  }
  c.alignment_mode = static_cast<AlignmentMode>(mode);
  c.seed = cint("seed");
  c.log_every = cint("log_every");
  c.embed_dim = cint("embed_dim");
  c.encoder_hidden = cint("encoder_hidden");
  c.metric_hidden = cint("metric_hidden");
  c.domain_classifier_hidden = cint("domain_classifier_hidden");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(origin + ": stored configuration is invalid: " + e.what());
  }

  const auto dims_table = in.integers("model.dims");
  ModelDims dims;
  dims.feature_dim = in.field(dims_table, "model.dims", "feature_dim");
  dims.attribute_dim = in.field(dims_table, "model.dims", "attribute_dim");
  dims.embed_dim = in.field(dims_table, "model.dims", "embed_dim");
  dims.encoder_hidden = in.field(dims_table, "model.dims", "encoder_hidden");
  dims.metric_hidden = in.field(dims_table, "model.dims", "metric_hidden");
  constexpr std::uint64_t kMaxDim = 1U << 20;
  for (std::size_t v : {dims.feature_dim, dims.attribute_dim, dims.embed_dim,
                        dims.encoder_hidden, dims.metric_hidden}) {
    if (v == 0 || v > kMaxDim) throw FormatError(origin + ": section 'model.dims' is implausible");
  }

  // Shapes come from a freshly built model; every value is then overwritten.
  Rng scratch(0);
  state.model = make_model(dims, c.alignment_mode, c.bn_momentum, c.bn_epsilon, scratch);
  std::vector<const Matrix*> shapes;
  for (auto& p : model_parameters(state.model)) {
    *p.value = in.matrix_like("param." + p.name, *p.value);
    shapes.push_back(p.value);
  }
  const std::uint64_t seen = in.field(in.integers("stats.seen"), "stats.seen", "bits");
  read_stats(in, "metric.norm1", state.model.metric.norm1, seen, 0);
  read_stats(in, "metric.norm2", state.model.metric.norm2, seen, 2);
  state.optimizer = read_adam(in, "adam", shapes);

  const auto trainer = in.integers("trainer");
  auto tint = [&](const char* key) { return in.field(trainer, "trainer", key); };
  state.iteration = tint("iteration");
  try {
    state.rng = Rng::from_state({tint("rng0"), tint("rng1"), tint("rng2"), tint("rng3")});
  } catch (const Error& e) {
    throw FormatError(origin + ": section 'trainer': " + e.what());
  }
  state.source_sampler = EpochSampler(tint("source_population"));
  state.source_sampler.restore(in.indices("sampler.source"), tint("source_cursor"));
  state.target_sampler = EpochSampler(tint("target_population"));
  state.target_sampler.restore(in.indices("sampler.target"), tint("target_cursor"));

  const bool has_classifier = tint("has_classifier") != 0;
  if (has_classifier != (c.alignment_mode == AlignmentMode::Dann)) {
    throw FormatError(origin + ": section 'trainer': classifier presence does not match mode");
  }
  if (has_classifier) {
    DomainClassifier dc;
    dc.hidden.weight = in.matrix("classifier.hidden.weight");
    dc.hidden.bias = in.matrix("classifier.hidden.bias");
    dc.out.weight = in.matrix("classifier.out.weight");
    dc.out.bias = in.matrix("classifier.out.bias");
    if (dc.hidden.weight.cols() != dims.metric_hidden ||
        dc.hidden.bias.cols() != dc.hidden.weight.rows() ||
        dc.out.weight.cols() != dc.hidden.weight.rows() || dc.out.weight.rows() != 1 ||
        dc.out.bias.cols() != 1) {
      throw FormatError(origin + ": classifier sections have inconsistent shapes");
    }
    state.domain_classifier = std::move(dc);
    const DomainClassifier& ref = *state.domain_classifier;
    state.classifier_optimizer =
        read_adam(in, "classifier_adam",
                  {&ref.hidden.weight, &ref.hidden.bias, &ref.out.weight, &ref.out.bias});
  }
  return state;
}

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace tsvr
