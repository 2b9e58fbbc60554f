#include "sd/io.hpp"

#include <bit>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "sd/rng.hpp"

namespace sd {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// --- config parsing -------------------------------------------------------

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw std::invalid_argument("config: " + path + ": " + what);
}

const char* type_label(const json& v) {
  if (v.is_string()) return "a string";
  if (v.is_boolean()) return "a boolean";
  if (v.is_number()) return "a number";
  if (v.is_array()) return "an array";
  if (v.is_object()) return "an object";
  return "null";
}

// Pops `key` from `section` (so leftovers can be reported as unknown) and
// converts it, or returns the default when absent.
template <typename T>
T take(json& section, const std::string& path, const char* key, T fallback) {
  auto it = section.find(key);
  if (it == section.end()) return fallback;
  json value = std::move(*it);
  section.erase(it);
  const std::string where = path + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!value.is_boolean()) config_error(where, std::string("expected a boolean, got ") + type_label(value));
    return value.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!value.is_string()) config_error(where, std::string("expected a string, got ") + type_label(value));
    return value.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!value.is_number_integer()) config_error(where, std::string("expected an integer, got ") + type_label(value));
    return value.get<T>();
  } else {
    if (!value.is_number()) config_error(where, std::string("expected a number, got ") + type_label(value));
    return value.get<double>();
  }
}

json take_section(json& root, const char* key) {
  auto it = root.find(key);
  if (it == root.end()) return json::object();
  if (!it->is_object()) config_error(key, std::string("expected an object, got ") + type_label(*it));
  json section = std::move(*it);
  root.erase(it);
  return section;
}

void reject_leftovers(const json& section, const std::string& path) {
  if (section.empty()) return;
  config_error(path.empty() ? section.begin().key() : path + "." + section.begin().key(),
               "unknown field");
}

// Name-valued fields funnel through the enum parsers, which already throw
// listing the valid names; re-tag those errors with the field path.
template <typename Parse>
auto named(json& section, const std::string& path, const char* key, const std::string& fallback,
           Parse parse) {
  std::string name = take<std::string>(section, path, key, fallback);
  try {
    return parse(name);
  } catch (const std::invalid_argument& e) {
    config_error(path + "." + key, e.what());
  }
}

// --- checkpoint byte stream -----------------------------------------------

struct ByteWriter {
  std::string buf;

  void u32(uint32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
};

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  uint32_t u32() { return scalar<uint32_t>(); }
  uint64_t u64() { return scalar<uint64_t>(); }
  double f64() { return scalar<double>(); }

  template <typename T>
  T scalar() {
    T v;
    raw(&v, sizeof v);
    return v;
  }

  void raw(void* out, size_t n) {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated payload");
    std::memcpy(out, buf.data() + pos, n);
    pos += n;
  }

  std::vector<double> doubles(const char* what) {
    uint64_t n = u64();
    if (n > (buf.size() - pos) / sizeof(double))
      throw std::runtime_error(std::string("checkpoint: truncated ") + what);
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
};

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

constexpr char kMagic[4] = {'S', 'D', 'C', 'K'};
constexpr size_t kHeaderSize = sizeof(kMagic) + sizeof(uint32_t) + 3 * sizeof(uint64_t);

// Validates everything up to the payload checksum and returns the payload
// bytes plus the digest the file claims.
std::string checked_payload(const std::string& path, uint64_t* digest_out) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kHeaderSize) throw std::runtime_error("checkpoint: file too short: " + path);
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic (not a checkpoint): " + path);
  ByteReader header{bytes, sizeof kMagic};
  const uint32_t version = header.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: format version " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion) + ": " + path);
  const uint64_t digest = header.u64();
  const uint64_t payload_len = header.u64();
  const uint64_t payload_sum = header.u64();
  if (bytes.size() - kHeaderSize != payload_len)
    throw std::runtime_error("checkpoint: payload length mismatch (truncated or trailing bytes): " +
                             path);
  if (fnv1a64(bytes.data() + kHeaderSize, payload_len) != payload_sum)
    throw std::runtime_error("checkpoint: payload checksum mismatch (corrupted): " + path);
  if (digest_out) *digest_out = digest;
  return bytes.substr(kHeaderSize);
}

std::vector<Tensor> state_params(TrainState& state, bool policy) {
  return policy ? state.policy.params() : state.model.params();
}

void restore_group(ByteReader& r, std::vector<Tensor> params, AdamMoments& moments,
                   const char* what) {
  std::vector<double> values = r.doubles(what);
  const int64_t expect = param_count(params);
  if (static_cast<int64_t>(values.size()) != expect)
    throw std::runtime_error(std::string("checkpoint: ") + what + " holds " +
                             std::to_string(values.size()) + " values, this configuration needs " +
                             std::to_string(expect));
  ptrdiff_t at = 0;
  for (Tensor& p : params) {
    std::copy(values.begin() + at, values.begin() + at + p.numel(), p.data());
    at += p.numel();
  }
  moments.m = r.doubles(what);
  moments.v = r.doubles(what);
  if (moments.m.size() != values.size() || moments.v.size() != values.size())
    throw std::runtime_error(std::string("checkpoint: ") + what + " moment buffers disagree with " +
                             "the parameter count");
}

}  // namespace

// --- RunConfig --------------------------------------------------------------

void RunConfig::validate() const {
  model.validate();
  TaskSpec resolved = task;
  resolved.vocab_size = model.vocab_size;
  resolved.seed = seed;
  resolved.validate();
  trainer.validate();
  if (out_dir.empty()) throw std::invalid_argument("config: out_dir: must not be empty");
}

std::string RunConfig::to_json() const {
  json j;
  j["model"] = {{"vocab_size", model.vocab_size}, {"e", model.e},           {"d_ff", model.d_ff},
                {"l_enc", model.l_enc},           {"l_dec", model.l_dec},   {"n_heads", model.n_heads},
                {"max_len", model.max_len}};
  j["task"] = {{"kind", task_kind_name(task.kind)},
               {"n_min", task.n_min},
               {"n_max", task.n_max},
               {"prefix_k", task.prefix_k}};
  const RewardSpec& r = trainer.reward;
  j["trainer"] = {{"mode", lambda_mode_name(r.lambda_mode)},
                  {"fixed_lambda", r.fixed_lambda},
                  {"c_mode", c_mode_name(r.c_mode)},
                  {"c_fixed", r.c_fixed},
                  {"c_margin", r.c_margin},
                  {"c_decay", r.c_decay},
                  {"swap_objective_roles", r.swap_objective_roles},
                  {"n_samples", r.n_samples},
                  {"policy_plain_step", r.policy_plain_step},
                  {"model_lr", trainer.model_lr},
                  {"policy_lr", trainer.policy_lr},
                  {"steps", trainer.steps},
                  {"batch_size", trainer.batch_size},
                  {"decision_space", decision_space_name(trainer.decision_space)},
                  {"eval_every", trainer.eval_every},
                  {"eval_examples", trainer.eval_examples},
                  {"checkpoint_every", trainer.checkpoint_every}};
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  return j.dump();  // json objects iterate sorted by key, so this is canonical
}

RunConfig RunConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  if (!root.is_object())
    throw std::invalid_argument(std::string("config: expected a JSON object, got ") +
                                type_label(root));

  RunConfig cfg;
  json m = take_section(root, "model");
  cfg.model.vocab_size = take(m, "model", "vocab_size", cfg.model.vocab_size);
  cfg.model.e = take(m, "model", "e", cfg.model.e);
  cfg.model.d_ff = take(m, "model", "d_ff", cfg.model.d_ff);
  cfg.model.l_enc = take(m, "model", "l_enc", cfg.model.l_enc);
  cfg.model.l_dec = take(m, "model", "l_dec", cfg.model.l_dec);
  cfg.model.n_heads = take(m, "model", "n_heads", cfg.model.n_heads);
  cfg.model.max_len = take(m, "model", "max_len", cfg.model.max_len);
  reject_leftovers(m, "model");

  json t = take_section(root, "task");
  cfg.task.kind = named(t, "task", "kind", task_kind_name(cfg.task.kind), task_kind_from_name);
  cfg.task.n_min = take(t, "task", "n_min", cfg.task.n_min);
  cfg.task.n_max = take(t, "task", "n_max", cfg.task.n_max);
  cfg.task.prefix_k = take(t, "task", "prefix_k", cfg.task.prefix_k);
  reject_leftovers(t, "task");

  json tr = take_section(root, "trainer");
  RewardSpec& r = cfg.trainer.reward;
  r.lambda_mode = named(tr, "trainer", "mode", lambda_mode_name(r.lambda_mode), lambda_mode_from_name);
  r.fixed_lambda = take(tr, "trainer", "fixed_lambda", r.fixed_lambda);
  r.c_mode = named(tr, "trainer", "c_mode", c_mode_name(r.c_mode), c_mode_from_name);
  r.c_fixed = take(tr, "trainer", "c_fixed", r.c_fixed);
  r.c_margin = take(tr, "trainer", "c_margin", r.c_margin);
  r.c_decay = take(tr, "trainer", "c_decay", r.c_decay);
  r.swap_objective_roles = take(tr, "trainer", "swap_objective_roles", r.swap_objective_roles);
  r.n_samples = take(tr, "trainer", "n_samples", r.n_samples);
  r.policy_plain_step = take(tr, "trainer", "policy_plain_step", r.policy_plain_step);
  cfg.trainer.model_lr = take(tr, "trainer", "model_lr", cfg.trainer.model_lr);
  cfg.trainer.policy_lr = take(tr, "trainer", "policy_lr", cfg.trainer.policy_lr);
  cfg.trainer.steps = take(tr, "trainer", "steps", cfg.trainer.steps);
  cfg.trainer.batch_size = take(tr, "trainer", "batch_size", cfg.trainer.batch_size);
  cfg.trainer.decision_space = named(tr, "trainer", "decision_space",
                                     decision_space_name(cfg.trainer.decision_space),
                                     decision_space_from_name);
  cfg.trainer.eval_every = take(tr, "trainer", "eval_every", cfg.trainer.eval_every);
  cfg.trainer.eval_examples = take(tr, "trainer", "eval_examples", cfg.trainer.eval_examples);
  cfg.trainer.checkpoint_every = take(tr, "trainer", "checkpoint_every", cfg.trainer.checkpoint_every);
  reject_leftovers(tr, "trainer");

  cfg.seed = take<uint64_t>(root, "", "seed", cfg.seed);
  cfg.out_dir = take<std::string>(root, "", "out_dir", cfg.out_dir);
  reject_leftovers(root, "");

  // the task always rides on the run seed and the model's vocabulary
  cfg.task.vocab_size = cfg.model.vocab_size;
  cfg.task.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  try {
    return from_json(read_file(path));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

uint64_t RunConfig::digest() const {
  json j = json::parse(to_json());
  j.erase("out_dir");  // where a run writes does not change what it computes
  const std::string canon = j.dump();
  return fnv1a64(canon.data(), canon.size());
}

// --- metrics ----------------------------------------------------------------

std::string metrics_to_json(const StepMetrics& m) {
  json j{{"step", m.step},
         {"loss", m.loss},
         {"greedy_loss", m.greedy_loss},
         {"fraction", m.fraction},
         {"lambda", m.lambda},
         {"phi", m.phi},
         {"c", m.c},
         {"att_skip_pct", m.skip.att_pct},
         {"ffn_skip_pct", m.skip.ffn_pct},
         {"token_skip_pct", m.skip.token_pct}};
  j["eval_accuracy"] = m.eval_accuracy ? json(*m.eval_accuracy) : json(nullptr);
  return j.dump();
}

std::string eval_report_to_json(const EvalReport& r) {
  json j{{"token_accuracy", r.token_accuracy},
         {"exact_match", r.exact_match},
         {"loss", r.loss},
         {"fraction", r.fraction},
         {"att_skip_pct", r.skip.att_pct},
         {"ffn_skip_pct", r.skip.ffn_pct},
         {"token_skip_pct", r.skip.token_pct},
         {"n_examples", r.n_examples}};
  return j.dump();
}

MetricsWriter::MetricsWriter(const std::string& path) : out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open for writing: " + path);
}

void MetricsWriter::write(const StepMetrics& m) {
  out_ << metrics_to_json(m) << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("metrics write failed");
}

// --- checkpoints --------------------------------------------------------------

void save_checkpoint(const std::string& path, const RunConfig& config, const TrainState& state) {
  ByteWriter payload;
  const std::string config_json = config.to_json();
  payload.u64(config_json.size());
  payload.raw(config_json.data(), config_json.size());
  payload.u64(static_cast<uint64_t>(state.step));
  payload.u64(static_cast<uint64_t>(state.adam_t_model));
  payload.u64(static_cast<uint64_t>(state.adam_t_policy));
  payload.f64(state.c_ema);
  payload.u32(state.c_ema_init ? 1 : 0);
  payload.u64(state.rng.state());
  payload.doubles(flatten_values(state.model.params()));
  payload.doubles(state.model_moments.m);
  payload.doubles(state.model_moments.v);
  payload.doubles(flatten_values(state.policy.params()));
  payload.doubles(state.policy_moments.m);
  payload.doubles(state.policy_moments.v);

  ByteWriter file;
  file.raw(kMagic, sizeof kMagic);
  file.u32(kCheckpointVersion);
  file.u64(config.digest());
  file.u64(payload.buf.size());
  file.u64(fnv1a64(payload.buf.data(), payload.buf.size()));
  file.buf += payload.buf;
  write_file(path, file.buf);
}

void load_checkpoint(const std::string& path, const RunConfig& config, TrainState& state) {
  uint64_t digest = 0;
  const std::string payload = checked_payload(path, &digest);
  if (digest != config.digest())
    throw std::runtime_error(
        "checkpoint: written under a different configuration (digest mismatch): " + path);

  ByteReader r{payload};
  const uint64_t config_len = r.u64();
  if (config_len > payload.size() - r.pos)
    throw std::runtime_error("checkpoint: truncated embedded config: " + path);
  r.pos += config_len;  // digest already pins it; body not needed here

  state.step = static_cast<int64_t>(r.u64());
  state.adam_t_model = static_cast<int64_t>(r.u64());
  state.adam_t_policy = static_cast<int64_t>(r.u64());
  state.c_ema = r.f64();
  state.c_ema_init = r.u32() != 0;
  state.rng.set_state(r.u64());
  restore_group(r, state_params(state, false), state.model_moments, "model parameters");
  restore_group(r, state_params(state, true), state.policy_moments, "policy parameters");
  if (r.pos != payload.size())
    throw std::runtime_error("checkpoint: trailing bytes after state: " + path);
  std::vector<Tensor> model_params = state_params(state, false);
  std::vector<Tensor> policy_params = state_params(state, true);
  zero_grads(model_params);
  zero_grads(policy_params);
}

RunConfig checkpoint_config(const std::string& path) {
  uint64_t digest = 0;
  const std::string payload = checked_payload(path, &digest);
  ByteReader r{payload};
  const uint64_t config_len = r.u64();
  if (config_len > payload.size() - r.pos)
    throw std::runtime_error("checkpoint: truncated embedded config: " + path);
  std::string text(payload, r.pos, config_len);
  RunConfig cfg = RunConfig::from_json(text);
  if (cfg.digest() != digest)
    throw std::runtime_error("checkpoint: embedded config disagrees with header digest: " + path);
  return cfg;
}

}  // namespace sd
