#include "sd/tasks.hpp"

#include <algorithm>
#include <cstring>
#include <ostream>
#include <stdexcept>

#include "sd/rng.hpp"

namespace sd {

namespace {

constexpr int kSplitBuckets = 16;
constexpr int kValBucket = 14;
constexpr int kTestBucket = 15;
constexpr uint64_t kSplitStreamTag = 0x5D5D5D5D5D5D5D5DULL;

// parity payload uses exactly two symbols; the class token encodes the
// count of the second one mod 2
constexpr int kParityClassBase = kFirstSymbolToken + 2;

void check_field(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("task spec: " + message);
}

}  // namespace

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::PrefixExtract: return "prefix_extract";
    case TaskKind::ParityClassify: return "parity_classify";
  }
  throw std::logic_error("task_kind_name: unknown kind");
}

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "prefix_extract") return TaskKind::PrefixExtract;
  if (name == "parity_classify") return TaskKind::ParityClassify;
  throw std::invalid_argument("task kind '" + name +
                              "' unknown (copy, reverse, prefix_extract, parity_classify)");
}

void TaskSpec::validate() const {
  check_field(vocab_size >= 8, "vocab_size must be >= 8, got " + std::to_string(vocab_size));
  check_field(n_min >= 1, "n_min must be >= 1, got " + std::to_string(n_min));
  check_field(n_max >= n_min, "n_max (" + std::to_string(n_max) + ") must be >= n_min (" +
                                  std::to_string(n_min) + ")");
  if (kind == TaskKind::PrefixExtract)
    check_field(prefix_k >= 1 && prefix_k <= n_min,
                "prefix_k (" + std::to_string(prefix_k) + ") must be in [1, n_min=" +
                    std::to_string(n_min) + "]");
}

Example generate_example(const TaskSpec& spec, Rng& rng) {
  spec.validate();
  const int n = spec.n_min + static_cast<int>(rng.next_below(
                                 static_cast<uint64_t>(spec.n_max - spec.n_min + 1)));
  Example ex;
  ex.src.resize(static_cast<size_t>(n));
  if (spec.kind == TaskKind::ParityClassify) {
    int odd_count = 0;
    for (int& t : ex.src) {
      const int bit = static_cast<int>(rng.next_below(2));
      t = kFirstSymbolToken + bit;
      odd_count += bit;
    }
    ex.tgt = {kParityClassBase + odd_count % 2};
    return ex;
  }
  const uint64_t n_symbols = static_cast<uint64_t>(spec.vocab_size - kFirstSymbolToken);
  for (int& t : ex.src) t = kFirstSymbolToken + static_cast<int>(rng.next_below(n_symbols));
  switch (spec.kind) {
    case TaskKind::Copy:
      ex.tgt = ex.src;
      break;
    case TaskKind::Reverse:
      ex.tgt.assign(ex.src.rbegin(), ex.src.rend());
      break;
    case TaskKind::PrefixExtract:
      ex.tgt.assign(ex.src.begin(), ex.src.begin() + spec.prefix_k);
      break;
    case TaskKind::ParityClassify:
      break;  // handled above
  }
  return ex;
}

Split split_of(const TaskSpec& spec, const std::vector<int>& src) {
  uint64_t h = hash_combine(spec.seed, kSplitStreamTag);
  for (int t : src) {
    uint32_t word = static_cast<uint32_t>(t);
    unsigned char bytes[4];
    std::memcpy(bytes, &word, 4);
    h = fnv1a64(bytes, 4, h);
  }
  // raw FNV-1a mod 16 is badly non-uniform on near-constant byte streams
  // (e.g. two-symbol alphabets), so avalanche the state before bucketing
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  const int bucket = static_cast<int>(h % kSplitBuckets);
  if (bucket == kValBucket) return Split::Val;
  if (bucket == kTestBucket) return Split::Test;
  return Split::Train;
}

Example generate_split_example(const TaskSpec& spec, Split split, Rng& rng) {
  // 14/16 of sources hash to train, 1/16 each to val/test, so a few dozen
  // tries suffice; the cap only guards against a broken spec
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Example ex = generate_example(spec, rng);
    if (split_of(spec, ex.src) == split) return ex;
  }
  throw std::runtime_error("generate_split_example: no example hashed into the requested split");
}

Batch make_batch(const TaskSpec& spec, Split split, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("make_batch: batch_size must be >= 1");
  Batch batch;
  batch.items.reserve(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    batch.items.push_back(generate_split_example(spec, split, rng));
    batch.max_src = std::max(batch.max_src, static_cast<int>(batch.items.back().src.size()));
    batch.max_tgt = std::max(batch.max_tgt, static_cast<int>(batch.items.back().tgt.size()));
  }
  batch.src_tokens.assign(static_cast<size_t>(batch_size) * batch.max_src, kPadToken);
  batch.tgt_tokens.assign(static_cast<size_t>(batch_size) * batch.max_tgt, kPadToken);
  batch.src_mask.assign(batch.src_tokens.size(), 0);
  batch.tgt_mask.assign(batch.tgt_tokens.size(), 0);
  for (int i = 0; i < batch_size; ++i) {
    const Example& ex = batch.items[static_cast<size_t>(i)];
    for (size_t j = 0; j < ex.src.size(); ++j) {
      batch.src_tokens[static_cast<size_t>(i) * batch.max_src + j] = ex.src[j];
      batch.src_mask[static_cast<size_t>(i) * batch.max_src + j] = 1;
    }
    for (size_t j = 0; j < ex.tgt.size(); ++j) {
      batch.tgt_tokens[static_cast<size_t>(i) * batch.max_tgt + j] = ex.tgt[j];
      batch.tgt_mask[static_cast<size_t>(i) * batch.max_tgt + j] = 1;
    }
  }
  return batch;
}

std::vector<Batch> make_batches(const TaskSpec& spec, Split split, int batch_size, int n_batches,
                                Rng& rng) {
  if (n_batches < 1) throw std::invalid_argument("make_batches: n_batches must be >= 1");
  std::vector<Batch> out;
  out.reserve(static_cast<size_t>(n_batches));
  for (int i = 0; i < n_batches; ++i) out.push_back(make_batch(spec, split, batch_size, rng));
  return out;
}

void dump_corpus(std::ostream& os, const TaskSpec& spec, Split split, int count, Rng& rng) {
  for (int i = 0; i < count; ++i) {
    const Example ex = generate_split_example(spec, split, rng);
    for (size_t j = 0; j < ex.src.size(); ++j) os << (j ? " " : "") << ex.src[j];
    os << '\t';
    for (size_t j = 0; j < ex.tgt.size(); ++j) os << (j ? " " : "") << ex.tgt[j];
    os << '\n';
  }
}

}  // namespace sd
