#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sd/model.hpp"

namespace sd {

// Synthetic seq2seq tasks with known optimal behavior. prefix-extract only
// needs the head of the source, so dropping trailing tokens is free;
// parity-classify depends on every source token, so dropping any is costly.
enum class TaskKind { Copy, Reverse, PrefixExtract, ParityClassify };

// Examples are routed to a split by hashing their source tokens, so the
// splits are disjoint by construction for any number of draws.
enum class Split { Train, Val, Test };

std::string task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  int n_min = 4;
  int n_max = 12;       // source payload length range, inclusive
  int prefix_k = 4;     // prefix-extract target length
  int vocab_size = 16;
  uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument naming the field
};

struct Example {
  std::vector<int> src, tgt;
};

// Unconditioned draw: payload symbols uniform, length uniform in
// [n_min, n_max]. copy → tgt = src; reverse → tgt = reversed src;
// prefix-extract(k) → tgt = first k tokens; parity-classify → tgt = one
// class token encoding (count of the second payload symbol) mod 2, with the
// payload restricted to two symbols so the rule is learnable at small scale.
Example generate_example(const TaskSpec& spec, Rng& rng);

Split split_of(const TaskSpec& spec, const std::vector<int>& src);
// Rejection-samples generate_example until the source hashes into `split`.
Example generate_split_example(const TaskSpec& spec, Split split, Rng& rng);

struct Batch {
  std::vector<Example> items;
  int max_src = 0, max_tgt = 0;
  std::vector<int> src_tokens, tgt_tokens;  // row-major [items × max_*], pad-filled
  std::vector<uint8_t> src_mask, tgt_mask;  // 1 = real token
};

Batch make_batch(const TaskSpec& spec, Split split, int batch_size, Rng& rng);
std::vector<Batch> make_batches(const TaskSpec& spec, Split split, int batch_size, int n_batches,
                                Rng& rng);

// One example per line: space-separated src ids, tab, space-separated tgt ids.
void dump_corpus(std::ostream& os, const TaskSpec& spec, Split split, int count, Rng& rng);

}  // namespace sd
