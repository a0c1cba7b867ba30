#pragma once

// Synthetic corpus with known ground-truth durations: every vocab id gets a
// fixed prototype vector and a fixed duration, frames are prototypes plus
// seeded noise with a linear cross-fade around token boundaries. The
// ground-truth alignment is carried for scoring only; batches expose just
// ids, frames and masks, so no training code path can read it.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "duralign/errors.hpp"
#include "duralign/tensor.hpp"

namespace duralign {

struct SyntheticCorpusSpec {
  int vocab_size = 20;
  int utterance_count = 200;
  int tokens_min = 3;
  int tokens_max = 10;
  int dur_min = 2;  // frames, integer
  int dur_max = 8;
  int feature_dim = 8;
  double noise_std = 0.05;
  bool crossfade = true;
  uint64_t seed = 1;

  void validate() const {
    if (vocab_size < 1) throw ConfigError("corpus: vocab_size must be >= 1");
    if (utterance_count < 0) throw ConfigError("corpus: utterance_count must be >= 0");
    if (tokens_min < 1 || tokens_max < tokens_min) throw ConfigError("corpus: bad tokens range");
    if (dur_min < 1 || dur_max < dur_min) throw ConfigError("corpus: bad duration range");
    if (feature_dim < 1) throw ConfigError("corpus: feature_dim must be >= 1");
    if (noise_std < 0) throw ConfigError("corpus: noise_std must be >= 0");
  }
};

struct Utterance {
  std::vector<int> token_ids;
  std::vector<int> durations;       // ground truth, integer frames
  int feature_dim = 0;
  std::vector<float> frames;        // T x F row-major, T = sum durations
  std::vector<int> alignment;       // frame -> token index; scoring only

  int token_count() const { return static_cast<int>(token_ids.size()); }
  int frame_count() const {
    return feature_dim == 0 ? 0 : static_cast<int>(frames.size()) / feature_dim;
  }
};

inline std::vector<Utterance> generate_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  Rng proto_rng(mix_seed(spec.seed, 0x70726f746full));
  const int F = spec.feature_dim;
  std::vector<float> protos(static_cast<size_t>(spec.vocab_size) * F);
  for (auto& x : protos) x = static_cast<float>(proto_rng.uniform(-1.0, 1.0));

  // one fixed duration per vocab id, so durations are predictable from token
  // identity and learned alignments can be scored against them
  Rng dur_rng(mix_seed(spec.seed, 0x64757261ull));
  std::vector<int> dur_of_id(static_cast<size_t>(spec.vocab_size));
  for (auto& d : dur_of_id) d = dur_rng.uniform_int(spec.dur_min, spec.dur_max);

  std::vector<Utterance> corpus;
  corpus.reserve(static_cast<size_t>(spec.utterance_count));
  for (int u = 0; u < spec.utterance_count; ++u) {
    Rng rng(mix_seed(spec.seed, 0x75747400ull + static_cast<uint64_t>(u)));
    Utterance utt;
    utt.feature_dim = F;
    int k = rng.uniform_int(spec.tokens_min, spec.tokens_max);
    utt.token_ids.resize(static_cast<size_t>(k));
    utt.durations.resize(static_cast<size_t>(k));
    int total = 0;
    for (int i = 0; i < k; ++i) {
      int id = rng.uniform_int(0, spec.vocab_size - 1);
      utt.token_ids[static_cast<size_t>(i)] = id;
      utt.durations[static_cast<size_t>(i)] = dur_of_id[static_cast<size_t>(id)];
      total += dur_of_id[static_cast<size_t>(id)];
    }
    utt.alignment.reserve(static_cast<size_t>(total));
    for (int i = 0; i < k; ++i)
      for (int r = 0; r < utt.durations[static_cast<size_t>(i)]; ++r) utt.alignment.push_back(i);

    utt.frames.assign(static_cast<size_t>(total) * F, 0.0f);
    for (int t = 0; t < total; ++t) {
      const float* p = &protos[static_cast<size_t>(utt.token_ids[static_cast<size_t>(
                           utt.alignment[static_cast<size_t>(t)])]) * F];
      std::memcpy(&utt.frames[static_cast<size_t>(t) * F], p, sizeof(float) * static_cast<size_t>(F));
    }
    if (spec.crossfade) {
      // blend the single frame on each side of every internal boundary
      int pos = 0;
      for (int i = 0; i + 1 < k; ++i) {
        pos += utt.durations[static_cast<size_t>(i)];
        const float* left = &protos[static_cast<size_t>(utt.token_ids[static_cast<size_t>(i)]) * F];
        const float* right =
            &protos[static_cast<size_t>(utt.token_ids[static_cast<size_t>(i + 1)]) * F];
        float* before = &utt.frames[static_cast<size_t>(pos - 1) * F];
        float* after = &utt.frames[static_cast<size_t>(pos) * F];
        for (int q = 0; q < F; ++q) {
          before[q] = 0.75f * left[q] + 0.25f * right[q];
          after[q] = 0.25f * left[q] + 0.75f * right[q];
        }
      }
    }
    if (spec.noise_std > 0)
      for (auto& x : utt.frames) x += static_cast<float>(spec.noise_std * rng.normal());
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// corpus file format: magic "DCORP\0", u32 version=1, u32 count; per
// utterance u32 K, u32 ids[K], u32 durs[K], u32 T, u32 F, f32 frames[T*F];
// all little-endian.

namespace corpus_io {

inline void put_u32(std::ostream& os, uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                        static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is, int64_t& offset, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw IoError("corpus load: truncated reading " + what + " at offset " + std::to_string(offset));
  offset += 4;
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace corpus_io

inline void save_corpus(const std::vector<Utterance>& corpus, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("DCORP\0", 6);
  corpus_io::put_u32(os, 1);
  corpus_io::put_u32(os, static_cast<uint32_t>(corpus.size()));
  for (const auto& u : corpus) {
    corpus_io::put_u32(os, static_cast<uint32_t>(u.token_ids.size()));
    for (int id : u.token_ids) corpus_io::put_u32(os, static_cast<uint32_t>(id));
    for (int d : u.durations) corpus_io::put_u32(os, static_cast<uint32_t>(d));
    corpus_io::put_u32(os, static_cast<uint32_t>(u.frame_count()));
    corpus_io::put_u32(os, static_cast<uint32_t>(u.feature_dim));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(u.frames.data()),
             static_cast<std::streamsize>(u.frames.size() * sizeof(float)));
  }
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<Utterance> load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  int64_t offset = 0;
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, "DCORP\0", 6) != 0)
    throw IoError("corpus load: bad magic at offset 0 in " + path);
  offset = 6;
  uint32_t version = corpus_io::get_u32(is, offset, "version");
  if (version != 1)
    throw IoError("corpus load: unsupported version " + std::to_string(version) + " at offset 6");
  uint32_t count = corpus_io::get_u32(is, offset, "count");
  std::vector<Utterance> corpus;
  corpus.reserve(count);
  for (uint32_t u = 0; u < count; ++u) {
    Utterance utt;
    uint32_t k = corpus_io::get_u32(is, offset, "token count");
    if (k == 0 || k > (1u << 24)) throw IoError("corpus load: implausible token count at offset " +
                                                std::to_string(offset - 4));
    utt.token_ids.resize(k);
    for (auto& id : utt.token_ids) id = static_cast<int>(corpus_io::get_u32(is, offset, "token id"));
    utt.durations.resize(k);
    for (auto& d : utt.durations) d = static_cast<int>(corpus_io::get_u32(is, offset, "duration"));
    uint32_t t = corpus_io::get_u32(is, offset, "frame count");
    uint32_t f = corpus_io::get_u32(is, offset, "feature dim");
    if (f == 0 || t > (1u << 24) || f > (1u << 16))
      throw IoError("corpus load: implausible dimensions at offset " + std::to_string(offset - 8));
    utt.feature_dim = static_cast<int>(f);
    utt.frames.resize(static_cast<size_t>(t) * f);
    is.read(reinterpret_cast<char*>(utt.frames.data()),
            static_cast<std::streamsize>(utt.frames.size() * sizeof(float)));
    if (!is) throw IoError("corpus load: truncated frame data at offset " + std::to_string(offset));
    offset += static_cast<int64_t>(utt.frames.size() * sizeof(float));
    utt.alignment.reserve(t);
    for (uint32_t i = 0; i < k; ++i)
      for (int r = 0; r < utt.durations[i]; ++r) utt.alignment.push_back(static_cast<int>(i));
    if (utt.alignment.size() != t)
      throw IoError("corpus load: durations do not sum to frame count at offset " +
                    std::to_string(offset));
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// batching

/// Token and frame axes padded to per-batch maxima, with validity masks.
struct Batch {
  int size = 0;
  int kmax = 0, tmax = 0, feature_dim = 0;
  std::vector<int> token_ids;        // size * kmax
  std::vector<uint8_t> token_mask;   // size * kmax
  std::vector<float> frames;         // size * tmax * feature_dim
  std::vector<uint8_t> frame_mask;   // size * tmax

  int valid_tokens(int b) const {
    int n = 0;
    for (int i = 0; i < kmax; ++i) n += token_mask[static_cast<size_t>(b) * kmax + i] ? 1 : 0;
    return n;
  }
  int valid_frames(int b) const {
    int n = 0;
    for (int i = 0; i < tmax; ++i) n += frame_mask[static_cast<size_t>(b) * tmax + i] ? 1 : 0;
    return n;
  }
  std::vector<int> ids_of(int b) const {
    int k = valid_tokens(b);
    return {token_ids.begin() + static_cast<int64_t>(b) * kmax,
            token_ids.begin() + static_cast<int64_t>(b) * kmax + k};
  }
  std::vector<float> frames_of(int b) const {
    int t = valid_frames(b);
    auto begin = frames.begin() + static_cast<int64_t>(b) * tmax * feature_dim;
    return {begin, begin + static_cast<int64_t>(t) * feature_dim};
  }
};

/// Shuffles per epoch with a seeded Fisher-Yates permutation; every utterance
/// appears exactly once per epoch.
class BatchIterator {
 public:
  BatchIterator(const std::vector<Utterance>& corpus, int batch_size, uint64_t seed)
      : corpus_(&corpus), batch_size_(batch_size), seed_(seed) {
    if (batch_size < 1) throw std::invalid_argument("batch_iterator: batch_size must be >= 1");
    if (corpus.empty()) throw std::invalid_argument("batch_iterator: empty corpus");
    reshuffle();
  }

  Batch next() {
    Batch batch;
    int n = static_cast<int>(corpus_->size());
    int take = std::min(batch_size_, n - cursor_);
    batch.size = take;
    batch.feature_dim = (*corpus_)[perm_[static_cast<size_t>(cursor_)]].feature_dim;
    for (int b = 0; b < take; ++b) {
      const Utterance& u = (*corpus_)[perm_[static_cast<size_t>(cursor_ + b)]];
      batch.kmax = std::max(batch.kmax, u.token_count());
      batch.tmax = std::max(batch.tmax, u.frame_count());
    }
    batch.token_ids.assign(static_cast<size_t>(take) * batch.kmax, 0);
    batch.token_mask.assign(static_cast<size_t>(take) * batch.kmax, 0);
    batch.frames.assign(static_cast<size_t>(take) * batch.tmax * batch.feature_dim, 0.0f);
    batch.frame_mask.assign(static_cast<size_t>(take) * batch.tmax, 0);
    for (int b = 0; b < take; ++b) {
      const Utterance& u = (*corpus_)[perm_[static_cast<size_t>(cursor_ + b)]];
      for (int i = 0; i < u.token_count(); ++i) {
        batch.token_ids[static_cast<size_t>(b) * batch.kmax + i] = u.token_ids[static_cast<size_t>(i)];
        batch.token_mask[static_cast<size_t>(b) * batch.kmax + i] = 1;
      }
      for (int t = 0; t < u.frame_count(); ++t) batch.frame_mask[static_cast<size_t>(b) * batch.tmax + t] = 1;
      std::memcpy(&batch.frames[static_cast<size_t>(b) * batch.tmax * batch.feature_dim],
                  u.frames.data(), u.frames.size() * sizeof(float));
    }
    cursor_ += take;
    if (cursor_ >= n) {
      ++epoch_;
      reshuffle();
    }
    return batch;
  }

  int epoch() const { return epoch_; }

 private:
  void reshuffle() {
    int n = static_cast<int>(corpus_->size());
    perm_.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm_[static_cast<size_t>(i)] = static_cast<size_t>(i);
    Rng rng(mix_seed(seed_, 0x65706f630000ull + static_cast<uint64_t>(epoch_)));
    for (int i = n - 1; i > 0; --i) {
      int j = rng.uniform_int(0, i);
      std::swap(perm_[static_cast<size_t>(i)], perm_[static_cast<size_t>(j)]);
    }
    cursor_ = 0;
  }

  const std::vector<Utterance>* corpus_;
  int batch_size_;
  uint64_t seed_;
  std::vector<size_t> perm_;
  int cursor_ = 0;
  int epoch_ = 0;
};

}  // namespace duralign
