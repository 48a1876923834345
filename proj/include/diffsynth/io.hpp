// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/data.hpp"
#include "diffsynth/nn/param_store.hpp"

namespace diffsynth {

// ---------------------------------------------------------------------------
// CRC32 (IEEE polynomial, reflected)
// ---------------------------------------------------------------------------

inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t crc = 0xffffffffu) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc;
}

inline std::uint32_t crc32_final(std::uint32_t crc) { return crc ^ 0xffffffffu; }

// ---------------------------------------------------------------------------
// Little-endian byte buffer
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf_.insert(buf_.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t len) : data_(data), len_(len) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos_ + sizeof(T) > len_) throw IoError("truncated file");
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* p, std::size_t n) {
    if (pos_ + n > len_) throw IoError("truncated file");
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return len_ - pos_; }

 private:
  const unsigned char* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open for reading: " + path);
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw IoError("read failed: " + path);
  return bytes;
}

// ---------------------------------------------------------------------------
// WAV: RIFF/WAVE, 16-bit PCM little-endian, mono
// ---------------------------------------------------------------------------

/// Samples are clipped to [-1, 1] and scaled by 32767 with round half away
/// from zero. Reading inverts within one least significant bit.
template <typename Real>
void wav_write(std::span<const Real> waveform, std::uint32_t sample_rate,
               const std::string& path) {
  ByteWriter w;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(waveform.size() * 2);
  w.put_bytes("RIFF", 4);
  w.put<std::uint32_t>(36 + data_bytes);
  w.put_bytes("WAVE", 4);
  w.put_bytes("fmt ", 4);
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(1);  // PCM
  w.put<std::uint16_t>(1);  // mono
  w.put<std::uint32_t>(sample_rate);
  w.put<std::uint32_t>(sample_rate * 2);
  w.put<std::uint16_t>(2);
  w.put<std::uint16_t>(16);
  w.put_bytes("data", 4);
  w.put<std::uint32_t>(data_bytes);
  for (const Real v : waveform) {
    double x = static_cast<double>(v);
    x = x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
    const long q = std::lround(x * 32767.0);  // rounds half away from zero
    w.put<std::int16_t>(static_cast<std::int16_t>(q));
  }
  write_file(path, w.bytes());
}

struct WavData {
  std::vector<float> samples;
  std::uint32_t sample_rate = 0;
};

inline WavData wav_read(const std::string& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes.data(), bytes.size());
  char tag[5] = {0};
  r.get_bytes(tag, 4);
  if (std::string(tag) != "RIFF") throw IoError("wav: malformed header (RIFF missing)");
  r.get<std::uint32_t>();
  r.get_bytes(tag, 4);
  if (std::string(tag) != "WAVE") throw IoError("wav: malformed header (WAVE missing)");
  WavData out;
  std::uint16_t bits = 0, channels = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    r.get_bytes(tag, 4);
    const auto chunk_len = r.get<std::uint32_t>();
    if (std::string(tag) == "fmt ") {
      const auto fmt = r.get<std::uint16_t>();
      channels = r.get<std::uint16_t>();
      out.sample_rate = r.get<std::uint32_t>();
      r.get<std::uint32_t>();
      r.get<std::uint16_t>();
      bits = r.get<std::uint16_t>();
      if (fmt != 1 || channels != 1 || bits != 16)
        throw IoError("wav: only 16-bit mono PCM supported");
      if (chunk_len > 16) {
        std::vector<unsigned char> skip(chunk_len - 16);
        r.get_bytes(skip.data(), skip.size());
      }
      have_fmt = true;
    } else if (std::string(tag) == "data") {
      if (!have_fmt) throw IoError("wav: data chunk before fmt");
      const std::size_t n = chunk_len / 2;
      out.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        out.samples[i] = static_cast<float>(r.get<std::int16_t>()) / 32767.0f;
      return out;
    } else {
      std::vector<unsigned char> skip(chunk_len);
      r.get_bytes(skip.data(), chunk_len);
    }
  }
  throw IoError("wav: no data chunk");
}

// ---------------------------------------------------------------------------
// Corpus container: versioned, checksummed, little-endian
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCorpusMagic = 0x31435344u;  // "DSC1"
constexpr std::uint32_t kCorpusVersion = 1;

inline void corpus_write(const Corpus& corpus, const std::string& path) {
  ByteWriter w;
  w.put<std::uint32_t>(kCorpusMagic);
  w.put<std::uint32_t>(kCorpusVersion);
  w.put<double>(corpus.config.sample_rate);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(corpus.config.samples_per_frame));
  w.put<std::uint64_t>(corpus.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(corpus.train.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(corpus.holdout.size()));
  const auto put_utt = [&w](const Utterance& u) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(u.tokens.size()));
    for (int t : u.tokens) w.put<std::int32_t>(t);
    for (int d : u.durations) w.put<std::int32_t>(d);
    w.put<std::uint64_t>(u.samples.size());
    w.put_bytes(u.samples.data(), u.samples.size() * sizeof(float));
  };
  for (const auto& u : corpus.train) put_utt(u);
  for (const auto& u : corpus.holdout) put_utt(u);
  ByteWriter out;
  out.put_bytes(w.bytes().data(), w.bytes().size());
  out.put<std::uint32_t>(crc32_final(crc32(w.bytes().data(), w.bytes().size())));
  write_file(path, out.bytes());
}

/// Predicted container size in bytes (header + payload + checksum).
inline std::size_t corpus_predicted_bytes(const Corpus& corpus) {
  std::size_t n = 4 + 4 + 8 + 4 + 8 + 4 + 4;  // header
  const auto utt_bytes = [](const Utterance& u) {
    return 4 + u.tokens.size() * 8 + 8 + u.samples.size() * 4;
  };
  for (const auto& u : corpus.train) n += utt_bytes(u);
  for (const auto& u : corpus.holdout) n += utt_bytes(u);
  return n + 4;  // checksum
}

inline Corpus corpus_read(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 8) throw IoError("corpus: truncated file");
  const std::uint32_t stored_crc =
      crc32_final(crc32(bytes.data(), bytes.size() - 4));
  ByteReader tail(bytes.data() + bytes.size() - 4, 4);
  if (tail.get<std::uint32_t>() != stored_crc)
    throw IoError("corpus: checksum failure, file corrupted");
  ByteReader r(bytes.data(), bytes.size() - 4);
  if (r.get<std::uint32_t>() != kCorpusMagic) throw IoError("corpus: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCorpusVersion)
    throw IoError("corpus: version mismatch: have " + std::to_string(version) + ", expect " +
                  std::to_string(kCorpusVersion));
  Corpus corpus;
  corpus.config.sample_rate = r.get<double>();
  corpus.config.samples_per_frame = r.get<std::uint32_t>();
  corpus.seed = r.get<std::uint64_t>();
  const auto n_train = r.get<std::uint32_t>();
  const auto n_holdout = r.get<std::uint32_t>();
  const auto get_utt = [&r, &corpus]() {
    Utterance u;
    const auto ntok = r.get<std::uint32_t>();
    u.tokens.resize(ntok);
    u.durations.resize(ntok);
    for (auto& t : u.tokens) t = r.get<std::int32_t>();
    for (auto& d : u.durations) d = r.get<std::int32_t>();
    const auto nsamp = r.get<std::uint64_t>();
    u.samples.resize(nsamp);
    r.get_bytes(u.samples.data(), nsamp * sizeof(float));
    u.sample_rate = corpus.config.sample_rate;
    u.samples_per_frame = corpus.config.samples_per_frame;
    return u;
  };
  corpus.train.reserve(n_train);
  for (std::uint32_t i = 0; i < n_train; ++i) corpus.train.push_back(get_utt());
  corpus.holdout.reserve(n_holdout);
  for (std::uint32_t i = 0; i < n_holdout; ++i) corpus.holdout.push_back(get_utt());
  return corpus;
}

// ---------------------------------------------------------------------------
// Checkpoint container: named float32 arrays + JSON manifest
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointMagic = 0x314b5344u;  // "DSK1"
constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
  bool trainable = true;
};

inline void checkpoint_write(const std::vector<NamedArray>& arrays, const std::string& manifest,
                             const std::string& path) {
  ByteWriter w;
  w.put<std::uint32_t>(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    w.put_string(a.name);
    w.put<std::uint8_t>(a.trainable ? 1 : 0);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) w.put<std::uint64_t>(d);
    w.put<std::uint64_t>(a.data.size());
    w.put_bytes(a.data.data(), a.data.size() * sizeof(float));
  }
  w.put_string(manifest);
  ByteWriter out;
  out.put_bytes(w.bytes().data(), w.bytes().size());
  out.put<std::uint32_t>(crc32_final(crc32(w.bytes().data(), w.bytes().size())));
  write_file(path, out.bytes());
}

struct CheckpointData {
  std::vector<NamedArray> arrays;
  std::string manifest;
};

inline CheckpointData checkpoint_read(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 8) throw IoError("checkpoint: truncated file");
  const std::uint32_t computed = crc32_final(crc32(bytes.data(), bytes.size() - 4));
  ByteReader tail(bytes.data() + bytes.size() - 4, 4);
  if (tail.get<std::uint32_t>() != computed)
    throw IoError("checkpoint: checksum failure, file corrupted");
  ByteReader r(bytes.data(), bytes.size() - 4);
  if (r.get<std::uint32_t>() != kCheckpointMagic) throw IoError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: version mismatch: " + std::to_string(version));
  CheckpointData out;
  const auto n = r.get<std::uint32_t>();
  out.arrays.resize(n);
  for (auto& a : out.arrays) {
    a.name = r.get_string();
    a.trainable = r.get<std::uint8_t>() != 0;
    const auto ndim = r.get<std::uint32_t>();
    a.shape.resize(ndim);
    for (auto& d : a.shape) d = r.get<std::uint64_t>();
    const auto count = r.get<std::uint64_t>();
    a.data.resize(count);
    r.get_bytes(a.data.data(), count * sizeof(float));
  }
  out.manifest = r.get_string();
  return out;
}

/// Snapshot of a parameter store as float32 named arrays.
template <typename Real>
std::vector<NamedArray> store_to_arrays(const ParamStore<Real>& store) {
  std::vector<NamedArray> arrays;
  for (const auto& e : store) {
    NamedArray a;
    a.name = e.name;
    a.shape = e.shape;
    a.trainable = e.trainable;
    a.data.assign(e.value.begin(), e.value.end());
    arrays.push_back(std::move(a));
  }
  return arrays;
}

template <typename Real>
void arrays_to_store(const std::vector<NamedArray>& arrays, ParamStore<Real>& store) {
  for (const auto& a : arrays) {
    if (!store.contains(a.name)) continue;  // optimizer arrays handled separately
    auto v = store.value(store.find(a.name));
    require(v.size() == a.data.size(),
            "checkpoint: array size mismatch for '" + a.name + "'");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Real>(a.data[i]);
  }
}

}  // namespace diffsynth
