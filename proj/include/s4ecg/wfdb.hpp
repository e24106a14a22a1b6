#pragma once

// Reader/writer for the WFDB subset used by the ingestion pipeline: text
// headers, signal files in formats 212 and 16, and MIT annotation files with
// rhythm-change aux strings. Writers exist so synthetic corpora and test
// fixtures go through the same byte-level path as real PhysioNet records.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "s4ecg/core.hpp"

namespace s4ecg::wfdb {

// MIT annotation codes used here.
constexpr int kCodeRhythm = 28;  // "+" rhythm change, carries an aux string
constexpr int kCodeSkip = 59;    // 4-byte extended time delta follows
constexpr int kCodeNum = 60;
constexpr int kCodeSub = 61;
constexpr int kCodeChn = 62;
constexpr int kCodeAux = 63;     // aux bytes follow, attached to previous event

struct SignalSpec {
  int format = 212;            // 212 or 16
  double adc_gain = 200.0;     // ADC units per mV
  int baseline = 0;            // ADC units
  std::string channel_name;
};

struct RecordHeader {
  std::string record_name;
  int n_signals = 0;
  double sampling_rate = 0.0;
  int64_t n_samples = 0;
  std::vector<SignalSpec> signals;

  void validate() const {
    require(n_signals >= 1, "header: n_signals must be >= 1");
    require(sampling_rate > 0, "header: sampling rate must be positive");
    require(int(signals.size()) == n_signals, "header: signal spec count mismatch");
    for (const auto& s : signals) {
      require(s.format == 212 || s.format == 16,
              "header: unsupported signal format " + std::to_string(s.format));
      require(s.adc_gain != 0.0, "header: adc gain must be nonzero");
    }
  }
};

struct AnnotationEvent {
  int64_t sample_index = 0;
  int code = 0;
  std::string aux;  // present iff the event is a rhythm-change marker
};

struct Record {
  RecordHeader header;
  Tensor<double> signal;  // [n_signals x n_samples], millivolts
  std::vector<AnnotationEvent> annotations;
};

// Canonical class name for a rhythm aux string; empty when unrecognized.
// Mapping is case-sensitive: "(AFIB" and "(afib" are different strings.
inline std::string canonical_rhythm(const std::string& aux) {
  if (aux == "(N") return "N";
  if (aux == "(AFIB") return "AF";
  if (aux == "(AFL") return "AFLT";
  if (aux == "(SVTA") return "SVTA";
  return "";
}

// ---------------------------------------------------------------------------
// Header text
// ---------------------------------------------------------------------------

namespace detail {

inline bool parse_number(const std::string& tok, double& out) {
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return end == tok.c_str() + tok.size() && !tok.empty();
}

inline bool parse_int(const std::string& tok, int64_t& out) {
  char* end = nullptr;
  out = std::strtoll(tok.c_str(), &end, 10);
  return end == tok.c_str() + tok.size() && !tok.empty();
}

inline std::vector<std::string> tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

[[noreturn]] inline void header_fail(int line_no, const std::string& what) {
  fail("header line " + std::to_string(line_no) + ": " + what);
}

}  // namespace detail

inline RecordHeader parse_header(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<std::pair<int, std::string>> lines;  // (line number, content)
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    lines.emplace_back(line_no, t);
  }
  require(!lines.empty(), "header: empty document");

  RecordHeader h;
  {
    auto [no, first] = lines[0];
    auto tok = detail::tokens(first);
    if (tok.size() < 4) detail::header_fail(no, "expected `name n_signals fs n_samples`");
    h.record_name = tok[0];
    if (h.record_name.find('/') != std::string::npos)
      detail::header_fail(no, "multi-segment records are not supported");
    int64_t ns = 0, total = 0;
    if (!detail::parse_int(tok[1], ns)) detail::header_fail(no, "non-numeric signal count");
    // sampling rate may carry a /counter suffix
    std::string fs_tok = tok[2].substr(0, tok[2].find('/'));
    double fs = 0;
    if (!detail::parse_number(fs_tok, fs)) detail::header_fail(no, "non-numeric sampling rate");
    if (!detail::parse_int(tok[3], total)) detail::header_fail(no, "non-numeric sample count");
    h.n_signals = int(ns);
    h.sampling_rate = fs;
    h.n_samples = total;
  }
  if (int(lines.size()) - 1 < h.n_signals)
    fail("header: expected " + std::to_string(h.n_signals) + " signal lines, found " +
         std::to_string(lines.size() - 1));

  for (int s = 0; s < h.n_signals; ++s) {
    auto [no, sig_line] = lines[size_t(s) + 1];
    auto tok = detail::tokens(sig_line);
    if (tok.size() < 2) detail::header_fail(no, "expected `filename format [gain[(baseline)]]`");
    SignalSpec spec;
    int64_t fmt = 0;
    if (!detail::parse_int(tok[1], fmt)) detail::header_fail(no, "non-numeric format code");
    if (fmt != 212 && fmt != 16)
      detail::header_fail(no, "unsupported signal format " + std::to_string(fmt));
    spec.format = int(fmt);
    size_t next = 2;
    if (tok.size() > 2) {
      // gain token: gain[(baseline)][/units]
      std::string g = tok[2];
      std::string units_stripped = g.substr(0, g.find('/'));
      std::string gain_part = units_stripped;
      size_t open = units_stripped.find('(');
      if (open != std::string::npos) {
        size_t close = units_stripped.find(')', open);
        if (close == std::string::npos) detail::header_fail(no, "unterminated baseline");
        gain_part = units_stripped.substr(0, open);
        int64_t base = 0;
        if (!detail::parse_int(units_stripped.substr(open + 1, close - open - 1), base))
          detail::header_fail(no, "non-numeric baseline");
        spec.baseline = int(base);
      }
      double gain = 0;
      if (!detail::parse_number(gain_part, gain)) detail::header_fail(no, "non-numeric gain");
      if (gain != 0) spec.adc_gain = gain;
      next = 3;
    }
    // numeric tail fields (adc resolution, zero, checksum, ...) are skipped;
    // the first non-numeric trailing token starts the channel description
    for (; next < tok.size(); ++next) {
      double ignored;
      if (!detail::parse_number(tok[next], ignored)) break;
    }
    for (size_t t = next; t < tok.size(); ++t) {
      if (!spec.channel_name.empty()) spec.channel_name += " ";
      spec.channel_name += tok[t];
    }
    h.signals.push_back(spec);
  }
  h.validate();
  return h;
}

inline std::string write_header(const RecordHeader& h) {
  h.validate();
  std::ostringstream os;
  os << h.record_name << " " << h.n_signals << " " << h.sampling_rate << " " << h.n_samples
     << "\n";
  for (const auto& s : h.signals) {
    os << h.record_name << ".dat " << s.format << " " << s.adc_gain << "(" << s.baseline
       << ")/mV";
    if (!s.channel_name.empty()) os << " " << s.channel_name;
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Signal bytes
// ---------------------------------------------------------------------------

// Decodes the interleaved sample stream into an [n_signals x n_samples]
// matrix of ADC integers. All signals in one .dat file share a format.
inline Tensor<int32_t> decode_signal(const std::vector<uint8_t>& bytes, const RecordHeader& h) {
  h.validate();
  const int format = h.signals[0].format;
  for (const auto& s : h.signals)
    require(s.format == format, "decode_signal: mixed formats in one signal file");
  const int64_t total = h.n_samples * h.n_signals;
  const size_t expected =
      format == 212 ? size_t((total + 1) / 2) * 3 : size_t(total) * 2;
  if (bytes.size() != expected)
    fail("decode_signal: file has " + std::to_string(bytes.size()) + " bytes at offset " +
         std::to_string(std::min(bytes.size(), expected)) + ", expected " +
         std::to_string(expected) + " for " + std::to_string(total) + " samples");

  std::vector<int32_t> stream(static_cast<size_t>(total));
  if (format == 212) {
    for (int64_t pair = 0; pair * 2 < total; ++pair) {
      const uint8_t b0 = bytes[size_t(pair) * 3];
      const uint8_t b1 = bytes[size_t(pair) * 3 + 1];
      const uint8_t b2 = bytes[size_t(pair) * 3 + 2];
      int32_t s0 = b0 | ((b1 & 0x0F) << 8);
      int32_t s1 = b2 | ((b1 & 0xF0) << 4);
      if (s0 & 0x800) s0 -= 4096;
      if (s1 & 0x800) s1 -= 4096;
      stream[size_t(pair) * 2] = s0;
      if (pair * 2 + 1 < total) stream[size_t(pair) * 2 + 1] = s1;
    }
  } else {
    for (int64_t i = 0; i < total; ++i) {
      uint16_t w = uint16_t(bytes[size_t(i) * 2] | (bytes[size_t(i) * 2 + 1] << 8));
      stream[size_t(i)] = int16_t(w);
    }
  }

  Tensor<int32_t> out({h.n_signals, h.n_samples});
  for (int64_t i = 0; i < total; ++i)
    out[(i % h.n_signals) * h.n_samples + i / h.n_signals] = stream[size_t(i)];
  return out;
}

inline std::vector<uint8_t> encode_signal(const Tensor<int32_t>& adc, int format) {
  require(adc.rank() == 2, "encode_signal: expected [n_signals x n_samples]");
  const int64_t n_signals = adc.dim(0), n_samples = adc.dim(1);
  const int64_t total = n_signals * n_samples;
  std::vector<int32_t> stream(static_cast<size_t>(total));
  for (int64_t i = 0; i < total; ++i)
    stream[size_t(i)] = adc[(i % n_signals) * n_samples + i / n_signals];

  std::vector<uint8_t> bytes;
  if (format == 212) {
    for (int32_t v : stream)
      require(v >= -2048 && v <= 2047,
              "encode_signal: value " + std::to_string(v) + " out of 12-bit range");
    bytes.resize(size_t((total + 1) / 2) * 3);
    for (int64_t pair = 0; pair * 2 < total; ++pair) {
      const uint32_t s0 = uint32_t(stream[size_t(pair) * 2]) & 0xFFF;
      const uint32_t s1 =
          pair * 2 + 1 < total ? uint32_t(stream[size_t(pair) * 2 + 1]) & 0xFFF : 0;
      bytes[size_t(pair) * 3] = uint8_t(s0 & 0xFF);
      bytes[size_t(pair) * 3 + 1] = uint8_t(((s0 >> 8) & 0x0F) | (((s1 >> 8) & 0x0F) << 4));
      bytes[size_t(pair) * 3 + 2] = uint8_t(s1 & 0xFF);
    }
  } else if (format == 16) {
    for (int32_t v : stream)
      require(v >= -32768 && v <= 32767,
              "encode_signal: value " + std::to_string(v) + " out of 16-bit range");
    bytes.resize(size_t(total) * 2);
    for (int64_t i = 0; i < total; ++i) {
      uint16_t w = uint16_t(uint32_t(stream[size_t(i)]) & 0xFFFF);
      bytes[size_t(i) * 2] = uint8_t(w & 0xFF);
      bytes[size_t(i) * 2 + 1] = uint8_t(w >> 8);
    }
  } else {
    fail("encode_signal: unsupported format " + std::to_string(format));
  }
  return bytes;
}

template <typename T>
inline std::vector<double> adc_to_physical(const std::vector<T>& samples, double gain,
                                           double baseline) {
  require(gain != 0.0, "adc_to_physical: zero gain is an invalid calibration");
  std::vector<double> mv(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) mv[i] = (double(samples[i]) - baseline) / gain;
  return mv;
}

// ---------------------------------------------------------------------------
// Annotation bytes (MIT format subset)
// ---------------------------------------------------------------------------

inline std::vector<AnnotationEvent> parse_annotations(const std::vector<uint8_t>& bytes) {
  std::vector<AnnotationEvent> events;
  int64_t time = 0;
  size_t pos = 0;
  int64_t pending_skip = 0;
  auto read_word = [&](const char* what) -> uint16_t {
    if (pos + 2 > bytes.size())
      fail(std::string("annotations: truncated ") + what + " at offset " + std::to_string(pos));
    uint16_t w = uint16_t(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return w;
  };

  while (pos < bytes.size()) {
    const size_t word_pos = pos;
    const uint16_t w = read_word("annotation word");
    const int code = w >> 10;
    const int delta = w & 0x3FF;
    if (w == 0) break;  // terminator

    if (code == kCodeSkip) {
      // 4-byte extended interval: high 16-bit word first, each little-endian
      const uint16_t hi = read_word("skip interval");
      const uint16_t lo = read_word("skip interval");
      pending_skip += int32_t((uint32_t(hi) << 16) | lo);
      continue;
    }
    if (code == kCodeAux) {
      const size_t count = size_t(delta);
      const size_t padded = count + (count & 1);
      if (pos + padded > bytes.size())
        fail("annotations: truncated aux block at offset " + std::to_string(pos));
      if (events.empty())
        fail("annotations: aux block with no preceding event at offset " +
             std::to_string(word_pos));
      std::string aux(reinterpret_cast<const char*>(bytes.data() + pos), count);
      while (!aux.empty() && aux.back() == '\0') aux.pop_back();
      events.back().aux = aux;
      pos += padded;
      continue;
    }
    if (code == kCodeNum || code == kCodeSub || code == kCodeChn) continue;
    if (code == 0) fail("annotations: zero code with nonzero delta at offset " +
                        std::to_string(word_pos));

    time += pending_skip + delta;
    pending_skip = 0;
    if (time < 0 || (!events.empty() && time < events.back().sample_index))
      fail("annotations: non-monotone sample index at offset " + std::to_string(word_pos));
    events.push_back({time, code, ""});
  }
  return events;
}

inline std::vector<uint8_t> encode_annotations(const std::vector<AnnotationEvent>& events) {
  std::vector<uint8_t> bytes;
  auto put_word = [&](uint16_t w) {
    bytes.push_back(uint8_t(w & 0xFF));
    bytes.push_back(uint8_t(w >> 8));
  };
  int64_t time = 0;
  for (const auto& e : events) {
    require(e.sample_index >= time, "encode_annotations: events must be non-decreasing");
    require(e.code > 0 && e.code < 50, "encode_annotations: code out of range");
    int64_t delta = e.sample_index - time;
    if (delta > 1023) {
      put_word(uint16_t(kCodeSkip << 10));
      put_word(uint16_t((uint64_t(delta) >> 16) & 0xFFFF));
      put_word(uint16_t(uint64_t(delta) & 0xFFFF));
      delta = 0;
    }
    put_word(uint16_t((e.code << 10) | int(delta)));
    if (!e.aux.empty()) {
      require(e.aux.size() <= 1023, "encode_annotations: aux string too long");
      put_word(uint16_t((kCodeAux << 10) | int(e.aux.size())));
      for (char c : e.aux) bytes.push_back(uint8_t(c));
      if (e.aux.size() & 1) bytes.push_back(0);
    }
    time = e.sample_index;
  }
  put_word(0);
  return bytes;
}

// ---------------------------------------------------------------------------
// File-level helpers
// ---------------------------------------------------------------------------

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::string read_file_text(const std::string& path) {
  auto b = read_file_bytes(path);
  return {b.begin(), b.end()};
}

inline void write_file_bytes(const std::string& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open " + path + " for writing");
  f.write(static_cast<const char*>(data), std::streamsize(n));
  require(f.good(), "failed writing " + path);
}

inline Record read_record(const std::string& dir, const std::string& name) {
  namespace fs = std::filesystem;
  Record r;
  r.header = parse_header(read_file_text((fs::path(dir) / (name + ".hea")).string()));
  auto adc = decode_signal(read_file_bytes((fs::path(dir) / (name + ".dat")).string()), r.header);
  r.signal = Tensor<double>({r.header.n_signals, r.header.n_samples});
  for (int s = 0; s < r.header.n_signals; ++s) {
    const auto& spec = r.header.signals[size_t(s)];
    for (int64_t i = 0; i < r.header.n_samples; ++i)
      r.signal[s * r.header.n_samples + i] =
          (double(adc[s * r.header.n_samples + i]) - spec.baseline) / spec.adc_gain;
  }
  const auto atr = fs::path(dir) / (name + ".atr");
  if (fs::exists(atr)) r.annotations = parse_annotations(read_file_bytes(atr.string()));
  return r;
}

inline void write_record(const std::string& dir, const Record& r) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string name = r.header.record_name;
  const std::string hea = write_header(r.header);
  write_file_bytes((fs::path(dir) / (name + ".hea")).string(), hea.data(), hea.size());

  Tensor<int32_t> adc({r.header.n_signals, r.header.n_samples});
  for (int s = 0; s < r.header.n_signals; ++s) {
    const auto& spec = r.header.signals[size_t(s)];
    const int32_t lim = spec.format == 212 ? 2047 : 32767;
    for (int64_t i = 0; i < r.header.n_samples; ++i) {
      double v = r.signal[s * r.header.n_samples + i] * spec.adc_gain + spec.baseline;
      adc[s * r.header.n_samples + i] =
          int32_t(std::clamp(std::llround(v), -(long long)lim - 1, (long long)lim));
    }
  }
  auto dat = encode_signal(adc, r.header.signals[0].format);
  write_file_bytes((fs::path(dir) / (name + ".dat")).string(), dat.data(), dat.size());

  if (!r.annotations.empty()) {
    auto atr = encode_annotations(r.annotations);
    write_file_bytes((fs::path(dir) / (name + ".atr")).string(), atr.data(), atr.size());
  }
}

}  // namespace s4ecg::wfdb
