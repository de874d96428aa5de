#pragma once

// Trial container and its on-disk form. An archive holds equally long
// multichannel trials with per-trial class/subject/session metadata and
// per-channel kind tags. The binary format "ESC1" is little-endian and
// round-trips bit-exactly; a plain-text sidecar carries provenance.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "simpleconv/serial.hpp"

namespace simpleconv {

enum class ChannelKind : std::uint8_t { kEeg = 0, kEog = 1 };

enum class ArchiveErrorCode { kBadMagic, kBadVersion, kTruncated, kInvalid, kIo };

class archive_error : public std::runtime_error {
 public:
  archive_error(ArchiveErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ArchiveErrorCode code() const { return code_; }

 private:
  ArchiveErrorCode code_;
};

struct TrialArchive {
  int n_channels = 0;
  int n_samples = 0;
  float fs = 0.0f;
  std::vector<std::string> class_names;
  std::vector<std::uint16_t> labels, subject_ids, session_ids;  // per trial
  std::vector<ChannelKind> channel_kinds;                       // per channel
  std::vector<float> data;  // [n_trials][n_channels][n_samples]
  std::vector<std::pair<std::string, std::string>> manifest;

  int n_trials() const { return static_cast<int>(labels.size()); }
  int n_classes() const { return static_cast<int>(class_names.size()); }

  const float* trial_ptr(int i) const {
    return data.data() + static_cast<std::size_t>(i) * n_channels * n_samples;
  }
  float* trial_ptr(int i) {
    return data.data() + static_cast<std::size_t>(i) * n_channels * n_samples;
  }

  /// Trial as a channels x samples double matrix (preprocessing precision).
  Eigen::MatrixXd trial_matrix(int i) const {
    Eigen::MatrixXd m(n_channels, n_samples);
    const float* p = trial_ptr(i);
    for (int c = 0; c < n_channels; ++c)
      for (int t = 0; t < n_samples; ++t) m(c, t) = p[static_cast<std::size_t>(c) * n_samples + t];
    return m;
  }

  void set_trial(int i, const Eigen::MatrixXd& m) {
    float* p = trial_ptr(i);
    for (int c = 0; c < n_channels; ++c)
      for (int t = 0; t < n_samples; ++t)
        p[static_cast<std::size_t>(c) * n_samples + t] = static_cast<float>(m(c, t));
  }

  void validate() const {
    const std::size_t n = labels.size();
    if (subject_ids.size() != n || session_ids.size() != n)
      throw archive_error(ArchiveErrorCode::kInvalid, "archive: per-trial arrays disagree");
    if (static_cast<int>(channel_kinds.size()) != n_channels)
      throw archive_error(ArchiveErrorCode::kInvalid, "archive: channel kind count mismatch");
    if (fs <= 0.0f) throw archive_error(ArchiveErrorCode::kInvalid, "archive: fs must be > 0");
    if (data.size() != n * static_cast<std::size_t>(n_channels) * n_samples)
      throw archive_error(ArchiveErrorCode::kInvalid, "archive: data size mismatch");
    for (const std::uint16_t l : labels)
      if (l >= class_names.size())
        throw archive_error(ArchiveErrorCode::kInvalid, "archive: label out of class range");
  }
};

inline constexpr char kArchiveMagic[4] = {'E', 'S', 'C', '1'};
inline constexpr std::uint32_t kArchiveVersion = 1;

inline void save_archive(const TrialArchive& a, const std::string& path) {
  a.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw archive_error(ArchiveErrorCode::kIo, "cannot open for writing: " + path);

  serial::put_bytes(os, kArchiveMagic, 4);
  serial::put_u32(os, kArchiveVersion);
  serial::put_u32(os, static_cast<std::uint32_t>(a.n_trials()));
  serial::put_u32(os, static_cast<std::uint32_t>(a.n_channels));
  serial::put_u32(os, static_cast<std::uint32_t>(a.n_samples));
  serial::put_f32(os, a.fs);
  serial::put_u16(os, static_cast<std::uint16_t>(a.class_names.size()));
  std::string names;
  for (std::size_t i = 0; i < a.class_names.size(); ++i) {
    if (i) names.push_back('\0');
    names += a.class_names[i];
  }
  serial::put_u16(os, static_cast<std::uint16_t>(names.size()));
  serial::put_bytes(os, names.data(), names.size());
  for (const std::uint16_t v : a.labels) serial::put_u16(os, v);
  for (const std::uint16_t v : a.subject_ids) serial::put_u16(os, v);
  for (const std::uint16_t v : a.session_ids) serial::put_u16(os, v);
  for (const ChannelKind k : a.channel_kinds) serial::put_u8(os, static_cast<std::uint8_t>(k));
  serial::put_f32_array(os, a.data.data(), a.data.size());
  if (!os) throw archive_error(ArchiveErrorCode::kIo, "write failed: " + path);

  std::ofstream ms(path + ".manifest");
  for (const auto& [k, v] : a.manifest) ms << k << '=' << v << '\n';
}

inline TrialArchive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw archive_error(ArchiveErrorCode::kIo, "cannot open: " + path);

  char magic[4];
  try {
    serial::get_bytes(is, magic, 4, "archive magic");
  } catch (const std::runtime_error& e) {
    throw archive_error(ArchiveErrorCode::kTruncated, e.what());
  }
  if (std::memcmp(magic, kArchiveMagic, 4) != 0)
    throw archive_error(ArchiveErrorCode::kBadMagic, "bad archive magic (expected ESC1)");

  TrialArchive a;
  try {
    const std::uint32_t version = serial::get_u32(is, "archive version");
    if (version != kArchiveVersion)
      throw archive_error(ArchiveErrorCode::kBadVersion,
                          "unsupported archive version " + std::to_string(version));
    const std::uint32_t n_trials = serial::get_u32(is, "trial count");
    a.n_channels = static_cast<int>(serial::get_u32(is, "channel count"));
    a.n_samples = static_cast<int>(serial::get_u32(is, "sample count"));
    a.fs = serial::get_f32(is, "sampling rate");
    const std::uint16_t n_classes = serial::get_u16(is, "class count");
    const std::uint16_t name_len = serial::get_u16(is, "name block length");
    std::string names(name_len, '\0');
    serial::get_bytes(is, names.data(), name_len, "class names");
    if (n_classes > 0) {
      std::size_t start = 0;
      for (std::uint16_t i = 0; i < n_classes; ++i) {
        const std::size_t nul = names.find('\0', start);
        if (i + 1 < n_classes && nul == std::string::npos)
          throw archive_error(ArchiveErrorCode::kInvalid, "class name block malformed");
        a.class_names.push_back(names.substr(start, nul == std::string::npos ? std::string::npos
                                                                             : nul - start));
        start = nul == std::string::npos ? names.size() : nul + 1;
      }
    }
    a.labels.resize(n_trials);
    a.subject_ids.resize(n_trials);
    a.session_ids.resize(n_trials);
    for (auto& v : a.labels) v = serial::get_u16(is, "label");
    for (auto& v : a.subject_ids) v = serial::get_u16(is, "subject id");
    for (auto& v : a.session_ids) v = serial::get_u16(is, "session id");
    a.channel_kinds.resize(static_cast<std::size_t>(a.n_channels));
    for (auto& k : a.channel_kinds)
      k = static_cast<ChannelKind>(serial::get_u8(is, "channel kind"));
    a.data.resize(static_cast<std::size_t>(n_trials) * a.n_channels * a.n_samples);
    serial::get_f32_array(is, a.data.data(), a.data.size(), "trial data");
  } catch (const archive_error&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw archive_error(ArchiveErrorCode::kTruncated, e.what());
  }
  a.validate();

  std::ifstream ms(path + ".manifest");
  if (ms) {
    std::string line;
    while (std::getline(ms, line)) {
      const std::size_t eq = line.find('=');
      if (eq != std::string::npos)
        a.manifest.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
  }
  return a;
}

/// EEG-only or EEG+EOG view; channel order preserved.
inline TrialArchive select_channels(const TrialArchive& a, bool include_eog) {
  std::vector<int> keep;
  for (int c = 0; c < a.n_channels; ++c)
    if (include_eog || a.channel_kinds[static_cast<std::size_t>(c)] == ChannelKind::kEeg)
      keep.push_back(c);
  if (static_cast<int>(keep.size()) == a.n_channels) return a;

  TrialArchive out = a;
  out.n_channels = static_cast<int>(keep.size());
  out.channel_kinds.clear();
  for (const int c : keep) out.channel_kinds.push_back(a.channel_kinds[static_cast<std::size_t>(c)]);
  out.data.resize(static_cast<std::size_t>(a.n_trials()) * keep.size() * a.n_samples);
  for (int i = 0; i < a.n_trials(); ++i) {
    const float* src = a.trial_ptr(i);
    float* dst = out.trial_ptr(i);
    for (std::size_t k = 0; k < keep.size(); ++k)
      std::memcpy(dst + k * a.n_samples,
                  src + static_cast<std::size_t>(keep[k]) * a.n_samples,
                  sizeof(float) * static_cast<std::size_t>(a.n_samples));
  }
  return out;
}

/// Cut cue-aligned trials of round(duration_s * fs) samples out of one
/// continuous recording. Zero cues produce an empty archive.
inline TrialArchive epoch_from_cue(const Eigen::MatrixXd& recording, double fs,
                                   const std::vector<double>& cue_times_s, double duration_s,
                                   const std::vector<std::uint16_t>& labels,
                                   std::uint16_t subject_id, std::uint16_t session_id,
                                   std::vector<std::string> class_names,
                                   const std::vector<ChannelKind>* kinds = nullptr) {
  if (labels.size() != cue_times_s.size())
    throw std::invalid_argument("epoch_from_cue: one label per cue required");
  TrialArchive a;
  a.n_channels = static_cast<int>(recording.rows());
  a.n_samples = static_cast<int>(std::llround(duration_s * fs));
  a.fs = static_cast<float>(fs);
  a.class_names = std::move(class_names);
  a.channel_kinds = kinds ? *kinds
                          : std::vector<ChannelKind>(static_cast<std::size_t>(a.n_channels),
                                                     ChannelKind::kEeg);
  const Eigen::Index total = recording.cols();
  a.data.resize(cue_times_s.size() * static_cast<std::size_t>(a.n_channels) * a.n_samples);
  for (std::size_t i = 0; i < cue_times_s.size(); ++i) {
    const auto start = static_cast<Eigen::Index>(std::llround(cue_times_s[i] * fs));
    if (start < 0 || start + a.n_samples > total)
      throw std::out_of_range("epoch_from_cue: cue " + std::to_string(i) +
                              " does not fit in the recording");
    a.labels.push_back(labels[i]);
    a.subject_ids.push_back(subject_id);
    a.session_ids.push_back(session_id);
    float* p = a.trial_ptr(static_cast<int>(i));
    for (int c = 0; c < a.n_channels; ++c)
      for (int t = 0; t < a.n_samples; ++t)
        p[static_cast<std::size_t>(c) * a.n_samples + t] =
            static_cast<float>(recording(c, start + t));
  }
  a.validate();
  return a;
}

}  // namespace simpleconv
