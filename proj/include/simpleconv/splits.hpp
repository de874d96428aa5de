#pragma once

// Split construction for the four evaluation paradigms. A plan is a list of
// folds over trial indices; the train / calibration / test parts of a fold
// are pairwise disjoint and, for cross-subject paradigms, no trial of a test
// subject outside its calibration set ever reaches the train side.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "simpleconv/archive.hpp"
#include "simpleconv/rng.hpp"

namespace simpleconv {

enum class Paradigm { kWithin, kCross, kCrossFinetune, kMdl };
enum class SplitScheme { kLoso, kLmso10 };

inline const char* paradigm_name(Paradigm p) {
  switch (p) {
    case Paradigm::kWithin: return "within";
    case Paradigm::kCross: return "cross";
    case Paradigm::kCrossFinetune: return "cross-ft";
    case Paradigm::kMdl: return "mdl";
  }
  return "?";
}

struct Fold {
  std::string name;
  std::vector<int> train, calibration, test;
  std::vector<int> test_subjects;
};

struct SplitPlan {
  Paradigm paradigm = Paradigm::kCross;
  std::vector<Fold> folds;
  int n_runs = 1;
};

namespace detail {

struct ArchiveIndex {
  std::vector<int> subjects;                        // sorted unique ids
  std::map<int, std::vector<int>> sessions_of;      // subject -> sorted session ids
  std::map<std::pair<int, int>, std::vector<int>> trials_of;  // (subject, session) -> trials
};

inline ArchiveIndex index_archive(const TrialArchive& a) {
  ArchiveIndex ix;
  std::set<int> subj;
  for (int i = 0; i < a.n_trials(); ++i) {
    const int s = a.subject_ids[static_cast<std::size_t>(i)];
    const int e = a.session_ids[static_cast<std::size_t>(i)];
    subj.insert(s);
    ix.trials_of[{s, e}].push_back(i);
  }
  ix.subjects.assign(subj.begin(), subj.end());
  for (const auto& [key, trials] : ix.trials_of) {
    (void)trials;
    ix.sessions_of[key.first].push_back(key.second);
  }
  for (auto& [s, sess] : ix.sessions_of) {
    (void)s;
    std::sort(sess.begin(), sess.end());
  }
  return ix;
}

inline void append(std::vector<int>& dst, const std::vector<int>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace detail

/// Fold layout per paradigm:
///  - within: one fold per subject, train = first session, test = later
///    sessions; single-session subjects fall back to a per-subject 80/20
///    chronological split (non-standard, but keeps such datasets usable).
///  - cross: LOSO (one fold per subject) or LMSO (10 folds partitioning the
///    subject set); test = all data of the held-out subjects.
///  - cross-ft: LOSO only; calibration = held-out subject's first session,
///    test = its later sessions. Requires at least two sessions.
///  - mdl: LOSO only; the calibration trials are merged straight into the
///    train set (one-stage), test = later sessions. Requires two sessions.
inline SplitPlan make_splits(const TrialArchive& archive, Paradigm paradigm, SplitScheme scheme,
                             std::uint64_t seed) {
  const detail::ArchiveIndex ix = detail::index_archive(archive);
  if (ix.subjects.empty()) throw std::invalid_argument("make_splits: archive has no trials");

  SplitPlan plan;
  plan.paradigm = paradigm;

  auto trials_of_subject = [&ix](int s) {
    std::vector<int> out;
    for (const int sess : ix.sessions_of.at(s)) detail::append(out, ix.trials_of.at({s, sess}));
    return out;
  };
  auto later_sessions_of_subject = [&ix](int s) {
    std::vector<int> out;
    const auto& sess = ix.sessions_of.at(s);
    for (std::size_t i = 1; i < sess.size(); ++i)
      detail::append(out, ix.trials_of.at({s, sess[i]}));
    return out;
  };

  switch (paradigm) {
    case Paradigm::kWithin: {
      for (const int s : ix.subjects) {
        Fold f;
        f.name = "subject-" + std::to_string(s);
        f.test_subjects = {s};
        const auto& sess = ix.sessions_of.at(s);
        if (sess.size() >= 2) {
          f.train = ix.trials_of.at({s, sess.front()});
          f.test = later_sessions_of_subject(s);
        } else {
          // 80/20 chronological fallback within the single session.
          const auto& all = ix.trials_of.at({s, sess.front()});
          const auto cut = static_cast<std::size_t>(all.size() * 8 / 10);
          if (cut == 0 || cut == all.size())
            throw std::invalid_argument("make_splits: within-subject needs enough trials for an "
                                        "80/20 split (subject " + std::to_string(s) + ")");
          f.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut));
          f.test.assign(all.begin() + static_cast<std::ptrdiff_t>(cut), all.end());
        }
        plan.folds.push_back(std::move(f));
      }
      break;
    }
    case Paradigm::kCross: {
      std::vector<std::vector<int>> groups;
      if (scheme == SplitScheme::kLoso) {
        for (const int s : ix.subjects) groups.push_back({s});
      } else {
        const int n = static_cast<int>(ix.subjects.size());
        if (n < 10)
          throw std::invalid_argument("make_splits: LMSO needs >= 10 subjects, got " +
                                      std::to_string(n));
        std::vector<int> order = ix.subjects;
        Rng rng(derive_seed(seed, 0x1350u));
        rng.shuffle(order);
        groups.resize(10);
        for (int i = 0; i < n; ++i)
          groups[static_cast<std::size_t>(i) % 10].push_back(order[static_cast<std::size_t>(i)]);
        for (auto& g : groups) std::sort(g.begin(), g.end());
      }
      for (const auto& held_out : groups) {
        Fold f;
        f.test_subjects = held_out;
        f.name = "subjects";
        for (const int s : held_out) f.name += "-" + std::to_string(s);
        const std::set<int> held(held_out.begin(), held_out.end());
        for (const int s : ix.subjects) {
          if (held.count(s))
            detail::append(f.test, trials_of_subject(s));
          else
            detail::append(f.train, trials_of_subject(s));
        }
        plan.folds.push_back(std::move(f));
      }
      break;
    }
    case Paradigm::kCrossFinetune:
    case Paradigm::kMdl: {
      if (scheme != SplitScheme::kLoso)
        throw std::invalid_argument("make_splits: fine-tune and MDL paradigms are defined per "
                                    "held-out subject; use LOSO");
      for (const int s : ix.subjects) {
        if (ix.sessions_of.at(s).size() < 2)
          throw std::invalid_argument(
              "make_splits: paradigm needs a calibration session and a disjoint test session, "
              "but subject " + std::to_string(s) + " has a single session");
        Fold f;
        f.name = "subject-" + std::to_string(s);
        f.test_subjects = {s};
        for (const int o : ix.subjects)
          if (o != s) detail::append(f.train, trials_of_subject(o));
        const std::vector<int> calib = ix.trials_of.at({s, ix.sessions_of.at(s).front()});
        if (paradigm == Paradigm::kMdl)
          detail::append(f.train, calib);  // one-stage: calibration joins train
        else
          f.calibration = calib;
        f.test = later_sessions_of_subject(s);
        plan.folds.push_back(std::move(f));
      }
      break;
    }
  }

  for (auto& f : plan.folds) {
    std::sort(f.train.begin(), f.train.end());
    std::sort(f.calibration.begin(), f.calibration.end());
    std::sort(f.test.begin(), f.test.end());
  }
  return plan;
}

}  // namespace simpleconv
