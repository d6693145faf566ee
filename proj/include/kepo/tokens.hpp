#pragma once

#include <string>

namespace kepo {

// Fixed token table for the synthetic multiple-choice tasks. Token ids are
// contiguous so they double as softmax row indices. A well-formed response
// looks like
//
//   <think> f* </think> <answer> LETTER </answer> <end>
//
// Filler tokens stand in for free-form reasoning text; hint symbols form a
// side channel the teacher uses to point at an answer letter.
struct Vocab {
  static constexpr int kThinkOpen = 0;
  static constexpr int kThinkClose = 1;
  static constexpr int kAnswerOpen = 2;
  static constexpr int kAnswerClose = 3;
  static constexpr int kLetterBase = 4;  // A..D
  static constexpr int kNumLetters = 4;
  static constexpr int kFillerBase = 8;  // f0 plus decoy fillers f1..f3
  static constexpr int kNumFillers = 4;
  static constexpr int kHintBase = 12;   // one hint symbol per letter
  static constexpr int kNumHints = 4;
  static constexpr int kEnd = 16;
  static constexpr int kSize = 17;
  static constexpr int kMaxLen = 8;

  static constexpr bool valid(int id) { return id >= 0 && id < kSize; }
  static constexpr bool is_letter(int id) {
    return id >= kLetterBase && id < kLetterBase + kNumLetters;
  }
  static constexpr bool is_filler(int id) {
    return id >= kFillerBase && id < kFillerBase + kNumFillers;
  }
  static constexpr bool is_hint(int id) {
    return id >= kHintBase && id < kHintBase + kNumHints;
  }
  // Decoy fillers mark the "spurious reasoning step" variant of the tasks.
  static constexpr bool is_decoy(int id) {
    return id > kFillerBase && id < kFillerBase + kNumFillers;
  }
  static constexpr int letter(int index) { return kLetterBase + index; }
  static constexpr int hint(int index) { return kHintBase + index; }
  static constexpr int letter_index(int id) { return id - kLetterBase; }
  static constexpr int hint_index(int id) { return id - kHintBase; }

  static std::string name(int id);
};

}  // namespace kepo
