#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "betoken/errors.hpp"

namespace betoken::model {

// Character-level vocabulary: six reserved control ids followed by printable
// ASCII (0x20..0x7E). Soft tokens never get ids here; they are spliced into
// sequences as embedding rows (see MixedSequence).
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSys = 3;
  static constexpr int kUsr = 4;
  static constexpr int kAsst = 5;
  static constexpr int kReserved = 6;
  static constexpr char kFirstChar = 0x20;
  static constexpr char kLastChar = 0x7E;

  int size() const { return kReserved + (kLastChar - kFirstChar + 1); }  // 101

  static bool is_reserved(int id) { return id >= 0 && id < kReserved; }

  int char_id(char c) const {
    if (c < kFirstChar || c > kLastChar) {
      throw InvalidArgumentError(std::string("tokenize: character code ") +
                                 std::to_string(static_cast<int>(static_cast<unsigned char>(c))) +
                                 " is outside the corpus alphabet");
    }
    return kReserved + (c - kFirstChar);
  }

  char id_char(int id) const {
    if (id < kReserved || id >= size()) {
      throw InvalidArgumentError("detokenize: id " + std::to_string(id) +
                                 " is not a printable-character token");
    }
    return static_cast<char>(kFirstChar + (id - kReserved));
  }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(char_id(c));
    return ids;
  }

  std::string detokenize(std::span<const int> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(id_char(id));
    return out;
  }

  static const char* reserved_name(int id) {
    static constexpr std::array<const char*, kReserved> names = {"PAD", "BOS", "EOS",
                                                                 "SYS", "USR", "ASST"};
    return (id >= 0 && id < kReserved) ? names[id] : "?";
  }
};

}  // namespace betoken::model
