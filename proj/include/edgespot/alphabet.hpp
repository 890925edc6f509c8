#pragma once

// Character inventory shared by the scene generator and the recognizer.
// Symbols are UTF-8 strings so non-ASCII entries (degree sign, ohm) fit.

#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace edgespot {

class Alphabet {
 public:
  Alphabet() = default;
  explicit Alphabet(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (symbols_[i].empty()) throw std::invalid_argument("alphabet: empty symbol");
      if (!index_.emplace(symbols_[i], static_cast<int>(i)).second)
        throw std::invalid_argument("alphabet: duplicate symbol '" + symbols_[i] + "'");
    }
  }

  /// 94 printable ASCII characters ('!' to '~') plus the degree sign and ohm.
  static const Alphabet& standard() {
    static const Alphabet a = [] {
      std::vector<std::string> s;
      for (char c = '!'; c <= '~'; ++c) s.emplace_back(1, c);
      s.emplace_back("\xC2\xB0");
      s.emplace_back("\xCE\xA9");
      return Alphabet(std::move(s));
    }();
    return a;
  }

  std::size_t size() const { return symbols_.size(); }
  /// Class index used for "no character"; one past the last symbol.
  int blank() const { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  /// Splits a UTF-8 string into class ids; throws on unknown symbols.
  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const auto lead = static_cast<unsigned char>(text[i]);
      const std::size_t len = lead < 0x80 ? 1 : lead < 0xE0 ? 2 : lead < 0xF0 ? 3 : 4;
      const std::string sym(text.substr(i, len));
      auto it = index_.find(sym);
      if (it == index_.end()) throw std::invalid_argument("symbol '" + sym + "' is not in the alphabet");
      out.push_back(it->second);
      i += len;
    }
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string s;
    for (int id : ids) s += symbol(id);
    return s;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace edgespot
