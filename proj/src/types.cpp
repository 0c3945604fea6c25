#include "hubgate/types.hpp"

#include <cctype>

#include "hubgate/error.hpp"

namespace hubgate {

namespace {

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::strong_ordering natural_compare(std::string_view a, std::string_view b) noexcept {
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (is_digit(a[i]) && is_digit(b[j])) {
      std::size_t ie = i;
      std::size_t je = j;
      while (ie < a.size() && is_digit(a[ie])) ++ie;
      while (je < b.size() && is_digit(b[je])) ++je;
      // Skip leading zeros, then longer run is larger, then lexicographic.
      std::size_t ia = i;
      std::size_t jb = j;
      while (ia + 1 < ie && a[ia] == '0') ++ia;
      while (jb + 1 < je && b[jb] == '0') ++jb;
      if (auto c = (ie - ia) <=> (je - jb); c != 0) return c;
      if (auto c = a.substr(ia, ie - ia).compare(b.substr(jb, je - jb)); c != 0) {
        return c < 0 ? std::strong_ordering::less : std::strong_ordering::greater;
      }
      // Equal value: fewer leading zeros first keeps the order strict.
      if (auto c = (ie - i) <=> (je - j); c != 0) return c;
      i = ie;
      j = je;
      continue;
    }
    if (a[i] != b[j]) {
      return static_cast<unsigned char>(a[i]) < static_cast<unsigned char>(b[j])
                 ? std::strong_ordering::less
                 : std::strong_ordering::greater;
    }
    ++i;
    ++j;
  }
  return (a.size() - i) <=> (b.size() - j);
}

PortPool::PortPool(std::uint16_t first, std::uint16_t last)
    : first_(first), last_(last), next_fresh_(first) {}

std::uint16_t PortPool::allocate() {
  std::uint16_t port;
  if (!released_.empty()) {
    port = *released_.begin();
    released_.erase(released_.begin());
  } else if (next_fresh_ <= last_) {
    port = static_cast<std::uint16_t>(next_fresh_++);
  } else {
    throw Error(Errc::PortPoolExhausted,
                "ports " + std::to_string(first_) + "-" + std::to_string(last_) + " all in use");
  }
  allocated_.insert(port);
  return port;
}

bool PortPool::release(std::uint16_t port) {
  if (allocated_.erase(port) == 0) return false;
  if (port + 1u == next_fresh_) {
    // Shrink the high-water mark so the fresh range stays contiguous.
    --next_fresh_;
    while (next_fresh_ > first_ && released_.count(static_cast<std::uint16_t>(next_fresh_ - 1))) {
      released_.erase(static_cast<std::uint16_t>(next_fresh_ - 1));
      --next_fresh_;
    }
  } else {
    released_.insert(port);
  }
  return true;
}

}  // namespace hubgate
