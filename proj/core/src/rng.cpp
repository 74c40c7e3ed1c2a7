#include "hvq/rng.hpp"

#include <sstream>

namespace hvq {

std::string Rng::serialize() const {
  std::ostringstream os;
  os << gen_;
  os << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_;
  return os.str();
}

void Rng::deserialize(const std::string& s) {
  std::istringstream is(s);
  is >> gen_;
  int flag = 0;
  is >> flag >> spare_;
  has_spare_ = flag != 0;
}

}  // namespace hvq
