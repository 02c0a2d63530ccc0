#include "dualrep/errors.hpp"

namespace dualrep {

void throw_shape(const std::string& what) { throw ShapeError(what); }

}  // namespace dualrep
