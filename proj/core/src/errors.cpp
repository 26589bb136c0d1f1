#include "pgn/errors.hpp"

namespace pgn {

FormatError::FormatError(const std::string& what, std::size_t offset)
    : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

}  // namespace pgn
