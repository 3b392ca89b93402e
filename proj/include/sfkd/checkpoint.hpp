#pragma once

#include <string>

#include "sfkd/koopman.hpp"
#include "sfkd/model.hpp"

namespace sfkd {

struct Checkpoint {
    SfkdModel model;
    OperatorGen gen;
};

/// Self-describing text checkpoint: layer shapes, architecture constants,
/// and every parameter array in hexfloat (round-trips bit-exactly).
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sfkd
