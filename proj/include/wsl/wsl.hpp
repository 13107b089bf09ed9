#pragma once

#include "types.hpp"
#include "data.hpp"
#include "image_io.hpp"
#include "synth.hpp"
#include "model.hpp"
#include "train.hpp"
#include "checkpoint.hpp"
#include "eval.hpp"
#include "loc.hpp"

namespace wsl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace wsl
