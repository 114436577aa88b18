#pragma once

// Everything except the command-line layer, which pulls in nlohmann::json.

#include "nerb/bsde.hpp"
#include "nerb/errors.hpp"
#include "nerb/expectation.hpp"
#include "nerb/expr.hpp"
#include "nerb/picard.hpp"
#include "nerb/reflection.hpp"
#include "nerb/report.hpp"
#include "nerb/risk.hpp"
#include "nerb/scenario.hpp"
#include "nerb/verify.hpp"
