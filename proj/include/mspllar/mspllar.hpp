#pragma once

#include "mspllar/core_model.hpp"
#include "mspllar/ehg_filter.hpp"
#include "mspllar/error.hpp"
#include "mspllar/estimation.hpp"
#include "mspllar/inference.hpp"
#include "mspllar/io.hpp"
#include "mspllar/random.hpp"
#include "mspllar/simulation.hpp"
