#pragma once

#include "bench.hpp"
#include "core.hpp"
#include "cox.hpp"
#include "fit.hpp"
#include "io.hpp"
#include "report.hpp"
#include "sieve.hpp"
#include "simulate.hpp"
#include "smoothing.hpp"
#include "surveillance.hpp"
#include "tmle.hpp"
