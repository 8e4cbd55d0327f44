#pragma once

// Everything except net.hpp, which needs cpp-httplib.
#include "tailtype/baselines.hpp"
#include "tailtype/common.hpp"
#include "tailtype/corpus.hpp"
#include "tailtype/dataset.hpp"
#include "tailtype/eval.hpp"
#include "tailtype/metrics.hpp"
#include "tailtype/protocol.hpp"
#include "tailtype/rank_stats.hpp"
#include "tailtype/recovery.hpp"
#include "tailtype/report.hpp"
#include "tailtype/scorer.hpp"
#include "tailtype/search.hpp"
