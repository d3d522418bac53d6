#pragma once

#include "embrenorm/corpus.hpp"
#include "embrenorm/csv.hpp"
#include "embrenorm/dataset.hpp"
#include "embrenorm/embedding.hpp"
#include "embrenorm/error.hpp"
#include "embrenorm/eval.hpp"
#include "embrenorm/hash.hpp"
#include "embrenorm/mean_estimator.hpp"
#include "embrenorm/metrics.hpp"
#include "embrenorm/parallel.hpp"
#include "embrenorm/renorm.hpp"
#include "embrenorm/rng.hpp"
#include "embrenorm/stats.hpp"
#include "embrenorm/store.hpp"
#include "embrenorm/synth.hpp"
#include "embrenorm/theory_sim.hpp"
