#pragma once

// Everything at once.

#include "mtd/adamw.hpp"
#include "mtd/analysis.hpp"
#include "mtd/baseline.hpp"
#include "mtd/config.hpp"
#include "mtd/container.hpp"
#include "mtd/corpus.hpp"
#include "mtd/encoder.hpp"
#include "mtd/grad_check.hpp"
#include "mtd/heads.hpp"
#include "mtd/metrics.hpp"
#include "mtd/multitask.hpp"
#include "mtd/ops.hpp"
#include "mtd/rng.hpp"
#include "mtd/tensor.hpp"
#include "mtd/trainer.hpp"
