#pragma once

#include "lomix/rng.hpp"
#include "lomix/array.hpp"
#include "lomix/tape.hpp"
#include "lomix/ops.hpp"
#include "lomix/params.hpp"
#include "lomix/network.hpp"
#include "lomix/cmm.hpp"
#include "lomix/supervision.hpp"
#include "lomix/optimizer.hpp"
#include "lomix/data.hpp"
#include "lomix/metrics.hpp"
#include "lomix/csv.hpp"
#include "lomix/trainer.hpp"
#include "lomix/export.hpp"
#include "lomix/gradcheck.hpp"
#include "lomix/manifest.hpp"
