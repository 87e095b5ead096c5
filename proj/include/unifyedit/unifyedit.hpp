#pragma once

#include "unifyedit/attention.hpp"
#include "unifyedit/backend.hpp"
#include "unifyedit/bench.hpp"
#include "unifyedit/constraints.hpp"
#include "unifyedit/errors.hpp"
#include "unifyedit/io.hpp"
#include "unifyedit/latent.hpp"
#include "unifyedit/mask.hpp"
#include "unifyedit/pipeline.hpp"
#include "unifyedit/sampler.hpp"
#include "unifyedit/scheduler.hpp"
#include "unifyedit/toy_backend.hpp"
