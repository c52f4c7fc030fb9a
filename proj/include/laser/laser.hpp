#pragma once

#include "laser/advantage.hpp"
#include "laser/base.hpp"
#include "laser/checkpoint.hpp"
#include "laser/config.hpp"
#include "laser/diagnostics.hpp"
#include "laser/errors.hpp"
#include "laser/evaluate.hpp"
#include "laser/frozen_fit.hpp"
#include "laser/gradcheck.hpp"
#include "laser/inference.hpp"
#include "laser/parallel.hpp"
#include "laser/policy.hpp"
#include "laser/records.hpp"
#include "laser/rng.hpp"
#include "laser/selfreward.hpp"
#include "laser/task.hpp"
#include "laser/trainer.hpp"
#include "laser/vocab.hpp"
