#pragma once

#include "rrtf/common.hpp"
#include "rrtf/datamodel.hpp"
#include "rrtf/evaluator.hpp"
#include "rrtf/evolver.hpp"
#include "rrtf/executor.hpp"
#include "rrtf/prompts.hpp"
#include "rrtf/ranker.hpp"
#include "rrtf/sampler.hpp"
#include "rrtf/tokenizer.hpp"
#include "rrtf/toy_model.hpp"
#include "rrtf/trainer.hpp"
