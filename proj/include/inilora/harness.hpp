#pragma once

#include "inilora/harness/finetune.hpp"
#include "inilora/harness/sweeps.hpp"
#include "inilora/harness/task.hpp"
#include "inilora/harness/toy_model.hpp"
