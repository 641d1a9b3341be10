#pragma once

#include <pnvr/cli/commands.hpp>
#include <pnvr/synthdata/dataset.hpp>
#include <pnvr/trainer/train.hpp>
