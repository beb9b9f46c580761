#pragma once

#include "gencomp/compress.hpp"
#include "gencomp/config.hpp"
#include "gencomp/dataset.hpp"
#include "gencomp/engine.hpp"
#include "gencomp/error.hpp"
#include "gencomp/evaluator.hpp"
#include "gencomp/external.hpp"
#include "gencomp/genome.hpp"
#include "gencomp/linalg.hpp"
#include "gencomp/model.hpp"
#include "gencomp/pareto.hpp"
