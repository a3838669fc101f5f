#pragma once

#include "grammage/rng.hpp"
#include "grammage/domain.hpp"
#include "grammage/synthgen.hpp"
#include "grammage/outliers.hpp"
#include "grammage/tree.hpp"
#include "grammage/forest.hpp"
#include "grammage/boost.hpp"
#include "grammage/knn.hpp"
#include "grammage/model.hpp"
#include "grammage/eval.hpp"
#include "grammage/model_io.hpp"
#include "grammage/plcsim.hpp"
#include "grammage/plcnet.hpp"
#include "grammage/predictor.hpp"
#include "grammage/service.hpp"
