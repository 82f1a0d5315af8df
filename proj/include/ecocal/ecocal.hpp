#pragma once

#include "ecocal/calibrator.hpp"
#include "ecocal/error.hpp"
#include "ecocal/fitness.hpp"
#include "ecocal/fixtures.hpp"
#include "ecocal/kernel.hpp"
#include "ecocal/knowledge.hpp"
#include "ecocal/model_db.hpp"
#include "ecocal/remote.hpp"
#include "ecocal/sensitivity.hpp"
#include "ecocal/text.hpp"
