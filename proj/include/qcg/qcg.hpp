// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "qcg/analysis.hpp"
#include "qcg/calibrate.hpp"
#include "qcg/error.hpp"
#include "qcg/eval.hpp"
#include "qcg/io.hpp"
#include "qcg/model.hpp"
#include "qcg/numerics.hpp"
#include "qcg/perturb.hpp"
#include "qcg/quantizer.hpp"
#include "qcg/report.hpp"
