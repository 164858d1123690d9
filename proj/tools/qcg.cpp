// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

#include "qcg/cli.hpp"

int main(int argc, char** argv) { return qcg::cli::dispatch(argc, argv); }
