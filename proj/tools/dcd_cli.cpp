// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcd/cli.hpp"

int main(int argc, char** argv) { return dcd::cli::run(argc, argv); }
