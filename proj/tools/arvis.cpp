// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

#include "arvis/cli.hpp"

int main(int argc, char** argv) { return arvis::run(argc, argv); }
