// SPDX-License-Identifier: Apache-2.0
#include "explicit3d/cli.hpp"

int main(int argc, char** argv) { return explicit3d::cli::run(argc, argv); }
