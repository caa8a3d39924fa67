#pragma once

// c10 logging defines a fatal CHECK; doctest must own the name in test files.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
