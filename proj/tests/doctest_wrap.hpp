#pragma once

// The torch logging shim unconditionally defines CHECK; include this header
// after all torch-including headers so doctest's assertion macros win.
#ifdef CHECK
#undef CHECK
#endif
#include <doctest.h>
