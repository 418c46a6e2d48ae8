#include <catch2/catch_amalgamated.hpp>
#include "irlin/irlin.hpp"
#include "test_support.hpp"
