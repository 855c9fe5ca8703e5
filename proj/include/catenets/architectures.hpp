#pragma once

#include "catenets/architectures/config.hpp"
#include "catenets/architectures/fit.hpp"
#include "catenets/architectures/losses.hpp"
#include "catenets/architectures/models.hpp"
