#pragma once

#include "catenets/diffcore/adam.hpp"
#include "catenets/diffcore/dense.hpp"
#include "catenets/diffcore/gradcheck.hpp"
#include "catenets/diffcore/losses.hpp"
#include "catenets/diffcore/mlp.hpp"
#include "catenets/diffcore/tape.hpp"
#include "catenets/diffcore/train.hpp"
