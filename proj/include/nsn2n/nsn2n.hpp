#pragma once
// Umbrella header.

#include "nsn2n/common.hpp"
#include "nsn2n/config.hpp"
#include "nsn2n/filters.hpp"
#include "nsn2n/losses.hpp"
#include "nsn2n/metrics.hpp"
#include "nsn2n/model.hpp"
#include "nsn2n/pairing.hpp"
#include "nsn2n/synth.hpp"
#include "nsn2n/trainer.hpp"
#include "nsn2n/volume.hpp"
