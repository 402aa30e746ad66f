#pragma once

// Umbrella header.

#include "cqil/common.hpp"
#include "cqil/config.hpp"
#include "cqil/contrast.hpp"
#include "cqil/corpus.hpp"
#include "cqil/degrade.hpp"
#include "cqil/image.hpp"
#include "cqil/manifest.hpp"
#include "cqil/metrics.hpp"
#include "cqil/sqn.hpp"
#include "cqil/sres.hpp"
#include "cqil/train.hpp"
#include "cqil/version.hpp"
