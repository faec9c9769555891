#pragma once

#include "wattgan/checkpoint.hpp"
#include "wattgan/detect.hpp"
#include "wattgan/error.hpp"
#include "wattgan/evalr.hpp"
#include "wattgan/invert.hpp"
#include "wattgan/net.hpp"
#include "wattgan/sdtw.hpp"
#include "wattgan/series.hpp"
#include "wattgan/train.hpp"
