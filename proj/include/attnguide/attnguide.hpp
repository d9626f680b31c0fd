#pragma once

#include "attnguide/benchmark.hpp"
#include "attnguide/cli.hpp"
#include "attnguide/codec.hpp"
#include "attnguide/experiments.hpp"
#include "attnguide/guidance.hpp"
#include "attnguide/manifest.hpp"
#include "attnguide/planted.hpp"
#include "attnguide/render.hpp"
#include "attnguide/synth.hpp"
#include "attnguide/weights_io.hpp"
