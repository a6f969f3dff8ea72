#pragma once

#include "refineppi/autodiff.hpp"
#include "refineppi/checkpoint.hpp"
#include "refineppi/checks.hpp"
#include "refineppi/data_io.hpp"
#include "refineppi/geom.hpp"
#include "refineppi/metrics.hpp"
#include "refineppi/mmm.hpp"
#include "refineppi/optim.hpp"
#include "refineppi/pdc_net.hpp"
#include "refineppi/pipeline.hpp"
#include "refineppi/structure.hpp"
#include "refineppi/synthetic.hpp"
