#pragma once

#include "slarda/adapt.hpp"
#include "slarda/autograd.hpp"
#include "slarda/checkpoint.hpp"
#include "slarda/config.hpp"
#include "slarda/data.hpp"
#include "slarda/errors.hpp"
#include "slarda/inference.hpp"
#include "slarda/models.hpp"
#include "slarda/nn.hpp"
#include "slarda/ops.hpp"
#include "slarda/report.hpp"
#include "slarda/runner.hpp"
#include "slarda/ssl.hpp"
#include "slarda/teacher.hpp"
#include "slarda/tensor.hpp"
