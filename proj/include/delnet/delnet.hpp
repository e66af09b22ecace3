#pragma once

#include "delnet/arch_config.hpp"
#include "delnet/autograd.hpp"
#include "delnet/binary_io.hpp"
#include "delnet/complexity.hpp"
#include "delnet/gradcheck.hpp"
#include "delnet/grad_suite.hpp"
#include "delnet/isp_data.hpp"
#include "delnet/kernels.hpp"
#include "delnet/kv_config.hpp"
#include "delnet/losses.hpp"
#include "delnet/metrics.hpp"
#include "delnet/model.hpp"
#include "delnet/params.hpp"
#include "delnet/tensor.hpp"
#include "delnet/trainer.hpp"
