#pragma once

#include "fpcost/error.hpp"
#include "fpcost/fpmodel.hpp"
#include "fpcost/fpenv.hpp"
#include "fpcost/hwinfo.hpp"
#include "fpcost/cycleclock.hpp"
#include "fpcost/kernels.hpp"
#include "fpcost/reference.hpp"
#include "fpcost/harness.hpp"
#include "fpcost/report.hpp"
