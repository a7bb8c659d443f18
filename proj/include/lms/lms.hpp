#pragma once

#include "lms/digest.hpp"
#include "lms/edt.hpp"
#include "lms/error.hpp"
#include "lms/influence.hpp"
#include "lms/kdtree.hpp"
#include "lms/merge_graph.hpp"
#include "lms/metrics.hpp"
#include "lms/nifti.hpp"
#include "lms/pairwise.hpp"
#include "lms/parallel.hpp"
#include "lms/phantom.hpp"
#include "lms/support.hpp"
#include "lms/volume.hpp"
