#pragma once

// Umbrella header for the volpretext library.

#include "volpretext/autograd.hpp"
#include "volpretext/checkpoint.hpp"
#include "volpretext/cohort.hpp"
#include "volpretext/downstream.hpp"
#include "volpretext/errors.hpp"
#include "volpretext/forest.hpp"
#include "volpretext/grad_check.hpp"
#include "volpretext/metrics.hpp"
#include "volpretext/model.hpp"
#include "volpretext/nn_conv.hpp"
#include "volpretext/nn_layers.hpp"
#include "volpretext/nn_loss.hpp"
#include "volpretext/nn_norm.hpp"
#include "volpretext/params.hpp"
#include "volpretext/phantom.hpp"
#include "volpretext/preprocess.hpp"
#include "volpretext/report.hpp"
#include "volpretext/rng.hpp"
#include "volpretext/rotation.hpp"
#include "volpretext/svm.hpp"
#include "volpretext/tensor.hpp"
#include "volpretext/trainer.hpp"
#include "volpretext/volume.hpp"
