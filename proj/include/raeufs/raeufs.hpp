#pragma once

#include "raeufs/autoencoder.hpp"
#include "raeufs/dataset.hpp"
#include "raeufs/error.hpp"
#include "raeufs/evaluation.hpp"
#include "raeufs/graph.hpp"
#include "raeufs/matrix.hpp"
#include "raeufs/stiefel.hpp"
#include "raeufs/synthetic.hpp"
#include "raeufs/trainer.hpp"
#include "raeufs/experiment.hpp"
