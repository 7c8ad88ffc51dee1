#ifndef MGD_MGD_HPP
#define MGD_MGD_HPP

#include "mgd/config.hpp"
#include "mgd/data.hpp"
#include "mgd/estimator.hpp"
#include "mgd/experiment.hpp"
#include "mgd/network.hpp"
#include "mgd/perturb.hpp"
#include "mgd/tensor.hpp"
#include "mgd/trainer.hpp"

#endif
