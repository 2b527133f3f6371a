#ifndef MPK_MPK_HPP
#define MPK_MPK_HPP

#include "checkpoint.hpp"
#include "config.hpp"
#include "coupling.hpp"
#include "energy.hpp"
#include "error.hpp"
#include "export.hpp"
#include "grad.hpp"
#include "hmc.hpp"
#include "image.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "preprocess.hpp"
#include "selfcheck.hpp"
#include "synth.hpp"
#include "tensor_file.hpp"
#include "trainer.hpp"

#endif
