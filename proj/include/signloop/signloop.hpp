#pragma once

// Everything except the service layer, which also needs spdlog and httplib.

#include "signloop/core/autodiff.hpp"
#include "signloop/core/errors.hpp"
#include "signloop/core/params.hpp"
#include "signloop/core/rng.hpp"
#include "signloop/encoder/mel.hpp"
#include "signloop/encoder/stream_encoder.hpp"
#include "signloop/hitl/hitl.hpp"
#include "signloop/ir/generate.hpp"
#include "signloop/ir/patch.hpp"
#include "signloop/ir/random.hpp"
#include "signloop/ir/segment.hpp"
#include "signloop/kinematics/ik.hpp"
#include "signloop/mdn/decoder.hpp"
#include "signloop/mdn/mdn.hpp"
#include "signloop/mdn/training.hpp"
#include "signloop/motion/motion.hpp"
#include "signloop/motion/synthetic.hpp"
#include "signloop/resample/resample.hpp"
#include "signloop/vae/latent_vae.hpp"
