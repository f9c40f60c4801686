#pragma once

#include "signloop/service/audio.hpp"
#include "signloop/service/config.hpp"
#include "signloop/service/metrics.hpp"
#include "signloop/service/server.hpp"
#include "signloop/service/service.hpp"
#include "signloop/service/session.hpp"
#include "signloop/service/stream.hpp"
