#pragma once

#include "p2e/dataset.hpp"
#include "p2e/edgenet/master.hpp"
#include "p2e/edgenet/protocol.hpp"
#include "p2e/edgenet/socket.hpp"
#include "p2e/edgenet/worker.hpp"
#include "p2e/ensel.hpp"
#include "p2e/error.hpp"
#include "p2e/nncore.hpp"
#include "p2e/poolgen.hpp"
#include "p2e/pruner.hpp"
#include "p2e/quantize_model.hpp"
#include "p2e/quantizer.hpp"
#include "p2e/random.hpp"
#include "p2e/store.hpp"
#include "p2e/tensor.hpp"
#include "p2e/voter.hpp"
