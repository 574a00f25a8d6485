#pragma once

#include "trimediq/bench.hpp"
#include "trimediq/case_record.hpp"
#include "trimediq/chat.hpp"
#include "trimediq/config.hpp"
#include "trimediq/dataset.hpp"
#include "trimediq/dialogue.hpp"
#include "trimediq/embedding.hpp"
#include "trimediq/errors.hpp"
#include "trimediq/graph_encoder.hpp"
#include "trimediq/hash.hpp"
#include "trimediq/http_backends.hpp"
#include "trimediq/linalg.hpp"
#include "trimediq/patient_kg.hpp"
#include "trimediq/projector.hpp"
#include "trimediq/prompts.hpp"
#include "trimediq/scoring.hpp"
#include "trimediq/synthetic.hpp"
#include "trimediq/toy_expert.hpp"
#include "trimediq/triplet.hpp"
#include "trimediq/triplet_generator.hpp"
