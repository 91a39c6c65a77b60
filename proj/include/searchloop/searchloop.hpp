#pragma once

// Umbrella header: the whole library in one include.

#include "searchloop/belief.hpp"
#include "searchloop/embedder.hpp"
#include "searchloop/errors.hpp"
#include "searchloop/extractor.hpp"
#include "searchloop/gate.hpp"
#include "searchloop/llm.hpp"
#include "searchloop/metrics.hpp"
#include "searchloop/orchestrator.hpp"
#include "searchloop/prompts.hpp"
#include "searchloop/report.hpp"
#include "searchloop/retriever.hpp"
#include "searchloop/runner.hpp"
#include "searchloop/sweep.hpp"
#include "searchloop/text.hpp"
#include "searchloop/trace.hpp"
