#pragma once

#include "morphtag/config.hpp"
#include "morphtag/corpus.hpp"
#include "morphtag/crf.hpp"
#include "morphtag/embeddings.hpp"
#include "morphtag/encoder.hpp"
#include "morphtag/error.hpp"
#include "morphtag/grad_check.hpp"
#include "morphtag/labels.hpp"
#include "morphtag/lstm.hpp"
#include "morphtag/metrics.hpp"
#include "morphtag/ops.hpp"
#include "morphtag/parameter.hpp"
#include "morphtag/rng.hpp"
#include "morphtag/serialize.hpp"
#include "morphtag/stats.hpp"
#include "morphtag/synthetic.hpp"
#include "morphtag/tagger.hpp"
#include "morphtag/tensor.hpp"
#include "morphtag/trace.hpp"
#include "morphtag/train.hpp"
#include "morphtag/unicode.hpp"
