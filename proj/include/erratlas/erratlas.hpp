#pragma once

#include "erratlas/annotation_store.hpp"
#include "erratlas/cascade.hpp"
#include "erratlas/cooccurrence.hpp"
#include "erratlas/embedding_index.hpp"
#include "erratlas/error.hpp"
#include "erratlas/fixture.hpp"
#include "erratlas/label_space.hpp"
#include "erratlas/manifest.hpp"
#include "erratlas/metrics.hpp"
#include "erratlas/pipeline.hpp"
