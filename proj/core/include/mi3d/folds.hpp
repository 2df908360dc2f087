#pragma once

#include <cstddef>
#include <vector>

namespace mi3d {

// One cross-validation split: indices into a dataset. Validation indices
// are disjoint across the folds of a split set and cover every sample.
struct FoldSplit {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

}  // namespace mi3d
