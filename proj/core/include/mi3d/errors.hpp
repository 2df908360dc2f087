#pragma once

#include <stdexcept>
#include <string>

namespace mi3d {

// Base class for all library errors. Subtypes exist so callers can
// distinguish contract violations from data-dependent failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape / length mismatch between tensors or feature vectors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range argument (probabilities, counts, grids).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Invalid model or run configuration; message names the violated constraint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Inconsistent training dataset (mixed point counts or channel layouts).
class DatasetError : public Error {
 public:
  using Error::Error;
};

// Synthetic-subject construction produced an impossible shape.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// Batch too small to normalize in train mode.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Point cloud with no points where at least one is required.
class EmptyCloudError : public Error {
 public:
  using Error::Error;
};

// Mathematical precondition violated (e.g. ESV >= EDV).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Labels contain a single class where both are required.
class DegenerateLabelsError : public Error {
 public:
  using Error::Error;
};

// Iterative solver failed to converge; message carries diagnostics.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Cloud unusable for volume estimation (no slab has 3+ points).
class DegenerateCloudError : public Error {
 public:
  using Error::Error;
};

// A class has fewer members than the requested fold count.
class StratificationError : public Error {
 public:
  using Error::Error;
};

// AUROC is undefined when only one class is present.
class UndefinedAurocError : public Error {
 public:
  using Error::Error;
};

// No slice plane intersected any structure.
class EmptyAcquisitionError : public Error {
 public:
  using Error::Error;
};

// I/O failure; message names the path.
class FilesystemError : public Error {
 public:
  using Error::Error;
};

}  // namespace mi3d
