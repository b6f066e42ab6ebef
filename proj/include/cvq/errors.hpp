#pragma once

#include <stdexcept>
#include <string>

namespace cvq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyTrainingSet : public Error {
 public:
  EmptyTrainingSet() : Error("training set is empty") {}
};

class NotBootstrapped : public Error {
 public:
  NotBootstrapped() : Error("pipeline has no initial model; call bootstrap first") {}
};

class DegenerateBootstrap : public Error {
 public:
  explicit DegenerateBootstrap(const std::string& what) : Error(what) {}
};

class StorageFailure : public Error {
 public:
  explicit StorageFailure(const std::string& path) : Error("cannot write to " + path) {}
};

class EmptyTimeline : public Error {
 public:
  EmptyTimeline() : Error("timeline is empty") {}
};

class IncomparableTimelines : public Error {
 public:
  explicit IncomparableTimelines(const std::string& what) : Error(what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

}  // namespace cvq
