// Copyright 2026 The PlayMimic Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace playmimic {

enum class Err {
  DegenerateDepth,
  ParallelRays,
  BehindCamera,
  EmptyTrack,
  UnknownTask,
  InvalidView,
  ScriptFailure,
  CorruptManifest,
  ShapeMismatch,
  IOFailure,
  EmptyRange,
  EmptyDataset,
  WindowTooLong,
  BadImageShape,
  SequenceTooLong,
  InsufficientBatch,
  NonFiniteLoss,
  LockHeld,
  BadConfig,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::DegenerateDepth: return "DegenerateDepth";
    case Err::ParallelRays: return "ParallelRays";
    case Err::BehindCamera: return "BehindCamera";
    case Err::EmptyTrack: return "EmptyTrack";
    case Err::UnknownTask: return "UnknownTask";
    case Err::InvalidView: return "InvalidView";
    case Err::ScriptFailure: return "ScriptFailure";
    case Err::CorruptManifest: return "CorruptManifest";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::IOFailure: return "IOFailure";
    case Err::EmptyRange: return "EmptyRange";
    case Err::EmptyDataset: return "EmptyDataset";
    case Err::WindowTooLong: return "WindowTooLong";
    case Err::BadImageShape: return "BadImageShape";
    case Err::SequenceTooLong: return "SequenceTooLong";
    case Err::InsufficientBatch: return "InsufficientBatch";
    case Err::NonFiniteLoss: return "NonFiniteLoss";
    case Err::LockHeld: return "LockHeld";
    case Err::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

class Exception : public std::runtime_error {
 public:
  Exception(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}

  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what) { throw Exception(code, what); }

inline void require(bool ok, Err code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace playmimic
