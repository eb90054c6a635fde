#pragma once

// Versioned JSON persistence for fitted models. Every file carries the
// envelope {"magic": "qrfx-model", "version": "<semver>", "type": ...,
// "payload": ...}; loaders reject wrong magic, wrong type, and unsupported
// major versions.
// Doubles are written in shortest-round-trip form, so a loaded model predicts
// bit-identically to the one that was saved.

#include <string>

#include "qrfx/dynamic.hpp"
#include "qrfx/fmqrf.hpp"
#include "qrfx/forest.hpp"

namespace qrfx {

inline constexpr const char* model_format_magic = "qrfx-model";
inline constexpr const char* model_format_version = "1.0.0";

// Model type tag stored in the envelope: "qrf", "fmqrf" or "dynamic".
// IoError when the file cannot be read; DataError when it is not a model file.
std::string model_type(const std::string& path);

void save_forest_model(const std::string& path, const QuantileForest& forest);
void save_fmqrf_model(const std::string& path, const FmQrfModel& model);
void save_dynamic_model(const std::string& path, const DynamicFitResult& result);

QuantileForest load_forest_model(const std::string& path);
FmQrfModel load_fmqrf_model(const std::string& path);
DynamicFitResult load_dynamic_model(const std::string& path);

} // namespace qrfx
